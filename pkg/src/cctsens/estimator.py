"""scikit-learn style wrapper around the CCT pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cct import CctConfig, cct_sensitivity, compute_cct
from .integrator import IntegratorConfig
from .systems import build_system, get_system


class CctEstimator(BaseEstimator):
    """CCT and its slope over values of one system parameter.

    ``fit(X)`` takes a column of parameter values and stores, per value,
    ``cct_``, ``mechanism_``, ``dcct_dp_`` and ``cond_``.  ``predict``
    extrapolates along the tangent of the nearest fitted value, the
    first-order estimate the sensitivities exist for.

    Parameters
    ----------
    system : str
        Catalog id.
    param : str or None
        Parameter that X varies; the catalog's active parameter by default.
    overrides : dict or None
        Fixed values of the other parameters.
    variant : str or None
        Example variant (example75 only).
    solver, cct : IntegratorConfig, CctConfig or None
    """

    def __init__(self, system="smib_const", param=None, overrides=None, variant=None,
                 solver=None, cct=None):
        self.system = system
        self.param = param
        self.overrides = overrides
        self.variant = variant
        self.solver = solver
        self.cct = cct

    def _settings(self):
        entry = get_system(self.system)
        solver = self.solver or IntegratorConfig(t_max=entry.t_max)
        cct = self.cct or CctConfig(bracket=entry.bracket)
        return entry, solver, cct

    @staticmethod
    def _column(X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        if X.ndim != 1:
            raise ValueError("X must be a single column of parameter values")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        return X

    def fit(self, X, y=None):
        entry, solver, cct = self._settings()
        param = self.param or entry.active
        X = self._column(X)
        ccts, mechs, slopes, conds = [], [], [], []
        for v in X:
            overrides = dict(self.overrides or {})
            overrides[param] = float(v)
            scenario, params = build_system(self.system, overrides, active=param,
                                            variant=self.variant)
            result = compute_cct(scenario, params, solver, cct)
            sens = cct_sensitivity(scenario, result, params, solver, cct)
            ccts.append(result.cct)
            mechs.append(result.mechanism.label)
            slopes.append(sens.value)
            conds.append(sens.cond)
        self.param_values_ = X
        self.cct_ = np.array(ccts)
        self.mechanism_ = np.array(mechs, dtype=object)
        self.dcct_dp_ = np.array(slopes)
        self.cond_ = np.array(conds)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "cct_")
        X = self._column(X)
        idx = np.argmin(np.abs(X[:, None] - self.param_values_[None, :]), axis=1)
        return self.cct_[idx] + self.dcct_dp_[idx] * (X - self.param_values_[idx])
