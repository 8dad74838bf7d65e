"""Trajectory sensitivities from the variational equations.

Sensitivities are stepped with the same RK4 tableau and the same grid as the
stored trajectory.  Stage states are recomputed from the stored samples, and
the algebraic sensitivities are eliminated at every stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation, SingularPointError
from .integrator import Trajectory, rk4_stages
from .model import ParamSet, Point, StageModel, check_point, eval_delta


def algebraic_sensitivity(stage: StageModel, pt: Point, params: ParamSet, dphix_dalpha,
                          dg_dalpha, delta_floor: float = 1e-8) -> np.ndarray:
    """``-(dg/dy)^-1 (dg/dx dphix_dalpha + dg_dalpha)`` (an m x k block)."""
    check_point(stage, pt)
    dphix = np.asarray(dphix_dalpha, dtype=float).reshape(stage.n, -1)
    dga = np.asarray(dg_dalpha, dtype=float).reshape(stage.m, -1)
    gy = np.atleast_2d(stage.gy(pt.x, pt.y, params))
    if stage.m == 1:
        d = float(gy[0, 0])
        if abs(d) < delta_floor:
            raise SingularPointError("dg/dy is singular")
        gx = np.atleast_2d(stage.gx(pt.x, pt.y, params))
        return -(gx @ dphix + dga) / d
    if abs(np.linalg.det(gy)) < delta_floor:
        raise SingularPointError("dg/dy is singular")
    gx = np.atleast_2d(stage.gx(pt.x, pt.y, params))
    return -np.linalg.solve(gy, gx @ dphix + dga)


@dataclass(frozen=True, eq=False)
class SensitivityState:
    """Sensitivity blocks at one instant.

    ``Phi_x`` is dx/dx0 (n x n), ``phi_p`` is dx/dp (n); ``dy_x`` and ``dy_p``
    are the matching algebraic sensitivities.  Either pair may be None.
    """

    t: float
    Phi_x: np.ndarray | None
    phi_p: np.ndarray | None
    dy_x: np.ndarray | None
    dy_p: np.ndarray | None


@dataclass(frozen=True, eq=False)
class SensitivitySeries:
    """Sensitivities along a trajectory.

    ``S`` has shape (N, n, k) and ``dY`` shape (N, m, k); the first ``n_x``
    columns are initial-state directions and the last (if ``has_p``) is the
    parameter direction.
    """

    t: np.ndarray
    S: np.ndarray
    dY: np.ndarray
    n_x: int
    has_p: bool

    def __len__(self) -> int:
        return self.t.size

    def state(self, i: int = -1) -> SensitivityState:
        nx = self.n_x
        return SensitivityState(
            t=float(self.t[i]),
            Phi_x=self.S[i, :, :nx] if nx else None,
            phi_p=self.S[i, :, nx] if self.has_p else None,
            dy_x=self.dY[i, :, :nx] if nx else None,
            dy_p=self.dY[i, :, nx] if self.has_p else None)

    @property
    def final(self) -> SensitivityState:
        return self.state(-1)


def _directions(which: str, n: int) -> tuple[int, bool]:
    if which in ("wrt_x0", "x0"):
        return n, False
    if which in ("wrt_p", "p"):
        return 0, True
    if which == "both":
        return n, True
    raise ContractViolation("which must be 'wrt_x0', 'wrt_p' or 'both'")


def integrate_variational(traj: Trajectory, which: str = "both", *, name: str | None = None,
                          init: np.ndarray | None = None, upto: int | None = None,
                          params: ParamSet | None = None) -> SensitivitySeries:
    """Integrate the variational equations along ``traj``.

    ``which`` selects the initial-state block, the parameter column or both.
    ``init`` (n x k) overrides the default start (identity for the
    initial-state block, zero for the parameter column).  ``upto`` stops at
    that sample index.
    """
    stage, cfg = traj.stage, traj.cfg
    if params is not None and params != traj.params:
        raise ContractViolation("trajectory was simulated with different parameters")
    params = traj.params
    n, m = stage.n, stage.m
    n_x, has_p = _directions(which, n)
    if has_p:
        name = params.require_active(name)
    k = n_x + int(has_p)
    if init is None:
        S = np.zeros((n, k))
        if n_x:
            S[:, :n_x] = np.eye(n)
    else:
        S = np.array(init, dtype=float).reshape(n, k)
    last = len(traj) - 1 if upto is None else int(upto)
    if not 0 <= last < len(traj):
        raise ContractViolation("upto is outside the trajectory")
    if any(b < last for b in traj.bridges):
        raise ContractViolation("cannot step the variational equations across a regularized bridge")

    def forcing(x, y):
        if not has_p:
            return None, None
        bf = np.zeros((n, k))
        bg = np.zeros((m, k))
        bf[:, -1] = stage.dfdp(x, y, params, name)
        bg[:, -1] = stage.dgdp(x, y, params, name)
        return bf, bg

    def deriv(x, y, S):
        gy = np.atleast_2d(stage.gy(x, y, params))
        if abs(np.linalg.det(gy)) < cfg.delta_floor:
            raise SingularPointError("variational equations reached the singular surface")
        gx = np.atleast_2d(stage.gx(x, y, params))
        bf, bg = forcing(x, y)
        rhs = gx @ S if bg is None else gx @ S + bg
        dY = -np.linalg.solve(gy, rhs)
        dS = np.atleast_2d(stage.fx(x, y, params)) @ S + np.atleast_2d(stage.fy(x, y, params)) @ dY
        if bf is not None:
            dS = dS + bf
        return dS, dY

    ts = traj.t
    out_S = np.empty((last + 1, n, k))
    out_Y = np.empty((last + 1, m, k))
    x0, y0 = traj.x[0], traj.y[0]
    _, Y = deriv(x0, y0, S)
    out_S[0], out_Y[0] = S, Y
    for i in range(last):
        h = ts[i + 1] - ts[i]
        ydot = None if i == 0 else (traj.y[i] - traj.y[i - 1]) / (ts[i] - ts[i - 1])
        stages, _ = rk4_stages(stage, traj.x[i], traj.y[i], params, h, cfg, ydot)
        (xa, ya), (xb, yb), (xc, yc), (xd, yd) = stages
        k1, _ = deriv(xa, ya, S)
        k2, _ = deriv(xb, yb, S + 0.5 * h * k1)
        k3, _ = deriv(xc, yc, S + 0.5 * h * k2)
        k4, _ = deriv(xd, yd, S + h * k3)
        S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _, Y = deriv(traj.x[i + 1], traj.y[i + 1], S)
        out_S[i + 1], out_Y[i + 1] = S, Y
    return SensitivitySeries(t=ts[:last + 1].copy(), S=out_S, dY=out_Y, n_x=n_x, has_p=has_p)


def sensitivity_residual(stage: StageModel, pt: Point, params: ParamSet, S: np.ndarray,
                         dY: np.ndarray, name: str | None = None, has_p: bool = True) -> float:
    """Residual of the linearized constraint ``g_x S + g_y dY + g_p = 0``."""
    gx = np.atleast_2d(stage.gx(pt.x, pt.y, params))
    gy = np.atleast_2d(stage.gy(pt.x, pt.y, params))
    r = gx @ S + gy @ dY
    if has_p:
        r[:, -1] += stage.dgdp(pt.x, pt.y, params, name)
    return float(np.max(np.abs(r)))


def delta_along(traj: Trajectory) -> np.ndarray:
    return np.array([eval_delta(traj.stage, traj.point(i), traj.params) for i in range(len(traj))])
