"""Continuation along the regularized flow.

Near the singular surface the DAE vector field blows up while the rescaled
field ``(delta f, kappa)`` stays smooth.  Integrating the rescaled field in
its own time ``tau`` while accumulating the DAE time ``s`` (``ds/dtau =
sigma delta``) lets a trajectory be followed right onto the surface.  The
orientation ``sigma`` is the sign of delta on the starting side, so ``s``
always increases.

Sensitivities at fixed DAE time follow from those at fixed ``tau``:
``dx/dalpha|_t = dx/dalpha|_tau - f * ds/dalpha|_tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .exceptions import ContractViolation, NoCrossing
from .model import (ParamSet, Point, StageModel, delta_gradient, eval_delta,
                    fd_jacobian, regularized_field)

TAU_STEP_CAP = 0.05


def _rk4(fun, w, h):
    k1 = fun(w)
    k2 = fun(w + 0.5 * h * k1)
    k3 = fun(w + 0.5 * h * k2)
    k4 = fun(w + h * k3)
    return w + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _orientation(stage, z, params) -> float:
    d = eval_delta(stage, Point.from_z(z, stage.n), params)
    return 1.0 if d >= 0 else -1.0


def _delta_slope(stage, z, params, field) -> tuple[float, float]:
    """|grad delta| and the rate of change of delta along ``field``."""
    dx, dy, _ = delta_gradient(stage, Point.from_z(z, stage.n), params, None)
    grad = np.concatenate([dx, dy])
    return float(np.linalg.norm(grad)), float(grad @ field)


def _hermite_min(d0, s0, d1, s1, h) -> float:
    """Smallest value on [0, h] of the cubic Hermite interpolant."""
    # p(u) = a u^3 + b u^2 + c u + d on u in [0, 1]
    c = s0 * h
    d = d0
    a = 2 * d0 - 2 * d1 + s0 * h + s1 * h
    b = -3 * d0 + 3 * d1 - 2 * s0 * h - s1 * h
    best = min(d0, d1)
    roots = np.roots([3 * a, 2 * b, c]) if a != 0 or b != 0 else []
    for u in np.atleast_1d(roots):
        if abs(np.imag(u)) < 1e-14 and 0.0 < np.real(u) < 1.0:
            u = float(np.real(u))
            best = min(best, ((a * u + b) * u + c) * u + d)
    return best


def continue_regularized(stage: StageModel, start: Point, params: ParamSet, *,
                         orientation: float | None = None, ds_min: float = 1e-4,
                         ds_max: float = 1e-2, max_steps: int = 100000,
                         escape: float | None = None, delta_scale: float = 1.0,
                         path: list | None = None) -> tuple[str, float, Point]:
    """Follow the regularized flow from ``start``.

    Returns ``(status, elapsed DAE time, point)`` where status is
    ``crossing`` when delta reaches zero and ``escaped`` when |delta| grows
    past ``escape`` (default: ten times its start value, at least
    ``0.05 * delta_scale``).  Arc-length steps shrink with the distance to
    the surface down to ``ds_min``; a cubic Hermite model of delta on each
    step flags grazes that dip below zero between step ends.  When ``path``
    is a list, ``(s, z)`` is appended for every step end except the last.
    """
    n = stage.n
    z0 = start.z
    sigma = _orientation(stage, z0, params) if orientation is None else orientation

    def rhs(w):
        z = w[:-1]
        fz = regularized_field(stage, z, params, sigma)
        d = eval_delta(stage, Point.from_z(z, n), params)
        return np.concatenate([fz, [sigma * d]])

    def dval(hh, w):
        return sigma * eval_delta(stage, Point.from_z(_rk4(rhs, w, hh)[:-1], n), params)

    def cross(w, h_lo, h_hi):
        h_star = brentq(lambda hh: dval(hh, w), h_lo, h_hi, xtol=1e-15, rtol=1e-14)
        w_star = _rk4(rhs, w, h_star)
        return "crossing", float(w_star[-1]), Point.from_z(w_star[:-1], n)

    w = np.concatenate([z0, [0.0]])
    d_cur = sigma * eval_delta(stage, start, params)
    if d_cur <= 0.0:
        return "crossing", 0.0, start
    if escape is None:
        escape = max(10.0 * d_cur, 0.05 * delta_scale)
    fz = rhs(w)
    gn, sl_cur = _delta_slope(stage, w[:-1], params, sigma * fz[:-1])
    for _ in range(max_steps):
        speed = float(np.linalg.norm(fz[:-1]))
        ds = ds_max if gn == 0.0 else min(ds_max, max(ds_min, 0.2 * d_cur / gn))
        h = TAU_STEP_CAP if speed == 0 else min(ds / speed, TAU_STEP_CAP)
        w_new = _rk4(rhs, w, h)
        d_new = sigma * eval_delta(stage, Point.from_z(w_new[:-1], n), params)
        if d_new <= 0.0:
            if d_new == 0.0:
                return "crossing", float(w_new[-1]), Point.from_z(w_new[:-1], n)
            return cross(w, 0.0, h)
        fz_new = rhs(w_new)
        gn_new, sl_new = _delta_slope(stage, w_new[:-1], params, sigma * fz_new[:-1])
        if sl_cur < 0.0 < sl_new and _hermite_min(d_cur, sl_cur, d_new, sl_new, h) < 0.0:
            res = minimize_scalar(lambda hh: dval(hh, w), bounds=(0.0, h), method="bounded",
                                  options={"xatol": 1e-14 * max(1.0, h)})
            if res.fun < 0.0:
                return cross(w, 0.0, float(res.x))
        w, d_cur, fz, gn, sl_cur = w_new, d_new, fz_new, gn_new, sl_new
        if d_cur > escape:
            return "escaped", float(w[-1]), Point.from_z(w[:-1], n)
        if path is not None:
            path.append((float(w[-1]), w[:-1].copy()))
    raise NoCrossing("regularized continuation exhausted its step budget")


def continue_to_surface(stage: StageModel, start: Point, params: ParamSet, *,
                        orientation: float | None = None, max_steps: int = 100000,
                        delta_scale: float = 1.0) -> tuple[float, Point]:
    """Elapsed DAE time and point where the regularized flow reaches delta = 0.

    Raises NoCrossing if delta grows away from zero instead.
    """
    status, s, pt = continue_regularized(stage, start, params, orientation=orientation,
                                         max_steps=max_steps, delta_scale=delta_scale)
    if status != "crossing":
        raise NoCrossing("delta grows away from the singular surface")
    return s, pt


@dataclass(frozen=True, eq=False)
class RegularizedSensitivity:
    """End state of a regularized continuation carrying sensitivities.

    ``W`` holds dz/dalpha at fixed tau, ``theta`` the matching ds/dalpha.
    ``reason`` is ``crossing`` or ``closest``.
    """

    z: np.ndarray
    s: float
    W: np.ndarray
    theta: np.ndarray
    reason: str
    n: int

    @property
    def point(self) -> Point:
        return Point.from_z(self.z, self.n)

    def dae_sensitivity(self, f_end: np.ndarray) -> np.ndarray:
        """dx/dalpha at fixed DAE time for every column."""
        return self.W[:self.n] - np.outer(f_end, self.theta)


def continue_with_sensitivity(stage: StageModel, start: Point, W0, params: ParamSet, *,
                              p_column: int | None = None, name: str | None = None,
                              target: Point | None = None, capture: float = 0.2,
                              orientation: float | None = None, ds_min: float = 1e-4,
                              ds_max: float = 1e-2,
                              max_steps: int = 200000) -> RegularizedSensitivity:
    """Regularized continuation of state and sensitivities.

    ``W0`` (N x k, N = n + m) is dz/dalpha at the start.  Column ``p_column``
    is the parameter direction and receives the explicit parameter forcing.
    Stops when delta crosses zero or, if ``target`` is given, at the closest
    approach to it once within ``capture``.  Arc-length steps shrink with
    the distance to the surface and to the target, down to ``ds_min``.
    """
    n, m = stage.n, stage.m
    N = n + m
    W0 = np.atleast_2d(np.asarray(W0, dtype=float))
    if W0.shape[0] != N:
        raise ContractViolation("W0 must have n + m rows")
    k = W0.shape[1]
    if p_column is not None:
        name = params.require_active(name)
    z0 = start.z
    sigma = _orientation(stage, z0, params) if orientation is None else orientation

    def field_at(z, prm=params):
        return regularized_field(stage, z, prm, sigma)

    def rhs(w):
        z = w[:N]
        W = w[N + 1:N + 1 + N * k].reshape(N, k)
        pt = Point.from_z(z, n)
        fz = field_at(z)
        jac = fd_jacobian(field_at, z)
        dW = jac @ W
        ddx, ddy, ddp = delta_gradient(stage, pt, params, name)
        grad = np.concatenate([ddx, ddy])
        dtheta = sigma * (grad @ W)
        if p_column is not None:
            hp = 1e-6 * max(1.0, abs(params[name]))
            fp = (field_at(z, params.shifted(hp, name))
                  - field_at(z, params.shifted(-hp, name))) / (2 * hp)
            dW[:, p_column] += fp
            dtheta[p_column] += sigma * ddp
        d = eval_delta(stage, pt, params)
        return np.concatenate([fz, [sigma * d], dW.ravel(), dtheta])

    def unpack(w, reason):
        return RegularizedSensitivity(
            z=w[:N].copy(), s=float(w[N]), W=w[N + 1:N + 1 + N * k].reshape(N, k).copy(),
            theta=w[N + 1 + N * k:].copy(), reason=reason, n=n)

    w = np.concatenate([z0, [0.0], W0.ravel(), np.zeros(k)])
    if sigma * eval_delta(stage, start, params) <= 0.0:
        return unpack(w, "crossing")
    zt = target.z if target is not None else None
    dist = math.inf if zt is None else float(np.linalg.norm(z0 - zt))
    for _ in range(max_steps):
        z = w[:N]
        fz = field_at(z)
        speed = float(np.linalg.norm(fz))
        jac_norm = float(np.linalg.norm(fd_jacobian(field_at, z), 2))
        cap = min(TAU_STEP_CAP, 0.5 / jac_norm) if jac_norm > 0 else TAU_STEP_CAP
        d_cur = sigma * eval_delta(stage, Point.from_z(z, n), params)
        gn, _ = _delta_slope(stage, z, params, fz)
        reach = d_cur / gn if gn > 0 else ds_max
        if zt is not None:
            reach = min(reach, dist)
        ds = min(ds_max, max(ds_min, 0.2 * reach))
        h = cap if speed == 0 else min(ds / speed, cap)
        w_new = _rk4(rhs, w, h)
        d_new = sigma * eval_delta(stage, Point.from_z(w_new[:N], n), params)
        if d_new <= 0.0:
            def dval(hh, w=w):
                return eval_delta(stage, Point.from_z(_rk4(rhs, w, hh)[:N], n), params)
            h_star = h if d_new == 0.0 else brentq(dval, 0.0, h, xtol=1e-15, rtol=1e-14)
            return unpack(_rk4(rhs, w, h_star), "crossing")
        if zt is not None:
            dist_new = float(np.linalg.norm(w_new[:N] - zt))
            if dist_new > dist and dist < capture:
                return unpack(w, "closest")
            dist = dist_new
        w = w_new
    raise NoCrossing("continuation exhausted its step budget")
