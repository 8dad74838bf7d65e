"""Staged semi-explicit DAE models.

A stage is ``x' = f(x, y, p)``, ``0 = g(x, y, p)`` together with its first
partial derivatives.  This module also provides the fields built on top of a
stage: the determinant ``delta = det(dg/dy)``, the drift ``kappa`` of the
regularized system and the tangency indicator used for semi-singular points.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .exceptions import ContractViolation, SingularPointError

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class Point:
    """A state ``(x, y)`` with dynamic part ``x`` and algebraic part ``y``."""

    x: Array
    y: Array

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def z(self) -> Array:
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_z(cls, z, n: int) -> "Point":
        z = np.asarray(z, dtype=float)
        return cls(z[:n], z[n:])

    def __repr__(self) -> str:
        return f"Point(x={self.x.tolist()}, y={self.y.tolist()})"


class ParamSet(Mapping):
    """Immutable named parameters with one designated active parameter."""

    __slots__ = ("_values", "_active")

    def __init__(self, values: Mapping[str, float] | None = None,
                 active: str | None = None, **kwargs: float):
        merged = dict(values or {})
        merged.update(kwargs)
        self._values = {str(k): float(v) for k, v in merged.items()}
        if active is not None and active not in self._values:
            raise ContractViolation(f"active parameter {active!r} is not defined")
        self._active = active

    def __getitem__(self, key: str) -> float:
        try:
            return self._values[key]
        except KeyError:
            raise ContractViolation(f"parameter {key!r} is missing") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __hash__(self) -> int:
        return hash((tuple(sorted(self._values.items())), self._active))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self._values == other._values and self._active == other._active

    def __repr__(self) -> str:
        return f"ParamSet({self._values!r}, active={self._active!r})"

    @property
    def active(self) -> str | None:
        return self._active

    def require_active(self, name: str | None = None) -> str:
        """Resolve ``name`` or the active parameter, failing if neither exists."""
        name = name if name is not None else self._active
        if name is None:
            raise ContractViolation("no active parameter designated")
        if name not in self._values:
            raise ContractViolation(f"parameter {name!r} is missing")
        return name

    @property
    def active_value(self) -> float:
        return self._values[self.require_active()]

    def replace(self, **updates: float) -> "ParamSet":
        for k in updates:
            if k not in self._values:
                raise ContractViolation(f"unknown parameter {k!r}")
        vals = dict(self._values)
        vals.update({k: float(v) for k, v in updates.items()})
        return ParamSet(vals, active=self._active)

    def with_active(self, name: str) -> "ParamSet":
        return ParamSet(self._values, active=name)

    def shifted(self, step: float, name: str | None = None) -> "ParamSet":
        """Copy with the named (default: active) parameter moved by ``step``."""
        name = self.require_active(name)
        return self.replace(**{name: self._values[name] + step})

    def as_dict(self) -> dict[str, float]:
        return dict(self._values)


def _fd_step(v: float) -> float:
    return 1e-6 * max(1.0, abs(v))


def _fd_param_derivative(fun, x, y, params: ParamSet, name: str) -> Array:
    h = _fd_step(params[name])
    hi = fun(x, y, params.shifted(h, name))
    lo = fun(x, y, params.shifted(-h, name))
    return (np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class StageModel:
    """One system stage given by evaluation routines.

    Routines take ``(x, y, params)``; ``fp`` and ``gp`` additionally take the
    parameter name and default to central differences when omitted.
    ``delta`` and ``delta_grad`` are optional analytic shortcuts;
    ``delta_grad`` returns ``(d/dx, d/dy, d/dp)`` for a named parameter.
    """

    n: int
    m: int
    f: Callable
    g: Callable
    fx: Callable
    fy: Callable
    gx: Callable
    gy: Callable
    fp: Callable | None = None
    gp: Callable | None = None
    delta: Callable | None = None
    delta_grad: Callable | None = None
    name: str = ""
    params_used: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ContractViolation("stage dimensions must be positive")

    def dfdp(self, x, y, params: ParamSet, name: str | None = None) -> Array:
        name = params.require_active(name)
        if self.fp is not None:
            return np.asarray(self.fp(x, y, params, name), dtype=float).reshape(self.n)
        return _fd_param_derivative(self.f, x, y, params, name).reshape(self.n)

    def dgdp(self, x, y, params: ParamSet, name: str | None = None) -> Array:
        name = params.require_active(name)
        if self.gp is not None:
            return np.asarray(self.gp(x, y, params, name), dtype=float).reshape(self.m)
        return _fd_param_derivative(self.g, x, y, params, name).reshape(self.m)


@dataclass(frozen=True, eq=False)
class ScenarioModel:
    """Pre-fault, fault-on and post-fault stages of one disturbance."""

    pre: StageModel
    fault: StageModel
    post: StageModel
    name: str = ""
    sep_guess: Callable | None = None
    default_params: ParamSet | None = None

    def __post_init__(self):
        if not (self.pre.n == self.fault.n == self.post.n):
            raise ContractViolation("all stages must share the state dimension n")


def check_point(stage: StageModel, pt: Point) -> None:
    if pt.x.shape != (stage.n,) or pt.y.shape != (stage.m,):
        raise ContractViolation(
            f"point has shape ({pt.x.size}, {pt.y.size}), stage expects "
            f"({stage.n}, {stage.m})")


def adjugate(a) -> Array:
    """Adjugate of a square matrix, exact at singular matrices.

    Cofactors for size up to three; an SVD form above that.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    k = a.shape[0]
    if a.shape != (k, k):
        raise ContractViolation("adjugate needs a square matrix")
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
    if k == 3:
        c = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                rows = [r for r in range(3) if r != i]
                cols = [s for s in range(3) if s != j]
                minor = a[np.ix_(rows, cols)]
                c[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
        return c.T
    # adj(U S V^T) = det(U) det(V) V adj(S) U^T, with adj(S) built from
    # products of the remaining singular values.
    u, s, vt = np.linalg.svd(a)
    adj_s = np.array([np.prod(np.delete(s, i)) for i in range(k)])
    sign = np.linalg.det(u) * np.linalg.det(vt)
    return sign * (vt.T * adj_s) @ u.T


def left_null_vector(a) -> Array:
    """Unit left null vector of a (nearly) singular square matrix.

    Sign is fixed so the first nonzero component is positive.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape == (1, 1):
        return np.ones(1)
    u, _, _ = np.linalg.svd(a)
    v = u[:, -1].copy()
    return fix_sign(v)


def fix_sign(v: Array, tol: float = 1e-14) -> Array:
    v = np.asarray(v, dtype=float).copy()
    for c in v:
        if abs(c) > tol:
            if c < 0:
                v = -v
            break
    return v + 0.0


def eval_delta(stage: StageModel, pt: Point, params: ParamSet) -> float:
    check_point(stage, pt)
    if stage.delta is not None:
        return float(stage.delta(pt.x, pt.y, params))
    gy = np.atleast_2d(stage.gy(pt.x, pt.y, params))
    if stage.m == 1:
        return float(gy[0, 0])
    return float(np.linalg.det(gy))


def eval_kappa(stage: StageModel, pt: Point, params: ParamSet) -> Array:
    check_point(stage, pt)
    f = np.asarray(stage.f(pt.x, pt.y, params), dtype=float)
    gx = np.atleast_2d(stage.gx(pt.x, pt.y, params))
    if stage.m == 1:
        return -(gx @ f)
    adj = adjugate(stage.gy(pt.x, pt.y, params))
    return -(adj @ (gx @ f))


def delta_gradient(stage: StageModel, pt: Point, params: ParamSet,
                   name: str | None = None) -> tuple[Array, Array, float]:
    """Partial derivatives of delta with respect to x, y and a parameter.

    Uses the stage's analytic routine when present; otherwise central
    differences with step ``1e-6 * max(1, |value|)`` per coordinate.
    The parameter derivative is 0.0 when no parameter is named or active.
    """
    check_point(stage, pt)
    if name is None:
        name = params.active
    if stage.delta_grad is not None:
        dx, dy, dp = stage.delta_grad(pt.x, pt.y, params, name)
        return (np.asarray(dx, dtype=float).reshape(stage.n),
                np.asarray(dy, dtype=float).reshape(stage.m),
                float(dp) if name is not None else 0.0)
    z = pt.z
    n = stage.n
    grad = np.empty(z.size)
    for i in range(z.size):
        h = _fd_step(z[i])
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        grad[i] = (eval_delta(stage, Point.from_z(zp, n), params)
                   - eval_delta(stage, Point.from_z(zm, n), params)) / (2 * h)
    dp = 0.0
    if name is not None:
        h = _fd_step(params[name])
        dp = (eval_delta(stage, pt, params.shifted(h, name))
              - eval_delta(stage, pt, params.shifted(-h, name))) / (2 * h)
    return grad[:n], grad[n:], dp


def eval_semi_singular_indicator(stage: StageModel, pt: Point, params: ParamSet) -> float:
    _, ddy, _ = delta_gradient(stage, pt, params, name=None)
    return float(ddy @ eval_kappa(stage, pt, params))


def reduced_jacobian(stage: StageModel, pt: Point, params: ParamSet,
                     delta_floor: float = 1e-8) -> Array:
    check_point(stage, pt)
    x, y = pt.x, pt.y
    gy = np.atleast_2d(stage.gy(x, y, params))
    if abs(eval_delta(stage, pt, params)) < delta_floor:
        raise SingularPointError("dg/dy is singular at this point")
    fx = np.atleast_2d(stage.fx(x, y, params))
    fy = np.atleast_2d(stage.fy(x, y, params))
    gx = np.atleast_2d(stage.gx(x, y, params))
    return fx - fy @ np.linalg.solve(gy, gx)


def regularized_field(stage: StageModel, z: Array, params: ParamSet,
                      orientation: float = 1.0) -> Array:
    """Right-hand side ``orientation * (delta f, kappa)`` of the regularized flow."""
    pt = Point.from_z(z, stage.n)
    f = np.asarray(stage.f(pt.x, pt.y, params), dtype=float)
    d = eval_delta(stage, pt, params)
    k = eval_kappa(stage, pt, params)
    return orientation * np.concatenate([d * f, k])


def fd_jacobian(fun: Callable[[Array], Array], z: Array, rel: float = 1e-6) -> Array:
    """Central-difference Jacobian of a vector function."""
    z = np.asarray(z, dtype=float)
    f0 = np.asarray(fun(z), dtype=float)
    jac = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = rel * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        jac[:, i] = (np.asarray(fun(zp)) - np.asarray(fun(zm))) / (2 * h)
    return jac


def _perm_sign(perm: Sequence[int]) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def transform_constraints(stage: StageModel, perm: Sequence[int] | None = None,
                          scale: Sequence[float] | None = None) -> StageModel:
    """Stage with algebraic equations reordered and rescaled.

    The new constraint is ``diag(scale) @ g[perm]``; the zero set, and hence
    every trajectory, is unchanged.
    """
    m = stage.m
    perm = list(range(m)) if perm is None else list(perm)
    if sorted(perm) != list(range(m)):
        raise ContractViolation("perm must be a permutation of range(m)")
    scale = np.ones(m) if scale is None else np.asarray(scale, dtype=float)
    if scale.shape != (m,) or np.any(scale == 0):
        raise ContractViolation("scale must be m nonzero factors")
    idx = np.array(perm)
    factor = _perm_sign(perm) * float(np.prod(scale))

    def rows(fun):
        return lambda x, y, p: scale[:, None] * np.atleast_2d(fun(x, y, p))[idx]

    delta = None
    if stage.delta is not None:
        delta = lambda x, y, p: factor * stage.delta(x, y, p)  # noqa: E731
    delta_grad = None
    if stage.delta_grad is not None:
        def delta_grad(x, y, p, name):
            dx, dy, dp = stage.delta_grad(x, y, p, name)
            return factor * np.asarray(dx), factor * np.asarray(dy), factor * dp
    gp = None
    if stage.gp is not None:
        gp = lambda x, y, p, name: scale * np.asarray(stage.gp(x, y, p, name))[idx]  # noqa: E731
    return StageModel(
        n=stage.n, m=m, f=stage.f,
        g=lambda x, y, p: scale * np.asarray(stage.g(x, y, p))[idx],
        fx=stage.fx, fy=stage.fy, fp=stage.fp,
        gx=rows(stage.gx), gy=rows(stage.gy), gp=gp,
        delta=delta, delta_grad=delta_grad,
        name=stage.name, params_used=stage.params_used)


def all_permutations(m: int):
    return [list(p) for p in permutations(range(m))]
