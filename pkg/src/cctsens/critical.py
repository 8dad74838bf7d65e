"""Equilibria, pseudo equilibria and semi-singular points.

Pseudo equilibria are rest points of the regularized flow that are not
equilibria of the DAE (delta = 0, kappa = 0, f != 0).  Semi-singular points
are points of the singular surface where the regularized flow is tangent to
it (delta = 0, (d delta/dy) kappa = 0, kappa != 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import (AmbiguousSpectrum, CctError, ContractViolation, EigenvalueOnAxis,
                         NewtonFailure, SingularJacobian, SingularReducedJacobian,
                         WrongElementKind)
from .model import (ParamSet, Point, StageModel, check_point, delta_gradient, eval_delta,
                    eval_kappa, eval_semi_singular_indicator, fd_jacobian, fix_sign,
                    reduced_jacobian, regularized_field)

AXIS_TOL = 1e-8
SPECTRAL_GAP = 1e2


class ElementKind(str, Enum):
    SEP = "SEP"
    UEP = "UEP"
    PSEUDO_EP = "PseudoEP"
    SEMI_SINGULAR = "SemiSingular"


class PseudoClass(str, Enum):
    SADDLE = "TransverseSaddle"
    SOURCE = "TransverseSource"
    SINK = "TransverseSink"


class SemiClass(str, Enum):
    SADDLE = "SemiSaddle"
    FOCUS = "SemiFocus"


@dataclass(frozen=True, eq=False)
class CriticalElement:
    """A located critical element with its spectral data.

    ``uep_type`` counts unstable eigenvalues of an equilibrium.  For type-1
    equilibria ``v_cu`` is the unit left eigenvector of the unstable
    eigenvalue (normal to the stable manifold) and ``v_cu_right`` the unit
    right eigenvector.  ``borderline`` marks classifications made close to a
    decision threshold.
    """

    kind: ElementKind
    location: Point
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    uep_type: int | None = None
    element_class: str | None = None
    v_cu: np.ndarray | None = None
    v_cu_right: np.ndarray | None = None
    borderline: bool = False

    @property
    def label(self) -> str:
        if self.kind is ElementKind.UEP:
            return f"UEP({self.uep_type})"
        if self.element_class:
            return f"{self.kind.value}({self.element_class})"
        return self.kind.value


def _newton(resid, z0, tol=1e-12, max_iter=50, accept=1e-8):
    """Newton (square) or Gauss-Newton (overdetermined) with FD Jacobian."""
    z = np.asarray(z0, dtype=float).copy()
    r = resid(z)
    nr = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if nr <= tol:
            break
        jac = fd_jacobian(resid, z)
        if jac.shape[0] == jac.shape[1]:
            if np.linalg.cond(jac) > 1e14:
                raise SingularJacobian("Newton Jacobian is singular")
            step = np.linalg.solve(jac, r)
        else:
            step = np.linalg.lstsq(jac, r, rcond=None)[0]
        lam = 1.0
        while True:
            z_new = z - lam * step
            r_new = resid(z_new)
            nr_new = float(np.linalg.norm(r_new))
            if nr_new < nr or lam < 1.0 / 256:
                break
            lam *= 0.5
        if nr_new >= nr and np.linalg.norm(lam * step) < 1e-15 * max(1.0, np.linalg.norm(z)):
            break
        z, r, nr = z_new, r_new, nr_new
    if not np.isfinite(nr) or nr > accept:
        raise NewtonFailure(f"Newton did not converge (residual {nr:.3e})")
    return z


def find_equilibrium(stage: StageModel, guess: Point, params: ParamSet, *,
                     tol: float = 1e-12, max_iter: int = 50,
                     full_output: bool = False):
    """Equilibrium of the DAE by Newton on the stacked system [f; g] = 0.

    With ``full_output`` returns ``(point, iterations)``.
    """
    check_point(stage, guess)
    n = stage.n
    x, y = guess.x.copy(), guess.y.copy()

    def resid(x, y):
        return np.concatenate([np.asarray(stage.f(x, y, params), dtype=float),
                               np.asarray(stage.g(x, y, params), dtype=float)])

    r = resid(x, y)
    nr = float(np.linalg.norm(r))
    it = 0
    while nr > tol:
        if it >= max_iter:
            raise NewtonFailure(f"equilibrium Newton did not converge (residual {nr:.3e})")
        jac = np.block([[np.atleast_2d(stage.fx(x, y, params)), np.atleast_2d(stage.fy(x, y, params))],
                        [np.atleast_2d(stage.gx(x, y, params)), np.atleast_2d(stage.gy(x, y, params))]])
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e14:
            raise SingularJacobian("stacked Jacobian [f; g] is singular")
        step = np.linalg.solve(jac, r)
        lam = 1.0
        while True:
            xn, yn = x - lam * step[:n], y - lam * step[n:]
            rn = resid(xn, yn)
            nrn = float(np.linalg.norm(rn))
            if nrn < nr or lam < 1.0 / 256:
                break
            lam *= 0.5
        it += 1
        if nrn >= nr:
            if nr <= 1e-10:
                break
            raise NewtonFailure("equilibrium Newton stalled")
        x, y, r, nr = xn, yn, rn, nrn
    pt = Point(x, y)
    return (pt, it) if full_output else pt


def classify_equilibrium(stage: StageModel, eq: Point, params: ParamSet, *,
                         axis_tol: float = AXIS_TOL, delta_floor: float = 1e-8) -> CriticalElement:
    jac = reduced_jacobian(stage, eq, params, delta_floor)
    lam = np.linalg.eigvals(jac)
    if np.any(np.abs(lam.real) < axis_tol):
        raise EigenvalueOnAxis(f"eigenvalue on the imaginary axis: {lam}")
    k = int(np.sum(lam.real > 0))
    order = np.argsort(-lam.real, kind="stable")
    lam = lam[order]
    if k == 0:
        return CriticalElement(ElementKind.SEP, eq, lam, uep_type=0)
    v_left = v_right = None
    if k == 1:
        mu = lam[0].real
        w, vl = np.linalg.eig(jac.T)
        i = int(np.argmin(np.abs(w - mu)))
        v_left = fix_sign(np.real(vl[:, i]) / np.linalg.norm(np.real(vl[:, i])))
        w, vr = np.linalg.eig(jac)
        i = int(np.argmin(np.abs(w - mu)))
        v_right = fix_sign(np.real(vr[:, i]) / np.linalg.norm(np.real(vr[:, i])))
    return CriticalElement(ElementKind.UEP, eq, lam, uep_type=k,
                           v_cu=v_left, v_cu_right=v_right)


def _split(stage, z):
    return Point.from_z(z, stage.n)


def pseudo_ep_residual(stage: StageModel, pt: Point, params: ParamSet) -> np.ndarray:
    return np.concatenate([np.asarray(stage.g(pt.x, pt.y, params), dtype=float),
                           [eval_delta(stage, pt, params)],
                           eval_kappa(stage, pt, params)])


def semi_singular_residual(stage: StageModel, pt: Point, params: ParamSet) -> np.ndarray:
    return np.concatenate([np.asarray(stage.g(pt.x, pt.y, params), dtype=float),
                           [eval_delta(stage, pt, params)],
                           [eval_semi_singular_indicator(stage, pt, params)]])


def find_pseudo_ep(stage: StageModel, guess: Point, params: ParamSet, *,
                   f_min: float = 1e-3) -> Point:
    """Solve g = 0, delta = 0, kappa = 0 and check that f does not vanish."""
    check_point(stage, guess)
    z = _newton(lambda z: pseudo_ep_residual(stage, _split(stage, z), params), guess.z)
    pt = _split(stage, z)
    if float(np.linalg.norm(stage.f(pt.x, pt.y, params))) < f_min:
        raise WrongElementKind("located point is an equilibrium, not a pseudo equilibrium")
    return pt


def find_semi_singular(stage: StageModel, guess: Point, params: ParamSet, *,
                       kappa_min: float = 1e-6) -> Point:
    """Solve g = 0, delta = 0, (d delta/dy) kappa = 0 and check kappa != 0."""
    check_point(stage, guess)
    z = _newton(lambda z: semi_singular_residual(stage, _split(stage, z), params), guess.z)
    pt = _split(stage, z)
    if float(np.linalg.norm(eval_kappa(stage, pt, params))) < kappa_min:
        raise WrongElementKind("kappa vanishes: not a semi-singular point")
    return pt


def regularized_jacobian(stage: StageModel, pt: Point, params: ParamSet,
                         orientation: float = 1.0) -> np.ndarray:
    return fd_jacobian(lambda z: regularized_field(stage, z, params, orientation), pt.z)


def classify_pseudo_ep(stage: StageModel, pep: Point, params: ParamSet,
                       orientation: float = 1.0) -> CriticalElement:
    """Saddle/source/sink from the two dominant eigenvalues of the regularized flow.

    ``orientation`` is the sign of delta on the stable side, so that the
    regularized flow runs forward in DAE time there.
    """
    lam = np.linalg.eigvals(regularized_jacobian(stage, pep, params, orientation))
    order = np.argsort(-np.abs(lam), kind="stable")
    lam = lam[order]
    top = lam[:2]
    if lam.size > 2:
        rest = float(np.max(np.abs(lam[2:])))
        if rest * SPECTRAL_GAP > float(np.min(np.abs(top))):
            raise AmbiguousSpectrum(f"eigenvalue gap too small: {lam}")
    re = top.real
    if np.any(np.abs(re) < AXIS_TOL):
        raise EigenvalueOnAxis(f"transversal eigenvalue on the axis: {top}")
    if re[0] > 0 and re[1] > 0:
        cls = PseudoClass.SOURCE
    elif re[0] < 0 and re[1] < 0:
        cls = PseudoClass.SINK
    else:
        cls = PseudoClass.SADDLE
    return CriticalElement(ElementKind.PSEUDO_EP, pep, lam, element_class=cls.value)


def classify_semi_singular(stage: StageModel, pt: Point, params: ParamSet,
                           orientation: float = 1.0, h: float = 1e-3,
                           borderline_tol: float = 1e-6) -> CriticalElement:
    """Semi-saddle when the flow through the point bends back to the stable side.

    The sign of the second tau-derivative of delta along the regularized flow
    is estimated by central differences of short RK4 runs both ways.
    """
    from .regularized import _rk4
    field_fn = lambda z: regularized_field(stage, z, params, orientation)  # noqa: E731
    z0 = pt.z
    sub = 8

    def run(sign):
        z = z0.copy()
        for _ in range(sub):
            z = _rk4(field_fn, z, sign * h / sub)
        return eval_delta(stage, _split(stage, z), params)

    d0 = eval_delta(stage, pt, params)
    curv = orientation * (run(1.0) - 2.0 * d0 + run(-1.0)) / (h * h)
    cls = SemiClass.SADDLE if curv > 0 else SemiClass.FOCUS
    return CriticalElement(ElementKind.SEMI_SINGULAR, pt, np.array([curv]),
                           element_class=cls.value, borderline=abs(curv) < borderline_tol)


def equilibrium_location_sensitivity(stage: StageModel, eq: Point, params: ParamSet,
                                     name: str | None = None,
                                     delta_floor: float = 1e-8) -> np.ndarray:
    """d x_eq / d p from the implicit function theorem on f = 0, g = 0."""
    name = params.require_active(name)
    x, y = eq.x, eq.y
    jac = reduced_jacobian(stage, eq, params, delta_floor)
    if np.linalg.cond(jac) > 1e14:
        raise SingularReducedJacobian("reduced state matrix is singular")
    fy = np.atleast_2d(stage.fy(x, y, params))
    gy = np.atleast_2d(stage.gy(x, y, params))
    rhs = fy @ np.linalg.solve(gy, stage.dgdp(x, y, params, name)) - stage.dfdp(x, y, params, name)
    return np.linalg.solve(jac, rhs)


def equilibrium_y_sensitivity(stage: StageModel, eq: Point, params: ParamSet, dx: np.ndarray,
                              name: str | None = None) -> np.ndarray:
    """Algebraic part of the equilibrium sensitivity given its dynamic part."""
    name = params.require_active(name)
    gx = np.atleast_2d(stage.gx(eq.x, eq.y, params))
    gy = np.atleast_2d(stage.gy(eq.x, eq.y, params))
    return -np.linalg.solve(gy, gx @ dx + stage.dgdp(eq.x, eq.y, params, name))


def element_residuals(stage: StageModel, el: CriticalElement, params: ParamSet) -> dict:
    """The quantities tested by each element kind's invariants."""
    pt = el.location
    out = {"g": float(np.linalg.norm(stage.g(pt.x, pt.y, params))),
           "f": float(np.linalg.norm(stage.f(pt.x, pt.y, params))),
           "delta": abs(eval_delta(stage, pt, params)),
           "kappa": float(np.linalg.norm(eval_kappa(stage, pt, params)))}
    if el.kind is ElementKind.SEMI_SINGULAR:
        out["indicator"] = abs(eval_semi_singular_indicator(stage, pt, params))
    return out


def trace_singular_surface(stage: StageModel, params: ParamSet, var: int, values,
                           guesses, *, dedupe: float = 1e-6, tol: float = 1e-14):
    """Points of {g = 0, delta = 0} with x[var] fixed at each of ``values``.

    The remaining coordinates are solved by (Gauss-)Newton from every guess
    in ``guesses`` and from the solutions at the previous value.  Returns the
    list of points and the number of failed solves.
    """
    if not 0 <= var < stage.n:
        raise ContractViolation(f"trace variable index {var} out of range")
    free = [i for i in range(stage.n + stage.m) if i != var]
    seeds = [np.asarray(g.z if isinstance(g, Point) else g, dtype=float) for g in guesses]
    points, failed, prev = [], 0, []
    for v in values:
        found = []
        for z0 in prev + seeds:
            def resid(u, v=v, z0=z0):
                z = z0.copy()
                z[var] = v
                z[free] = u
                pt = _split(stage, z)
                return np.concatenate([np.asarray(stage.g(pt.x, pt.y, params), dtype=float),
                                       [eval_delta(stage, pt, params)]])
            try:
                u = _newton(resid, z0[free], tol=tol, max_iter=60)
            except CctError:
                failed += 1
                continue
            z = z0.copy()
            z[var] = v
            z[free] = u
            if all(np.linalg.norm(z - w) > dedupe for w in found):
                found.append(z)
        points.extend(_split(stage, z) for z in found)
        prev = found
    return points, failed


def delta_sign(stage: StageModel, pt: Point, params: ParamSet) -> float:
    d = eval_delta(stage, pt, params)
    if d == 0:
        raise ContractViolation("point lies on the singular surface")
    return 1.0 if d > 0 else -1.0


__all__ = [
    "CriticalElement", "ElementKind", "PseudoClass", "SemiClass",
    "find_equilibrium", "classify_equilibrium", "find_pseudo_ep", "find_semi_singular",
    "classify_pseudo_ep", "classify_semi_singular", "equilibrium_location_sensitivity",
    "equilibrium_y_sensitivity", "element_residuals", "regularized_jacobian",
    "pseudo_ep_residual", "semi_singular_residual", "delta_gradient", "delta_sign",
    "trace_singular_surface",
]
