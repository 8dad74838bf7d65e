"""Fixed-step integration of semi-explicit index-1 DAEs.

x advances with classical RK4; y is re-solved by Newton at every stage.  An
optional shadow stage tracks the algebraic solution of another constraint
along the same x path (used to follow the post-fault voltage during a fault).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .exceptions import ContractViolation, NewtonFailure, NoCrossing, SingularPointError
from .model import ParamSet, Point, StageModel, check_point, eval_delta
from .regularized import continue_regularized


@dataclass(frozen=True)
class IntegratorConfig:
    """Solver settings.

    ``sep_radius`` and ``dwell`` define the convergence ball used to stop
    stable runs; ``branch_tol`` bounds the relative mismatch between the
    step in y and the trapezoid of its implicit slope (a larger mismatch
    means Newton jumped to another solution branch).  ``singular_tol`` is
    the |delta| level (relative to the starting value, floored at one) below
    which a stalled run is handed to the regularized flow rather than
    reported as a Newton failure; ``max_bridges`` caps how often that may
    happen in one run.
    """

    dt: float = 1e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    delta_floor: float = 1e-8
    t_max: float = 30.0
    max_halvings: int = 12
    singular_tol: float = 5e-2
    sep_radius: float = 1e-2
    dwell: float = 0.5
    divergence_radius: float = 1e3
    shadow_stride: int = 1
    branch_tol: float = 0.25
    max_bridges: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractViolation("dt must be positive")
        for name in ("newton_tol", "delta_floor", "singular_tol", "sep_radius"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        if (self.newton_max_iter < 1 or self.max_halvings < 0 or self.shadow_stride < 1
                or self.max_bridges < 0):
            raise ContractViolation("iteration counts must be positive")
        if self.t_max < 0 or self.dwell < 0:
            raise ContractViolation("t_max and dwell must be non-negative")


class TerminationKind(str, Enum):
    HORIZON = "HorizonReached"
    CONVERGED = "ConvergedToSep"
    SINGULARITY = "SingularityReached"
    NEWTON_FAILURE = "NewtonFailure"
    DIVERGED = "Diverged"


@dataclass(frozen=True, eq=False)
class Termination:
    kind: TerminationKind
    t: float
    which: str | None = None
    point: Point | None = None
    message: str = ""

    def __str__(self) -> str:
        extra = f" ({self.which})" if self.which else ""
        return f"{self.kind.value}{extra} at t={self.t:.12g}"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of one stage run plus its termination reason.

    ``y_shadow``/``delta_shadow`` hold the shadow stage's algebraic solution
    and determinant; they are NaN after the shadow is lost.  ``bridges``
    lists sample indices ``i`` whose step to ``i + 1`` was taken along the
    regularized flow instead of by RK4; those samples are the regularized
    path, on a non-uniform time grid.
    """

    stage: StageModel
    params: ParamSet
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    termination: Termination
    cfg: IntegratorConfig
    shadow_stage: StageModel | None = None
    y_shadow: np.ndarray | None = None
    delta_shadow: np.ndarray | None = None
    bridges: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.t.size

    def point(self, i: int) -> Point:
        return Point(self.x[i], self.y[i])

    def shadow_point(self, i: int) -> Point:
        if self.y_shadow is None:
            raise ContractViolation("trajectory has no shadow samples")
        return Point(self.x[i], self.y_shadow[i])

    @property
    def final(self) -> Point:
        return self.point(-1)

    def header(self) -> list[str]:
        cols = ["t"] + [f"x{i + 1}" for i in range(self.stage.n)]
        cols += [f"y{i + 1}" for i in range(self.stage.m)]
        if self.y_shadow is not None:
            cols += [f"ypost{i + 1}" for i in range(self.y_shadow.shape[1])]
        cols.append("delta_active")
        if self.delta_shadow is not None:
            cols.append("delta_post")
        return cols

    def rows(self):
        for i in range(self.t.size):
            row = [self.t[i], *self.x[i], *self.y[i]]
            if self.y_shadow is not None:
                row += list(self.y_shadow[i])
            row.append(self.delta[i])
            if self.delta_shadow is not None:
                row.append(self.delta_shadow[i])
            yield row

    def to_csv(self, target=None) -> str | None:
        """Write the samples as CSV; returns the text when no target is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows():
            w.writerow([format_number(v) for v in row])
        text = buf.getvalue()
        if target is None:
            return text
        Path(target).write_text(text)
        return None


def format_number(v) -> str:
    """Twelve significant digits, the package-wide numeric output format."""
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def solve_algebraic(stage: StageModel, x, y_guess, params: ParamSet,
                    cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Newton projection onto g = 0 at fixed x, damped by step halving."""
    cfg = cfg or IntegratorConfig()
    tol, floor = cfg.newton_tol, cfg.delta_floor
    g, gy = stage.g, stage.gy
    if stage.m == 1:
        return _solve_scalar(g, gy, x, float(np.asarray(y_guess).reshape(-1)[0]),
                             params, tol, floor, cfg.newton_max_iter)
    y = np.array(y_guess, dtype=float).reshape(stage.m)
    r = np.asarray(g(x, y, params), dtype=float)
    nr = float(np.sqrt(r @ r))
    for _ in range(cfg.newton_max_iter):
        if nr <= tol:
            return y
        if not math.isfinite(nr):
            break
        jac = np.asarray(gy(x, y, params), dtype=float)
        if abs(np.linalg.det(jac)) < floor:
            raise NewtonFailure("dg/dy became singular during Newton")
        step = np.linalg.solve(jac, r)
        lam = 1.0
        while True:
            y_new = y - lam * step
            r_new = np.asarray(g(x, y_new, params), dtype=float)
            nr_new = float(np.sqrt(r_new @ r_new))
            if nr_new < nr or lam < 1.0 / 64:
                break
            lam *= 0.5
        y, r, nr = y_new, r_new, nr_new
    if nr <= tol:
        return y
    raise NewtonFailure(f"Newton did not converge (residual {nr:.3e})")


def _solve_scalar(g, gy, x, yv, params, tol, floor, max_iter):
    y = np.array([yv])
    r = float(g(x, y, params)[0])
    ar = abs(r)
    for _ in range(max_iter):
        if ar <= tol:
            return y
        if not math.isfinite(ar):
            break
        d = float(gy(x, y, params)[0][0])
        if abs(d) < floor:
            raise NewtonFailure("dg/dy became singular during Newton")
        step = r / d
        lam = 1.0
        while True:
            y_new = np.array([yv - lam * step])
            r_new = float(g(x, y_new, params)[0])
            if abs(r_new) < ar or lam < 1.0 / 64:
                break
            lam *= 0.5
        yv, y, r, ar = float(y_new[0]), y_new, r_new, abs(r_new)
    if ar <= tol:
        return y
    raise NewtonFailure(f"Newton did not converge (residual {ar:.3e})")


def rk4_stages(stage: StageModel, x, y, params: ParamSet, h: float,
               cfg: IntegratorConfig, ydot=None):
    """One RK4 step; returns the four stage states and the new state.

    ``ydot`` is an optional slope estimate used to predict Newton guesses.
    """
    f = stage.f
    k1 = np.asarray(f(x, y, params), dtype=float)
    x2 = x + (0.5 * h) * k1
    g2 = y if ydot is None else y + (0.5 * h) * ydot
    y2 = solve_algebraic(stage, x2, g2, params, cfg)
    k2 = np.asarray(f(x2, y2, params), dtype=float)
    x3 = x + (0.5 * h) * k2
    y3 = solve_algebraic(stage, x3, y2, params, cfg)
    k3 = np.asarray(f(x3, y3, params), dtype=float)
    x4 = x + h * k3
    g4 = y3 if ydot is None else y + h * ydot
    y4 = solve_algebraic(stage, x4, g4, params, cfg)
    k4 = np.asarray(f(x4, y4, params), dtype=float)
    xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    yn = solve_algebraic(stage, xn, y4, params, cfg)
    return ((x, y), (x2, y2), (x3, y3), (x4, y4)), (xn, yn)


def implicit_ydot(stage: StageModel, x, y, params: ParamSet, fvec=None) -> np.ndarray:
    """dy/dt = -(dg/dy)^-1 dg/dx xdot along the constraint; xdot defaults to f."""
    if fvec is None:
        fvec = stage.f(x, y, params)
    gx = stage.gx(x, y, params)
    gy = stage.gy(x, y, params)
    if stage.m == 1:
        return np.array([-float(np.dot(gx[0], fvec)) / float(gy[0][0])])
    rhs = np.atleast_2d(gx) @ np.asarray(fvec, dtype=float)
    return -np.linalg.solve(np.atleast_2d(gy), rhs)


def _same_branch(y0, y1, yd0, yd1, h, rel) -> bool:
    dy = y1 - y0
    err = dy - 0.5 * h * (yd0 + yd1)
    if dy.size == 1:
        return abs(err[0]) <= rel * abs(dy[0]) + 1e-9 * (1.0 + abs(y0[0]))
    return math.sqrt(err @ err) <= rel * math.sqrt(dy @ dy) + 1e-9 * (
        1.0 + math.sqrt(y0 @ y0))


def _project(stage, x, y, params, tol):
    """Pull a point of the regularized flow back onto g = 0.

    The regularized flow keeps g = 0 only up to its truncation error.  The
    minimum-norm Gauss-Newton correction in (x, y) uses [g_x g_y], which
    keeps full rank on the singular surface where g_y alone does not.
    """
    x, y = np.array(x, dtype=float), np.array(y, dtype=float)
    n = x.size
    for _ in range(4):
        r = np.asarray(stage.g(x, y, params), dtype=float)
        if np.max(np.abs(r)) <= 0.01 * tol:
            break
        jac = np.hstack([np.atleast_2d(stage.gx(x, y, params)),
                         np.atleast_2d(stage.gy(x, y, params))])
        dz = jac.T @ np.linalg.solve(jac @ jac.T, r)
        x, y = x - dz[:n], y - dz[n:]
    return x, y


def _shadow_try(stage, shadow_stage, xn, yn, y_prev, yd_prev, guess, h, params, cfg, sigma_sh):
    try:
        ysh = solve_algebraic(shadow_stage, xn, guess, params, cfg)
        dsh = eval_delta(shadow_stage, Point(xn, ysh), params)
        if not (math.isfinite(dsh) and sigma_sh * dsh >= cfg.delta_floor):
            return None
        ysd = implicit_ydot(shadow_stage, xn, ysh, params, stage.f(xn, yn, params))
    except NewtonFailure:
        return None
    if not _same_branch(y_prev, ysh, yd_prev, ysd, h, cfg.branch_tol):
        return None
    return ysh, dsh, ysd


def shadow_step(stage, shadow_stage, start, ydot, shadow, h, end, params, cfg, sigma_sh,
                guess=None):
    """Shadow solution at the end of one step of length ``h``.

    ``start`` is the active (x, y) at the step start, ``end`` its value after
    the step and ``shadow`` the shadow (y, ydot) at the start.  When the
    direct solve fails, the shadow is continued through partial steps from
    ``start`` of geometrically adapted length, so it is declared lost only
    where its branch really ends (a fold of the shadow constraint) and not
    where one step is too coarse for the steep approach to the fold.  The
    outcome depends only on the step start and ``h``, which keeps partial
    steps to a clearing time consistent with full grid steps.  Returns
    ``(y, delta, ydot)`` or None.
    """
    x0, y0 = start
    ys0, yd0 = shadow
    if guess is None:
        guess = ys0 + h * yd0
    res = _shadow_try(stage, shadow_stage, end[0], end[1], ys0, yd0, guess, h, params, cfg,
                      sigma_sh)
    if res is not None:
        return res
    done, ys_c, yd_c = 0.0, ys0, yd0
    sub = 0.5 * h
    h_min = h * 0.5 ** (cfg.max_halvings + 24)
    while h - done > 1e-14 * h:
        step = min(sub, h - done)
        target = done + step
        if h - target <= 1e-14 * h:
            target, xn, yn = h, end[0], end[1]
        else:
            try:
                _, (xn, yn) = rk4_stages(stage, x0, y0, params, target, cfg, ydot)
            except NewtonFailure:
                return None
        res = _shadow_try(stage, shadow_stage, xn, yn, ys_c, yd_c, ys_c + step * yd_c,
                          target - done, params, cfg, sigma_sh)
        if res is None:
            sub *= 0.5
            if sub < h_min:
                return None
            continue
        done = target
        ys_c, _, yd_c = res
        last = res
        sub = min(2.0 * sub, h)
    return last


def _slope(ys, ts):
    if len(ts) < 2:
        return None
    return (ys[-1] - ys[-2]) / (ts[-1] - ts[-2])


def simulate(stage: StageModel, start: Point, params: ParamSet,
             cfg: IntegratorConfig | None = None, *,
             shadow_stage: StageModel | None = None, shadow_start=None,
             t_max: float | None = None, sep: Point | None = None,
             stop_on_shadow_loss: bool = True) -> Trajectory:
    """Integrate one stage from ``start``.

    Stops at the horizon, on entering and dwelling in the ball around ``sep``,
    on reaching the singular surface of ``stage`` (after step halving has
    closed in on it), on losing the shadow solution, or on divergence.
    """
    cfg = cfg or IntegratorConfig()
    check_point(stage, start)
    t_end = cfg.t_max if t_max is None else float(t_max)
    if t_end < 0:
        raise ContractViolation("t_max must be non-negative")
    x = start.x.copy()
    y = start.y.copy()
    r = np.asarray(stage.g(x, y, params), dtype=float)
    if float(np.sqrt(r @ r)) > cfg.newton_tol:
        y = solve_algebraic(stage, x, y, params, cfg)
    d0 = eval_delta(stage, Point(x, y), params)
    if abs(d0) < cfg.delta_floor:
        raise SingularPointError("start point lies on the singular surface")
    sigma = math.copysign(1.0, d0)
    delta_scale = max(1.0, abs(d0))

    shadow_same = shadow_stage is not None and shadow_stage.g is stage.g
    ysh = None
    dsh = None
    if shadow_stage is not None:
        if shadow_stage.n != stage.n:
            raise ContractViolation("shadow stage must share n")
        guess = y if shadow_start is None else np.asarray(shadow_start, dtype=float)
        ysh = y.copy() if shadow_same else solve_algebraic(shadow_stage, x, guess, params, cfg)
        dsh = d0 if shadow_same else eval_delta(shadow_stage, Point(x, ysh), params)
        if abs(dsh) < cfg.delta_floor:
            raise SingularPointError("shadow start lies on the singular surface")
        sigma_sh = math.copysign(1.0, dsh)

    ts, xs, ys, ds = [0.0], [x], [y], [d0]
    yd_cur = implicit_ydot(stage, x, y, params)
    yss = [ysh] if ysh is not None else None
    sh_hist = [(0.0, ysh)] if ysh is not None else []
    shadow_alive = ysh is not None
    ysd_cur = ysd_new = None
    if shadow_alive and not shadow_same:
        ysd_cur = implicit_ydot(shadow_stage, x, ysh, params, stage.f(x, y, params))
    dss = [dsh] if dsh is not None else None

    # Steps of exactly dt followed by one partial step, so that a run to a
    # shorter horizon is a prefix of a run to a longer one.
    h_nom = cfg.dt
    h_min = h_nom * 0.5 ** cfg.max_halvings
    h = h_nom
    t = 0.0
    termination = None
    inside_since = None
    sep_z = sep.z if sep is not None else None
    fd = stage.delta
    stride = cfg.shadow_stride
    k_step = 0
    t_tol = 1e-12 * max(1.0, t_end)
    bridges: list[int] = []
    n_bridges = 0
    after_bridge = False

    def delta_of(xv, yv):
        if fd is not None:
            return float(fd(xv, yv, params))
        return eval_delta(stage, Point(xv, yv), params)

    while t_end - t > t_tol:
        h = min(h, t_end - t)
        if t_end - (t + h) < t_tol:
            h = t_end - t
        band = abs(ds[-1]) <= cfg.singular_tol * delta_scale
        ok = True
        if not (band and not after_bridge):
            ydot = None if after_bridge else _slope(ys, ts)
            try:
                _, (xn, yn) = rk4_stages(stage, x, y, params, h, cfg, ydot)
                dn = delta_of(xn, yn)
                if not (math.isfinite(dn) and sigma * dn >= cfg.delta_floor):
                    ok = False
                else:
                    yd_new = implicit_ydot(stage, xn, yn, params)
                    ok = _same_branch(y, yn, yd_cur, yd_new, h, cfg.branch_tol)
            except NewtonFailure:
                ok = False
            if not ok and h > h_min * 1.5:
                h *= 0.5
                continue
            if not ok and not band:
                termination = Termination(TerminationKind.NEWTON_FAILURE, t,
                                          message="step could not be completed")
                break
        if not ok or (band and not after_bridge):
            # Inside the band around the surface the DAE slope blows up and
            # steps can hop over a narrow fold.  Follow the regularized flow
            # instead: either it crosses, or delta recovers (a graze past a
            # tangency) and plain stepping resumes.
            if n_bridges >= cfg.max_bridges:
                termination = Termination(TerminationKind.NEWTON_FAILURE, t,
                                          message="too many regularized bridges")
                break
            n_bridges += 1
            path: list = []
            try:
                status, s_el, pb = continue_regularized(
                    stage, Point(x, y), params, orientation=sigma,
                    escape=2.0 * cfg.singular_tol * delta_scale, delta_scale=delta_scale,
                    path=path)
            except NoCrossing:
                termination = Termination(TerminationKind.NEWTON_FAILURE, t,
                                          message="regularized bridge failed")
                break
            if status == "escaped":
                path.append((s_el, pb.z))
            t0 = t
            lost = False
            for s_k, z_k in path:
                if t0 + s_k >= t_end - t_tol:
                    break
                t = t0 + s_k
                x, y = _project(stage, z_k[:stage.n], z_k[stage.n:], params, cfg.newton_tol)
                dn = delta_of(x, y)
                new_ysh, new_dsh = None, np.nan
                if yss is not None and shadow_alive:
                    if shadow_same:
                        new_ysh, new_dsh = y.copy(), dn
                    else:
                        try:
                            new_ysh = solve_algebraic(shadow_stage, x, sh_hist[-1][1],
                                                      params, cfg)
                            new_dsh = eval_delta(shadow_stage, Point(x, new_ysh), params)
                            sh_hist[:] = [(t, new_ysh)]
                        except NewtonFailure:
                            new_ysh, new_dsh = None, np.nan
                            if stop_on_shadow_loss:
                                lost = True
                                break
                            shadow_alive = False
                bridges.append(len(ts) - 1)
                ts.append(t)
                xs.append(x)
                ys.append(y)
                ds.append(dn)
                if yss is not None:
                    yss.append(np.full(shadow_stage.m, np.nan) if new_ysh is None else new_ysh)
                    dss.append(new_dsh)
            if lost:
                termination = Termination(TerminationKind.SINGULARITY, t, which="shadow",
                                          message="shadow solution lost")
                break
            if status == "crossing" or t0 + s_el >= t_end - t_tol:
                if status == "crossing":
                    termination = Termination(TerminationKind.SINGULARITY, t0 + s_el,
                                              which="active", point=pb,
                                              message="regularized flow reached the surface")
                else:
                    termination = Termination(TerminationKind.HORIZON, t)
                break
            yd_cur = implicit_ydot(stage, x, y, params)
            if yss is not None and shadow_alive and not shadow_same:
                ysd_cur = implicit_ydot(shadow_stage, x, sh_hist[-1][1], params,
                                        stage.f(x, y, params))
            after_bridge = True
            h = h_nom
            continue
        new_ysh, new_dsh = None, np.nan
        if yss is not None:
            k_step += 1
            last_step = t_end - (t + h) <= t_tol
            if shadow_alive and shadow_same:
                new_ysh, new_dsh = yn.copy(), dn
            elif shadow_alive and (k_step % stride == 0 or last_step):
                guess = sh_hist[-1][1]
                if len(sh_hist) > 1:
                    (ta, ya), (tb, yb) = sh_hist[-2], sh_hist[-1]
                    guess = yb + (t + h - tb) * (yb - ya) / (tb - ta)
                if sh_hist[-1][0] == t:
                    res = shadow_step(stage, shadow_stage, (x, y), ydot, (sh_hist[-1][1], ysd_cur),
                                      h, (xn, yn), params, cfg, sigma_sh, guess)
                else:
                    res = _shadow_try(stage, shadow_stage, xn, yn, sh_hist[-1][1], ysd_cur,
                                      guess, t + h - sh_hist[-1][0], params, cfg, sigma_sh)
                ok_sh = res is not None
                if ok_sh:
                    new_ysh, new_dsh, ysd_new = res
                if not ok_sh:
                    if stop_on_shadow_loss:
                        termination = Termination(TerminationKind.SINGULARITY, t,
                                                  which="shadow",
                                                  message="shadow solution lost")
                        break
                    shadow_alive = False
                    new_ysh, new_dsh = None, np.nan
        t = t + h
        x, y, yd_cur = xn, yn, yd_new
        after_bridge = False
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ds.append(dn)
        if yss is not None:
            if new_ysh is None:
                yss.append(np.full(shadow_stage.m, np.nan))
            else:
                yss.append(new_ysh)
                sh_hist.append((t, new_ysh))
                ysd_cur = ysd_new
                del sh_hist[:-2]
            dss.append(new_dsh)
        if h < h_nom:
            h = min(2.0 * h, h_nom)
        xmax = max(abs(v) for v in x)
        if not xmax <= cfg.divergence_radius:
            termination = Termination(TerminationKind.DIVERGED, t, message="state diverged")
            break
        if sep_z is not None:
            dz = np.concatenate([x, y]) - sep_z
            if math.sqrt(float(dz @ dz)) <= cfg.sep_radius:
                if inside_since is None:
                    inside_since = t
                elif t - inside_since >= cfg.dwell - t_tol:
                    termination = Termination(TerminationKind.CONVERGED, t)
                    break
            else:
                inside_since = None

    if termination is None:
        termination = Termination(TerminationKind.HORIZON, t)

    y_sh_arr = d_sh_arr = None
    if yss is not None:
        y_sh_arr = np.array(yss, dtype=float)
        d_sh_arr = np.array(dss, dtype=float)
    traj = Trajectory(stage=stage, params=params, t=np.array(ts), x=np.array(xs),
                      y=np.array(ys), delta=np.array(ds), termination=termination,
                      cfg=cfg, shadow_stage=shadow_stage, y_shadow=y_sh_arr,
                      delta_shadow=d_sh_arr, bridges=tuple(bridges))
    if termination.kind is TerminationKind.SINGULARITY and termination.point is None:
        try:
            tc, pc = locate_singularity_crossing(traj, termination.which)
        except (NoCrossing, NewtonFailure, SingularPointError):
            tc, pc = termination.t, None
        termination = Termination(termination.kind, tc, termination.which, pc,
                                  termination.message)
        traj = _with_termination(traj, termination)
    return traj


def _with_termination(traj: Trajectory, termination: Termination) -> Trajectory:
    return Trajectory(stage=traj.stage, params=traj.params, t=traj.t, x=traj.x, y=traj.y,
                      delta=traj.delta, termination=termination, cfg=traj.cfg,
                      shadow_stage=traj.shadow_stage, y_shadow=traj.y_shadow,
                      delta_shadow=traj.delta_shadow, bridges=traj.bridges)


def quadratic_crossing(ts, vals) -> float:
    """Zero of the quadratic through three monitor samples.

    The root is taken in the last interval when the monitor changes sign
    there; otherwise the nearest root ahead of the last sample.  Falls back
    to linear interpolation of the last two samples.
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if ts.size != vals.size or ts.size < 2:
        raise ContractViolation("need matching samples, at least two")
    for i in range(ts.size):
        if vals[i] == 0.0:
            return float(ts[i])
    t0, v0 = ts[-2], vals[-2]
    t1, v1 = ts[-1], vals[-1]
    linear = t0 - v0 * (t1 - t0) / (v1 - v0) if v1 != v0 else None
    if ts.size >= 3:
        coeffs = np.polyfit(ts[-3:] - t1, vals[-3:], 2)
        roots = np.roots(coeffs)
        roots = roots[np.abs(roots.imag) < 1e-12].real + t1
        if v0 * v1 < 0:
            inside = [r for r in roots if min(t0, t1) <= r <= max(t0, t1)]
            if inside:
                return float(min(inside, key=lambda r: abs(r - linear)))
        else:
            ahead = [r for r in roots if r >= t1]
            if ahead:
                return float(min(ahead))
    if linear is None:
        raise NoCrossing("monitor is flat")
    return float(linear)


def locate_singularity_crossing(traj: Trajectory, which: str = "active") -> tuple[float, Point]:
    """Time and state where the chosen determinant monitor reaches zero.

    ``active``: the run stalled at the singular surface of its own stage; the
    path is continued with the regularized flow until delta changes sign.
    ``shadow``: the shadow solution was lost; the crossing is first guessed by
    quadratic interpolation of the last three monitor samples and then
    refined by Newton on (step length, shadow y) with x from the RK4 step.
    """
    if which not in ("active", "shadow"):
        raise ContractViolation("which must be 'active' or 'shadow'")
    params, cfg = traj.params, traj.cfg
    if which == "active":
        exact = np.flatnonzero(traj.delta == 0.0)
        if exact.size:
            i = int(exact[0])
            return float(traj.t[i]), traj.point(i)
        from .regularized import continue_to_surface
        start = traj.final
        tc, pc = continue_to_surface(traj.stage, start, params,
                                     delta_scale=max(1.0, abs(traj.delta[0])))
        return float(traj.t[-1] + tc), pc
    if traj.delta_shadow is None or traj.shadow_stage is None:
        raise NoCrossing("trajectory has no shadow monitor")
    mon = traj.delta_shadow
    valid = np.flatnonzero(np.isfinite(mon))
    exact = valid[mon[valid] == 0.0]
    if exact.size:
        i = int(exact[0])
        return float(traj.t[i]), traj.shadow_point(i)
    last = int(valid[-1])
    lo = max(0, last - 2)
    idx = np.arange(lo, last + 1)
    t_guess = quadratic_crossing(traj.t[idx], mon[idx])
    # Fold-type losses make the monitor behave like a square root; the
    # squared monitor is then nearly linear and gives a better first guess.
    if idx.size >= 2:
        a, b = mon[idx[-2]] ** 2, mon[idx[-1]] ** 2
        if a > b:
            t_sq = traj.t[idx[-1]] + b * (traj.t[idx[-1]] - traj.t[idx[-2]]) / (a - b)
            if not (traj.t[idx[-1]] <= t_guess <= t_sq + cfg.dt):
                t_guess = t_sq
    t_last = float(traj.t[last])
    h0 = max(t_guess - t_last, 0.0)
    xk, yk = traj.x[last], traj.y[last]
    sh = traj.shadow_stage
    if h0 == 0.0 and abs(mon[last]) < cfg.delta_floor:
        return t_last, traj.shadow_point(last)
    return _refine_shadow_crossing(traj.stage, sh, xk, yk, traj.y_shadow[last],
                                   t_last, h0, params, cfg)


def _refine_shadow_crossing(stage, sh, xk, yk, ysh_k, t_last, h0, params, cfg):
    n, m = stage.n, sh.m

    def x_at(h):
        if h == 0.0:
            return xk
        try:
            _, (xn, _) = rk4_stages(stage, xk, yk, params, h, cfg)
        except NewtonFailure:
            raise
        return xn

    def resid(u):
        h, yv = u[0], u[1:]
        xv = x_at(h)
        return np.concatenate([np.asarray(sh.g(xv, yv, params), dtype=float),
                               [eval_delta(sh, Point(xv, yv), params)]])

    u = np.concatenate([[h0], ysh_k])
    # Start y on the fold side: solve g for y at the guessed x, or keep the
    # last shadow value if that fails.
    try:
        u[1:] = solve_algebraic(sh, x_at(h0), ysh_k, params, cfg)
    except NewtonFailure:
        pass
    scale = max(1.0, abs(eval_delta(sh, Point(xk, ysh_k), params)))
    r = resid(u)
    for _ in range(60):
        if float(np.linalg.norm(r[:m])) <= cfg.newton_tol and abs(r[m]) <= 1e-12 * scale:
            break
        jac = np.empty((m + 1, m + 1))
        for j in range(m + 1):
            e = 1e-7 * max(1.0, abs(u[j])) if j else 1e-7 * max(cfg.dt, abs(u[0]))
            up, um = u.copy(), u.copy()
            up[j] += e
            um[j] -= e
            jac[:, j] = (resid(up) - resid(um)) / (2 * e)
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise NewtonFailure("crossing refinement Jacobian is singular") from exc
        lam = 1.0
        nr = float(np.linalg.norm(r))
        while True:
            u_new = u - lam * step
            r_new = resid(u_new)
            if float(np.linalg.norm(r_new)) < nr or lam < 1e-3:
                break
            lam *= 0.5
        u, r = u_new, r_new
    else:
        raise NewtonFailure("crossing refinement did not converge")
    h = float(u[0])
    return t_last + h, Point(x_at(h), u[1:])
