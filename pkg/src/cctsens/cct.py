"""Critical clearing time, instability mechanism and CCT sensitivities.

The CCT is found by bisection on the clearing time.  The marginally unstable
run of the bisection is kept as the base critical trajectory; its mechanism
selects one of three closed-form sensitivities:

* singularity at clearing: the post-fault constraint folds during the fault;
* post-fault singularity: the critical run ends on the singular surface at a
  semi-saddle or at a transverse saddle pseudo equilibrium;
* loss of synchronism: the critical run approaches a type-1 UEP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .critical import (CriticalElement, ElementKind, PseudoClass, classify_equilibrium,
                       classify_pseudo_ep, classify_semi_singular,
                       equilibrium_location_sensitivity, find_equilibrium, find_pseudo_ep,
                       find_semi_singular)
from .exceptions import (BracketInvalid, CctError, ContractViolation, DegenerateDenominator,
                         IllConditioned, Inconclusive, NewtonFailure, NoCrossing,
                         SingularPointError, Unclassifiable)
from .integrator import (IntegratorConfig, Termination, TerminationKind, Trajectory,
                         implicit_ydot, locate_singularity_crossing, rk4_stages, shadow_step,
                         simulate, solve_algebraic)
from .model import (ParamSet, Point, ScenarioModel, StageModel, delta_gradient, eval_delta,
                    eval_kappa, eval_semi_singular_indicator, left_null_vector)
from .regularized import continue_with_sensitivity
from .trajsens import integrate_variational


@dataclass(frozen=True)
class CctConfig:
    """Settings of the CCT search, the mechanism ladder and the oracle.

    ``kappa_tail`` is the trailing fraction of the post-fault run scanned
    for the smallest kappa; ``t_max_growth`` bounds how often an
    inconclusive verdict may double the post-fault horizon.  When the
    mechanism is classified, bisection continues to ``classify_tol`` so
    the base critical run passes close to the controlling element.
    ``capture`` is the distance from the critical run within which a
    refined type-1 UEP or saddle pseudo equilibrium is accepted even when
    the ``eps`` tests miss it.
    """

    cct_tol: float = 1e-6
    bracket: tuple[float, float] = (0.0, 5.0)
    eps_uep: float = 1e-2
    eps_kappa: float = 1e-3
    truncation: float = 0.98
    kappa_tail: float = 0.02
    cuep_truncation: str = "first"
    fd_delta: float = 1e-3
    fd_cct_tol: float = 1e-9
    classify_tol: float = 1e-9
    capture: float = 5e-2
    denom_tol: float = 1e-10
    sv_tol: float = 1e-10
    t_max_growth: int = 2

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ContractViolation("bracket low must be below bracket high")
        if lo < 0:
            raise ContractViolation("clearing times are non-negative")
        if not (self.cct_tol > 0 and self.fd_delta > 0 and self.fd_cct_tol > 0
                and self.classify_tol > 0):
            raise ContractViolation("tolerances must be positive")
        if not 0 < self.truncation <= 1:
            raise ContractViolation("truncation must lie in (0, 1]")
        if self.cuep_truncation not in ("first", "closest"):
            raise ContractViolation("cuep_truncation is 'first' or 'closest'")


# ---------------------------------------------------------------- equilibria

_SEP_CACHE: dict = {}


def scenario_equilibria(scenario: ScenarioModel, params: ParamSet) -> tuple[Point, Point]:
    """Pre-fault and post-fault stable equilibria (cached per scenario and params)."""
    key = (id(scenario), params)
    hit = _SEP_CACHE.get(key)
    if hit is not None and hit[0] is scenario:
        return hit[1], hit[2]
    if scenario.sep_guess is None:
        raise ContractViolation("scenario has no equilibrium guess")
    guess = scenario.sep_guess(params)
    pre = find_equilibrium(scenario.pre, guess, params)
    post = pre if scenario.post is scenario.pre else find_equilibrium(scenario.post, pre, params)
    if len(_SEP_CACHE) > 256:
        _SEP_CACHE.clear()
    _SEP_CACHE[key] = (scenario, pre, post)
    return pre, post


def post_orientation(scenario: ScenarioModel, params: ParamSet) -> float:
    """Sign of the post-fault determinant on the stable side."""
    _, sep = scenario_equilibria(scenario, params)
    return 1.0 if eval_delta(scenario.post, sep, params) > 0 else -1.0


# ------------------------------------------------------------- fault stage

class FaultRun:
    """One long fault-on run reused for every clearing time up to ``horizon``.

    Runs to shorter horizons are prefixes of this one (fixed dt grid plus a
    final partial step), so clearing states are identical to those of a
    fresh simulation.
    """

    def __init__(self, scenario: ScenarioModel, params: ParamSet, cfg: IntegratorConfig,
                 horizon: float):
        self.scenario, self.params, self.cfg = scenario, params, cfg
        pre_sep, _ = scenario_equilibria(scenario, params)
        x0 = pre_sep.x
        yf0 = solve_algebraic(scenario.fault, x0, pre_sep.y, params, cfg)
        yp0 = pre_sep.y if scenario.post is scenario.pre else solve_algebraic(
            scenario.post, x0, pre_sep.y, params, cfg)
        self.start = Point(x0, yf0)
        self.shadow_start = yp0
        self.horizon = float(horizon)
        self.traj = simulate(scenario.fault, self.start, params, cfg,
                             shadow_stage=scenario.post, shadow_start=yp0,
                             t_max=self.horizon, stop_on_shadow_loss=False)

    def prefix(self, t_cl: float) -> Trajectory:
        """The fault trajectory cleared at ``t_cl`` (shadow included)."""
        if t_cl > self.horizon + 1e-12 * max(1.0, self.horizon):
            raise ContractViolation("clearing time beyond the cached fault horizon")
        tr = self.traj
        early = tr.termination.kind is not TerminationKind.HORIZON and t_cl > tr.t[-1]
        bridged = bool(tr.bridges) and t_cl > tr.t[tr.bridges[0]]
        if early or bridged:
            # a fresh run reports why the fault stage stopped, or takes the
            # regularized bridges on its own grid
            return simulate(self.scenario.fault, self.start, self.params, self.cfg,
                            shadow_stage=self.scenario.post, shadow_start=self.shadow_start,
                            t_max=t_cl)
        t_tol = 1e-12 * max(1.0, t_cl)
        i = int(np.searchsorted(tr.t, t_cl + t_tol, side="right")) - 1
        lost = np.flatnonzero(~np.isfinite(tr.delta_shadow[:i + 1]))
        if lost.size:
            # the shadow was lost at or before t_cl
            j = int(lost[0])
            return _make_traj(tr, j, Termination(TerminationKind.SINGULARITY, float(tr.t[j - 1]),
                                                 which="shadow", message="shadow solution lost"))
        if t_cl - tr.t[i] <= t_tol:
            return _make_traj(tr, i + 1, Termination(TerminationKind.HORIZON, float(tr.t[i])))
        # final partial step, exactly as simulate would take it
        h = t_cl - tr.t[i]
        ydot = None if i == 0 else (tr.y[i] - tr.y[i - 1]) / (tr.t[i] - tr.t[i - 1])
        sc, prm, cfg = self.scenario, self.params, self.cfg
        _, (xn, yn) = rk4_stages(sc.fault, tr.x[i], tr.y[i], prm, h, cfg, ydot)
        dn = eval_delta(sc.fault, Point(xn, yn), prm)
        base = _make_traj(tr, i + 1, None)
        valid = np.flatnonzero(np.isfinite(tr.delta_shadow[:i + 1]))
        guess = tr.y_shadow[valid[-1]]
        if valid.size > 1:
            ta, tb = tr.t[valid[-2]], tr.t[valid[-1]]
            ya, yb = tr.y_shadow[valid[-2]], tr.y_shadow[valid[-1]]
            guess = yb + (t_cl - tb) * (yb - ya) / (tb - ta)
        ysd = implicit_ydot(sc.post, tr.x[i], tr.y_shadow[i], prm,
                            sc.fault.f(tr.x[i], tr.y[i], prm))
        sigma_sh = math.copysign(1.0, tr.delta_shadow[0])
        res = shadow_step(sc.fault, sc.post, (tr.x[i], tr.y[i]), ydot, (tr.y_shadow[i], ysd), h,
                          (xn, yn), prm, cfg, sigma_sh, guess)
        ok = res is not None
        if ok:
            ysh, dsh, _ = res
        if not ok:
            term = Termination(TerminationKind.SINGULARITY, float(tr.t[i]), which="shadow",
                               message="shadow solution lost")
            return replace_termination(base, term)
        t_new = float(tr.t[i] + h)
        return Trajectory(
            stage=tr.stage, params=prm, cfg=cfg, shadow_stage=tr.shadow_stage,
            t=np.append(base.t, t_new), x=np.vstack([base.x, xn]), y=np.vstack([base.y, yn]),
            delta=np.append(base.delta, dn), y_shadow=np.vstack([base.y_shadow, ysh]),
            delta_shadow=np.append(base.delta_shadow, dsh),
            termination=Termination(TerminationKind.HORIZON, t_new))


def _make_traj(tr: Trajectory, stop: int, termination: Termination | None) -> Trajectory:
    return Trajectory(stage=tr.stage, params=tr.params, cfg=tr.cfg,
                      shadow_stage=tr.shadow_stage, t=tr.t[:stop], x=tr.x[:stop],
                      y=tr.y[:stop], delta=tr.delta[:stop], y_shadow=tr.y_shadow[:stop],
                      delta_shadow=tr.delta_shadow[:stop],
                      termination=termination or Termination(TerminationKind.HORIZON,
                                                             float(tr.t[stop - 1])))


def replace_termination(tr: Trajectory, termination: Termination) -> Trajectory:
    return Trajectory(stage=tr.stage, params=tr.params, cfg=tr.cfg,
                      shadow_stage=tr.shadow_stage, t=tr.t, x=tr.x, y=tr.y, delta=tr.delta,
                      y_shadow=tr.y_shadow, delta_shadow=tr.delta_shadow,
                      termination=termination)


# --------------------------------------------------------------- verdicts

@dataclass(frozen=True, eq=False)
class Verdict:
    """Outcome of one fault/clear simulation."""

    stable: bool
    reason: str
    t_cl: float
    fault: Trajectory
    post: Trajectory | None = None

    @property
    def clearing(self) -> Point | None:
        if self.post is None:
            return None
        return self.post.point(0)

    def __bool__(self) -> bool:
        return self.stable


def _post_run(scenario, params, cfg, fault_traj, t_cl, t_max_growth=0) -> Verdict:
    term = fault_traj.termination
    if term.kind is not TerminationKind.HORIZON:
        return Verdict(False, f"fault stage: {term.kind.value}"
                       + (f" ({term.which})" if term.which else ""), t_cl, fault_traj)
    _, post_sep = scenario_equilibria(scenario, params)
    start = Point(fault_traj.x[-1], fault_traj.y_shadow[-1])
    run_cfg = cfg
    for attempt in range(t_max_growth + 1):
        post = simulate(scenario.post, start, params, run_cfg, sep=post_sep)
        kind = post.termination.kind
        if kind is TerminationKind.CONVERGED:
            return Verdict(True, kind.value, t_cl, fault_traj, post)
        if kind is not TerminationKind.HORIZON:
            return Verdict(False, f"post stage: {kind.value}", t_cl, fault_traj, post)
        run_cfg = replace(run_cfg, t_max=2.0 * run_cfg.t_max)
    raise Inconclusive(f"no verdict within t_max={run_cfg.t_max / 2:.6g} at t_cl={t_cl:.12g}")


def judge_stability(scenario: ScenarioModel, t_cl: float, params: ParamSet,
                    cfg: IntegratorConfig | None = None, *,
                    fault_run: FaultRun | None = None, t_max_growth: int = 0) -> Verdict:
    """Simulate the fault for ``t_cl`` from the pre-fault SEP, then the post-fault stage.

    Stable when the post-fault run enters the ball around the post-fault SEP
    and dwells there.  Raises Inconclusive when the horizon is reached first.
    """
    cfg = cfg or IntegratorConfig()
    if t_cl < 0:
        raise ContractViolation("t_cl must be non-negative")
    if fault_run is None or fault_run.horizon < t_cl:
        fault_run = FaultRun(scenario, params, cfg, t_cl)
    return _post_run(scenario, params, cfg, fault_run.prefix(t_cl), t_cl, t_max_growth)


# ----------------------------------------------------------- mechanisms

class MechanismKind(str, Enum):
    LOSS_OF_SYNCHRONISM = "LossOfSynchronism"
    SINGULARITY_AT_CLEARING = "SingularityAtClearing"
    SEMI_SADDLE = "PostFaultSemiSaddle"
    TRANSVERSE_SADDLE = "PostFaultTransverseSaddle"


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Classified instability mechanism.

    ``point`` is the crossing point (singularity at clearing), the refined
    endpoint (post-fault singularity) or the CUEP.  ``refined`` is False when
    the critical element could not be located and ``point`` is the raw
    endpoint of the run.
    """

    kind: MechanismKind
    point: Point
    element: CriticalElement | None = None
    t_event: float = float("nan")
    refined: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True, eq=False)
class CctResult:
    """CCT with the bracket it was bisected to and the base critical run."""

    cct: float
    low: float
    high: float
    params: ParamSet
    critical: Verdict
    history: tuple
    mechanism: Mechanism | None = None
    fault_run: FaultRun | None = None

    @property
    def clearing_state(self) -> Point:
        return self.critical.clearing if self.critical.post is not None else Point(
            self.critical.fault.x[-1], self.critical.fault.y_shadow[-1])

    @property
    def t_end(self) -> float:
        m = self.mechanism
        return m.t_event if m is not None else float("nan")


def compute_cct(scenario: ScenarioModel, params: ParamSet, cfg: IntegratorConfig | None = None,
                ccfg: CctConfig | None = None, bracket: tuple[float, float] | None = None, *,
                classify: bool = True, tol: float | None = None,
                verified: bool = False) -> CctResult:
    """Bisect the clearing time down to ``tol`` (default ``ccfg.cct_tol``).

    With ``verified`` the caller guarantees the bracket and its end points
    are not re-simulated.
    """
    cfg = cfg or IntegratorConfig()
    ccfg = ccfg or CctConfig()
    lo, hi = bracket if bracket is not None else ccfg.bracket
    tol = ccfg.cct_tol if tol is None else tol
    if not lo < hi:
        raise BracketInvalid("bracket low must be below bracket high")
    run = FaultRun(scenario, params, cfg, hi)
    history = []

    def judge(t):
        v = judge_stability(scenario, t, params, cfg, fault_run=run,
                            t_max_growth=ccfg.t_max_growth)
        history.append((float(t), v.stable, v.reason))
        return v

    v_hi = None
    if not verified:
        if not judge(lo).stable:
            raise BracketInvalid(f"unstable at bracket low {lo:.12g}")
        v_hi = judge(hi)
        if v_hi.stable:
            raise BracketInvalid(f"stable at bracket high {hi:.12g}")
    # The mechanism is read off the unstable end, so classification keeps
    # bisecting until that run hugs the stability boundary.
    target = min(tol, ccfg.classify_tol) if classify else tol
    while hi - lo > target:
        mid = 0.5 * (lo + hi)
        v = judge(mid)
        if v.stable:
            lo = mid
        else:
            hi, v_hi = mid, v
    if v_hi is None:
        v_hi = judge(hi)
        if v_hi.stable:
            raise BracketInvalid("verified bracket was not unstable at its high end")
    result = CctResult(cct=0.5 * (lo + hi), low=lo, high=hi, params=params, critical=v_hi,
                       history=tuple(history), fault_run=run)
    if classify:
        mech = classify_mechanism(scenario, result, params, cfg, ccfg)
        result = replace(result, mechanism=mech)
    return result


def _kappa_norm(stage, traj, i, params):
    return float(np.linalg.norm(eval_kappa(stage, traj.point(i), params)))


def classify_mechanism(scenario: ScenarioModel, result: CctResult, params: ParamSet,
                       cfg: IntegratorConfig | None = None,
                       ccfg: CctConfig | None = None) -> Mechanism:
    """Decision ladder on the base critical trajectory."""
    cfg = cfg or IntegratorConfig()
    ccfg = ccfg or CctConfig()
    v = result.critical
    post_stage = scenario.post
    diag: dict = {}
    fterm = v.fault.termination
    # 1. the post-fault constraint folded during the fault
    if fterm.kind is TerminationKind.SINGULARITY and fterm.which == "shadow":
        try:
            t_star, pt = locate_singularity_crossing(v.fault, "shadow")
        except (NoCrossing, NewtonFailure) as exc:
            raise Unclassifiable(f"shadow crossing could not be located: {exc}") from exc
        return Mechanism(MechanismKind.SINGULARITY_AT_CLEARING, pt, None, t_star, True,
                         {"delta_post": eval_delta(post_stage, pt, params)})
    if v.post is None:
        raise Unclassifiable("fault stage ended without a post-fault run",
                             {"fault_termination": str(fterm)})
    post = v.post
    # 2. close pass by an equilibrium
    fn = np.array([np.linalg.norm(post_stage.f(post.x[i], post.y[i], params))
                   for i in range(len(post))])
    i_min = int(np.argmin(fn))
    diag["min_f"] = float(fn[i_min])
    zs = np.hstack([post.x, post.y])
    try:
        eq = find_equilibrium(post_stage, post.point(i_min), params)
        el = classify_equilibrium(post_stage, eq, params, delta_floor=cfg.delta_floor)
        gap = float(np.min(np.linalg.norm(zs - eq.z, axis=1)))
        diag.update(equilibrium=el.label, equilibrium_gap=gap)
        # Near a mechanism transition the controlling element degenerates and
        # the critical run approaches it slowly; a type-1 UEP within the
        # capture distance of the run still controls it.
        close = fn[i_min] <= ccfg.eps_uep or gap <= ccfg.capture
        if close and el.kind is ElementKind.UEP and el.uep_type == 1:
            return Mechanism(MechanismKind.LOSS_OF_SYNCHRONISM, eq, el, float(post.t[i_min]),
                             True, diag)
    except CctError as exc:
        diag["equilibrium_error"] = f"{type(exc).__name__}: {exc}"
    # 3. the run ended on the singular surface
    pterm = post.termination
    if pterm.kind is TerminationKind.SINGULARITY:
        end = pterm.point if pterm.point is not None else post.final
        sigma = post_orientation(scenario, params)
        n_tail = max(3, int(math.ceil(ccfg.kappa_tail * len(post))))
        first = max(0, len(post) - n_tail)
        # the closing regularized path belongs to the tail as a whole
        k = len(post) - 2
        while k >= 0 and k in set(post.bridges):
            first = min(first, k)
            k -= 1
        tail = range(first, len(post))
        kap = [(_kappa_norm(post_stage, post, i, params), i) for i in tail]
        k_end = float(np.linalg.norm(eval_kappa(post_stage, end, params)))
        k_min, i_k = min(kap)
        guess = end if k_end <= k_min else post.point(i_k)
        k_min = min(k_min, k_end)
        diag.update(kappa_min=k_min, kappa_end=k_end, t_end=pterm.t)
        pep = el = None
        try:
            pep = find_pseudo_ep(post_stage, guess, params)
            el = classify_pseudo_ep(post_stage, pep, params, sigma)
            gap = float(np.min(np.linalg.norm(zs - pep.z, axis=1)))
            diag.update(pseudo_class=el.element_class, pseudo_gap=gap)
        except CctError as exc:
            diag["refine_error"] = f"{type(exc).__name__}: {exc}"
        saddle = el is not None and el.element_class == PseudoClass.SADDLE.value
        if k_min <= ccfg.eps_kappa or (saddle and gap <= ccfg.capture):
            return Mechanism(MechanismKind.TRANSVERSE_SADDLE, pep if saddle else end,
                             el, pterm.t, saddle, diag)
        try:
            ss = find_semi_singular(post_stage, end, params)
            el = classify_semi_singular(post_stage, ss, params, sigma)
            diag["semi_class"] = el.element_class
            return Mechanism(MechanismKind.SEMI_SADDLE, ss, el, pterm.t,
                             el.element_class == "SemiSaddle", diag)
        except CctError as exc:
            diag["refine_error"] = f"{type(exc).__name__}: {exc}"
            return Mechanism(MechanismKind.SEMI_SADDLE, end, None, pterm.t, False, diag)
    diag["post_termination"] = str(pterm)
    raise Unclassifiable("no mechanism matches the critical trajectory", diag)


# ---------------------------------------------------------- sensitivities

@dataclass(frozen=True, eq=False)
class SensitivityAssembly:
    """Named blocks entering the CCT sensitivity formulas (None when unused)."""

    A1: np.ndarray | None = None
    B1: np.ndarray | None = None
    B2: np.ndarray | None = None
    B3: np.ndarray | None = None
    C1: np.ndarray | None = None
    C2: np.ndarray | None = None
    D1: np.ndarray | None = None
    D2: np.ndarray | None = None
    D3: np.ndarray | None = None
    E1: np.ndarray | None = None
    E2: np.ndarray | None = None
    E3: float | None = None
    F1: np.ndarray | None = None
    F2: np.ndarray | None = None
    F3: np.ndarray | None = None
    G1: np.ndarray | None = None
    G2: np.ndarray | None = None
    G3: float | None = None
    H1: np.ndarray | None = None
    v_sing: np.ndarray | None = None
    v_cu: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SensitivityResult:
    value: float
    mechanism: Mechanism
    cond: float
    assembly: SensitivityAssembly
    t_end: float = float("nan")


def clearing_state_sensitivity(scenario: ScenarioModel, result: CctResult, params: ParamSet,
                               cfg: IntegratorConfig | None = None, t_cl: float | None = None):
    """``(B1, B2, B3, A1)`` for clearing at ``t_cl`` (default: the critical run).

    The clearing-state sensitivity at fixed clearing time is ``B1 A1 + B3``.
    """
    cfg = cfg or IntegratorConfig()
    name = params.require_active()
    pre_sep, _ = scenario_equilibria(scenario, params)
    A1 = equilibrium_location_sensitivity(scenario.pre, pre_sep, params, name, cfg.delta_floor)
    if t_cl is None:
        fault = result.critical.fault
    else:
        run = FaultRun(scenario, params, cfg, t_cl)
        fault = run.traj
    ser = integrate_variational(fault, "both", name=name)
    st = ser.final
    xe, ye = fault.x[-1], fault.y[-1]
    B2 = np.asarray(scenario.fault.f(xe, ye, params), dtype=float)
    return st.Phi_x, B2, st.phi_p, A1


def sens_singularity_at_clearing(a: SensitivityAssembly, denom_tol: float = 1e-10):
    """CCT slope when the post-fault constraint folds at clearing; returns (value, |den|)."""
    v = np.asarray(a.v_sing, dtype=float)
    r = a.B1 @ a.A1 + a.B3
    num = v @ (a.C2 + a.C1 @ r)
    den = float(v @ (a.C1 @ a.B2))
    if abs(den) < denom_tol:
        raise DegenerateDenominator(f"denominator {den:.3e} below {denom_tol:.1e}")
    return float(-num / den), abs(den)


def post_fault_matrix(a: SensitivityAssembly):
    """Linear system for (dt_cl/dp, dt_end/dp, dy_end/dp) at a post-fault singular end."""
    r = a.D3 + a.D1 @ (a.B1 @ a.A1 + a.B3)
    E1, F1, G1 = np.atleast_2d(a.E1), np.atleast_2d(a.F1), np.atleast_2d(a.G1)
    col_cl = np.vstack([E1 @ a.D1 @ a.B2[:, None], F1 @ a.D1 @ a.B2[:, None],
                        G1 @ a.D1 @ a.B2[:, None]])
    col_end = np.vstack([E1 @ a.D2[:, None], F1 @ a.D2[:, None], G1 @ a.D2[:, None]])
    col_y = np.vstack([np.atleast_2d(a.E2), np.atleast_2d(a.F2), np.atleast_2d(a.G2)])
    mat = np.hstack([col_cl, col_end, col_y])
    rhs = -np.concatenate([np.atleast_1d(a.E3 + E1 @ r), a.F3 + F1 @ r,
                           np.atleast_1d(a.G3 + G1 @ r)])
    return mat, rhs


def sens_post_fault_singularity(a: SensitivityAssembly, sv_tol: float = 1e-10):
    """CCT slope for a semi-saddle or transverse saddle end; returns (value, sigma_min)."""
    mat, rhs = post_fault_matrix(a)
    sv = np.linalg.svd(mat, compute_uv=False)
    smin = float(sv[-1])
    if smin < sv_tol:
        raise IllConditioned(f"smallest singular value {smin:.3e} below {sv_tol:.1e}")
    sol = np.linalg.solve(mat, rhs)
    return float(sol[0]), smin


def sens_cuep(a: SensitivityAssembly, denom_tol: float = 1e-10):
    """CCT slope for loss of synchronism through a type-1 UEP; returns (value, |den|)."""
    v = np.asarray(a.v_cu, dtype=float)
    r = a.D3 + a.D1 @ (a.B1 @ a.A1 + a.B3)
    num = v @ (a.H1 - r)
    den = float(v @ (a.D1 @ a.B2))
    if abs(den) < denom_tol:
        raise DegenerateDenominator(f"denominator {den:.3e} below {denom_tol:.1e}")
    return float(num / den), abs(den)


def _fd_gradient(fun, pt: Point, params: ParamSet, name: str):
    """Central-difference gradient of a scalar field in x, y and one parameter."""
    z = pt.z
    n = pt.x.size
    grad = np.empty(z.size)
    for i in range(z.size):
        h = 1e-6 * max(1.0, abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        grad[i] = (fun(Point.from_z(zp, n), params) - fun(Point.from_z(zm, n), params)) / (2 * h)
    h = 1e-6 * max(1.0, abs(params[name]))
    dp = (fun(pt, params.shifted(h, name)) - fun(pt, params.shifted(-h, name))) / (2 * h)
    return grad[:n], grad[n:], float(dp)


def select_kappa_component(stage: StageModel, pt: Point, params: ParamSet, name: str):
    """Index of the kappa component whose constraint row best conditions the end point."""
    gx = np.atleast_2d(stage.gx(pt.x, pt.y, params))
    gy = np.atleast_2d(stage.gy(pt.x, pt.y, params))
    ex, ey, _ = delta_gradient(stage, pt, params, name)
    best, best_sv = 0, -1.0
    for i in range(stage.m):
        kx, ky, _ = _fd_gradient(lambda q, prm: float(eval_kappa(stage, q, prm)[i]), pt, params, name)
        mat = np.vstack([np.hstack([gx, gy]), np.concatenate([ex, ey]), np.concatenate([kx, ky])])
        sv = float(np.linalg.svd(mat, compute_uv=False)[-1])
        if sv > best_sv:
            best, best_sv = i, sv
    return best


def _post_fault_blocks_singular(scenario, result, params, cfg, ccfg, mech):
    post = result.critical.post
    stage = scenario.post
    name = params.require_active()
    n = stage.n
    t_end = post.termination.t
    cut = ccfg.truncation * t_end
    i_tr = int(np.searchsorted(post.t, cut, side="right")) - 1
    i_tr = max(0, min(i_tr, len(post) - 1))
    if post.bridges:
        i_tr = min(i_tr, post.bridges[0])
    ser = integrate_variational(post, "both", name=name, upto=i_tr)
    W0 = np.vstack([ser.S[-1], ser.dY[-1]])
    target = mech.point if mech.refined else None
    reg = continue_with_sensitivity(stage, post.point(i_tr), W0, params, p_column=n,
                                    name=name, target=target)
    end = reg.point
    f_end = np.asarray(stage.f(end.x, end.y, params), dtype=float)
    D = reg.dae_sensitivity(f_end)
    return D[:, :n], D[:, n], float(post.t[i_tr] + reg.s)


def _post_fault_blocks_cuep(scenario, result, params, cfg, ccfg, mech):
    post = result.critical.post
    stage = scenario.post
    name = params.require_active()
    n = stage.n
    fn = np.array([np.linalg.norm(stage.f(post.x[i], post.y[i], params)) for i in range(len(post))])
    below = np.flatnonzero(fn < ccfg.eps_uep)
    if ccfg.cuep_truncation == "first" and below.size:
        i_tr = int(below[0])
    else:
        i_tr = int(np.argmin(fn))
    if post.bridges and i_tr > post.bridges[0]:
        # the approach to the UEP runs close to the singular surface; carry
        # the sensitivities along the regularized flow to the closest point
        b0 = post.bridges[0]
        ser = integrate_variational(post, "both", name=name, upto=b0)
        W0 = np.vstack([ser.S[-1], ser.dY[-1]])
        reg = continue_with_sensitivity(stage, post.point(b0), W0, params, p_column=n,
                                        name=name, target=mech.element.location)
        end = reg.point
        D = reg.dae_sensitivity(np.asarray(stage.f(end.x, end.y, params), dtype=float))
        return D[:, :n], D[:, n], float(post.t[b0] + reg.s)
    ser = integrate_variational(post, "both", name=name, upto=i_tr)
    return ser.S[-1][:, :n], ser.S[-1][:, n], float(post.t[i_tr])


def cct_sensitivity(scenario: ScenarioModel, result: CctResult, params: ParamSet,
                    cfg: IntegratorConfig | None = None,
                    ccfg: CctConfig | None = None) -> SensitivityResult:
    """Dispatch to the sensitivity formula that matches the classified mechanism."""
    cfg = cfg or IntegratorConfig()
    ccfg = ccfg or CctConfig()
    mech = result.mechanism
    if mech is None:
        mech = classify_mechanism(scenario, result, params, cfg, ccfg)
        result = replace(result, mechanism=mech)
    name = params.require_active()
    post = scenario.post
    if mech.kind is MechanismKind.SINGULARITY_AT_CLEARING:
        B1, B2, B3, A1 = clearing_state_sensitivity(scenario, result, params, cfg,
                                                    t_cl=mech.t_event)
        pt = mech.point
        gy = np.atleast_2d(post.gy(pt.x, pt.y, params))
        a = SensitivityAssembly(A1=A1, B1=B1, B2=B2, B3=B3,
                                C1=np.atleast_2d(post.gx(pt.x, pt.y, params)),
                                C2=post.dgdp(pt.x, pt.y, params, name),
                                v_sing=left_null_vector(gy))
        val, cond = sens_singularity_at_clearing(a, ccfg.denom_tol)
        return SensitivityResult(val, mech, cond, a, mech.t_event)
    B1, B2, B3, A1 = clearing_state_sensitivity(scenario, result, params, cfg)
    if mech.kind is MechanismKind.LOSS_OF_SYNCHRONISM:
        D1, D3, t_end = _post_fault_blocks_cuep(scenario, result, params, cfg, ccfg, mech)
        el = mech.element
        H1 = equilibrium_location_sensitivity(post, el.location, params, name, cfg.delta_floor)
        a = SensitivityAssembly(A1=A1, B1=B1, B2=B2, B3=B3, D1=D1, D3=D3, H1=H1, v_cu=el.v_cu)
        val, cond = sens_cuep(a, ccfg.denom_tol)
        return SensitivityResult(val, mech, cond, a, t_end)
    D1, D3, t_end = _post_fault_blocks_singular(scenario, result, params, cfg, ccfg, mech)
    pt = mech.point
    ex, ey, ep = delta_gradient(post, pt, params, name)
    if mech.kind is MechanismKind.SEMI_SADDLE:
        lam = lambda q, prm: eval_semi_singular_indicator(post, q, prm)  # noqa: E731
    else:
        i = select_kappa_component(post, pt, params, name)
        lam = lambda q, prm: float(eval_kappa(post, q, prm)[i])  # noqa: E731
    gx_, gy_, gp_ = _fd_gradient(lam, pt, params, name)
    a = SensitivityAssembly(
        A1=A1, B1=B1, B2=B2, B3=B3, D1=D1, D3=D3,
        D2=np.asarray(post.f(pt.x, pt.y, params), dtype=float),
        E1=ex, E2=ey, E3=ep,
        F1=np.atleast_2d(post.gx(pt.x, pt.y, params)),
        F2=np.atleast_2d(post.gy(pt.x, pt.y, params)),
        F3=post.dgdp(pt.x, pt.y, params, name),
        G1=gx_, G2=gy_, G3=gp_)
    val, cond = sens_post_fault_singularity(a, ccfg.sv_tol)
    return SensitivityResult(val, mech, cond, a, t_end)


# ----------------------------------------------------------------- oracle

def find_bracket(scenario: ScenarioModel, params: ParamSet, cfg: IntegratorConfig,
                 ccfg: CctConfig, center: float, width: float,
                 limits: tuple[float, float] | None = None) -> tuple[float, float]:
    """Smallest verified bracket around ``center``, widening by 4x per attempt."""
    limits = limits or ccfg.bracket
    run = FaultRun(scenario, params, cfg, limits[1])
    w = width
    for _ in range(8):
        lo, hi = max(limits[0], center - w), min(limits[1], center + w)
        v_lo = judge_stability(scenario, lo, params, cfg, fault_run=run,
                               t_max_growth=ccfg.t_max_growth)
        if v_lo.stable:
            v_hi = judge_stability(scenario, hi, params, cfg, fault_run=run,
                                   t_max_growth=ccfg.t_max_growth)
            if not v_hi.stable:
                return lo, hi
        if lo == limits[0] and hi == limits[1]:
            break
        w *= 4.0
    raise BracketInvalid(f"no bracket found around {center:.12g}")


def fd_oracle(scenario: ScenarioModel, params: ParamSet, cfg: IntegratorConfig | None = None,
              ccfg: CctConfig | None = None, delta: float | None = None, *,
              base_cct: float | None = None, slope_hint: float = 0.0,
              bracket: tuple[float, float] | None = None) -> float:
    """Central difference of the CCT in the active parameter."""
    cfg = cfg or IntegratorConfig()
    ccfg = ccfg or CctConfig()
    delta = ccfg.fd_delta if delta is None else delta
    name = params.require_active()
    values = []
    for sgn in (1.0, -1.0):
        prm = params.shifted(sgn * delta, name)
        if base_cct is not None:
            center = base_cct + sgn * delta * slope_hint
            width = max(50 * ccfg.fd_cct_tol, 0.25 * abs(slope_hint) * delta + 2e-4)
            br = find_bracket(scenario, prm, cfg, ccfg, center, width, bracket)
            res = compute_cct(scenario, prm, cfg, ccfg, br, classify=False,
                              tol=ccfg.fd_cct_tol, verified=True)
        else:
            res = compute_cct(scenario, prm, cfg, ccfg, bracket, classify=False,
                              tol=ccfg.fd_cct_tol)
        values.append(res.cct)
    return (values[0] - values[1]) / (2.0 * delta)
