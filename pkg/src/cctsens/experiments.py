"""Single runs, parameter sweeps and phase-portrait datasets written as CSV.

Every writer formats numbers with twelve significant digits and rows come
out in a fixed order, so re-running a configuration reproduces its files
byte for byte.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cct import (CctResult, MechanismKind, compute_cct, cct_sensitivity, fd_oracle,
                  judge_stability, post_orientation, scenario_equilibria)
from .config import RunConfig
from .critical import (ElementKind, classify_equilibrium, classify_pseudo_ep,
                       classify_semi_singular, element_residuals, find_equilibrium,
                       find_pseudo_ep, find_semi_singular, trace_singular_surface)
from .exceptions import CctError
from .integrator import Trajectory, format_number, simulate, solve_algebraic
from .model import Point

SWEEP_COLUMNS = ("p", "cct", "mechanism", "dcct_dp", "dcct_dp_fd", "rel_err", "cond", "status")
TANGENT_COLUMNS = ("p", "cct", "tan_p0", "tan_cct0", "tan_p1", "tan_cct1")

EXIT_OK = 0
EXIT_TOLERANCE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_number(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _write_trajectory(tr: Trajectory | None, path: Path) -> None:
    if tr is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tr.to_csv(path)


# ------------------------------------------------------------------ single

@dataclass(frozen=True)
class SingleReport:
    """Outcome of ``run_single``.

    With a clearing time only ``verdict`` is set; without one the CCT, its
    mechanism, the formula sensitivity and the oracle slope are filled in.
    """

    verdict: object
    result: CctResult | None = None
    dcct_dp: float = math.nan
    dcct_dp_fd: float = math.nan
    cond: float = math.nan
    files: tuple[Path, ...] = ()

    def summary(self) -> list[tuple[str, object]]:
        v = self.verdict
        rows = [("t_cl", v.t_cl), ("stable", "yes" if v.stable else "no"),
                ("reason", v.reason)]
        for stage, tr in (("fault", v.fault), ("post", v.post)):
            if tr is not None:
                rows.append((f"{stage}_termination", tr.termination.kind.value))
                rows.append((f"{stage}_t_end", tr.termination.t))
        if self.result is not None:
            r = self.result
            rows += [("cct", r.cct), ("cct_low", r.low), ("cct_high", r.high)]
            if r.mechanism is not None:
                m = r.mechanism
                rows += [("mechanism", m.label),
                         ("element", m.element.label if m.element is not None else "none"),
                         ("refined", "yes" if m.refined else "no")]
                rows += [(f"point_{i + 1}", c) for i, c in enumerate(m.point.z)]
            rows += [("dcct_dp", self.dcct_dp), ("dcct_dp_fd", self.dcct_dp_fd),
                     ("cond", self.cond)]
        return rows


def run_single(cfg: RunConfig, t_cl: float | None = None) -> SingleReport:
    """Simulate one clearing time, or compute the CCT when ``t_cl`` is None.

    Writes the fault and post-fault trajectories of the run (the critical
    run in CCT mode) and a key/value summary to ``cfg.out_dir``.
    """
    scenario, params = cfg.build()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if t_cl is not None:
        verdict = judge_stability(scenario, t_cl, params, cfg.solver,
                                  t_max_growth=cfg.cct.t_max_growth)
        report = SingleReport(verdict)
    else:
        result = compute_cct(scenario, params, cfg.solver, cfg.cct)
        sens = cct_sensitivity(scenario, result, params, cfg.solver, cfg.cct)
        fd = fd_oracle(scenario, params, cfg.solver, cfg.cct, base_cct=result.cct,
                       slope_hint=sens.value)
        report = SingleReport(result.critical, result, sens.value, fd, sens.cond)
    files = [out / "summary.csv"]
    write_csv(out / "summary.csv", ("key", "value"), report.summary())
    if cfg.trajectories:
        _write_trajectory(report.verdict.fault, out / "fault.csv")
        _write_trajectory(report.verdict.post, out / "post.csv")
        files += [out / "fault.csv"] + ([out / "post.csv"] if report.verdict.post else [])
    return replace(report, files=tuple(files))


# ------------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepRow:
    p: float
    cct: float = math.nan
    mechanism: str = ""
    dcct_dp: float = math.nan
    dcct_dp_fd: float = math.nan
    rel_err: float = math.nan
    cond: float = math.nan
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "tolerance")

    def values(self) -> tuple:
        return (self.p, self.cct, self.mechanism, self.dcct_dp, self.dcct_dp_fd,
                self.rel_err, self.cond, self.status)


def sweep_point(cfg: RunConfig, value: float) -> SweepRow:
    """CCT, mechanism, formula slope and oracle slope at one sweep value.

    Numerical failures become the row's status instead of propagating.
    """
    scenario, params = cfg.build(value)
    row = SweepRow(p=value)
    try:
        result = compute_cct(scenario, params, cfg.solver, cfg.cct)
        row = replace(row, cct=result.cct, mechanism=result.mechanism.label)
        sens = cct_sensitivity(scenario, result, params, cfg.solver, cfg.cct)
        row = replace(row, dcct_dp=sens.value, cond=sens.cond)
        fd = fd_oracle(scenario, params, cfg.solver, cfg.cct, base_cct=result.cct,
                       slope_hint=sens.value)
    except CctError as exc:
        return replace(row, status=type(exc).__name__)
    rel = abs(sens.value - fd) / abs(fd) if fd != 0 else abs(sens.value)
    tol = cfg.sweep.tolerance if cfg.sweep is not None else 0.02
    return replace(row, dcct_dp_fd=fd, rel_err=rel,
                   status="ok" if rel <= tol else "tolerance")


def _sweep_task(args):
    cfg, value = args
    return sweep_point(cfg, value)


def transitions(rows) -> list[int]:
    """Indices i where the mechanism changes between row i and row i + 1."""
    out = []
    labelled = [(i, r.mechanism) for i, r in enumerate(rows) if r.mechanism]
    for (i, a), (j, b) in zip(labelled, labelled[1:]):
        if a != b:
            out.append(i)
    return out


def tangent_rows(rows, half_width: float):
    """Tangent segment end points ``p -/+ half_width`` along the formula slope."""
    for r in rows:
        s = r.dcct_dp
        yield (r.p, r.cct, r.p - half_width, r.cct - half_width * s,
               r.p + half_width, r.cct + half_width * s)


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    transitions: tuple[int, ...]
    excused: frozenset
    exit_code: int
    files: tuple[Path, ...] = ()

    def failures(self) -> list[SweepRow]:
        return [r for i, r in enumerate(self.rows) if i not in self.excused and r.status != "ok"]


def run_sweep(cfg: RunConfig, workers: int = 1) -> SweepReport:
    """Sweep the active parameter and compare the formula with the oracle.

    Rows keep the sweep order whatever the completion order.  The exit code
    is 0 when every point not adjacent to a mechanism transition meets the
    tolerance, 2 when one misses it and 4 when one failed numerically.
    """
    if cfg.sweep is None:
        raise CctError("configuration has no [sweep] section")
    values = cfg.sweep.values()
    tasks = [(cfg, v) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = tuple(pool.map(_sweep_task, tasks))
    else:
        rows = tuple(_sweep_task(t) for t in tasks)
    trans = transitions(rows)
    excused = set()
    if cfg.sweep.skip_adjacent:
        for i in trans:
            excused.update((i, i + 1))
    failing = [r for i, r in enumerate(rows) if i not in excused and r.status != "ok"]
    if any(not r.ok for r in failing):
        code = EXIT_NUMERICAL
    elif failing:
        code = EXIT_TOLERANCE
    else:
        code = EXIT_OK
    out = cfg.out_dir
    step = (values[-1] - values[0]) / max(1, len(values) - 1)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, (r.values() for r in rows))
    write_csv(out / "tangents.csv", TANGENT_COLUMNS, tangent_rows(rows, 0.5 * step))
    return SweepReport(rows, tuple(trans), frozenset(excused), code,
                       (out / "sweep.csv", out / "tangents.csv"))


# ---------------------------------------------------------------- portrait

def _grid(spec) -> list[np.ndarray]:
    if any(k == 0 for k in spec.points) or not spec.points:
        return []
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(spec.x_lo, spec.x_hi, spec.points)]
    return [np.array(c) for c in itertools.product(*axes)]


def _same(z, found, tol=1e-6) -> bool:
    return any(np.linalg.norm(z - w) <= tol for w in found)


def locate_elements(scenario, params, seeds, trace_points, stride: int = 10):
    """Equilibria from ``seeds`` plus pseudo equilibria and semi-singular points
    grown from every ``stride``-th trace point, each classified.
    """
    stage = scenario.post
    sigma = post_orientation(scenario, params)
    elements, seen = [], []
    for s in seeds:
        try:
            eq = find_equilibrium(stage, s, params)
            if not _same(eq.z, seen):
                seen.append(eq.z)
                elements.append(classify_equilibrium(stage, eq, params))
        except CctError:
            continue
    for pt in trace_points[::stride]:
        for finder, classify in ((find_pseudo_ep, classify_pseudo_ep),
                                 (find_semi_singular, classify_semi_singular)):
            try:
                q = finder(stage, pt, params)
                if not _same(q.z, seen):
                    seen.append(q.z)
                    elements.append(classify(stage, q, params, sigma))
            except CctError:
                continue
    return elements


@dataclass(frozen=True)
class PortraitReport:
    seeds: int
    skipped: int
    trace: tuple[Point, ...]
    trace_failures: int
    elements: tuple
    critical: CctResult | None
    files: tuple[Path, ...] = ()


def run_portrait(cfg: RunConfig) -> PortraitReport:
    """Grid trajectories, singular-surface trace, critical elements and the
    critical run of the fault, written as ``portrait_*.csv`` files.
    """
    spec = cfg.portrait
    scenario, params = cfg.build()
    stage = scenario.post
    n, m = stage.n, stage.m
    _, sep = scenario_equilibria(scenario, params)
    out = cfg.out_dir
    files = []

    grid_rows, skipped = [], 0
    grid = _grid(spec)
    run_cfg = replace(cfg.solver, t_max=spec.t_span)
    ends = []
    for k, x0 in enumerate(grid):
        if x0.size != n:
            raise CctError(f"portrait grid has {x0.size} coordinates, the system has {n} states")
        try:
            y0 = solve_algebraic(stage, x0, sep.y, params, cfg.solver)
            tr = simulate(stage, Point(x0, y0), params, run_cfg)
        except CctError:
            skipped += 1
            continue
        ends.append(tr.final)
        for i in range(len(tr)):
            grid_rows.append((k, tr.t[i], *tr.x[i], *tr.y[i], tr.delta[i]))
    header = ("seed", "t", *(f"x{i + 1}" for i in range(n)), *(f"y{i + 1}" for i in range(m)),
              "delta")
    write_csv(out / "portrait_grid.csv", header, grid_rows)
    files.append(out / "portrait_grid.csv")

    trace, trace_failures = [], 0
    if m == 1:
        guesses = [sep]
        for scale in (-1.0, 0.5, 2.0):
            z = sep.z.copy()
            z[n:] *= scale
            guesses.append(z)
        values = np.linspace(spec.trace_lo, spec.trace_hi, spec.trace_points)
        trace, trace_failures = trace_singular_surface(stage, params, spec.trace_var, values,
                                                       guesses)
    write_csv(out / "portrait_trace.csv", (*header[2:-1], "g_residual"),
              ((*q.z, float(np.linalg.norm(stage.g(q.x, q.y, params)))) for q in trace))
    files.append(out / "portrait_trace.csv")

    elements = locate_elements(scenario, params, [sep, *ends], trace)
    el_rows = []
    for el in elements:
        res = element_residuals(stage, el, params)
        if el.kind in (ElementKind.SEP, ElementKind.UEP):
            resid = max(res["f"], res["g"])
        elif el.kind is ElementKind.PSEUDO_EP:
            resid = max(res["g"], res["delta"], res["kappa"])
        else:
            resid = max(res["g"], res["delta"], res["indicator"])
        el_rows.append((el.kind.value, el.label, *el.location.z, resid))
    write_csv(out / "portrait_elements.csv", ("kind", "label", *header[2:-1], "residual"),
              el_rows)
    files.append(out / "portrait_elements.csv")

    if spec.tcl is not None:
        verdict = judge_stability(scenario, spec.tcl, params, cfg.solver,
                                  t_max_growth=cfg.cct.t_max_growth)
        critical = None
    else:
        critical = compute_cct(scenario, params, cfg.solver, cfg.cct)
        verdict = critical.critical
    _write_trajectory(verdict.fault, out / "portrait_critical_fault.csv")
    _write_trajectory(verdict.post, out / "portrait_critical_post.csv")
    files.append(out / "portrait_critical_fault.csv")
    if verdict.post is not None:
        files.append(out / "portrait_critical_post.csv")
    return PortraitReport(len(grid), skipped, tuple(trace), trace_failures, tuple(elements),
                          critical, tuple(files))


__all__ = [
    "SWEEP_COLUMNS", "TANGENT_COLUMNS", "EXIT_OK", "EXIT_TOLERANCE", "EXIT_CONFIG",
    "EXIT_NUMERICAL", "SingleReport", "SweepRow", "SweepReport", "PortraitReport",
    "run_single", "sweep_point", "run_sweep", "run_portrait", "transitions", "tangent_rows",
    "locate_elements", "write_csv", "MechanismKind",
]
