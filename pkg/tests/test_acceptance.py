"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible with
``pytest -s`` or in the ``-v`` log) before asserting.  The three sweeps
dominate the run time (roughly 15 minutes on one core).
"""

import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from cctsens.cct import (CctConfig, MechanismKind, cct_sensitivity, compute_cct,
                         judge_stability, post_orientation, scenario_equilibria)
from cctsens.cli import main
from cctsens.config import parse_config
from cctsens.critical import (classify_equilibrium, classify_pseudo_ep, classify_semi_singular,
                              find_equilibrium, find_pseudo_ep, find_semi_singular,
                              pseudo_ep_residual, semi_singular_residual)
from cctsens.experiments import run_sweep
from cctsens.integrator import IntegratorConfig
from cctsens.model import Point, eval_delta, eval_kappa, transform_constraints
from cctsens.systems import build_system, get_system

from helpers import flow_fd_check, lift, lift_point


def report(capsys, n, ok, detail):
    with capsys.disabled():
        sys.stdout.write(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}\n")


def sweep(tmp_path, system, param, lo, hi, steps, **extra):
    text = (f"[scenario]\nsystem = {system}\n"
            + "".join(f"{k} = {v}\n" for k, v in extra.items())
            + f"[sweep]\nparam = {param}\nfrom = {lo}\nto = {hi}\nsteps = {steps}\n"
            f"[output]\ndir = {tmp_path}\n")
    return run_sweep(parse_config(text))


def worst_rel(rows, skip=()):
    return max((r.rel_err for i, r in enumerate(rows) if i not in skip), default=0.0)


def test_criterion_1_example75_post_fault_formula(tmp_path, capsys):
    t0 = time.perf_counter()
    rep = sweep(tmp_path, "example75", "p", -0.4, 0.4, 9)
    elapsed = time.perf_counter() - t0
    rows = rep.rows
    singular = all(r.mechanism in (MechanismKind.SEMI_SADDLE.value,
                                   MechanismKind.TRANSVERSE_SADDLE.value) for r in rows)
    worst = worst_rel(rows)
    ok = (all(r.status == "ok" for r in rows) and worst <= 0.02 and elapsed <= 300
          and singular)
    report(capsys, 1, ok, f"worst rel err {worst:.3g}, {elapsed:.0f} s, "
           f"mechanisms {sorted({r.mechanism for r in rows})}")
    assert singular
    assert worst <= 0.02 and all(r.status == "ok" for r in rows)
    assert elapsed <= 300


def test_criterion_2_machine_model_power_sweep(tmp_path, capsys):
    rep = sweep(tmp_path, "smib_const", "Pm", 0.3, 0.5, 21)
    rows = rep.rows
    ccts = np.array([r.cct for r in rows])
    decreasing = bool(np.all(np.diff(ccts) < 0))
    one = len(rep.transitions) == 1
    i = rep.transitions[0] if one else 0
    # the transition lies between the two samples around it
    located = one and rows[i].p >= 0.40 and rows[i + 1].p <= 0.45
    skip = {rep.transitions[0], rep.transitions[0] + 1} if one else set()
    worst = worst_rel(rows, skip)
    ok = decreasing and located and worst <= 0.02
    report(capsys, 2, ok, f"decreasing={decreasing}, transitions in "
           f"{[(rows[k].p, rows[k + 1].p) for k in rep.transitions]}, worst rel err {worst:.3g}")
    assert decreasing
    assert located
    assert worst <= 0.02
    assert all(rows[i].status == "ok" for i in range(len(rows)) if i not in skip)


def test_criterion_3_frequency_load_inertia_sweep(tmp_path, capsys):
    rep = sweep(tmp_path, "smib_freq", "M", 0.1, 0.4, 13)
    rows = rep.rows
    one = len(rep.transitions) == 1
    i = rep.transitions[0] if one else 0
    located = one and rows[i].p >= 0.2 and rows[i + 1].p <= 0.25
    left, right = rows[i].dcct_dp, rows[i + 1].dcct_dp
    kink = abs(left - right) / max(abs(left), abs(right)) if one else 0.0
    worst = worst_rel(rows, {i, i + 1})
    ok = located and kink > 0.10 and worst <= 0.02
    report(capsys, 3, ok, f"transition between M={rows[i].p} and {rows[i + 1].p}, "
           f"one-sided slopes {left:.6g} / {right:.6g} ({kink:.1%}), worst rel err {worst:.3g}")
    assert located
    assert kink > 0.10
    assert worst <= 0.02


CLEARINGS = {"example75": (4.9, 5.05), "smib_const": (1.9, 2.0), "smib_freq": (0.95, 1.05)}


def test_criterion_4_trajectory_sensitivities(capsys):
    results = []
    cases = [(sid, {}, tcl) for sid, tcls in CLEARINGS.items() for tcl in tcls]
    cases.append(("smib_const", {"Pm": 0.45}, 1.3))      # unstable without touching S
    for sid, over, tcl in cases:
        scenario, params = build_system(sid, over)
        cfg = IntegratorConfig(t_max=get_system(sid).t_max)
        pre, _ = scenario_equilibria(scenario, params)
        v = judge_stability(scenario, tcl, params, cfg)
        fault = flow_fd_check(scenario.fault, pre, params, cfg, t_max=tcl)
        post = flow_fd_check(scenario.post, v.clearing, params, cfg,
                             t_max=min(v.post.t[-1], 4.0))
        results.append((sid, over, tcl, v.stable, fault, post))
    worst = max(max(f[0], p[0]) for *_, f, p in results)
    fewest = min(min(f[1], p[1]) for *_, f, p in results)
    report(capsys, 4, worst <= 1e-3 and fewest >= 40,
           f"worst rel mismatch {worst:.3g} over {len(results)} runs x 2 stages")
    assert {stable for _, _, _, stable, _, _ in results} == {True, False}
    assert fewest >= 40
    assert worst <= 1e-3


def test_criterion_5_critical_elements(capsys):
    checks = {}
    scenario, params = build_system("example75", {"p": 0.0})
    post, sigma = scenario.post, post_orientation(scenario, params)
    ss = find_semi_singular(post, Point([0.1, -0.1], [0.1]), params)
    pep = find_pseudo_ep(post, Point([-2.8, -2.2], [1.1]), params)
    checks["semi-saddle position"] = np.max(np.abs(ss.z)) <= 1e-6
    checks["semi-saddle residual"] = np.max(np.abs(semi_singular_residual(post, ss, params))) <= 1e-8
    checks["semi-saddle class"] = classify_semi_singular(post, ss, params, sigma).element_class \
        == "SemiSaddle"
    checks["pseudo EP position"] = np.max(np.abs(pep.z - [-3, -2, 1])) <= 1e-6
    checks["pseudo EP residual"] = np.max(np.abs(pseudo_ep_residual(post, pep, params))) <= 1e-8
    checks["pseudo EP class"] = classify_pseudo_ep(post, pep, params, sigma).label \
        == "PseudoEP(TransverseSaddle)"
    classes, same_side = {}, {}
    c = np.sqrt(0.2)
    for Pm in (0.3, 0.5):
        sc, prm = build_system("smib_const", {"Pm": Pm})
        sig = post_orientation(sc, prm)
        guess = Point([np.arccos(c) + 0.05, -(Pm - 0.4) + 0.05], [0.5 * c - 0.02])
        classes[Pm] = classify_pseudo_ep(sc.post, find_pseudo_ep(sc.post, guess, prm),
                                         prm, sig).element_class
        _, sep = scenario_equilibria(sc, prm)
        uep = find_equilibrium(sc.post, Point([1.1, 0.0], [0.25]), prm)
        same_side[Pm] = bool(np.sign(eval_delta(sc.post, uep, prm)) == sig)
        if Pm == 0.5:
            el = classify_equilibrium(sc.post, uep, prm)
            checks["type-1 UEP at Pm 0.5"] = el.uep_type == 1
    checks["pseudo EP flips"] = classes == {0.3: "TransverseSaddle", 0.5: "TransverseSource"}
    checks["UEP crosses S"] = same_side == {0.3: False, 0.5: True}
    failed = [k for k, v in checks.items() if not v]
    report(capsys, 5, not failed, f"failed checks: {failed}" if failed else
           f"{len(checks)} checks")
    assert not failed


def _transformed(scenario):
    memo = {}

    def tf(stage):
        if id(stage) not in memo:
            memo[id(stage)] = transform_constraints(lift(stage), perm=[1, 0], scale=[-2.5, 0.4])
        return memo[id(stage)]

    guess = scenario.sep_guess
    return replace(scenario, pre=tf(scenario.pre), fault=tf(scenario.fault),
                   post=tf(scenario.post), sep_guess=lambda p: lift_point(guess(p)))


def _bracket_holds(scenario, res, params, cfg, ccfg):
    lo = judge_stability(scenario, res.low, params, cfg, fault_run=res.fault_run)
    hi = judge_stability(scenario, res.high, params, cfg, fault_run=res.fault_run)
    return (lo.stable and not hi.stable and res.low <= res.cct <= res.high
            and res.high - res.low <= ccfg.cct_tol)


def _max_residual(stage, traj, params):
    return max(np.max(np.abs(stage.g(traj.x[i], traj.y[i], params))) for i in range(len(traj)))


def test_criterion_6_invariants(capsys):
    kappa = residual = 0.0
    contract = True
    formula_gap = 0.0
    cases = [("example75", "p", 0.2), ("smib_const", "Pm", 0.35), ("smib_const", "Pm", 0.45),
             ("smib_freq", "M", 0.15)]
    kinds = set()
    for sid, name, value in cases:
        entry = get_system(sid)
        cfg, ccfg = IntegratorConfig(t_max=entry.t_max), CctConfig(bracket=entry.bracket)
        scenario, params = build_system(sid, {name: value}, active=name)
        pre, sep = scenario_equilibria(scenario, params)
        kappa = max(kappa, *(np.linalg.norm(eval_kappa(st, pt, params))
                             for st, pt in ((scenario.pre, pre), (scenario.post, sep))))
        values = []
        for sc in (scenario, _transformed(scenario)):
            res = compute_cct(sc, params, cfg, ccfg)
            sens = cct_sensitivity(sc, res, params, cfg, ccfg)
            kinds.add(res.mechanism.kind)
            values.append(sens.value)
            contract = contract and _bracket_holds(sc, res, params, cfg, ccfg)
            crit = res.critical
            residual = max(residual, _max_residual(sc.fault, crit.fault, params))
            if crit.post is not None:
                residual = max(residual, _max_residual(sc.post, crit.post, params))
            el = res.mechanism.element
            if el is not None and el.kind.value == "UEP":
                kappa = max(kappa, np.linalg.norm(eval_kappa(sc.post, el.location, params)))
        formula_gap = max(formula_gap, abs(values[0] - values[1]) / abs(values[0]))
    ok = (kappa <= 1e-10 and residual <= 1e-10 and contract and formula_gap <= 1e-5
          and len(kinds) == 4)
    report(capsys, 6, ok, f"kappa at equilibria {kappa:.2g}, constraint residual "
           f"{residual:.2g}, bracket contract {contract}, rescaled/permuted formula gap "
           f"{formula_gap:.2g}")
    assert len(kinds) == 4
    assert kappa <= 1e-10
    assert residual <= 1e-10
    assert contract
    assert formula_gap <= 1e-5


def test_criterion_7_determinism(tmp_path, capsys):
    cfg = tmp_path / "d.ini"
    cfg.write_text("[scenario]\nsystem = example75\n[sweep]\nfrom = -0.1\nto = 0.1\nsteps = 2\n"
                   "[portrait]\nx_lo = -1, 0\nx_hi = 1, 2\npoints = 2, 2\nt_span = 1\n"
                   "trace_lo = -1\ntrace_hi = 1\ntrace_points = 5\ntcl = 4.9\n")
    outputs = []
    for k, workers in enumerate(("1", "2")):
        out = tmp_path / f"o{k}"
        codes = [main(["run", "--config", str(cfg), "--out", str(out / "run")]),
                 main(["run", "--config", str(cfg), "--out", str(out / "tcl"), "--tcl", "5.01"]),
                 main(["sweep", "--config", str(cfg), "--out", str(out / "sweep"),
                       "--workers", workers]),
                 main(["portrait", "--config", str(cfg), "--out", str(out / "portrait")])]
        files = sorted(p for p in out.rglob("*.csv"))
        outputs.append((codes, {p.relative_to(out): p.read_bytes() for p in files}))
    same = outputs[0][1] == outputs[1][1]
    ok = same and outputs[0][0] == [0, 0, 0, 0]
    report(capsys, 7, ok, f"{len(outputs[0][1])} CSV files compared, identical={same}")
    assert outputs[0][0] == [0, 0, 0, 0]
    assert set(outputs[0][1]) == set(outputs[1][1])
    assert same
