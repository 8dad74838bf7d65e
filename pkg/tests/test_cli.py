import csv
import io

import pytest

from cctsens import experiments
from cctsens.cli import main
from cctsens.experiments import SweepRow, run_sweep, transitions
from cctsens.config import parse_config


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def call(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def test_systems_list():
    code, text = call(["systems", "list"])
    assert code == 0
    for sid in ("example75", "smib_const", "smib_freq"):
        assert sid in text


@pytest.mark.parametrize("text", ["[scenario]\nsystem = nowhere",
                                  "[scenario]\nsystem = smib_const\n[cct]\nbracket = 3, 1"])
def test_config_errors_exit_3(tmp_path, text):
    assert call(["run", "--config", write(tmp_path, text)])[0] == 3


def test_missing_config_and_bad_flags_exit_3(tmp_path):
    assert call(["run", "--config", str(tmp_path / "none.ini")])[0] == 3
    path = write(tmp_path, "[scenario]\nsystem = smib_const")
    assert call(["sweep", "--config", path])[0] == 3
    assert call(["run", "--config", path, "--tcl", "-1"])[0] == 3
    sweep = write(tmp_path, "[scenario]\nsystem = smib_const\n[sweep]\nfrom = 0.3\nto = 0.4\n"
                  "steps = 2", "s.ini")
    assert call(["sweep", "--config", sweep, "--workers", "0"])[0] == 3


def test_bracket_without_a_cct_exits_4(tmp_path):
    path = write(tmp_path, "[scenario]\nsystem = example75\n[cct]\nbracket = 0, 1")
    assert call(["run", "--config", path, "--out", str(tmp_path / "o")])[0] == 4


def test_run_at_zero_clearing_time(tmp_path):
    path = write(tmp_path, "[scenario]\nsystem = smib_const")
    out = tmp_path / "o"
    code, text = call(["run", "--config", path, "--tcl", "0", "--out", str(out)])
    assert code == 0
    assert "stable = yes" in text
    rows = list(csv.reader((out / "post.csv").open()))
    assert rows[0] == ["t", "x1", "x2", "y1", "delta_active"]
    first = (out / "fault.csv").read_text().splitlines()[0]
    assert first == "t,x1,x2,y1,ypost1,delta_active,delta_post"
    for cell in rows[2][1:]:
        digits = cell.split("e")[0].lstrip("-").replace(".", "").lstrip("0")
        assert len(digits) <= 12


def test_run_just_past_the_cct_ends_on_the_surface(tmp_path):
    # CCT of the constant-load machine at Pm = 0.3 is 1.98660...
    path = write(tmp_path, "[scenario]\nsystem = smib_const")
    code, text = call(["run", "--config", path, "--tcl", "1.9867", "--out", str(tmp_path)])
    assert code == 0
    assert "stable = no" in text
    assert "post_termination = SingularityReached" in text


def test_run_output_is_reproducible(tmp_path):
    path = write(tmp_path, "[scenario]\nsystem = example75")
    texts = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        call(["run", "--config", path, "--tcl", "5.01", "--out", str(out)])
        texts.append([(out / f).read_bytes() for f in ("summary.csv", "fault.csv", "post.csv")])
    assert texts[0] == texts[1]


def test_portrait_with_empty_grid(tmp_path):
    text = """
[scenario]
system = example75
[portrait]
x_lo = -4, -3
x_hi = 2, 3
points = 0, 0
trace_lo = -4
trace_hi = 0
trace_points = 21
tcl = 4.9
"""
    out = tmp_path / "p"
    code, printed = call(["portrait", "--config", write(tmp_path, text), "--out", str(out)])
    assert code == 0
    assert "seeds = 0" in printed
    grid = (out / "portrait_grid.csv").read_text().splitlines()
    assert grid == ["seed,t,x1,x2,y1,delta"]
    trace = list(csv.DictReader((out / "portrait_trace.csv").open()))
    pts = [(float(r["x1"]), float(r["x2"]), float(r["y1"])) for r in trace]
    for target in ((0, 0, 0), (-3, -2, 1)):
        assert min(sum((a - b) ** 2 for a, b in zip(p, target)) ** 0.5 for p in pts) <= 1e-6
    labels = {r["label"] for r in csv.DictReader((out / "portrait_elements.csv").open())}
    assert {"SEP", "PseudoEP(TransverseSaddle)", "SemiSingular(SemiSaddle)"} <= labels
    assert (out / "portrait_critical_post.csv").exists()


# ------------------------------------------------ sweep bookkeeping

def fake_rows(labels, errs, statuses=None):
    statuses = statuses or ["ok"] * len(labels)
    return {0.1 * i: SweepRow(p=0.1 * i, cct=1 - 0.1 * i, mechanism=lab, dcct_dp=-1.0,
                              dcct_dp_fd=-1.0, rel_err=e, cond=1.0, status=s)
            for i, (lab, e, s) in enumerate(zip(labels, errs, statuses))}


def sweep_cfg(tmp_path, steps):
    return parse_config(f"[scenario]\nsystem = smib_const\n[sweep]\nfrom = 0\nto = "
                        f"{0.1 * (steps - 1)}\nsteps = {steps}\n[output]\ndir = {tmp_path}")


def patched(monkeypatch, table):
    monkeypatch.setattr(experiments, "sweep_point",
                        lambda cfg, v: table[min(table, key=lambda k: abs(k - v))])


def test_transitions_are_found():
    rows = list(fake_rows(["A", "A", "B", "B", "B"], [0] * 5).values())
    assert transitions(rows) == [1]


def test_points_next_to_a_transition_are_excused(tmp_path, monkeypatch):
    table = fake_rows(["A", "A", "B", "B"], [0.0, 0.5, 0.5, 0.0],
                      ["ok", "tolerance", "tolerance", "ok"])
    patched(monkeypatch, table)
    report = run_sweep(sweep_cfg(tmp_path, 4))
    assert report.exit_code == 0 and report.transitions == (1,)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "p,cct,mechanism,dcct_dp,dcct_dp_fd,rel_err,cond,status"
    assert len(lines) == 5
    tan = (tmp_path / "tangents.csv").read_text().splitlines()
    assert tan[0] == "p,cct,tan_p0,tan_cct0,tan_p1,tan_cct1"


def test_tolerance_and_numerical_failures(tmp_path, monkeypatch):
    patched(monkeypatch, fake_rows(["A", "A", "A"], [0.0, 0.5, 0.0],
                                   ["ok", "tolerance", "ok"]))
    assert run_sweep(sweep_cfg(tmp_path, 3)).exit_code == 2
    patched(monkeypatch, fake_rows(["A", "", "A"], [0.0, 0.0, 0.0],
                                   ["ok", "NewtonFailure", "ok"]))
    assert run_sweep(sweep_cfg(tmp_path, 3)).exit_code == 4
