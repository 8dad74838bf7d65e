"""Shared fixtures that are plain functions (no pytest magic)."""

import numpy as np

from cctsens.integrator import solve_algebraic
from cctsens.model import Point, StageModel


def lift(stage: StageModel) -> StageModel:
    """Same dynamics with a second algebraic variable y2 = y1**2 appended.

    The extra constraint row makes m = 2 so that row permutations are not
    trivial.  delta and its gradient fall back to the generic routines.
    """
    n = stage.n

    def y1(y):
        return np.asarray(y[:1], dtype=float)

    def g(x, y, p):
        return np.concatenate([np.atleast_1d(stage.g(x, y1(y), p)), [y[1] - y[0] ** 2]])

    def gx(x, y, p):
        return np.vstack([np.atleast_2d(stage.gx(x, y1(y), p)), np.zeros((1, n))])

    def gy(x, y, p):
        top = np.atleast_2d(stage.gy(x, y1(y), p))
        return np.array([[top[0, 0], 0.0], [-2.0 * y[0], 1.0]])

    def fy(x, y, p):
        return np.hstack([np.atleast_2d(stage.fy(x, y1(y), p)), np.zeros((n, 1))])

    return StageModel(
        n=n, m=2, f=lambda x, y, p: stage.f(x, y1(y), p), g=g,
        fx=lambda x, y, p: stage.fx(x, y1(y), p), fy=fy, gx=gx, gy=gy,
        fp=None if stage.fp is None else (lambda x, y, p, nm: stage.fp(x, y1(y), p, nm)),
        gp=None, name=stage.name + "-lifted", params_used=stage.params_used)


def lift_point(pt: Point) -> Point:
    return Point(pt.x, [pt.y[0], pt.y[0] ** 2])


def consistent_start(stage, x0, y_guess, params, cfg):
    return Point(x0, solve_algebraic(stage, np.asarray(x0, dtype=float), y_guess, params, cfg))


def flow_fd_check(stage, start, params, cfg, *, t_max, sep=None, delta=1e-5, tail=0.02):
    """Largest relative mismatch between variational and finite-difference flow sensitivities.

    Central differences use perturbed initial states (y re-solved) and the
    perturbed active parameter, on the same fixed step grid.  Samples after
    the first regularized bridge and, for runs ending on the singular
    surface, in the final ``tail`` fraction of the run are skipped.
    Returns ``(worst relative error, samples compared)``.
    """
    from cctsens.integrator import TerminationKind, simulate
    from cctsens.trajsens import integrate_variational

    def run(x0, prm):
        pt = consistent_start(stage, x0, start.y, prm, cfg)
        return simulate(stage, pt, prm, cfg, t_max=t_max, sep=sep)

    base = run(start.x, params)
    last = len(base) - 1
    if base.bridges:
        last = min(last, base.bridges[0])
    if base.termination.kind is TerminationKind.SINGULARITY:
        cut = (1.0 - tail) * base.termination.t
        last = min(last, int(np.searchsorted(base.t, cut, side="right")) - 1)
    n = stage.n
    columns = []
    for j in range(n + 1):
        runs = []
        for sgn in (1.0, -1.0):
            if j < n:
                x0 = start.x.copy()
                x0[j] += sgn * delta
                runs.append(run(x0, params))
            else:
                runs.append(run(start.x, params.shifted(sgn * delta)))
        columns.append(runs)
    for plus, minus in columns:
        for tr in (plus, minus):
            last = min(last, len(tr) - 1, *(b for b in tr.bridges))
    ser = integrate_variational(base, "both", upto=last)
    worst = 0.0
    for i in range(1, last + 1):
        fd = np.empty((n, n + 1))
        for j, (plus, minus) in enumerate(columns):
            if plus.t[i] != base.t[i] or minus.t[i] != base.t[i]:
                raise AssertionError("perturbed runs left the common step grid")
            fd[:, j] = (plus.x[i] - minus.x[i]) / (2 * delta)
        err = np.linalg.norm(ser.S[i] - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, float(err))
    return worst, last
