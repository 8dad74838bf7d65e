import numpy as np
import pytest

from cctsens.exceptions import NoCrossing
from cctsens.integrator import IntegratorConfig, TerminationKind, simulate, solve_algebraic
from cctsens.model import Point, eval_delta
from cctsens.regularized import _hermite_min, continue_regularized, continue_to_surface
from cctsens.systems import build_system

# In the "shift" variant f does not depend on y, so x(t) = c + (x0 - c) exp(-t)
# with c = (1, 2) is known in closed form along any DAE solution.
CASES = [((-3.0, -1.5), 0.53), ((-2.0, 1.0), -1.0)]


@pytest.fixture(scope="module")
def shift():
    return build_system("example75", variant="shift")


@pytest.mark.parametrize("x0,yg", CASES)
def test_surface_point_and_elapsed_time(shift, x0, yg):
    scenario, params = shift
    stage = scenario.post
    x0 = np.array(x0)
    start = Point(x0, solve_algebraic(stage, x0, [yg], params))
    s, pt = continue_to_surface(stage, start, params)
    exact = np.array([1.0, 2.0]) + (x0 - [1.0, 2.0]) * np.exp(-s)
    np.testing.assert_allclose(pt.x, exact, atol=1e-9)
    assert abs(eval_delta(stage, pt, params)) <= 1e-12
    assert abs(stage.g(pt.x, pt.y, params)[0]) <= 1e-9


@pytest.mark.parametrize("x0,yg", CASES)
def test_simulation_stops_at_the_same_place(shift, x0, yg):
    scenario, params = shift
    stage = scenario.post
    x0 = np.array(x0)
    start = Point(x0, solve_algebraic(stage, x0, [yg], params))
    s, pt = continue_to_surface(stage, start, params)
    tr = simulate(stage, start, params, IntegratorConfig(), t_max=5.0)
    term = tr.termination
    assert term.kind is TerminationKind.SINGULARITY
    assert term.t == pytest.approx(s, abs=1e-7)
    np.testing.assert_allclose(term.point.z, pt.z, atol=1e-5)


def test_escape_when_moving_away(shift):
    scenario, params = shift
    stage = scenario.post
    x0 = np.array([-3.0, -1.5])
    start = Point(x0, solve_algebraic(stage, x0, [1.53], params))
    status, _, pt = continue_regularized(stage, start, params, escape=3.5,
                                         max_steps=20000)
    assert status == "escaped" and eval_delta(stage, pt, params) > 3.5
    with pytest.raises(NoCrossing):
        continue_to_surface(stage, start, params, max_steps=50)


def test_hermite_minimum_of_a_dip():
    # p(u) = (u - 0.5)^2 - 0.01 on [0, 1]
    assert _hermite_min(0.24, -1.0, 0.24, 1.0, 1.0) == pytest.approx(-0.01)
    assert _hermite_min(1.0, 1.0, 2.0, 1.0, 1.0) == pytest.approx(1.0)
