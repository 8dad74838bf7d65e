import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from cctsens.cct import scenario_equilibria
from cctsens.exceptions import ContractViolation
from cctsens.model import Point, eval_delta
from cctsens.systems import CATALOG, EXAMPLE75_VARIANTS, build_system, get_system


def test_catalog_entries_build_with_defaults():
    for sid, entry in CATALOG.items():
        scenario, params = build_system(sid)
        assert params.active == entry.active
        assert entry.bracket[0] < entry.bracket[1]
        assert scenario.pre.n == scenario.post.n == scenario.fault.n


def test_unknown_system_and_parameter_are_rejected():
    with pytest.raises(ContractViolation):
        get_system("nope")
    with pytest.raises(ContractViolation):
        build_system("smib_const", {"Q": 1.0})
    with pytest.raises(ContractViolation):
        build_system("smib_const", variant="printed")
    with pytest.raises(ContractViolation):
        build_system("example75", variant="other")


def test_printed_variant_sep():
    scenario, params = build_system("example75", variant="printed")
    _, sep = scenario_equilibria(scenario, params)
    np.testing.assert_allclose(sep.z, [0.5, 0.0, 0.0], atol=1e-12)
    assert eval_delta(scenario.post, sep, params) == pytest.approx(0.5)


def fd_jac(fun, v, h=1e-7):
    cols = []
    for i in range(v.size):
        e = np.zeros(v.size)
        e[i] = h
        cols.append((np.atleast_1d(fun(v + e)) - np.atleast_1d(fun(v - e))) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("sid,variant", [("example75", "consistent"), ("example75", "printed"),
                                         ("example75", "shift"), ("smib_const", None),
                                         ("smib_freq", None)])
def test_analytic_jacobians_match_differences(sid, variant):
    scenario, params = build_system(sid, variant=variant)
    rng = np.random.default_rng(7)
    for stage in (scenario.fault, scenario.post):
        for _ in range(100):
            x = rng.uniform(-2, 2, stage.n)
            y = rng.uniform(0.1, 1.5, stage.m)
            for fun, dx, dy in ((stage.f, stage.fx, stage.fy), (stage.g, stage.gx, stage.gy)):
                np.testing.assert_allclose(np.atleast_2d(dx(x, y, params)),
                                           fd_jac(lambda v: fun(v, y, params), x), atol=1e-6)
                np.testing.assert_allclose(np.atleast_2d(dy(x, y, params)),
                                           fd_jac(lambda v: fun(x, v, params), y), atol=1e-6)
            for name in params:
                h = 1e-7
                for fun, an in ((stage.f, stage.dfdp), (stage.g, stage.dgdp)):
                    num = (np.asarray(fun(x, y, params.shifted(h, name)))
                           - np.asarray(fun(x, y, params.shifted(-h, name)))) / (2 * h)
                    np.testing.assert_allclose(an(x, y, params, name), num, atol=1e-6)


@pytest.mark.parametrize("pv", [-0.4, 0.0, 0.3])
def test_consistent_variant_sep_closed_form(pv):
    # f = 0 with y = 1 gives x = (1 + 2p, 2 + p); g(x, 1) = x1 - p - x2 + 1 = 0 holds
    scenario, params = build_system("example75", {"p": pv})
    _, sep = scenario_equilibria(scenario, params)
    np.testing.assert_allclose(sep.z, [1 + 2 * pv, 2 + pv, 1.0], atol=1e-12)


def smib_sep_oracle(Pm, E=1.0, X=0.5, Ql=0.1):
    def eqs(v):
        d, y = v
        return [Pm - E * y * math.sin(d) / X, E * y * math.cos(d) / X - y * y / X - Ql]
    return fsolve(eqs, [0.2, 0.9], xtol=1e-14)


def test_smib_sep_against_independent_solve():
    scenario, params = build_system("smib_const")
    _, sep = scenario_equilibria(scenario, params)
    d, y = smib_sep_oracle(0.3)
    np.testing.assert_allclose(sep.z, [d, 0.0, y], atol=1e-10)
    # quoted to about three digits; y is 0.9334 for this model
    assert sep.x[0] == pytest.approx(0.162, abs=1e-3)
    assert sep.y[0] == pytest.approx(0.931, abs=5e-3)


def test_smib_singular_set_closed_form():
    scenario, params = build_system("smib_const")
    for x1 in np.linspace(-3, 3, 13):
        pt = Point([x1, 0.0], [0.5 * math.cos(x1)])
        assert abs(eval_delta(scenario.post, pt, params)) < 1e-14


def test_smib_freq_load_depends_on_speed():
    scenario, params = build_system("smib_freq")
    g = scenario.post.g
    a = g(np.array([0.2, 0.0]), np.array([0.9]), params)
    b = g(np.array([0.2, 0.1]), np.array([0.9]), params)
    assert b[0] - a[0] == pytest.approx(-params["Ql"] * 0.1)


def test_variants_listed():
    assert set(EXAMPLE75_VARIANTS) == {"consistent", "printed", "shift"}
