import numpy as np
import pytest

from cctsens.cct import scenario_equilibria
from cctsens.exceptions import ContractViolation
from cctsens.integrator import IntegratorConfig, simulate
from cctsens.model import Point
from cctsens.systems import build_system
from cctsens.trajsens import (algebraic_sensitivity, integrate_variational,
                              sensitivity_residual)

from helpers import consistent_start, flow_fd_check


def fault_start(sid):
    scenario, params = build_system(sid)
    pre, _ = scenario_equilibria(scenario, params)
    cfg = IntegratorConfig()
    return scenario, params, cfg, consistent_start(scenario.fault, pre.x, pre.y, params, cfg)


@pytest.mark.parametrize("sid,t_max", [("smib_const", 1.0), ("example75", 2.0)])
def test_fault_stage_matches_finite_differences(sid, t_max):
    scenario, params, cfg, start = fault_start(sid)
    worst, count = flow_fd_check(scenario.fault, start, params, cfg, t_max=t_max)
    assert count > 900
    assert worst <= 1e-3


def test_linearized_constraint_holds_along_the_run():
    scenario, params, cfg, _ = fault_start("example75")
    _, sep = scenario_equilibria(scenario, params)
    start = consistent_start(scenario.post, np.array([0.2, 1.0]), sep.y, params, cfg)
    tr = simulate(scenario.post, start, params, cfg, t_max=1.0)
    ser = integrate_variational(tr, "both")
    for i in range(0, len(tr), 100):
        st = ser.state(i)
        S = np.column_stack([st.Phi_x, st.phi_p])
        dY = np.column_stack([st.dy_x, st.dy_p])
        assert sensitivity_residual(tr.stage, tr.point(i), params, S, dY) <= 1e-10


def test_identity_start_and_zero_parameter_column():
    scenario, params, cfg, start = fault_start("smib_const")
    tr = simulate(scenario.fault, start, params, cfg, t_max=0.1)
    ser = integrate_variational(tr, "both")
    np.testing.assert_array_equal(ser.state(0).Phi_x, np.eye(2))
    np.testing.assert_array_equal(ser.state(0).phi_p, np.zeros(2))
    only_p = integrate_variational(tr, "wrt_p")
    np.testing.assert_allclose(only_p.final.phi_p, ser.final.phi_p, atol=1e-14)
    with pytest.raises(ContractViolation):
        integrate_variational(tr, "sideways")
    with pytest.raises(ContractViolation):
        integrate_variational(tr, upto=len(tr))


def test_algebraic_sensitivity_solves_the_linearized_constraint():
    scenario, params = build_system("smib_const")
    pt = Point([0.4, 0.1], [0.8])
    dphi = np.array([[1.0, 0.5], [0.0, 2.0]])
    dy = algebraic_sensitivity(scenario.post, pt, params, dphi, np.zeros((1, 2)))
    gx = scenario.post.gx(pt.x, pt.y, params)
    gy = scenario.post.gy(pt.x, pt.y, params)
    np.testing.assert_allclose(gx @ dphi + gy @ np.atleast_2d(dy), 0, atol=1e-12)
