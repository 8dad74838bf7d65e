import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cctsens.exceptions import ContractViolation
from cctsens.model import (ParamSet, Point, adjugate, delta_gradient, eval_delta, eval_kappa,
                           eval_semi_singular_indicator, fix_sign, left_null_vector,
                           transform_constraints)
from cctsens.systems import (build_system, example75_indicator_closed_form,
                             example75_kappa_closed_form)

from helpers import lift

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def cofactor_adjugate(a):
    k = a.shape[0]
    c = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            minor = np.delete(np.delete(a, i, 0), j, 1)
            c[i, j] = (-1) ** (i + j) * (np.linalg.det(minor) if minor.size else 1.0)
    return c.T


@given(st.integers(1, 5).flatmap(lambda k: arrays(np.float64, (k, k), elements=finite)))
def test_adjugate_matches_cofactors(a):
    np.testing.assert_allclose(adjugate(a), cofactor_adjugate(a), atol=1e-9, rtol=1e-9)


@given(st.integers(2, 5), st.integers(0, 10_000))
def test_adjugate_of_rank_deficient_matrix(k, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(k, k - 1)) @ rng.normal(size=(k - 1, k))
    adj = adjugate(a)
    np.testing.assert_allclose(adj @ a, np.zeros((k, k)), atol=1e-8)
    np.testing.assert_allclose(adj, cofactor_adjugate(a), atol=1e-8)


def test_adjugate_rejects_non_square():
    with pytest.raises(ContractViolation):
        adjugate(np.ones((2, 3)))


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_left_null_vector(k, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(k, k - 1)) @ rng.normal(size=(k - 1, k))
    v = left_null_vector(a)
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    np.testing.assert_allclose(v @ a, 0, atol=1e-10)
    assert v[np.argmax(np.abs(v) > 1e-14)] > 0


def test_fix_sign_flips_leading_negative():
    np.testing.assert_array_equal(fix_sign([0.0, -2.0, 1.0]), [0.0, 2.0, -1.0])


def test_paramset_is_hashable_and_immutable():
    p = ParamSet({"a": 1.0, "b": 2.0}, active="a")
    q = p.shifted(0.5)
    assert p["a"] == 1.0 and q["a"] == 1.5 and q.active == "a"
    assert hash(p) == hash(ParamSet({"b": 2.0, "a": 1.0}, active="a"))
    with pytest.raises(TypeError):
        p["a"] = 3.0


@given(finite, finite, finite, st.floats(-0.5, 0.5))
def test_example75_kappa_and_indicator_closed_forms(x1, x2, y, pv):
    scenario, params = build_system("example75", {"p": pv})
    pt = Point([x1, x2], [y])
    kap = eval_kappa(scenario.post, pt, params)
    assert kap[0] == pytest.approx(example75_kappa_closed_form(pt.x, pt.y, params), abs=1e-12)
    ind = eval_semi_singular_indicator(scenario.post, pt, params)
    assert ind == pytest.approx(example75_indicator_closed_form(pt.x, pt.y, params),
                                abs=1e-10, rel=1e-10)


@given(finite, finite, st.floats(0.1, 2.0))
def test_smib_delta_gradient_matches_differences(x1, x2, y):
    scenario, params = build_system("smib_const")
    stage = scenario.post
    pt = Point([x1, x2], [y])
    dx, dy, dp = delta_gradient(stage, pt, params, "E")
    generic = transform_constraints(stage)
    # strip the analytic routine to get the finite-difference fallback
    from dataclasses import replace
    fd_stage = replace(generic, delta=None, delta_grad=None)
    fx, fy, fp = delta_gradient(fd_stage, pt, params, "E")
    np.testing.assert_allclose(np.concatenate([dx, dy, [dp]]),
                               np.concatenate([fx, fy, [fp]]), atol=1e-7)


@given(finite, finite, st.floats(-2, 2), st.floats(-2, 2),
       st.sampled_from([[0, 1], [1, 0]]), st.floats(0.2, 5.0), st.floats(-5.0, -0.2))
def test_delta_and_kappa_scale_with_the_constraint_transform(x1, x2, y1, y2, perm, s0, s1):
    scenario, params = build_system("example75", {"p": 0.1})
    stage = lift(scenario.post)
    pt = Point([x1, x2], [y1, y2])
    t = transform_constraints(stage, perm, [s0, s1])
    factor = (1 if perm == [0, 1] else -1) * s0 * s1
    assert eval_delta(t, pt, params) == pytest.approx(factor * eval_delta(stage, pt, params),
                                                      rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(eval_kappa(t, pt, params), factor * eval_kappa(stage, pt, params),
                               rtol=1e-9, atol=1e-9)


def test_transform_rejects_bad_permutation():
    scenario, _ = build_system("example75")
    with pytest.raises(ContractViolation):
        transform_constraints(scenario.post, [1])
    with pytest.raises(ContractViolation):
        transform_constraints(scenario.post, None, [0.0])
