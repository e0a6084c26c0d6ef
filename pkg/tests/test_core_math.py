import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erasebench.core_math import (
    ContractViolation,
    DivergenceError,
    HvpOracle,
    ParamVector,
    cg_solve,
    clip_by_norm,
    finite_check,
    gaussian_perturb,
    neumann_inverse_hvp,
    stream,
)


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.5 * np.eye(n)


# -- ParamVector --------------------------------------------------------------

def test_param_vector_segments_must_tile():
    with pytest.raises(ValueError):
        ParamVector(np.zeros(4), [("a", 0, 2), ("b", 1, 3)])
    with pytest.raises(ValueError):
        ParamVector(np.zeros(4), [("a", 0, 2)])
    with pytest.raises(ValueError):
        ParamVector(np.zeros(4), [("a", 0, 2), ("a", 2, 2)])


def test_param_vector_finite_flag():
    p = ParamVector.from_arrays({"w": np.ones(3), "b": np.zeros(2)})
    assert p.is_finite()
    p.values[4] = np.nan
    assert not p.is_finite()
    np.testing.assert_array_equal(p.mask(["b"]), [False, False, False, True, True])


# -- cg_solve -----------------------------------------------------------------

def test_cg_identity_one_iteration():
    rep = cg_solve(HvpOracle.from_matrix(np.eye(3)), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(rep.solution, [1, 2, 3])
    assert rep.status == "converged"
    assert rep.iterations == 1


def test_cg_diagonal():
    rep = cg_solve(HvpOracle.from_matrix(np.diag([2.0, 4.0])), [2.0, 4.0])
    np.testing.assert_allclose(rep.solution, [1.0, 1.0], rtol=1e-12)


def test_cg_nan_at_iteration_3_returns_iteration_2():
    rng = np.random.default_rng(0)
    a = random_spd(rng, 6)
    rhs = rng.normal(size=6)
    calls = {"n": 0}

    def faulty(v):
        calls["n"] += 1
        out = a @ v
        if calls["n"] == 3:
            out[0] = np.nan
        return out

    rep = cg_solve(HvpOracle(faulty, 6), rhs, tol=1e-14, max_iters=50)
    assert rep.status == "diverged"
    clean = cg_solve(HvpOracle.from_matrix(a), rhs, tol=1e-14, max_iters=2)
    assert clean.iterations == 2
    np.testing.assert_array_equal(rep.solution, clean.solution)
    assert finite_check(rep.solution) == "ok"


def test_cg_dimension_mismatch():
    with pytest.raises(ContractViolation):
        cg_solve(HvpOracle.from_matrix(np.eye(3)), np.ones(4))


def test_cg_rejects_bad_arguments():
    with pytest.raises(ContractViolation):
        cg_solve(HvpOracle.from_matrix(np.eye(2)), [np.inf, 0.0])
    with pytest.raises(ContractViolation):
        cg_solve(HvpOracle.from_matrix(np.eye(2)), [1.0, 0.0], tol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_cg_matches_dense_solve(n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n)
    b = rng.normal(size=n)
    rep = cg_solve(HvpOracle.from_matrix(a), b, tol=1e-12, max_iters=200)
    x = np.linalg.solve(a, b)
    assert np.linalg.norm(rep.solution - x) <= 1e-6 * np.linalg.norm(x)


def test_cg_converged_residual_bound():
    rng = np.random.default_rng(4)
    a = random_spd(rng, 15)
    b = rng.normal(size=15)
    rep = cg_solve(HvpOracle.from_matrix(a, damping=0.3), b, tol=1e-5)
    assert rep.status == "converged"
    assert np.linalg.norm((a + 0.3 * np.eye(15)) @ rep.solution - b) <= 1e-5 * np.linalg.norm(b) * (1 + 1e-9)


def test_cg_negative_curvature_truncation():
    a = np.diag([1.0, -1.0])
    # first direction is rhs itself; rhs^T A rhs < 0 -> return rhs
    rep = cg_solve(HvpOracle.from_matrix(a), [0.1, 1.0], truncate_on_negative_curvature=True)
    assert rep.negative_curvature
    np.testing.assert_array_equal(rep.solution, [0.1, 1.0])
    # positive curvature along rhs: first step is taken, then negative curvature stops it
    rep = cg_solve(HvpOracle.from_matrix(np.diag([4.0, -0.5])), [1.0, 1.0],
                   truncate_on_negative_curvature=True)
    assert rep.negative_curvature and rep.iterations == 1
    alpha = 2.0 / 3.5
    np.testing.assert_allclose(rep.solution, [alpha, alpha])


# -- neumann ------------------------------------------------------------------

def test_neumann_zero_hessian_unit_damping():
    rhs = np.array([1.0, -2.0, 0.5])
    for iters in (1, 5, 20):
        rep = neumann_inverse_hvp(HvpOracle.from_matrix(np.zeros((3, 3))), rhs, scale=1.0, damping=1.0, iters=iters)
        np.testing.assert_allclose(rep.solution, rhs)


def test_neumann_geometric_series():
    rhs = np.array([1.0, 3.0])
    rep = neumann_inverse_hvp(HvpOracle.from_matrix(0.5 * np.eye(2)), rhs, scale=1.0, iters=30)
    np.testing.assert_allclose(rep.solution, 2 * rhs, atol=1e-3)
    # closed form of the truncated series: sum_{k=0}^{30} 0.5^k
    np.testing.assert_allclose(rep.solution, rhs * (1 - 0.5 ** 31) / 0.5, rtol=1e-12)


def test_neumann_diverges_when_spectral_radius_exceeds_one():
    rep = neumann_inverse_hvp(HvpOracle.from_matrix(3.0 * np.eye(2)), np.ones(2), scale=1.0, iters=5000)
    assert rep.status == "diverged"
    assert rep.iterations < 5000
    assert finite_check(rep.solution) == "ok"


def test_neumann_nan_oracle():
    rep = neumann_inverse_hvp(HvpOracle(lambda v: v * np.nan, 2), np.ones(2), scale=1.0, iters=10)
    assert rep.status == "diverged"


# -- clip_by_norm -------------------------------------------------------------

def test_clip_examples():
    np.testing.assert_array_equal(clip_by_norm([0.1, 0.1], 10), [0.1, 0.1])
    np.testing.assert_allclose(clip_by_norm([3.0, 4.0], 1), [0.6, 0.8], rtol=1e-14)


def test_clip_errors():
    with pytest.raises(DivergenceError):
        clip_by_norm([1.0, np.nan], 1.0)
    with pytest.raises(ContractViolation):
        clip_by_norm([1.0], 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(1e-6, 1e4))
def test_clip_bound_and_idempotence(vals, m):
    once = clip_by_norm(vals, m)
    assert np.linalg.norm(once) <= m + 1e-12
    np.testing.assert_array_equal(clip_by_norm(once, m), once)


# -- gaussian_perturb -------------------------------------------------------

def big_params():
    return ParamVector.from_arrays({"emb": np.zeros(100_000), "bias": np.arange(5.0)})


def test_perturb_zero_sigma_identity():
    p = big_params()
    assert gaussian_perturb(p, 0.0, seed=3) == p


def test_perturb_std_and_untouched_segments():
    p = big_params()
    out = gaussian_perturb(p, 0.6, ["emb"], seed=11)
    diff = out.segment("emb") - p.segment("emb")
    assert abs(diff.std() - 0.6) < 0.05 * 0.6
    np.testing.assert_array_equal(out.segment("bias"), p.segment("bias"))


def test_perturb_deterministic():
    p = big_params()
    assert gaussian_perturb(p, 0.6, seed=5, step=2) == gaussian_perturb(p, 0.6, seed=5, step=2)
    assert gaussian_perturb(p, 0.6, seed=5, step=2) != gaussian_perturb(p, 0.6, seed=5, step=3)


def test_perturb_disjoint_filters_commute():
    p = ParamVector.from_arrays({"a": np.zeros(50), "b": np.ones(30), "c": np.zeros(4)})
    ab = gaussian_perturb(gaussian_perturb(p, 0.3, ["a"], seed=1), 0.3, ["b"], seed=1)
    ba = gaussian_perturb(gaussian_perturb(p, 0.3, ["b"], seed=1), 0.3, ["a"], seed=1)
    assert ab == ba
    both = gaussian_perturb(p, 0.3, lambda n: n in ("a", "b"), seed=1)
    assert both == ab


def test_stream_keys_independent():
    a = stream(1, 0, "x").random(4)
    np.testing.assert_array_equal(a, stream(1, 0, "x").random(4))
    assert not np.array_equal(a, stream(1, 0, "y").random(4))
    assert not np.array_equal(a, stream(2, 0, "x").random(4))


# -- finite_check / HvpOracle -------------------------------------------------

@pytest.mark.parametrize("v,expected", [([1, 2, 3], "ok"), ([1, np.nan], "nonfinite"), ([1, np.inf], "nonfinite"),
                                        ([-np.inf], "nonfinite"), ([], "ok")])
def test_finite_check(v, expected):
    assert finite_check(v) == expected


def test_oracle_damping_and_negative_damping():
    o = HvpOracle.from_matrix(np.diag([1.0, 2.0]), damping=0.5)
    np.testing.assert_allclose(o(np.ones(2)), [1.5, 2.5])
    with pytest.raises(ContractViolation):
        HvpOracle.from_matrix(np.eye(2), damping=-1)


def test_oracle_linearity_and_symmetry_on_model_hvp():
    # a real oracle: BPR HVP restricted to all coordinates
    from erasebench.models import BPRMF, ModelHyper, SampleSet

    rng = np.random.default_rng(2)
    m = BPRMF(4, 5, ModelHyper(embedding_dim=3, l2_reg=1e-2), seed=1)
    s = SampleSet(rng.integers(0, 4, 12), rng.integers(0, 5, 12), -np.ones(12, dtype=int))
    o = HvpOracle(lambda v: m.hvp(s, None, v), m.params.size, 0.1)
    for _ in range(100):
        u, v = rng.normal(size=(2, o.dim))
        a, b = rng.normal(size=2)
        lhs = o(a * u + b * v)
        rhs = a * o(u) + b * o(v)
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300)
        x, y = u @ o(v), v @ o(u)
        assert abs(x - y) <= 1e-6 * max(abs(x), abs(y), 1e-12)
