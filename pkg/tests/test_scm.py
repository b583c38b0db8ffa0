"""SCM core tests: reduced forms, interventions, sampling, abduction, estimation."""

import numpy as np
import pytest

from diroca.environments import EmpiricalEnv, GaussianEnv
from diroca.scm import (
    Intervention,
    InterventionMap,
    LinearScm,
    abduct,
    apply_intervention_exo,
    estimate_coefficients,
    load_interventions,
    load_omega,
    load_scm,
    mixing_matrix,
    mutilate,
    reduced_transform,
    sample_endogenous,
    save_interventions,
    save_omega,
    save_scm,
)


def chain_scm(a=2.0, b=3.0):
    """S -> T -> C with weights a and b and unit-variance noise."""
    adj = np.zeros((3, 3))
    adj[0, 1] = a
    adj[1, 2] = b
    return LinearScm(("S", "T", "C"), adj, GaussianEnv(np.zeros(3), np.eye(3)))


# ---------------------------------------------------------------------------
# Construction and mixing matrix


def test_mixing_no_edges_is_identity():
    scm = LinearScm(("a", "b", "c"), np.zeros((3, 3)),
                    GaussianEnv(np.zeros(3), np.eye(3)))
    assert np.allclose(mixing_matrix(scm), np.eye(3))


def test_mixing_chain_closed_form():
    m = mixing_matrix(chain_scm())
    assert np.allclose(m, [[1, 0, 0], [2, 1, 0], [6, 3, 1]])


def test_mixing_inverse_identity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = 5
        adj = np.triu(rng.standard_normal((d, d)), k=1)
        scm = LinearScm(tuple(f"v{i}" for i in range(d)), adj,
                        GaussianEnv(np.zeros(d), np.eye(d)))
        m = mixing_matrix(scm)
        assert np.max(np.abs(m @ (np.eye(d) - adj.T) - np.eye(d))) < 1e-10


def test_cycle_rejected():
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        LinearScm(("a", "b"), adj, GaussianEnv(np.zeros(2), np.eye(2)))


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        LinearScm(("a", "a"), np.zeros((2, 2)), GaussianEnv(np.zeros(2), np.eye(2)))


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        LinearScm(("a", "b"), np.zeros((3, 3)), GaussianEnv(np.zeros(3), np.eye(3)))


# ---------------------------------------------------------------------------
# Interventions and mutilation


def test_intervention_validation():
    with pytest.raises(ValueError):
        Intervention((0, 0), (1.0, 2.0))
    with pytest.raises(ValueError):
        Intervention((0,), (1.0, 2.0))
    assert Intervention().is_null


def test_mutilate_null_is_identity():
    scm = chain_scm()
    assert mutilate(scm, Intervention()) is scm


def test_mutilate_chain_do_t():
    scm = chain_scm()
    m = reduced_transform(scm, Intervention((1,), (5.0,)))
    assert np.allclose(m, [[1, 0, 0], [0, 1, 0], [0, 3, 1]])


def test_mutilate_root_unchanged():
    scm = chain_scm()
    out = mutilate(scm, Intervention((0,), (1.0,)))
    assert np.array_equal(out.adjacency, scm.adjacency)


def test_mutilate_idempotent():
    scm = chain_scm()
    iota = Intervention((1, 2), (1.0, 2.0))
    once = mutilate(scm, iota)
    twice = mutilate(once, iota)
    assert np.array_equal(once.adjacency, twice.adjacency)


def test_mutilate_invalid_target():
    with pytest.raises(IndexError):
        mutilate(chain_scm(), Intervention((7,), (0.0,)))


def test_apply_intervention_gaussian():
    env = GaussianEnv(np.zeros(3), np.eye(3))
    out = apply_intervention_exo(Intervention((1,), (5.0,)), env)
    assert np.allclose(out.mean, [0.0, 5.0, 0.0])
    assert np.allclose(out.cov, np.diag([1.0, 0.0, 1.0]))


def test_apply_intervention_empirical():
    env = EmpiricalEnv(np.arange(12.0).reshape(4, 3))
    out = apply_intervention_exo(Intervention((0,), (2.0,)), env)
    assert np.all(out.samples[:, 0] == 2.0)
    assert np.array_equal(out.samples[:, 1:], env.samples[:, 1:])


def test_apply_intervention_null_identity():
    env = GaussianEnv(np.zeros(2), np.eye(2))
    assert apply_intervention_exo(Intervention(), env) is env


# ---------------------------------------------------------------------------
# Sampling and abduction


def test_sample_do_column_constant():
    scm = chain_scm()
    x = sample_endogenous(scm, Intervention((1,), (7.0,)), scm.noise, 100, 0)
    assert np.all(x[:, 1] == 7.0)


def test_sample_deterministic():
    scm = chain_scm()
    a = sample_endogenous(scm, Intervention(), scm.noise, 50, 3)
    b = sample_endogenous(scm, Intervention(), scm.noise, 50, 3)
    assert np.array_equal(a, b)


def test_sample_mean_converges():
    scm = LinearScm(("a", "b", "c"), np.zeros((3, 3)),
                    GaussianEnv(np.zeros(3), np.eye(3)))
    x = sample_endogenous(scm, Intervention(), scm.noise, 10000, 0)
    assert np.max(np.abs(x.mean(axis=0))) < 0.05


def test_sample_rejects_zero():
    with pytest.raises(ValueError):
        sample_endogenous(chain_scm(), Intervention(), chain_scm().noise, 0, 0)


def test_abduct_no_edges_identity():
    scm = LinearScm(("a", "b"), np.zeros((2, 2)), GaussianEnv(np.zeros(2), np.eye(2)))
    x = np.random.default_rng(0).standard_normal((5, 2))
    assert np.allclose(abduct(scm, x), x)


def test_abduct_roundtrip():
    scm = chain_scm()
    rng = np.random.default_rng(1)
    u = rng.standard_normal((200, 3))
    x = u @ mixing_matrix(scm).T
    assert np.max(np.abs(abduct(scm, x) - u)) < 1e-9


def test_abduct_hand_example():
    # x = (1, 4, 15) under the (2, 3)-chain comes from u = (1, 2, 3):
    # u_S = x_S, u_T = x_T - 2 x_S, u_C = x_C - 3 x_T.
    scm = chain_scm()
    u = abduct(scm, np.array([[1.0, 4.0, 15.0]]))
    assert np.allclose(u, [[1.0, 2.0, 3.0]])


def test_abduct_dimension_mismatch():
    with pytest.raises(ValueError):
        abduct(chain_scm(), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# Coefficient estimation


def test_estimate_coefficients_recovers_weights():
    scm = chain_scm(1.3, -0.7)
    x = sample_endogenous(scm, Intervention(), scm.noise, 10000, 0)
    est = estimate_coefficients(x, ["S", "T", "C"], [("S", "T"), ("T", "C")])
    assert np.max(np.abs(est.adjacency - scm.adjacency)) < 0.05


def test_estimate_coefficients_error_shrinks_with_n():
    scm = chain_scm(1.3, -0.7)
    errs = []
    for n in (1000, 100000):
        x = sample_endogenous(scm, Intervention(), scm.noise, n, 0)
        est = estimate_coefficients(x, ["S", "T", "C"], [("S", "T"), ("T", "C")])
        errs.append(np.max(np.abs(est.adjacency - scm.adjacency)))
    assert errs[1] <= errs[0] / 2.0


def test_estimate_coefficients_root_residuals():
    x = np.random.default_rng(0).standard_normal((100, 2))
    est = estimate_coefficients(x, ["a", "b"], [("a", "b")])
    assert np.allclose(est.adjacency[:, 0], 0.0)
    assert np.allclose(est.noise.samples[:, 0], x[:, 0])


def test_estimate_coefficients_needs_samples():
    with pytest.raises(ValueError):
        estimate_coefficients(np.zeros((2, 3)), ["a", "b", "c"], [])


def test_estimate_coefficients_rank_deficient():
    x = np.zeros((50, 2))
    x[:, 0] = 0.0  # constant zero parent
    x[:, 1] = np.random.default_rng(0).standard_normal(50)
    with pytest.raises(np.linalg.LinAlgError):
        estimate_coefficients(x, ["a", "b"], [("a", "b")])


# ---------------------------------------------------------------------------
# Intervention map


def test_omega_duplicate_low_rejected():
    null = Intervention()
    with pytest.raises(ValueError):
        InterventionMap(((null, null), (null, null)))


def test_omega_surjectivity_check():
    lo1, lo2 = Intervention((0,), (1.0,)), Intervention((1,), (1.0,))
    hi1, hi2 = Intervention((0,), (1.0,)), Intervention((1,), (1.0,))
    omega = InterventionMap(((lo1, hi1), (lo2, hi1)))
    omega.check_surjective([hi1])
    with pytest.raises(ValueError):
        omega.check_surjective([hi1, hi2])


def test_omega_high_for():
    lo, hi = Intervention((0,), (1.0,)), Intervention((1,), (2.0,))
    omega = InterventionMap(((lo, hi),))
    assert omega.high_for(lo) == hi
    with pytest.raises(KeyError):
        omega.high_for(Intervention((1,), (9.0,)))


# ---------------------------------------------------------------------------
# Serialization roundtrips


def test_scm_roundtrip(tmp_path):
    scm = chain_scm(1.5, -2.5)
    path = tmp_path / "scm.json"
    save_scm(scm, path)
    back = load_scm(path)
    assert back.variables == scm.variables
    assert np.allclose(back.adjacency, scm.adjacency)
    assert np.allclose(back.noise.mean, scm.noise.mean)
    assert np.allclose(back.noise.cov, scm.noise.cov)


def test_scm_roundtrip_empirical_noise(tmp_path):
    samples = np.random.default_rng(0).standard_normal((10, 2))
    scm = LinearScm(("a", "b"), np.zeros((2, 2)), EmpiricalEnv(samples))
    path = tmp_path / "scm.json"
    save_scm(scm, path)
    back = load_scm(path)
    assert np.allclose(back.noise.samples, samples)


def test_interventions_roundtrip(tmp_path):
    variables = ["S", "T", "C"]
    iotas = [Intervention(), Intervention((1,), (2.0,)), Intervention((0, 2), (1.0, -1.0))]
    path = tmp_path / "iotas.json"
    save_interventions(iotas, variables, path)
    assert load_interventions(path, variables) == iotas


def test_omega_roundtrip(tmp_path):
    lows = [Intervention(), Intervention((0,), (1.0,))]
    highs = [Intervention(), Intervention((0,), (1.0,))]
    omega = InterventionMap(((lows[0], highs[0]), (lows[1], highs[1])))
    path = tmp_path / "omega.json"
    save_omega(omega, lows, highs, path)
    back = load_omega(path, lows, highs)
    assert back.pairs == omega.pairs
