import csv

import numpy as np
import pytest
from scipy import stats

import covsteer as cs
from conftest import random_controllable, random_spd


def test_zero_policy_open_loop_lyapunov():
    rng = np.random.default_rng(1)
    system, _, _ = random_controllable(rng, 2, 1, 0, 4)
    Sigma0 = random_spd(rng, 2)
    mu0 = rng.normal(size=2)
    policy = cs.OpenLoopPolicy(system, mu0, Sigma0, np.zeros((system.N + 1, 1)))
    traj = cs.propagate_moments(system, policy)
    Sig, mu = Sigma0.copy(), mu0.copy()
    for k in range(system.N + 1):
        mu = system.A[k] @ mu
        Sig = system.A[k] @ Sig @ system.A[k].T
        assert np.allclose(traj.Sigma[k + 1], Sig, rtol=1e-13, atol=1e-15)
        assert np.allclose(traj.mu[k + 1], mu, rtol=1e-13, atol=1e-15)


def test_propagate_matches_monte_carlo_three_sigma():
    rng = np.random.default_rng(9)
    system, ops, bc = random_controllable(rng, 2, 1, 1, 3)
    lam = cs.solve_lambda(ops, bc)
    policy = cs.build_policy(ops, bc, lam)
    traj = cs.propagate_moments(system, policy)
    runs = 200_000
    ens = cs.monte_carlo(system, policy, runs=runs, seed=11)
    for k in range(system.N + 2):
        se_mu = np.sqrt(np.clip(np.diag(traj.Sigma[k]), 0, None) / runs)
        assert np.all(np.abs(ens.sample_mu[k] - traj.mu[k]) <= 3 * se_mu + 1e-12)
        S = traj.Sigma[k]
        se_cov = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S**2) / runs)
        assert np.all(np.abs(ens.sample_Sigma[k] - S) <= 3 * se_cov + 1e-12)


def test_monte_carlo_deterministic_system():
    system = cs.LtvSystem.constant([[0.9, 0.1], [0.0, 0.8]], [[1.0], [0.0]],
                                   np.zeros((2, 0)), 3)
    policy = cs.OpenLoopPolicy(system, np.array([1.0, -1.0]), np.zeros((2, 2)),
                               np.ones((4, 1)))
    ens = cs.monte_carlo(system, policy, runs=16, seed=0)
    traj = cs.propagate_moments(system, policy)
    assert np.allclose(ens.sample_Sigma, 0.0, atol=1e-18)
    assert np.allclose(ens.sample_mu, traj.mu, atol=1e-12)


def test_monte_carlo_same_seed_bit_identical(lti, lti_solution):
    system, _ = lti
    policy = lti_solution["policy"]
    a = cs.monte_carlo(system, policy, runs=500, seed=123)
    b = cs.monte_carlo(system, policy, runs=500, seed=123)
    assert np.array_equal(a.sample_mu, b.sample_mu)
    assert np.array_equal(a.sample_Sigma, b.sample_Sigma)
    assert a.sample_cost_mean == b.sample_cost_mean
    c = cs.monte_carlo(system, policy, runs=500, seed=123, threads=3)
    assert np.array_equal(a.sample_Sigma, c.sample_Sigma)
    assert a.sample_cost_mean == c.sample_cost_mean


def test_monte_carlo_two_runs_valid(lti, lti_solution):
    ens = cs.monte_carlo(lti[0], lti_solution["policy"], runs=2, seed=1)
    assert ens.runs == 2
    assert np.isfinite(ens.sample_cost_se)
    with pytest.raises(ValueError):
        cs.monte_carlo(lti[0], lti_solution["policy"], runs=1, seed=1)


def test_cost_decompose_deterministic_case():
    system = cs.LtvSystem.constant([[1.0]], [[1.0]], np.zeros((1, 0)), 2)
    u = np.array([[1.0], [2.0], [-1.0]])
    policy = cs.OpenLoopPolicy(system, np.zeros(1), np.zeros((1, 1)), u)
    traj = cs.propagate_moments(system, policy)
    J_mu, J_sigma, J_total = cs.cost_decompose(traj)
    assert J_sigma == pytest.approx(0.0, abs=1e-18)
    assert J_total == pytest.approx(float(np.sum(u**2)), rel=1e-12)

    doubled = cs.OpenLoopPolicy(system, np.zeros(1), np.zeros((1, 1)), 2 * u)
    J2 = cs.cost_decompose(cs.propagate_moments(system, doubled))[2]
    assert J2 == pytest.approx(4.0 * J_total, rel=1e-12)


def test_cost_decompose_ensemble_identity(lti, lti_solution):
    ens = cs.monte_carlo(lti[0], lti_solution["policy"], runs=3000, seed=5)
    J_mu, J_sigma, J_total = cs.cost_decompose(ens)
    assert J_total == pytest.approx(J_mu + J_sigma, rel=1e-12)
    assert J_total == pytest.approx(ens.sample_cost_mean, rel=1e-12)


def test_cost_decomposition_cc_vs_lqg(lti, lti_solution):
    """Both controller forms are the same law; their analytic cost splits agree."""
    system, bc = lti
    policy = lti_solution["policy"]
    traj_cc = cs.propagate_moments(system, policy)
    lqg = cs.riccati_backward(system, policy.Lambda)
    lqg_pol = cs.make_lqg_policy(system, bc, lqg, policy.mean_plan)
    traj_lqg = cs.propagate_moments(system, lqg_pol)
    assert traj_cc.J_mu == pytest.approx(traj_lqg.J_mu, rel=1e-6)
    assert traj_cc.J_sigma == pytest.approx(traj_lqg.J_sigma, rel=1e-6)


def test_terminal_marginals_gaussian(lti, lti_solution):
    runs = 20000
    ens = cs.monte_carlo(lti[0], lti_solution["policy"], runs=runs, seed=21,
                         return_terminal_states=True)
    X = ens.terminal_states
    se_skew = np.sqrt(6.0 / runs)
    se_kurt = np.sqrt(24.0 / runs)
    for i in range(X.shape[1]):
        assert abs(stats.skew(X[:, i])) <= 5 * se_skew
        assert abs(stats.kurtosis(X[:, i])) <= 5 * se_kurt


def test_input_deviations_uncorrelated_with_future_noise(lti, lti_solution):
    """Causality: the input fluctuation at step k cannot see noise from k on."""
    system, bc = lti
    policy = lti_solution["policy"]
    real = policy.realization(system)
    runs = 8000
    rng = np.random.default_rng(55)
    sq0 = np.linalg.cholesky(policy.Sigma0)
    x0 = policy.mu0 + rng.normal(size=(runs, 2)) @ sq0.T
    Z = real.z_offset0 + (x0 - real.x_mean0) @ real.z_gain0.T
    W = rng.normal(size=(runs, system.N + 1, 1))
    k_probe, k_future = 40, (40, 60, 100)
    u_dev = None
    for k in range(system.N + 1):
        if k == k_probe:
            U = Z @ real.H[k].T + real.h[k]
            u_dev = U - U.mean(axis=0)
        Z = Z @ real.F[k].T + real.f[k] + W[:, k] @ real.E[k].T
    for kf in k_future:
        c = float(np.corrcoef(u_dev[:, 0], W[:, kf, 0])[0, 1])
        assert abs(c) <= 5.0 / np.sqrt(runs)


def test_moment_trajectory_psd():
    rng = np.random.default_rng(70)
    system, ops, bc = random_controllable(rng, 3, 2, 1, 4)
    lam = cs.solve_lambda(ops, bc)
    traj = cs.propagate_moments(system, cs.build_policy(ops, bc, lam))
    for S in traj.Sigma:
        w = np.linalg.eigvalsh(S)
        assert w[0] >= -1e-10 * max(w[-1], 1.0)


def test_csv_outputs(tmp_path, lti, lti_solution):
    system, _ = lti
    policy = lti_solution["policy"]
    traj = cs.propagate_moments(system, policy)
    ens = cs.monte_carlo(system, policy, runs=50, seed=2)
    cs.simulation.write_moments_csv(tmp_path / "m.csv", traj)
    cs.simulation.write_singular_values_csv(tmp_path / "s.csv", traj)
    cs.simulation.write_ensemble_csv(tmp_path / "e.csv", ens)
    cs.simulation.write_trajectories_csv(tmp_path / "t.csv", ens)
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["step", "mu_0", "mu_1"]
    assert len(rows) == system.N + 3
    # round-trips through repr: exact float recovery
    assert float(rows[1][1]) == traj.mu[0][0]
