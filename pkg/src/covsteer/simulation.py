"""Analytic moment propagation, seeded Monte-Carlo ensembles, and cost accounting.

Every supported control law is linear, so a policy together with the plant is
a linear recursion in a joint state z = (x, policy memory).  Policies expose
that recursion as a :class:`LinearPolicyRealization`; this module propagates
its first and second moments exactly and simulates trajectory ensembles from
counter-based per-run noise streams.

The moment recursion runs in extended precision: plan-based policies do not
self-correct rounding injected into open-loop-unstable dynamics, and over long
horizons that noise is amplified enough to obscure terminal-constraint checks
at the 1e-8 level.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._linalg import sqrt_psd, symmetrize
from .errors import DimensionMismatch
from .system_model import LtvSystem

_LONG = np.longdouble


@dataclass(frozen=True)
class LinearPolicyRealization:
    """Joint linear recursion of plant and policy memory.

        z_0     = z_offset0 + z_gain0 (x_0 - x_mean0)
        z_{k+1} = F_k z_k + f_k + E_k w_k
        u_k     = H_k z_k + h_k
        x_k     = z_k[:nx]

    with x_0 ~ N(x_mean0, x_cov0) and w_k standard normal.
    """

    nx: int
    x_mean0: np.ndarray        # (n,)
    x_cov0: np.ndarray         # (n, n)
    z_offset0: np.ndarray      # (q,)
    z_gain0: np.ndarray        # (q, n)
    F: np.ndarray              # (N+1, q, q)
    f: np.ndarray              # (N+1, q)
    E: np.ndarray              # (N+1, q, r)
    H: np.ndarray              # (N+1, m, q)
    h: np.ndarray              # (N+1, m)

    @property
    def horizon(self) -> int:
        return self.F.shape[0] - 1

    @property
    def q(self) -> int:
        return self.F.shape[1]

    def check_against(self, system: LtvSystem) -> None:
        if self.nx != system.n or self.F.shape[0] != system.N + 1:
            raise DimensionMismatch(
                f"policy realization is for n={self.nx}, N={self.F.shape[0] - 1}; "
                f"system has n={system.n}, N={system.N}"
            )
        if self.H.shape[1] != system.m or self.E.shape[2] != system.r:
            raise DimensionMismatch("policy input/noise dimensions do not match the system")


@dataclass(frozen=True)
class OpenLoopPolicy:
    """Fixed input sequence, no feedback; memory is the plant state itself."""

    system: LtvSystem
    mu0: np.ndarray
    Sigma0: np.ndarray
    u_plan: np.ndarray          # (N+1, m)

    def realization(self, system: LtvSystem) -> LinearPolicyRealization:
        n, m, N = system.n, system.m, system.N
        u = np.asarray(self.u_plan, dtype=float).reshape(N + 1, m)
        A, B, G = system.a_stack(), system.b_stack(), system.g_stack()
        mu0 = np.asarray(self.mu0, dtype=float)
        return LinearPolicyRealization(
            nx=n,
            x_mean0=mu0,
            x_cov0=symmetrize(np.asarray(self.Sigma0, dtype=float)),
            z_offset0=mu0,
            z_gain0=np.eye(n),
            F=A,
            f=np.einsum("knm,km->kn", B, u),
            E=G,
            H=np.zeros((N + 1, m, n)),
            h=u,
        )


@dataclass(frozen=True)
class MomentTrajectory:
    """Exact mean/covariance sequences mu_0..mu_{N+1}, Sigma_0..Sigma_{N+1}."""

    mu: np.ndarray              # (N+2, n)
    Sigma: np.ndarray           # (N+2, n, n)
    J_mu: float
    J_sigma: float

    @property
    def J_total(self) -> float:
        return self.J_mu + self.J_sigma


def propagate_moments(system: LtvSystem, policy) -> MomentTrajectory:
    """First/second-moment recursion of the joint plant-policy linear system."""
    real: LinearPolicyRealization = policy.realization(system)
    real.check_against(system)
    n, N = real.nx, real.horizon

    muz = np.asarray(real.z_offset0, dtype=_LONG)
    Sz = np.asarray(
        real.z_gain0 @ real.x_cov0 @ real.z_gain0.T, dtype=_LONG
    )
    mu = np.empty((N + 2, n))
    Sigma = np.empty((N + 2, n, n))
    J_mu = _LONG(0.0)
    J_sigma = _LONG(0.0)
    for k in range(N + 1):
        mu[k] = np.asarray(muz[:n], dtype=float)
        Sigma[k] = np.asarray(Sz[:n, :n], dtype=float)
        Hk = np.asarray(real.H[k], dtype=_LONG)
        u_mean = Hk @ muz + np.asarray(real.h[k], dtype=_LONG)
        J_mu += u_mean @ u_mean
        J_sigma += np.trace(Hk @ Sz @ Hk.T)
        Fk = np.asarray(real.F[k], dtype=_LONG)
        Ek = np.asarray(real.E[k], dtype=_LONG)
        muz = Fk @ muz + np.asarray(real.f[k], dtype=_LONG)
        Sz = Fk @ Sz @ Fk.T + Ek @ Ek.T
        Sz = 0.5 * (Sz + Sz.T)
    mu[N + 1] = np.asarray(muz[:n], dtype=float)
    Sigma[N + 1] = np.asarray(Sz[:n, :n], dtype=float)
    return MomentTrajectory(mu=mu, Sigma=Sigma, J_mu=float(J_mu), J_sigma=float(J_sigma))


@dataclass(frozen=True)
class EnsembleResult:
    """Sample statistics of a seeded trajectory ensemble."""

    runs: int
    seed: int
    sample_mu: np.ndarray           # (N+2, n)
    sample_Sigma: np.ndarray        # (N+2, n, n)
    sample_cost_mean: float
    sample_cost_se: float
    input_mean: np.ndarray          # (N+1, m)
    sample_steps: np.ndarray        # decimated step indices for stored trajectories
    sample_states: np.ndarray       # (n_saved, len(sample_steps), n)
    sample_inputs: np.ndarray       # (n_saved, n_input_steps, m)
    terminal_states: np.ndarray | None = None   # (runs, n) when requested


def _run_noise(seed: int, run: int, count: int) -> np.ndarray:
    """Standard normal draws for one trajectory, keyed by (seed, run).

    Counter-based generator: draws depend only on the key, never on scheduling
    order, so parallel and serial execution consume identical streams.
    """
    key = np.array([np.uint64(seed % (1 << 64)), np.uint64(run)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(count)


def _mean_trajectory(real: LinearPolicyRealization) -> np.ndarray:
    """Analytic mean of the joint state, computed with the same row-vector
    arithmetic the batched simulator uses (it shifts the covariance sums)."""
    N = real.horizon
    mu = np.empty((N + 2, real.q))
    row = real.z_offset0[None, :].copy()
    mu[0] = row[0]
    for k in range(N + 1):
        row = row @ real.F[k].T + real.f[k]
        mu[k + 1] = row[0]
    return mu


def _simulate_block(
    real: LinearPolicyRealization,
    seed: int,
    run_lo: int,
    run_hi: int,
    sqrt_cov0: np.ndarray,
    mu_z: np.ndarray,
    save_upto: int,
    keep_steps: np.ndarray,
    keep_terminal: bool,
):
    n, q, N = real.nx, real.q, real.horizon
    r = real.E.shape[2]
    m = real.H.shape[1]
    R = run_hi - run_lo

    draws = np.empty((R, n + (N + 1) * r))
    for i in range(R):
        draws[i] = _run_noise(seed, run_lo + i, n + (N + 1) * r)
    x0 = real.x_mean0 + draws[:, :n] @ sqrt_cov0.T
    Wn = draws[:, n:].reshape(R, N + 1, r)

    Z = real.z_offset0 + (x0 - real.x_mean0) @ real.z_gain0.T

    # deviations from the analytic mean keep the one-pass covariance sums
    # cancellation-free
    sum_dx = np.zeros((N + 2, n))
    sum_dxdx = np.zeros((N + 2, n, n))
    sum_u = np.zeros((N + 1, m))
    cost = np.zeros(R)
    n_save = max(0, min(save_upto - run_lo, R))
    saved_states = np.zeros((n_save, len(keep_steps), n))
    saved_inputs = np.zeros((n_save, np.count_nonzero(keep_steps <= N), m))
    keep_idx = {int(s): j for j, s in enumerate(keep_steps)}

    for k in range(N + 2):
        X = Z[:, :n]
        dX = X - mu_z[k, :n]
        sum_dx[k] += dX.sum(axis=0)
        sum_dxdx[k] += dX.T @ dX
        if n_save and k in keep_idx:
            saved_states[:, keep_idx[k]] = X[:n_save]
        if k == N + 1:
            break
        U = Z @ real.H[k].T + real.h[k]
        sum_u[k] += U.sum(axis=0)
        cost += np.einsum("ij,ij->i", U, U)
        if n_save and k in keep_idx:
            saved_inputs[:, keep_idx[k]] = U[:n_save]
        Z = Z @ real.F[k].T + real.f[k] + Wn[:, k] @ real.E[k].T

    terminal = Z[:, :n].copy() if keep_terminal else None
    return sum_dx, sum_dxdx, sum_u, float(cost.sum()), float((cost * cost).sum()), \
        saved_states, saved_inputs, terminal


def monte_carlo(
    system: LtvSystem,
    policy,
    runs: int,
    seed: int,
    *,
    store_trajectories: int = 10,
    max_stored_points: int = 200,
    return_terminal_states: bool = False,
    chunk_size: int = 4096,
    threads: int | None = None,
) -> EnsembleResult:
    """Simulate `runs` trajectories with per-run noise streams keyed by (seed, run).

    Aggregation is a fixed-order sum over fixed-size chunks, so results are
    bit-identical across thread counts and repeated invocations.
    """
    if runs < 2:
        raise ValueError(f"need runs >= 2, got {runs}")
    real: LinearPolicyRealization = policy.realization(system)
    real.check_against(system)
    n, m, N = real.nx, real.H.shape[1], real.horizon

    sqrt_cov0 = sqrt_psd(real.x_cov0)
    mu_z = _mean_trajectory(real)
    n_points = min(max_stored_points, N + 2)
    keep_steps = np.unique(np.round(np.linspace(0, N + 1, n_points)).astype(int))
    save_upto = min(store_trajectories, runs)

    blocks = [(lo, min(lo + chunk_size, runs)) for lo in range(0, runs, chunk_size)]
    if threads is None:
        threads = int(os.environ.get("COVSTEER_THREADS", "0")) or (os.cpu_count() or 1)
    threads = max(1, min(threads, len(blocks)))

    def work(block):
        lo, hi = block
        return _simulate_block(
            real, seed, lo, hi, sqrt_cov0, mu_z, save_upto, keep_steps,
            return_terminal_states,
        )

    if threads == 1:
        results = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))

    sum_dx = np.zeros((N + 2, n))
    sum_dxdx = np.zeros((N + 2, n, n))
    sum_u = np.zeros((N + 1, m))
    cost_sum = 0.0
    cost_sq = 0.0
    saved_states = np.zeros((save_upto, len(keep_steps), n))
    saved_inputs = np.zeros((save_upto, np.count_nonzero(keep_steps <= N), m))
    terminal = np.zeros((runs, n)) if return_terminal_states else None
    for (lo, hi), res in zip(blocks, results):
        bx, bxx, bu, bc, bc2, bs, bi, bt = res
        sum_dx += bx
        sum_dxdx += bxx
        sum_u += bu
        cost_sum += bc
        cost_sq += bc2
        if bs.shape[0]:
            saved_states[lo:lo + bs.shape[0]] = bs
            saved_inputs[lo:lo + bi.shape[0]] = bi
        if terminal is not None:
            terminal[lo:hi] = bt

    mean_dx = sum_dx / runs
    mean_x = mu_z[:, :n] + mean_dx
    cov = (sum_dxdx - runs * np.einsum("ki,kj->kij", mean_dx, mean_dx)) / (runs - 1)
    cov = symmetrize(cov)
    cost_mean = cost_sum / runs
    cost_var = max(0.0, (cost_sq - runs * cost_mean**2) / (runs - 1))
    return EnsembleResult(
        runs=runs,
        seed=seed,
        sample_mu=mean_x,
        sample_Sigma=cov,
        sample_cost_mean=cost_mean,
        sample_cost_se=float(np.sqrt(cost_var / runs)),
        input_mean=sum_u / runs,
        sample_steps=keep_steps,
        sample_states=saved_states,
        sample_inputs=saved_inputs,
        terminal_states=terminal,
    )


def cost_decompose(result) -> tuple[float, float, float]:
    """Split expected control energy into mean and fluctuation parts.

    Returns (J_mu, J_sigma, J_total) with J_total = J_mu + J_sigma exactly.
    """
    if isinstance(result, MomentTrajectory):
        return result.J_mu, result.J_sigma, result.J_mu + result.J_sigma
    if isinstance(result, EnsembleResult):
        J_mu = float(np.sum(result.input_mean**2))
        return J_mu, result.sample_cost_mean - J_mu, result.sample_cost_mean
    raise TypeError(f"cannot decompose cost of {type(result).__name__}")


# --- CSV emission -----------------------------------------------------------

def write_moments_csv(path, traj: MomentTrajectory) -> None:
    """step, mu entries, Sigma entries row-major, singular values of Sigma_k."""
    n = traj.mu.shape[1]
    header = (
        ["step"]
        + [f"mu_{i}" for i in range(n)]
        + [f"Sigma_{i}{j}" for i in range(n) for j in range(n)]
        + [f"sv_{i}" for i in range(n)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(traj.mu.shape[0]):
            sv = np.linalg.svd(traj.Sigma[k], compute_uv=False)
            w.writerow(
                [k]
                + [repr(float(v)) for v in traj.mu[k]]
                + [repr(float(v)) for v in traj.Sigma[k].ravel()]
                + [repr(float(v)) for v in sv]
            )


def write_singular_values_csv(path, traj: MomentTrajectory) -> None:
    n = traj.mu.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"sv_{i}" for i in range(n)])
        for k in range(traj.mu.shape[0]):
            sv = np.linalg.svd(traj.Sigma[k], compute_uv=False)
            w.writerow([k] + [repr(float(v)) for v in sv])


def write_ensemble_csv(path, ens: EnsembleResult) -> None:
    """Sample mean and +-3 sigma envelope per state at every step."""
    n = ens.sample_mu.shape[1]
    header = ["step"]
    for i in range(n):
        header += [f"mean_{i}", f"lo3_{i}", f"hi3_{i}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(ens.sample_mu.shape[0]):
            row = [k]
            sd = np.sqrt(np.clip(np.diag(ens.sample_Sigma[k]), 0.0, None))
            for i in range(n):
                mu = ens.sample_mu[k, i]
                row += [repr(float(mu)), repr(float(mu - 3 * sd[i])), repr(float(mu + 3 * sd[i]))]
            w.writerow(row)


def write_trajectories_csv(path, ens: EnsembleResult) -> None:
    """Decimated sample trajectories (states and inputs), one row per (run, step)."""
    n_save, _, n = ens.sample_states.shape
    m = ens.sample_inputs.shape[2]
    N_input = ens.sample_inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "step"] + [f"x_{i}" for i in range(n)] + [f"u_{i}" for i in range(m)])
        for run in range(n_save):
            for j, step in enumerate(ens.sample_steps):
                urow = (
                    [repr(float(v)) for v in ens.sample_inputs[run, j]]
                    if j < N_input
                    else [""] * m
                )
                w.writerow(
                    [run, int(step)] + [repr(float(v)) for v in ens.sample_states[run, j]] + urow
                )
