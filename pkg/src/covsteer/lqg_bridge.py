"""Terminal-weight LQG controller and its equivalence with the steering policy.

The quadratic regulator with stage cost u^T u and terminal cost x^T Qf x has
the backward recursion

    P_{N+1} = Qf,
    L_k = (I + B_k^T P_{k+1} B_k)^{-1} B_k^T P_{k+1} A_k,
    P_k = A_k^T P_{k+1} A_k
          - A_k^T P_{k+1} B_k (I + B_k^T P_{k+1} B_k)^{-1} B_k^T P_{k+1} A_k,

with feedback u_k = -L_k x_k on the zero-mean deviation system.  Setting Qf to
the steering multiplier makes this controller emit the same inputs as the
innovation-feedback steering policy; this module provides the recursion, the
policy adapter (LQG feedback on the deviation, mean plan superposed), and a
sampled input-level equivalence check.  The backward recursion makes it the
cheap path for long horizons: O(N n^3) with no gain stack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import symmetrize
from .diffusion import SteeringPolicy, policy_step
from .errors import IndefiniteStep
from .mean_steering import MeanPlan
from .simulation import LinearPolicyRealization, _run_noise
from .system_model import BoundaryConditions, LtvSystem

#: floor on eigenvalues of I + B^T P B before a step counts as indefinite
_PD_FLOOR = 1e-12


@dataclass(frozen=True)
class LqgSolution:
    """Cost-to-go matrices P_0..P_{N+1} and feedback gains L_0..L_N."""

    Qf: np.ndarray              # (n, n)
    P: np.ndarray               # (N+2, n, n); P[k] is the cost-to-go at step k
    K: np.ndarray               # (N+1, m, n); u_k = -K[k] x_k


def riccati_backward(system: LtvSystem, Qf) -> LqgSolution:
    """Backward recursion from the terminal weight; symmetrized every step."""
    n, m, N = system.n, system.m, system.N
    Qf = symmetrize(np.asarray(Qf, dtype=float))
    P = np.empty((N + 2, n, n))
    K = np.empty((N + 1, m, n))
    P[N + 1] = Qf
    for k in range(N, -1, -1):
        A_k, B_k = system.A[k], system.B[k]
        S = symmetrize(np.eye(m) + B_k.T @ P[k + 1] @ B_k)
        if np.linalg.eigvalsh(S)[0] <= _PD_FLOOR:
            raise IndefiniteStep(k)
        K[k] = np.linalg.solve(S, B_k.T @ P[k + 1] @ A_k)
        P[k] = symmetrize(A_k.T @ P[k + 1] @ (A_k - B_k @ K[k]))
    return LqgSolution(Qf=Qf, P=P, K=K)


@dataclass(frozen=True)
class LqgPolicy:
    """LQG feedback on the deviation from the mean-plan trajectory.

    u_k = b_k - K_k (x_k - mubar_k) with mubar the noise-free trajectory under
    the open-loop mean inputs b.
    """

    system: LtvSystem
    lqg: LqgSolution
    u_bias: np.ndarray          # (N+1, m) mean-plan inputs b_k
    mean_traj: np.ndarray       # (N+2, n) reference trajectory mubar
    mu0: np.ndarray
    Sigma0: np.ndarray

    def input_at(self, k: int, x_k: np.ndarray) -> np.ndarray:
        return self.u_bias[k] - self.lqg.K[k] @ (np.asarray(x_k, dtype=float) - self.mean_traj[k])

    def realization(self, system: LtvSystem) -> LinearPolicyRealization:
        n, m, N = system.n, system.m, system.N
        A, B, G = system.a_stack(), system.b_stack(), system.g_stack()
        K = self.lqg.K
        h = self.u_bias + np.einsum("kmn,kn->km", K, self.mean_traj[:-1])
        F = A - B @ K
        f = np.einsum("knm,km->kn", B, h)
        return LinearPolicyRealization(
            nx=n,
            x_mean0=np.asarray(self.mu0, dtype=float),
            x_cov0=symmetrize(np.asarray(self.Sigma0, dtype=float)),
            z_offset0=np.asarray(self.mu0, dtype=float),
            z_gain0=np.eye(n),
            F=F,
            f=f,
            E=G,
            H=-K,
            h=h,
        )


def make_lqg_policy(
    system: LtvSystem, bc: BoundaryConditions, lqg: LqgSolution, mean_plan: MeanPlan
) -> LqgPolicy:
    """Superpose the mean plan on the LQG deviation feedback."""
    N, n = system.N, system.n
    mubar = np.empty((N + 2, n))
    mubar[0] = bc.mu0
    for k in range(N + 1):
        mubar[k + 1] = system.A[k] @ mubar[k] + system.B[k] @ mean_plan.u_mean[k]
    return LqgPolicy(
        system=system,
        lqg=lqg,
        u_bias=mean_plan.u_mean.copy(),
        mean_traj=mubar,
        mu0=np.asarray(bc.mu0, dtype=float),
        Sigma0=symmetrize(np.asarray(bc.Sigma0, dtype=float)),
    )


@dataclass(frozen=True)
class EquivalenceReport:
    max_input_deviation: float
    runs: int
    seed: int

    def within(self, tol: float) -> bool:
        return self.max_input_deviation <= tol


def equivalence_check(
    policy: SteeringPolicy,
    lqg: LqgSolution,
    runs: int = 100,
    seed: int = 0,
) -> EquivalenceReport:
    """Compare inputs of the steering policy and the LQG law on shared noise.

    Trajectories are driven by the steering policy; at every observed state the
    LQG input (deviation feedback plus mean plan) is evaluated alongside, and
    the largest input difference over all runs and steps is reported.
    """
    system = policy.system
    n, r, N = system.n, system.r, system.N
    bc_like = BoundaryConditions(policy.mu0, policy.Sigma0, policy.mu0, policy.Sigma0)
    lqg_policy = make_lqg_policy(system, bc_like, lqg, policy.mean_plan)

    from ._linalg import sqrt_psd

    sqrt0 = sqrt_psd(policy.Sigma0)
    max_dev = 0.0
    for run in range(runs):
        draws = _run_noise(seed, run, n + (N + 1) * r)
        x = policy.mu0 + sqrt0 @ draws[:n]
        w = draws[n:].reshape(N + 1, r)
        state = policy.init_state()
        for k in range(N + 1):
            u_cc, state = policy_step(policy, k, x, state)
            u_lqg = lqg_policy.input_at(k, x)
            dev = float(np.abs(u_cc - u_lqg).max())
            if dev > max_dev:
                max_dev = dev
            x = system.A[k] @ x + system.B[k] @ u_cc + system.G[k] @ w[k]
    return EquivalenceReport(max_input_deviation=max_dev, runs=runs, seed=seed)


def lqg_expected_cost(system: LtvSystem, bc: BoundaryConditions, lqg: LqgSolution) -> float:
    """Cost-to-go identity for the regulated system (stage plus terminal cost):

        E[J] = mu0^T P_0 mu0 + tr(P_0 Sigma0) + sum_k tr(P_{k+1} G_k G_k^T).
    """
    P0 = lqg.P[0]
    total = float(bc.mu0 @ P0 @ bc.mu0 + np.trace(P0 @ bc.Sigma0))
    for k in range(system.N + 1):
        G_k = system.G[k]
        total += float(np.trace(lqg.P[k + 1] @ (G_k @ G_k.T)))
    return total
