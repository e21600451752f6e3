"""Closed-form covariance steering without process noise.

With zero noise the terminal covariance under gain L on the initial deviation
is (Abar + Bbar L) Sigma0 (Abar + Bbar L)^T.  Factoring Sigma0 = V0 S0 V0^T and
SigmaF = VF SF VF^T, every feasible closed-loop map is
Xi = VF SF^{1/2} R S0^{-1/2} V0^T for an orthogonal R, and the control energy
is minimized by the trace-maximizing factor R* = U V^T of the SVD of

    Omega = SF^{1/2} VF^T (Bbar Bbar^T)^{-1} Abar V0 S0^{1/2}.

The same optimum is the unique minimum-condition root of the symmetric
multiplier equation, which this module also solves by reusing the iterative
machinery of :mod:`covsteer.diffusion` with the noise set to zero.  A selector
matrix D reduces the construction to the pair (D Abar, D Bbar) when only part
of the terminal covariance is constrained.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import EPS_CTRL, EPS_PSD, solve_spd, symmetrize
from .diffusion import LambdaMatrix, solve_lambda
from .errors import ReducedUncontrollable, SingularGramian, SingularInitialCovariance
from .system_model import BoundaryConditions, StackedOperators, controllability_check

#: relative tolerance on the terminal-covariance constraint
EPS_COV = 1e-8
#: relative Frobenius tolerance for gain agreement between solution paths
EPS_GAIN = 1e-8


@dataclass(frozen=True)
class DiffusionlessGain:
    """Feedback gain on the initial deviation, its closed-loop map, and cost."""

    L: np.ndarray               # (m(N+1), n)
    Xi: np.ndarray              # (n, n) closed-loop map Abar + Bbar L
    J_sigma: float


@dataclass(frozen=True)
class SvdFactors:
    """Spectral factors entering the closed-form construction."""

    V0: np.ndarray              # (n, n)
    S0: np.ndarray              # (n,) eigenvalues of Sigma0
    VF: np.ndarray              # (n_p, n_p)
    SF: np.ndarray              # (n_p,) eigenvalues of SigmaF
    Omega: np.ndarray           # (n_p, n)
    U_Omega: np.ndarray
    S_Omega: np.ndarray         # singular values of Omega
    V_Omega: np.ndarray         # right factor, rows are V^T
    Rstar: np.ndarray           # (n_p, n) trace-maximizing semi-orthogonal factor


def _factor_initial(Sigma0) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(symmetrize(np.asarray(Sigma0, dtype=float)))
    if w[0] <= EPS_PSD * max(float(w[-1]), 0.0):
        raise SingularInitialCovariance(
            f"initial covariance eigenvalue {w[0]:.3e} is below the acceptance "
            f"threshold; the construction needs Sigma0 > 0"
        )
    return w, V


def _factor_target(SigmaF) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(symmetrize(np.asarray(SigmaF, dtype=float)))
    return np.clip(w, 0.0, None), V


def compute_svd_factors(ops: StackedOperators, Sigma0, SigmaF) -> SvdFactors:
    """Factor the boundary covariances and the alignment matrix Omega."""
    w0, V0 = _factor_initial(Sigma0)
    wF, VF = _factor_target(SigmaF)
    ThA = solve_spd(ops.W0, ops.Abar)
    Omega = (np.sqrt(wF)[:, None] * VF.T) @ ThA @ (V0 * np.sqrt(w0)[None, :])
    U, s, Vt = np.linalg.svd(Omega, full_matrices=False)
    return SvdFactors(
        V0=V0, S0=w0, VF=VF, SF=wF,
        Omega=Omega, U_Omega=U, S_Omega=s, V_Omega=Vt,
        Rstar=U @ Vt,
    )


def _gain_from_factors(ops: StackedOperators, factors: SvdFactors) -> DiffusionlessGain:
    """Assemble the gain for the closed-loop map implied by the given factors."""
    inv_s0 = 1.0 / np.sqrt(factors.S0)
    Xi_target = (factors.VF * np.sqrt(factors.SF)[None, :]) @ factors.Rstar @ \
        (factors.V0 * inv_s0[None, :]).T
    Y = solve_spd(ops.W0, Xi_target - ops.Abar)
    L_blocks = np.swapaxes(ops.B_blocks, 1, 2) @ Y       # (N+1, m, n)
    Xi = ops.Abar + np.einsum("knm,kmj->nj", ops.B_blocks, L_blocks)
    L = L_blocks.reshape(-1, ops.n)
    Sigma0 = (factors.V0 * factors.S0[None, :]) @ factors.V0.T
    J = float(np.trace(L @ Sigma0 @ L.T))
    return DiffusionlessGain(L=L, Xi=Xi, J_sigma=J)


def steer_cov_svd(ops: StackedOperators, Sigma0, SigmaF) -> DiffusionlessGain:
    """Minimum-energy gain steering Sigma0 to SigmaF with zero process noise."""
    ctrl = controllability_check(ops)
    if not ctrl:
        raise SingularGramian(
            f"input Gramian is singular (eigenvalue ratio {ctrl.eigenvalue_ratio:.2e})"
        )
    return _gain_from_factors(ops, compute_svd_factors(ops, Sigma0, SigmaF))


def steer_cov_riccati(
    ops: StackedOperators, Sigma0, SigmaF
) -> tuple[DiffusionlessGain, LambdaMatrix]:
    """Same optimum through the symmetric multiplier equation.

    Reuses the iterative solver with the noise set to zero (pure iterative
    route: the closed-form warm start stays disabled so this path remains an
    independent cross-check of the SVD construction).
    """
    _factor_initial(Sigma0)  # same strict-positivity contract as the SVD path
    n = ops.n
    bc = BoundaryConditions(np.zeros(n), Sigma0, np.zeros(n), SigmaF)
    G_zero = np.zeros((ops.N + 1, n, 0))
    lam = solve_lambda(ops, bc, G_zero, informed_start=False)
    M0 = np.eye(n) + ops.W0 @ lam.Lambda
    Phi0 = np.linalg.solve(M0, ops.Abar)
    Phi0 = Phi0 + np.linalg.solve(M0, ops.Abar - M0 @ Phi0)
    Z = lam.Lambda @ Phi0
    L_blocks = -np.swapaxes(ops.B_blocks, 1, 2) @ Z
    Xi = ops.Abar + np.einsum("knm,kmj->nj", ops.B_blocks, L_blocks)
    L = L_blocks.reshape(-1, n)
    J = float(np.trace(L @ symmetrize(np.asarray(Sigma0, dtype=float)) @ L.T))
    return DiffusionlessGain(L=L, Xi=Xi, J_sigma=J), lam


def steer_partial_cov(
    ops: StackedOperators, Sigma0, D, SigmaF_partial
) -> DiffusionlessGain:
    """Steer only the selected block D Sigma_{N+1} D^T to the partial target.

    The problem reduces to the construction above with transition pair
    (D Abar, D Bbar); the reduced Gramian D W0 D^T must be positive definite.
    """
    D = np.asarray(D, dtype=float)
    n = ops.n
    DA = D @ ops.Abar
    WD = symmetrize(D @ ops.W0 @ D.T)
    w = np.linalg.eigvalsh(WD)
    if w[-1] <= 0.0 or w[0] <= EPS_CTRL * w[-1]:
        raise ReducedUncontrollable(
            f"selector-reduced Gramian is singular (eigenvalue ratio "
            f"{w[0] / w[-1] if w[-1] > 0 else 0.0:.2e})"
        )
    w0, V0 = _factor_initial(Sigma0)
    wF, VF = _factor_target(SigmaF_partial)
    ThA = solve_spd(WD, DA)
    Omega = (np.sqrt(wF)[:, None] * VF.T) @ ThA @ (V0 * np.sqrt(w0)[None, :])
    U, s, Vt = np.linalg.svd(Omega, full_matrices=False)
    Rstar = U @ Vt
    Xi_red = (VF * np.sqrt(wF)[None, :]) @ Rstar @ (V0 * (1.0 / np.sqrt(w0))[None, :]).T
    Y = D.T @ solve_spd(WD, Xi_red - DA)
    L_blocks = np.swapaxes(ops.B_blocks, 1, 2) @ Y
    Xi = ops.Abar + np.einsum("knm,kmj->nj", ops.B_blocks, L_blocks)
    L = L_blocks.reshape(-1, n)
    Sigma0s = (V0 * w0[None, :]) @ V0.T
    J = float(np.trace(L @ Sigma0s @ L.T))
    return DiffusionlessGain(L=L, Xi=Xi, J_sigma=J)
