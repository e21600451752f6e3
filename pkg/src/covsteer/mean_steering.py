"""Minimum-energy open-loop steering of the state mean.

The stacked mean constraint is Abar mu0 + Bbar E[U] = muF; the minimum-norm
solution is E[U*] = Bbar^T (Bbar Bbar^T)^{-1} (muF - Abar mu0), computed
blockwise through an SPD factorization of the Gramian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import solve_spd
from .errors import SingularGramian
from .system_model import BoundaryConditions, StackedOperators, controllability_check

#: absolute residual tolerance scale for the mean constraint
EPS_LIN = 1e-8


@dataclass(frozen=True)
class MeanPlan:
    """Open-loop mean inputs u_mean[k] (blocks of E[U*]) and their energy."""

    u_mean: np.ndarray      # (N+1, m)
    J_mu: float
    residual: float         # || Abar mu0 + Bbar stack(u_mean) - muF ||

    @property
    def stacked(self) -> np.ndarray:
        return self.u_mean.reshape(-1)


def steer_mean(ops: StackedOperators, bc: BoundaryConditions) -> MeanPlan:
    """Minimum-norm input sequence moving the mean from mu0 to muF."""
    ctrl = controllability_check(ops)
    if not ctrl:
        raise SingularGramian(
            f"input Gramian is singular (eigenvalue ratio {ctrl.eigenvalue_ratio:.2e})"
        )
    d = bc.muF - ops.Abar @ bc.mu0
    y = solve_spd(ops.W0, d)
    u_mean = np.einsum("knm,n->km", ops.B_blocks, y)
    reached = ops.Abar @ bc.mu0 + np.einsum("knm,km->n", ops.B_blocks, u_mean)
    residual = float(np.linalg.norm(reached - bc.muF))
    return MeanPlan(u_mean=u_mean, J_mu=float(np.sum(u_mean * u_mean)), residual=residual)


def mean_residual_tolerance(bc: BoundaryConditions) -> float:
    """Acceptance tolerance for the mean constraint residual."""
    return EPS_LIN * (1.0 + float(np.linalg.norm(bc.muF)))
