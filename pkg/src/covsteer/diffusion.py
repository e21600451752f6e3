"""Covariance steering with process noise.

The final state is a superposition of independent noiseless subsystems, one
per noise injection plus one for the initial state.  A single symmetric
multiplier matrix couples their feedback gains: with tail Gramians
W_k = Bbar_{N,k} Bbar_{N,k}^T and closed-loop factors

    Phi_k = (I + W_k Lambda)^{-1} A_{N,k},

the multiplier must satisfy the terminal-covariance matching equation

    Phi_0 Sigma0 Phi_0^T + sum_{k=1..N} Phi_k G_{k-1} G_{k-1}^T Phi_k^T
        = SigmaF - G_N G_N^T,

and the optimal inputs are u_k = (mean plan block k) + sum_{i<=k} L^(i)_k y_i
with innovation feedback gains L^(i)_k = -B_{N,k}^T Lambda Phi_i.

The equation is solved by damped Newton over the symmetric matrix entries.
Newton from zero handles mild problems; strongly contracting ones (long
unstable horizons) are reached by continuation along the geodesic between the
uncontrolled terminal covariance and the target, each stage gated by the
second-order (minimum, not saddle) condition.  A root is accepted only if
I + Bbar_{N,i}^T Lambda Bbar_{N,i} is positive definite for every tail.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._linalg import (
    min_eig_violation,
    solve_spd,
    spd_power,
    sym_basis_indices,
    sym_to_vec,
    symmetrize,
    vec_to_sym,
)
from .errors import (
    InfeasibleTarget,
    NoConvergence,
    SecondOrderViolation,
    SingularClosedLoop,
    SingularGramian,
    StepOutOfRange,
    UnsupportedProblem,
)
from .mean_steering import MeanPlan, steer_mean
from .simulation import LinearPolicyRealization
from .system_model import (
    BoundaryConditions,
    LtvSystem,
    StackedOperators,
    controllability_check,
)

logger = logging.getLogger(__name__)

#: relative residual tolerance of the multiplier solve
EPS_NEWTON = 1e-10
#: Newton iteration budget per (sub)problem
ITER_BUDGET = 100
#: slack on the second-order positivity margin (margin must exceed -1 + slack)
SECOND_ORDER_SLACK = 1e-9

_LONG = np.longdouble


@dataclass(frozen=True)
class LambdaMatrix:
    """Symmetric multiplier with its residual norm and minimum-condition flag."""

    Lambda: np.ndarray
    residual_norm: float
    second_order_ok: bool
    iterations: int = 0


def feasibility_check(system: LtvSystem, bc: BoundaryConditions) -> bool:
    """Solvability condition: SigmaF - G_N G_N^T must be positive semidefinite.

    The last noise injection reaches the final state unfiltered, so a target
    smaller than it cannot be met.
    """
    G_N = system.G[-1]
    gap = symmetrize(np.asarray(bc.SigmaF, dtype=float)) - G_N @ G_N.T
    return min_eig_violation(gap) == 0.0


def second_order_margin(ops: StackedOperators, Lambda: np.ndarray) -> float:
    """min over tails i of the smallest eigenvalue of W_i^{1/2} Lambda W_i^{1/2}.

    The multiplier is a cost minimum iff the margin exceeds -1, equivalently
    I + Bbar_{N,i}^T Lambda Bbar_{N,i} > 0 for every i (the eigenvalues of
    I + W_i Lambda are 1 + those of the symmetric product, all real).
    """
    w, V = np.linalg.eigh(ops.gramian_tail)
    roots = np.einsum("kij,kj,klj->kil", V, np.sqrt(np.clip(w, 0.0, None)), V)
    S = symmetrize(roots @ Lambda @ roots)
    return float(np.linalg.eigvalsh(S).min())


class _MultiplierProblem:
    """Cached arrays and residual/Jacobian evaluation for one solve."""

    def __init__(self, ops: StackedOperators, Sigma0, SigmaF, G):
        self.ops = ops
        self.n = ops.n
        self.N = ops.N
        self.W = ops.gramian_tail
        self.Abar_tail = ops.Abar_tail
        self.Sigma0 = symmetrize(np.asarray(Sigma0, dtype=float))
        self.SigmaF = symmetrize(np.asarray(SigmaF, dtype=float))
        G = np.asarray(G, dtype=float)
        if G.ndim != 3 or G.shape[0] != self.N + 1:
            raise UnsupportedProblem(
                f"noise input must be a sequence of N+1 matrices, got shape {G.shape}"
            )
        self.Q = G @ G.transpose(0, 2, 1)          # (N+1, n, n)
        self.target = self.SigmaF - self.Q[self.N]
        self.norm_scale = max(float(np.linalg.norm(self.SigmaF)), np.finfo(float).tiny)
        self.I = np.eye(self.n)
        self.indices = sym_basis_indices(self.n)

    # -- evaluation ----------------------------------------------------------

    def factors(self, Lam: np.ndarray):
        """M_k = I + W_k Lam and Phi_k; raises SingularClosedLoop."""
        M = self.I[None] + self.W @ Lam
        try:
            Phi = np.linalg.solve(M, self.Abar_tail)
        except np.linalg.LinAlgError:
            raise SingularClosedLoop(self._first_singular(M)) from None
        return M, Phi

    def _first_singular(self, M: np.ndarray) -> int:
        dets = np.abs(np.linalg.det(M))
        bad = np.flatnonzero(~np.isfinite(dets) | (dets == 0.0))
        return int(bad[0]) if bad.size else 0

    def refined_factors(self, Lam: np.ndarray, rounds: int = 2):
        """Phi with extended-precision residual correction.

        The plain solve loses ~cond(M) digits through cancellation (the tail
        transitions are large, their closed-loop images small); refinement
        restores Phi to working accuracy so that terminal-covariance checks
        are meaningful below 1e-8.
        """
        M, Phi = self.factors(Lam)
        M_ld = np.asarray(M, dtype=_LONG)
        A_ld = np.asarray(self.Abar_tail, dtype=_LONG)
        for _ in range(rounds):
            R = np.asarray(A_ld - M_ld @ np.asarray(Phi, dtype=_LONG), dtype=float)
            Phi = Phi + np.linalg.solve(M, R)
        return M, Phi

    def contributions(self, Phi: np.ndarray) -> np.ndarray:
        """Per-subsystem terminal covariance terms C_k, k = 0..N."""
        C = np.empty((self.N + 1, self.n, self.n))
        C[0] = Phi[0] @ self.Sigma0 @ Phi[0].T
        C[1:] = (Phi[1:] @ self.Q[:-1]) @ Phi[1:].transpose(0, 2, 1)
        return C

    def residual(self, Lam: np.ndarray, target: np.ndarray | None = None) -> np.ndarray:
        _, Phi = self.factors(Lam)
        F = self.contributions(Phi).sum(axis=0) - (self.target if target is None else target)
        return symmetrize(F)

    def residual_accurate(self, Lam: np.ndarray) -> np.ndarray:
        """Residual with refined factors and extended-precision accumulation."""
        _, Phi = self.refined_factors(Lam)
        Phi_ld = np.asarray(Phi, dtype=_LONG)
        C0 = Phi_ld[0] @ np.asarray(self.Sigma0, dtype=_LONG) @ Phi_ld[0].T
        Ck = (Phi_ld[1:] @ np.asarray(self.Q[:-1], dtype=_LONG)) @ Phi_ld[1:].transpose(0, 2, 1)
        F = np.asarray(C0 + Ck.sum(axis=0) - np.asarray(self.target, dtype=_LONG), dtype=float)
        return symmetrize(F)

    def jacobian(self, M: np.ndarray, C: np.ndarray) -> np.ndarray:
        """Directional derivatives of the residual over the symmetric basis.

        d(I+WL)^{-1}[dL] = -(I+WL)^{-1} W dL (I+WL)^{-1} gives
        dF[E] = -sum_k sym2(M_k^{-1} W_k E C_k).
        """
        T = np.linalg.solve(M, self.W)
        s = len(self.indices)
        J = np.empty((s, s))
        for a, (i, j) in enumerate(self.indices):
            E = np.zeros((self.n, self.n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            X = ((T @ E) @ C).sum(axis=0)
            J[:, a] = sym_to_vec(-(X + X.T), self.indices)
        return J

    def jacobian_fd(self, Lam: np.ndarray, target: np.ndarray, h: float = 1e-7) -> np.ndarray:
        """Finite-difference Jacobian; verification fallback for the closed form."""
        s = len(self.indices)
        J = np.empty((s, s))
        scale = h * max(1.0, float(np.abs(Lam).max()))
        for a, (i, j) in enumerate(self.indices):
            E = np.zeros((self.n, self.n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            Fp = self.residual(Lam + scale * E, target)
            Fm = self.residual(Lam - scale * E, target)
            J[:, a] = sym_to_vec((Fp - Fm) / (2 * scale), self.indices)
        return J

    # -- solvers ---------------------------------------------------------------

    def newton(self, Lam0: np.ndarray, target: np.ndarray, tol_abs: float,
               max_iter: int) -> tuple[np.ndarray | None, np.ndarray, int]:
        """Damped Newton; returns (root or None, best iterate, iterations used)."""
        Lam = Lam0.copy()
        best, best_norm = Lam.copy(), np.inf
        for it in range(max_iter):
            try:
                M, Phi = self.factors(Lam)
            except SingularClosedLoop:
                return None, best, it
            C = self.contributions(Phi)
            F = symmetrize(C.sum(axis=0) - target)
            nF = float(np.linalg.norm(F))
            if nF < best_norm:
                best, best_norm = Lam.copy(), nF
            if nF <= tol_abs:
                return Lam, best, it
            J = self.jacobian(M, C)
            rhs = -sym_to_vec(F, self.indices)
            try:
                step_v = np.linalg.solve(J, rhs)
            except np.linalg.LinAlgError:
                step_v = np.linalg.lstsq(J, rhs, rcond=None)[0]
            step = vec_to_sym(step_v, self.n, self.indices)
            alpha, accepted = 1.0, False
            while alpha > 1e-12:
                trial = Lam + alpha * step
                try:
                    _, Phi_t = self.factors(trial)
                except SingularClosedLoop:
                    alpha *= 0.5
                    continue
                nF_t = float(np.linalg.norm(
                    symmetrize(self.contributions(Phi_t).sum(axis=0) - target)
                ))
                if nF_t < (1.0 - 1e-4 * alpha) * nF:
                    Lam = trial
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                return None, best, it
        return None, best, max_iter

    def margin(self, Lam: np.ndarray) -> float:
        return second_order_margin(self.ops, Lam)

    def gate(self, Lam: np.ndarray | None) -> bool:
        return Lam is not None and self.margin(Lam) > -1.0 + SECOND_ORDER_SLACK

    def uncontrolled(self) -> np.ndarray:
        return symmetrize(self.contributions(self.factors(np.zeros((self.n, self.n)))[1]).sum(axis=0))

    def diffusionless_start(self, target: np.ndarray) -> np.ndarray | None:
        """Closed-form multiplier of the no-noise problem with the given target.

        From the stationarity relation W0 Lam = Abar V0 S0^{1/2} R*^T SF^{-1/2}
        VF^T - I with R* the trace-maximizing orthogonal factor; exact when the
        noise is zero, a warm start otherwise.
        """
        try:
            W0 = self.W[0]
            floor0 = 1e-14 * max(float(np.linalg.eigvalsh(self.Sigma0)[-1]), 1e-300)
            w0, V0 = np.linalg.eigh(self.Sigma0)
            w0 = np.clip(w0, floor0, None)
            tgt = symmetrize(target)
            floorF = 1e-14 * max(float(np.linalg.eigvalsh(tgt)[-1]), 1e-300)
            wF, VF = np.linalg.eigh(tgt)
            wF = np.clip(wF, floorF, None)
            Abar = self.Abar_tail[0]
            ThA = solve_spd(W0, Abar)
            Om = (np.sqrt(wF)[:, None] * VF.T) @ ThA @ (V0 * np.sqrt(w0)[None, :])
            U, _, Vt = np.linalg.svd(Om)
            X = Abar @ (V0 * np.sqrt(w0)[None, :]) @ (U @ Vt).T @ (VF * (1.0 / np.sqrt(wF))[None, :]).T
            return symmetrize(solve_spd(W0, X - self.I))
        except np.linalg.LinAlgError:
            return None

    def continuation(self, path, Lam0: np.ndarray, tol_abs: float, max_iter: int,
                     warm_start=None) -> tuple[np.ndarray | None, int]:
        """Track the root along targets path(beta), beta: 0 -> 1, gating each stage.

        Stage steps adapt: a failed or gate-rejected stage halves the step so
        the warm start stays in the basin of the minimum root.
        """
        Lam = Lam0.copy()
        done, step, used = 0.0, 0.25, 0
        failures = 0
        while done < 1.0 and failures < 60:
            beta = min(1.0, done + step)
            target = path(beta)
            stage_tol = tol_abs if beta >= 1.0 else max(tol_abs, 1e-7 * np.linalg.norm(target))
            root, _, its = self.newton(Lam, target, stage_tol, max_iter)
            used += its
            if root is None and warm_start is not None:
                ws = warm_start(target)
                if ws is not None:
                    root, _, its = self.newton(ws, target, stage_tol, max_iter)
                    used += its
            if root is None or not self.gate(root):
                step *= 0.5
                failures += 1
                continue
            Lam, done = root, beta
            step = min(step * 2.0, 1.0)
        return (Lam if done >= 1.0 else None), used


def _geodesic(start: np.ndarray, end: np.ndarray):
    """Geodesic on the SPD cone from start to end (eigenvalue-floored)."""
    floor_s = 1e-14 * max(float(np.linalg.eigvalsh(symmetrize(start))[-1]), 1e-300)
    S_h = spd_power(start, 0.5, floor=floor_s)
    S_hi = spd_power(start, -0.5, floor=floor_s)
    mid = symmetrize(S_hi @ end @ S_hi)
    w, V = np.linalg.eigh(mid)
    w = np.clip(w, 1e-14 * max(float(w[-1]), 1e-300), None)

    def path(beta: float) -> np.ndarray:
        if beta >= 1.0:
            return end
        return symmetrize(S_h @ ((V * w**beta) @ V.T) @ S_h)

    return path


def lambda_residual(Lambda, ops: StackedOperators, Sigma0, SigmaF, G) -> np.ndarray:
    """Terminal-covariance matching defect of a candidate multiplier.

    Zero exactly when the closed loop built from `Lambda` steers the covariance
    from Sigma0 to SigmaF under noise input sequence G.
    """
    G = np.stack([np.asarray(Gk, dtype=float) for Gk in G])
    prob = _MultiplierProblem(ops, Sigma0, SigmaF, G)
    return prob.residual(symmetrize(np.asarray(Lambda, dtype=float)))


def solve_lambda(
    ops: StackedOperators,
    bc: BoundaryConditions,
    G=None,
    *,
    tol: float = EPS_NEWTON,
    max_iter: int = ITER_BUDGET,
    informed_start: bool = True,
) -> LambdaMatrix:
    """Solve the terminal-covariance matching equation for the multiplier.

    Strategy chain, each candidate gated by the second-order condition:
    Newton from zero; geodesic continuation of the target from the
    uncontrolled covariance; the same continuation seeded by the closed-form
    noiseless multiplier (skipped when `informed_start` is false); noise-scaling
    continuation.  The accepted root is polished against a refined residual so
    the stored multiplier is accurate at the terminal-constraint level.
    """
    if bc.D is not None:
        raise UnsupportedProblem("partial covariance selectors require the diffusionless solver")
    ctrl = controllability_check(ops)
    if not ctrl:
        raise SingularGramian(
            f"input Gramian is singular (eigenvalue ratio {ctrl.eigenvalue_ratio:.2e})"
        )
    if G is None:
        G = ops.system.g_stack()
    else:
        G = np.stack([np.asarray(Gk, dtype=float) for Gk in G])
    gap = symmetrize(np.asarray(bc.SigmaF, dtype=float)) - G[-1] @ G[-1].T
    if min_eig_violation(gap) > 0.0:
        raise InfeasibleTarget(
            "SigmaF - G_N G_N^T is not positive semidefinite; the final noise "
            "injection exceeds the target covariance"
        )

    prob = _MultiplierProblem(ops, bc.Sigma0, bc.SigmaF, G)
    tol_abs = tol * prob.norm_scale
    zero = np.zeros((prob.n, prob.n))
    total_iters = 0
    best_overall, best_norm = zero, float(np.linalg.norm(prob.residual(zero)))

    def consider(Lam):
        nonlocal best_overall, best_norm
        if Lam is None:
            return None
        nF = float(np.linalg.norm(prob.residual(Lam)))
        if nF < best_norm:
            best_overall, best_norm = Lam, nF
        if nF <= tol_abs and prob.gate(Lam):
            return Lam
        return None

    root = None

    # 1: plain Newton from zero
    cand, best, its = prob.newton(zero, prob.target, tol_abs, max_iter)
    total_iters += its
    root = consider(cand if prob.gate(cand) else None)
    consider(best)

    # 2: geodesic continuation of the target from the uncontrolled covariance
    if root is None:
        path = _geodesic(prob.uncontrolled(), prob.target)
        cand, its = prob.continuation(path, zero, tol_abs, max_iter)
        total_iters += its
        root = consider(cand)

    # 3: same continuation, warm-started from the closed-form noiseless multiplier
    if root is None and informed_start:
        start = prob.diffusionless_start(prob.target)
        if start is not None:
            cand, _, its = prob.newton(start, prob.target, tol_abs, max_iter)
            total_iters += its
            root = consider(cand if prob.gate(cand) else None)
        if root is None:
            path = _geodesic(prob.uncontrolled(), prob.target)
            cand, its = prob.continuation(
                path, zero, tol_abs, max_iter, warm_start=prob.diffusionless_start
            )
            total_iters += its
            root = consider(cand)

    # 4: noise-scaling continuation G -> alpha G
    if root is None:
        Lam = prob.diffusionless_start(prob.target) if informed_start else None
        Lam = Lam if Lam is not None else zero
        ok = True
        for alpha in (0.25, 0.5, 0.75, 1.0):
            sub = _MultiplierProblem(ops, bc.Sigma0, bc.SigmaF, alpha * G)
            stage_tol = tol_abs if alpha >= 1.0 else max(tol_abs, 1e-7 * prob.norm_scale)
            cand, _, its = sub.newton(Lam, sub.target, stage_tol, max_iter)
            total_iters += its
            if cand is None or not sub.gate(cand):
                ok = False
                break
            Lam = cand
        if ok:
            root = consider(Lam)

    if root is None:
        margin = prob.margin(best_overall)
        if best_norm <= tol_abs:
            raise SecondOrderViolation(
                f"converged multiplier fails the minimum condition "
                f"(margin {margin:.3e} <= -1); rejected"
            )
        raise NoConvergence(
            f"multiplier solve exhausted its budget; best residual "
            f"{best_norm:.3e} (tolerance {tol_abs:.3e})",
            best_lambda=best_overall,
            residual_norm=best_norm,
        )

    # polish against the refined residual so the stored root is accurate at
    # the level terminal-constraint checks measure
    polished, polished_norm = root, float(np.linalg.norm(prob.residual_accurate(root)))
    Lam = root
    for _ in range(4):
        F = prob.residual_accurate(Lam)
        nF = float(np.linalg.norm(F))
        if nF < polished_norm:
            polished, polished_norm = Lam, nF
        if nF <= 0.01 * tol_abs:
            break
        try:
            M, Phi = prob.factors(Lam)
        except SingularClosedLoop:
            break
        J = prob.jacobian(M, prob.contributions(Phi))
        try:
            step_v = np.linalg.solve(J, -sym_to_vec(F, prob.indices))
        except np.linalg.LinAlgError:
            break
        Lam = Lam + vec_to_sym(step_v, prob.n, prob.indices)
    if prob.gate(polished):
        root = polished

    final_norm = float(np.linalg.norm(prob.residual(root)))
    logger.debug(
        "multiplier solved: residual %.3e (accurate %.3e), %d Newton iterations",
        final_norm, polished_norm, total_iters,
    )
    return LambdaMatrix(
        Lambda=symmetrize(root),
        residual_norm=final_norm,
        second_order_ok=True,
        iterations=total_iters,
    )


@dataclass
class PolicyState:
    """Per-trajectory mutable state: next step, remaining plan, one-step prediction."""

    k: int
    u_plan: np.ndarray          # (N+1, m); entries before k already emitted
    xhat: np.ndarray            # prediction of the next observed state


@dataclass(frozen=True)
class SteeringPolicy:
    """Optimal steering law: open-loop mean plan plus innovation feedback.

    Feedback gains are derived lazily from the multiplier and the closed-loop
    factors (gain(i, k) = -B_{N,k}^T Lambda Phi_i); the O(N^2) gain stack is
    never materialized.
    """

    mean_plan: MeanPlan
    Phi: np.ndarray             # (N+1, n, n)
    lambda_: LambdaMatrix
    ops: StackedOperators
    mu0: np.ndarray
    Sigma0: np.ndarray

    @property
    def Lambda(self) -> np.ndarray:
        return self.lambda_.Lambda

    @property
    def system(self) -> LtvSystem:
        return self.ops.system

    def gain(self, i: int, k: int) -> np.ndarray:
        """Feedback gain of innovation i on input k (0 <= i <= k <= N)."""
        N = self.ops.N
        if not (0 <= i <= k <= N):
            raise StepOutOfRange(f"gain indices must satisfy 0 <= i <= k <= {N}, got ({i}, {k})")
        return -self.ops.B_blocks[k].T @ self.Lambda @ self.Phi[i]

    def innovation_gain_stack(self, i: int) -> np.ndarray:
        """All gains of innovation i, stacked over steps i..N: (N-i+1, m, n)."""
        Z = self.Lambda @ self.Phi[i]
        return -np.swapaxes(self.ops.B_blocks[i:], 1, 2) @ Z

    def init_state(self) -> PolicyState:
        return PolicyState(k=0, u_plan=self.mean_plan.u_mean.copy(), xhat=self.mu0.copy())

    def realization(self, system: LtvSystem) -> LinearPolicyRealization:
        """Joint recursion in z = (x, s) with s_k the Phi-weighted innovation sum."""
        n, m, r, N = system.n, system.m, system.r, system.N
        A, B, G = system.a_stack(), system.b_stack(), system.g_stack()
        q = 2 * n
        F = np.zeros((N + 1, q, q))
        f = np.zeros((N + 1, q))
        E = np.zeros((N + 1, q, r))
        H = np.zeros((N + 1, m, q))
        h = self.mean_plan.u_mean.copy()
        Lam = self.Lambda
        for k in range(N + 1):
            Hrow = self.ops.B_blocks[k].T @ Lam      # (m, n)
            H[k, :, n:] = -Hrow
            F[k, :n, :n] = A[k]
            F[k, :n, n:] = -B[k] @ Hrow
            F[k, n:, n:] = np.eye(n)
            f[k, :n] = B[k] @ h[k]
            E[k, :n, :] = G[k]
            if k < N:
                E[k, n:, :] = self.Phi[k + 1] @ G[k]
        z_gain0 = np.vstack([np.eye(n), self.Phi[0]])
        z_offset0 = np.concatenate([self.mu0, np.zeros(n)])
        return LinearPolicyRealization(
            nx=n,
            x_mean0=self.mu0.copy(),
            x_cov0=symmetrize(self.Sigma0),
            z_offset0=z_offset0,
            z_gain0=z_gain0,
            F=F,
            f=f,
            E=E,
            H=H,
            h=h,
        )


def build_policy(ops: StackedOperators, bc: BoundaryConditions,
                 lam: LambdaMatrix) -> SteeringPolicy:
    """Assemble the steering policy from a solved multiplier."""
    prob = _MultiplierProblem(ops, bc.Sigma0, bc.SigmaF, ops.system.g_stack())
    _, Phi = prob.refined_factors(lam.Lambda)
    Phi = np.ascontiguousarray(Phi)
    Phi.setflags(write=False)
    mean_plan = steer_mean(ops, bc)
    return SteeringPolicy(
        mean_plan=mean_plan,
        Phi=Phi,
        lambda_=lam,
        ops=ops,
        mu0=np.asarray(bc.mu0, dtype=float),
        Sigma0=symmetrize(np.asarray(bc.Sigma0, dtype=float)),
    )


def policy_step(policy: SteeringPolicy, k: int, x_k, state: PolicyState):
    """Advance the policy one step: fold the innovation into the remaining plan.

    The innovation is the unpredicted part of the observed state,
    y_k = x_k - (A_{k-1} x_{k-1} + B_{k-1} u_{k-1}) (y_0 = x_0 - mu0); the
    prediction is advanced from the observed state, so y_k reconstructs
    G_{k-1} w_{k-1} exactly.  With w = 0 and x_0 = mu0 the emitted inputs are
    the mean plan.
    """
    N = policy.ops.N
    if k != state.k or not 0 <= k <= N:
        raise StepOutOfRange(f"expected step {state.k} (0..{N}), got {k}")
    x_k = np.asarray(x_k, dtype=float)
    y = x_k - state.xhat
    z = policy.Lambda @ (policy.Phi[k] @ y)
    state.u_plan[k:] -= np.einsum("jnm,n->jm", policy.ops.B_blocks[k:], z)
    u_k = state.u_plan[k].copy()
    A_k, B_k = policy.system.A[k], policy.system.B[k]
    state.xhat = A_k @ x_k + B_k @ u_k
    state.k = k + 1
    return u_k, state
