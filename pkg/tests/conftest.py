import numpy as np
import pytest

import covsteer as cs


def random_system(rng, n, m, r, N, scale=0.8):
    A = rng.normal(size=(N + 1, n, n)) * scale
    B = rng.normal(size=(N + 1, n, m))
    G = rng.normal(size=(N + 1, n, r)) * 0.4 if r else np.zeros((N + 1, n, 0))
    return cs.LtvSystem(A, B, G)


def random_spd(rng, n, floor=0.3):
    M = rng.normal(size=(n, n))
    return M @ M.T + floor * np.eye(n)


def achieved_terminal_cov(rng, system, ops, Sigma0, gain_scale=0.5):
    """Terminal covariance realized by a random causal innovation-feedback policy.

    Any such covariance is feasible by construction.  (The positive
    semidefiniteness of SigmaF - G_N G_N^T alone is necessary but not
    sufficient: with narrow input authority, late noise injections cannot be
    squeezed into an arbitrary SPD target.)
    """
    n, m, N = system.n, system.m, system.N
    G = system.g_stack()
    covs = [np.asarray(Sigma0, dtype=float)] + [G[i - 1] @ G[i - 1].T for i in range(1, N + 1)]
    total = G[N] @ G[N].T
    for i in range(N + 1):
        R = ops.Abar_tail[i] if i else ops.Abar
        for k in range(i, N + 1):
            R = R + ops.B_blocks[k] @ (gain_scale * rng.normal(size=(m, n)))
        total = total + R @ covs[i] @ R.T
    return 0.5 * (total + total.T)


def random_controllable(rng, n, m, r, N, feasible_target=True):
    """Random controllable instance; the target covariance is sampled from the
    reachable set when the system has noise."""
    while True:
        if m * (N + 1) < n:
            raise ValueError("m(N+1) < n can never be controllable")
        system = random_system(rng, n, m, r, N)
        ops = cs.stack_operators(system)
        if cs.controllability_check(ops):
            break
    Sigma0 = random_spd(rng, n)
    if feasible_target and r:
        SigmaF = achieved_terminal_cov(rng, system, ops, Sigma0)
    else:
        SigmaF = random_spd(rng, n)
    bc = cs.BoundaryConditions(
        mu0=rng.normal(size=n), Sigma0=Sigma0, muF=rng.normal(size=n), SigmaF=SigmaF
    )
    return system, ops, bc


def constrained_gain_oracle(ops, Sigma0, SigmaF, rng, starts=4, maxiter=400):
    """Brute-force minimum of tr(L Sigma0 L^T) over all gains meeting the
    terminal-covariance equality, via multi-start SLSQP.  Returns the best
    feasible cost or None if no start converged."""
    from scipy.optimize import minimize

    Abar, Bbar = ops.Abar, ops.Bbar
    Sigma0 = 0.5 * (np.asarray(Sigma0, float) + np.asarray(Sigma0, float).T)
    SigmaF = 0.5 * (np.asarray(SigmaF, float) + np.asarray(SigmaF, float).T)
    n = Abar.shape[0]
    p = Bbar.shape[1]
    iu = [(i, j) for i in range(n) for j in range(i, n)]

    def cost(x):
        L = x.reshape(p, n)
        return float(np.trace(L @ Sigma0 @ L.T))

    def grad(x):
        return (2.0 * x.reshape(p, n) @ Sigma0).ravel()

    def constraint(x):
        Xi = Abar + Bbar @ x.reshape(p, n)
        S = Xi @ Sigma0 @ Xi.T - SigmaF
        return np.array([S[i, j] for (i, j) in iu])

    best = None
    for _ in range(starts):
        res = minimize(
            cost,
            rng.normal(size=p * n) * 0.5,
            jac=grad,
            constraints=[{"type": "eq", "fun": constraint}],
            method="SLSQP",
            options={"maxiter": maxiter, "ftol": 1e-14},
        )
        if res.success and np.linalg.norm(constraint(res.x)) < 1e-8:
            if best is None or res.fun < best:
                best = float(res.fun)
    return best


@pytest.fixture(scope="session")
def lti():
    return cs.lti_example()


@pytest.fixture(scope="session")
def lti_ops(lti):
    return cs.stack_operators(lti[0])


@pytest.fixture(scope="session")
def lti_solution(lti, lti_ops):
    system, bc = lti
    lam = cs.solve_lambda(lti_ops, bc)
    policy = cs.build_policy(lti_ops, bc, lam)
    return {"system": system, "bc": bc, "ops": lti_ops, "lam": lam, "policy": policy}


@pytest.fixture(scope="session")
def cartpole():
    return cs.linearize_discretize()


@pytest.fixture(scope="session")
def cartpole_solution(cartpole):
    import time

    system, bc = cartpole
    t0 = time.perf_counter()
    ops = cs.stack_operators(system)
    lam = cs.solve_lambda(ops, bc)
    policy = cs.build_policy(ops, bc, lam)
    elapsed = time.perf_counter() - t0
    return {
        "system": system,
        "bc": bc,
        "ops": ops,
        "lam": lam,
        "policy": policy,
        "solve_seconds": elapsed,
    }
