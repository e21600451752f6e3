"""Small matrix helpers shared across the solver modules."""
from __future__ import annotations

import numpy as np

#: relative tolerance for symmetry checks
EPS_SYM = 1e-10
#: relative tolerance (vs largest eigenvalue) for PSD acceptance
EPS_PSD = 1e-10
#: eigenvalue-ratio threshold below which a Gramian counts as singular
EPS_CTRL = 1e-10


def symmetrize(M: np.ndarray) -> np.ndarray:
    """(M + M^T)/2; suppresses representation noise on nominally symmetric input."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def sym_deviation(M: np.ndarray) -> float:
    """Relative Frobenius asymmetry ||M - M^T|| / max(||M||, tiny)."""
    nrm = np.linalg.norm(M)
    if nrm == 0.0:
        return 0.0
    return float(np.linalg.norm(M - M.T) / nrm)


def min_eig_violation(M: np.ndarray, eps: float = EPS_PSD) -> float:
    """How far M falls short of PSD: max(0, -(min eig) - eps * max(max eig, 0)).

    Zero means M passes the PSD acceptance test.
    """
    w = np.linalg.eigvalsh(symmetrize(M))
    tol = eps * max(float(w[-1]), 0.0)
    return max(0.0, -float(w[0]) - tol)


def is_psd(M: np.ndarray, eps: float = EPS_PSD) -> bool:
    return min_eig_violation(M, eps) == 0.0


def psd_factor(Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition Sigma = V diag(w) V^T with negatives clipped to zero."""
    w, V = np.linalg.eigh(symmetrize(Sigma))
    return np.clip(w, 0.0, None), V


def spd_power(M: np.ndarray, p: float, floor: float = 0.0) -> np.ndarray:
    """M^p for symmetric PSD M via eigendecomposition; eigenvalues floored first."""
    w, V = np.linalg.eigh(symmetrize(M))
    w = np.clip(w, floor, None)
    if p < 0 and w[0] <= 0.0:
        raise np.linalg.LinAlgError("singular matrix in negative power")
    return (V * w**p) @ V.T


def sqrt_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root (negative eigenvalues clipped)."""
    return spd_power(M, 0.5)


def sym_basis_indices(n: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs enumerating a basis of symmetric n x n matrices."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def sym_to_vec(S: np.ndarray, indices: list[tuple[int, int]]) -> np.ndarray:
    return np.array([S[i, j] for (i, j) in indices])


def vec_to_sym(v: np.ndarray, n: int, indices: list[tuple[int, int]]) -> np.ndarray:
    S = np.zeros((n, n))
    for a, (i, j) in enumerate(indices):
        S[i, j] = v[a]
        S[j, i] = v[a]
    return S


def solve_spd(M: np.ndarray, rhs: np.ndarray, refine: int = 1) -> np.ndarray:
    """Solve M x = rhs for symmetric positive definite M via Cholesky.

    One step of iterative refinement by default; the Gramians this is used on
    can be badly conditioned (long horizons) and refinement recovers the last
    digits cheaply.
    """
    import scipy.linalg

    c, low = scipy.linalg.cho_factor(symmetrize(M), check_finite=False)
    x = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    for _ in range(refine):
        r = rhs - M @ x
        x = x + scipy.linalg.cho_solve((c, low), r, check_finite=False)
    return x
