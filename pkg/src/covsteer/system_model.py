"""Discrete linear time-varying system model, stacked transition operators, and spec file I/O.

The system is

    x_{k+1} = A_k x_k + B_k u_k + G_k w_k,   k = 0..N,

with x in R^n, u in R^m, and w in R^r zero-mean unit-covariance white Gaussian
noise.  The final state lives at index N+1.  Boundary data are Gaussian:
(mu0, Sigma0) at step 0 and (muF, SigmaF) at step N+1, optionally restricted
through a selector matrix D so that only D Sigma_{N+1} D^T is constrained.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._linalg import (
    EPS_CTRL,
    EPS_PSD,
    EPS_SYM,
    min_eig_violation,
    sym_deviation,
)
from .errors import DimensionMismatch, SpecFormatError


def _matrix_tuple(seq, name: str) -> tuple[np.ndarray, ...]:
    try:
        mats = tuple(np.array(Mk, dtype=float) for Mk in seq)
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"{name}: not a sequence of matrices ({exc})") from exc
    for k, Mk in enumerate(mats):
        if Mk.ndim != 2:
            raise DimensionMismatch(f"{name}[{k}]: expected a matrix, got ndim={Mk.ndim}")
        Mk.setflags(write=False)
    return mats


@dataclass(frozen=True)
class LtvSystem:
    """Matrix sequences A_k (n x n), B_k (n x m), G_k (n x r) for k = 0..N.

    Construction only requires each entry to be a matrix; per-step shape
    consistency is checked by :func:`validate` so that malformed input can be
    reported instead of raising.
    """

    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    G: tuple[np.ndarray, ...]

    def __init__(self, A: Sequence, B: Sequence, G: Sequence):
        object.__setattr__(self, "A", _matrix_tuple(A, "A"))
        object.__setattr__(self, "B", _matrix_tuple(B, "B"))
        object.__setattr__(self, "G", _matrix_tuple(G, "G"))
        if len(self.A) == 0:
            raise DimensionMismatch("A: need at least one matrix (N >= 0)")

    @classmethod
    def constant(cls, A, B, G, N: int) -> "LtvSystem":
        """Time-invariant shorthand: one matrix per role, repeated N+1 times."""
        if N < 0:
            raise DimensionMismatch(f"N must be >= 0, got {N}")
        return cls([A] * (N + 1), [B] * (N + 1), [G] * (N + 1))

    @property
    def N(self) -> int:
        """Horizon index; the final state is x_{N+1}."""
        return len(self.A) - 1

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1] if self.B else 0

    @property
    def r(self) -> int:
        return self.G[0].shape[1] if self.G else 0

    def a_stack(self) -> np.ndarray:
        """(N+1, n, n) array of the A_k; requires uniform shapes."""
        return np.stack(self.A)

    def b_stack(self) -> np.ndarray:
        return np.stack(self.B)

    def g_stack(self) -> np.ndarray:
        return np.stack(self.G)

    def is_diffusionless(self, tol: float = 0.0) -> bool:
        return self.r == 0 or all(np.abs(Gk).max() <= tol for Gk in self.G)


def _vector(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _matrix(M, name: str) -> np.ndarray:
    arr = np.array(M, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name}: expected a matrix, got ndim={arr.ndim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BoundaryConditions:
    """Gaussian boundary data (mu0, Sigma0) -> (muF, SigmaF), optional selector D.

    Matrices are stored exactly as given; symmetry/PSD acceptance is reported
    by :func:`validate`, and the solvers re-symmetrize on use.
    """

    mu0: np.ndarray
    Sigma0: np.ndarray
    muF: np.ndarray
    SigmaF: np.ndarray
    D: np.ndarray | None = None

    def __init__(self, mu0, Sigma0, muF, SigmaF, D=None):
        object.__setattr__(self, "mu0", _vector(mu0, "mu0"))
        object.__setattr__(self, "Sigma0", _matrix(Sigma0, "Sigma0"))
        object.__setattr__(self, "muF", _vector(muF, "muF"))
        object.__setattr__(self, "SigmaF", _matrix(SigmaF, "SigmaF"))
        object.__setattr__(self, "D", None if D is None else _matrix(D, "D"))

    @property
    def n_p(self) -> int:
        """Dimension of the constrained terminal covariance block."""
        return self.SigmaF.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _mode(values) -> int:
    values = list(values)
    return max(set(values), key=values.count) if values else 0


def validate(system: LtvSystem, bc: BoundaryConditions) -> ValidationReport:
    """Check dimensions, symmetry, and PSD acceptance; report all violations.

    Expected dimensions are taken by majority vote over the sequences so that
    a single malformed entry is the one reported.
    """
    v: list[str] = []
    N = system.N
    n = _mode(Ak.shape[0] for Ak in system.A)
    m = _mode(Bk.shape[1] for Bk in system.B)
    r = _mode(Gk.shape[1] for Gk in system.G)

    for name, seq, cols in (("A", system.A, n), ("B", system.B, m), ("G", system.G, r)):
        if len(seq) != N + 1:
            v.append(f"{name}: expected {N + 1} matrices, got {len(seq)}")
        for k, Mk in enumerate(seq):
            if Mk.shape != (n, cols):
                v.append(f"{name}[{k}]: expected shape {(n, cols)}, got {Mk.shape}")

    if bc.mu0.shape != (n,):
        v.append(f"mu0: expected length {n}, got {bc.mu0.shape[0]}")
    if bc.Sigma0.shape != (n, n):
        v.append(f"Sigma0: expected shape {(n, n)}, got {bc.Sigma0.shape}")

    n_p = n
    if bc.D is not None:
        if bc.D.ndim != 2 or bc.D.shape[1] != n or bc.D.shape[0] > n:
            v.append(f"D: expected shape (n_p<= {n}, {n}), got {bc.D.shape}")
        else:
            n_p = bc.D.shape[0]
            sv = np.linalg.svd(bc.D, compute_uv=False)
            if sv[-1] <= EPS_CTRL * sv[0]:
                v.append("D: not full row rank")
    if bc.muF.shape != (n,):
        v.append(f"muF: expected length {n}, got {bc.muF.shape[0]}")
    if bc.SigmaF.shape != (n_p, n_p):
        v.append(f"SigmaF: expected shape {(n_p, n_p)}, got {bc.SigmaF.shape}")

    for name, M in (("Sigma0", bc.Sigma0), ("SigmaF", bc.SigmaF)):
        if M.shape[0] != M.shape[1]:
            v.append(f"{name}: not square, shape {M.shape}")
            continue
        dev = sym_deviation(M)
        if dev > EPS_SYM:
            v.append(f"{name}: asymmetric (relative deviation {dev:.2e})")
        short = min_eig_violation(M, EPS_PSD)
        if short > 0.0:
            v.append(f"{name}: not positive semidefinite (eigenvalue short by {short:.2e})")

    return ValidationReport(tuple(v))


class _BlockTailView:
    """Lazy view of the stacked tail blocks [M_{N,k} M_{N,k+1} ... M_{N,N}].

    Indexing with k materializes the n x (cols * (N-k+1)) concatenation; blocks
    themselves are shared with the owning operator set.
    """

    def __init__(self, blocks: np.ndarray):
        self._blocks = blocks

    def __len__(self) -> int:
        return self._blocks.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        if not 0 <= k < len(self):
            raise IndexError(k)
        return np.hstack(tuple(self._blocks[k:]))


@dataclass(frozen=True)
class StackedOperators:
    """Tail transition operators of the stacked dynamics.

    ``Abar_tail[k]`` is the product A_N ... A_k mapping x_k to the final step,
    ``B_blocks[k]`` / ``G_blocks[k]`` the single blocks A_{N,k+1} B_k and
    A_{N,k+1} G_k, and ``gramian_tail[k]`` the input Gramian of the tail
    k..N.  Blocks are stored per step (O(N n (n+m+r)) memory); the full tail
    concatenations are materialized on demand via ``Bbar_tail`` / ``Gbar_tail``.
    """

    system: LtvSystem
    Abar_tail: np.ndarray          # (N+1, n, n)
    B_blocks: np.ndarray           # (N+1, n, m)
    G_blocks: np.ndarray           # (N+1, n, r)
    gramian_tail: np.ndarray       # (N+1, n, n)

    @property
    def n(self) -> int:
        return self.Abar_tail.shape[1]

    @property
    def m(self) -> int:
        return self.B_blocks.shape[2]

    @property
    def r(self) -> int:
        return self.G_blocks.shape[2]

    @property
    def N(self) -> int:
        return self.Abar_tail.shape[0] - 1

    @property
    def Abar(self) -> np.ndarray:
        """Full-horizon state transition A_N ... A_0."""
        return self.Abar_tail[0]

    @property
    def Bbar_tail(self) -> _BlockTailView:
        return _BlockTailView(self.B_blocks)

    @property
    def Gbar_tail(self) -> _BlockTailView:
        return _BlockTailView(self.G_blocks)

    @property
    def Bbar(self) -> np.ndarray:
        """Full stacked input operator, n x m(N+1)."""
        return self.Bbar_tail[0]

    @property
    def W0(self) -> np.ndarray:
        """Full-horizon controllability Gramian Bbar Bbar^T."""
        return self.gramian_tail[0]


def stack_operators(system: LtvSystem) -> StackedOperators:
    """Build all tail products, blocks, and Gramians by the backward recursion."""
    n, m, r, N = system.n, system.m, system.r, system.N
    A, B, G = system.a_stack(), system.b_stack(), system.g_stack()

    Abar_tail = np.empty((N + 1, n, n))
    B_blocks = np.empty((N + 1, n, m))
    G_blocks = np.empty((N + 1, n, r))
    tail = np.eye(n)
    for k in range(N, -1, -1):
        B_blocks[k] = tail @ B[k]
        G_blocks[k] = tail @ G[k]
        Abar_tail[k] = tail @ A[k]
        tail = Abar_tail[k]

    gramian_tail = np.empty((N + 1, n, n))
    gramian_tail[N] = B_blocks[N] @ B_blocks[N].T
    for k in range(N - 1, -1, -1):
        gramian_tail[k] = gramian_tail[k + 1] + B_blocks[k] @ B_blocks[k].T

    for arr in (Abar_tail, B_blocks, G_blocks, gramian_tail):
        arr.setflags(write=False)
    return StackedOperators(system, Abar_tail, B_blocks, G_blocks, gramian_tail)


@dataclass(frozen=True)
class ControllabilityResult:
    controllable: bool
    eigenvalue_ratio: float

    def __bool__(self) -> bool:
        return self.controllable


def controllability_check(ops: StackedOperators) -> ControllabilityResult:
    """Positive definiteness test of the full-horizon Gramian.

    Controllable iff the smallest eigenvalue of W0 exceeds EPS_CTRL times the
    largest; the ratio itself is returned for diagnostics.
    """
    w = np.linalg.eigvalsh(ops.W0)
    lo, hi = float(w[0]), float(w[-1])
    if hi <= 0.0:
        return ControllabilityResult(False, 0.0)
    ratio = lo / hi
    return ControllabilityResult(ratio > EPS_CTRL, ratio)


# --- spec file format -------------------------------------------------------
#
# JSON document with exactly these fields (D optional):
#   n, m, r, N   integers
#   A, B, G      one matrix (time-invariant shorthand) or a list of N+1 matrices
#   mu0, muF     vectors
#   Sigma0, SigmaF  matrices
#   D            optional selector matrix
# Matrices are nested row-major arrays of decimal numbers.  Unknown fields are
# rejected.  Dimension consistency is left to validate().

_REQUIRED_FIELDS = ("n", "m", "r", "N", "A", "B", "G", "mu0", "Sigma0", "muF", "SigmaF")
_ALL_FIELDS = _REQUIRED_FIELDS + ("D",)


def _nesting_depth(obj) -> int:
    d = 0
    while isinstance(obj, list):
        d += 1
        obj = obj[0] if obj else None
    return d


def _parse_matrix_role(doc: dict, name: str, N: int) -> list:
    raw = doc[name]
    depth = _nesting_depth(raw)
    if depth == 2:
        return [raw] * (N + 1)
    if depth == 3:
        return list(raw)
    raise SpecFormatError(
        f"field '{name}': expected a matrix or a list of matrices, got nesting depth {depth}"
    )


def load_spec(path) -> tuple[LtvSystem, BoundaryConditions]:
    """Read a system spec file; shorthand A/B/G expand to constant sequences."""
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SpecFormatError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SpecFormatError(f"{path}: top level must be an object")

    unknown = sorted(set(doc) - set(_ALL_FIELDS))
    if unknown:
        raise SpecFormatError(f"{path}: unknown field(s) {unknown}")
    missing = [f for f in _REQUIRED_FIELDS if f not in doc]
    if missing:
        raise SpecFormatError(f"{path}: missing field(s) {missing}")

    for f in ("n", "m", "r", "N"):
        if not isinstance(doc[f], int) or isinstance(doc[f], bool):
            raise SpecFormatError(f"{path}: field '{f}' must be an integer")
    N = doc["N"]
    if N < 0:
        raise SpecFormatError(f"{path}: field 'N' must be >= 0")

    try:
        system = LtvSystem(
            _parse_matrix_role(doc, "A", N),
            _parse_matrix_role(doc, "B", N),
            _parse_matrix_role(doc, "G", N),
        )
        bc = BoundaryConditions(
            doc["mu0"], doc["Sigma0"], doc["muF"], doc["SigmaF"], doc.get("D")
        )
    except (DimensionMismatch, ValueError) as exc:
        raise SpecFormatError(f"{path}: {exc}") from exc
    return system, bc


def _role_payload(seq: tuple[np.ndarray, ...]):
    first = seq[0]
    if all(Mk.shape == first.shape and np.array_equal(Mk, first) for Mk in seq[1:]):
        return first.tolist()
    return [Mk.tolist() for Mk in seq]


def save_spec(path, system: LtvSystem, bc: BoundaryConditions) -> None:
    """Write a spec file; constant sequences collapse to the shorthand form.

    Finite values round-trip bit-exactly through the decimal text.
    """
    doc = {
        "n": system.n,
        "m": system.m,
        "r": system.r,
        "N": system.N,
        "A": _role_payload(system.A),
        "B": _role_payload(system.B),
        "G": _role_payload(system.G),
        "mu0": bc.mu0.tolist(),
        "Sigma0": bc.Sigma0.tolist(),
        "muF": bc.muF.tolist(),
        "SigmaF": bc.SigmaF.tolist(),
    }
    if bc.D is not None:
        doc["D"] = bc.D.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
