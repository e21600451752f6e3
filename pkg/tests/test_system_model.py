import json

import numpy as np
import pytest

import covsteer as cs
from covsteer.errors import SpecFormatError
from conftest import random_system


def test_validate_lti_clean(lti):
    system, bc = lti
    report = cs.validate(system, bc)
    assert report.ok
    assert report.violations == ()


def test_validate_dimension_violation(lti):
    system, bc = lti
    B = [np.zeros((2, 2))] + [system.B[k] for k in range(1, system.N + 1)]
    bad = cs.LtvSystem(system.A, B, system.G)
    report = cs.validate(bad, bc)
    assert not report.ok
    assert any("B[0]" in v for v in report.violations)


def test_validate_psd_violation(lti):
    system, bc = lti
    bad = cs.BoundaryConditions(bc.mu0, [[-1.0, 0.0], [0.0, 1.0]], bc.muF, bc.SigmaF)
    report = cs.validate(system, bad)
    assert any("Sigma0" in v and "semidefinite" in v for v in report.violations)


def test_validate_asymmetry(lti):
    system, bc = lti
    bad = cs.BoundaryConditions(bc.mu0, [[2.0, -1.0], [-0.5, 3.0]], bc.muF, bc.SigmaF)
    report = cs.validate(system, bad)
    assert any("Sigma0" in v and "asymmetric" in v for v in report.violations)


def test_stack_single_step():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 1))
    system = cs.LtvSystem([A], [B], [np.zeros((2, 1))])
    ops = cs.stack_operators(system)
    assert np.allclose(ops.Abar_tail[0], A)
    assert np.allclose(ops.Bbar_tail[0], B)
    assert np.allclose(ops.W0, B @ B.T)


def test_gramian_dual_path_lti(lti_ops):
    Bbar = lti_ops.Bbar
    direct = Bbar @ Bbar.T
    assert np.linalg.norm(direct - lti_ops.W0) <= 1e-12 * np.linalg.norm(direct)


def test_gramian_dual_path_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        system = random_system(rng, 3, 2, 1, 4)
        ops = cs.stack_operators(system)
        for k in range(system.N + 1):
            tail = ops.Bbar_tail[k]
            direct = tail @ tail.T
            assert np.linalg.norm(direct - ops.gramian_tail[k]) <= 1e-12 * max(
                1.0, np.linalg.norm(direct)
            )


def test_identity_chain():
    b = np.array([[0.7], [-0.2]])
    N = 5
    system = cs.LtvSystem.constant(np.eye(2), b, np.zeros((2, 1)), N)
    ops = cs.stack_operators(system)
    assert np.allclose(ops.B_blocks, np.broadcast_to(b, (N + 1, 2, 1)))
    assert np.allclose(ops.W0, (N + 1) * b @ b.T)


def test_stacked_dynamics_closed_form():
    """Step recursion equals the stacked closed form to 1e-12 relative."""
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, m, r = (int(rng.integers(1, 4)) for _ in range(3))
        N = int(rng.integers(0, 6))
        system = random_system(rng, n, m, r, N)
        ops = cs.stack_operators(system)
        x0 = rng.normal(size=n)
        U = rng.normal(size=(N + 1, m))
        W = rng.normal(size=(N + 1, r))
        x = x0.copy()
        for k in range(N + 1):
            x = system.A[k] @ x + system.B[k] @ U[k] + system.G[k] @ W[k]
        closed = (
            ops.Abar @ x0
            + ops.Bbar_tail[0] @ U.reshape(-1)
            + ops.Gbar_tail[0] @ W.reshape(-1)
        )
        assert np.linalg.norm(x - closed) <= 1e-12 * max(1.0, np.linalg.norm(x))


def test_recursion_invariants():
    rng = np.random.default_rng(5)
    system = random_system(rng, 3, 1, 1, 4)
    ops = cs.stack_operators(system)
    N = system.N
    assert np.allclose(ops.Abar_tail[N], system.A[N])
    assert np.allclose(ops.B_blocks[N], system.B[N])
    for k in range(N):
        assert np.allclose(ops.Abar_tail[k], ops.Abar_tail[k + 1] @ system.A[k])
        assert np.allclose(
            ops.gramian_tail[k],
            ops.gramian_tail[k + 1] + ops.B_blocks[k] @ ops.B_blocks[k].T,
        )


def test_controllability_lti(lti_ops):
    res = cs.controllability_check(lti_ops)
    assert res.controllable
    assert res.eigenvalue_ratio > 1e-10


def test_controllability_no_input():
    system = cs.LtvSystem.constant(np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)), 4)
    res = cs.controllability_check(cs.stack_operators(system))
    assert not res.controllable


def test_controllability_structural():
    system = cs.LtvSystem.constant(np.eye(2), np.array([[1.0], [0.0]]), np.zeros((2, 1)), 4)
    assert not cs.controllability_check(cs.stack_operators(system))


def test_controllability_column_permutation_invariance():
    rng = np.random.default_rng(9)
    system = random_system(rng, 3, 3, 0, 3)
    perm = [2, 0, 1]
    permuted = cs.LtvSystem([a for a in system.A], [b[:, perm] for b in system.B], system.G)
    r1 = cs.controllability_check(cs.stack_operators(system))
    r2 = cs.controllability_check(cs.stack_operators(permuted))
    assert r1.controllable == r2.controllable
    assert r1.eigenvalue_ratio == pytest.approx(r2.eigenvalue_ratio, rel=1e-10)


def test_spec_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(21)
    system = random_system(rng, 3, 2, 1, 3)
    bc = cs.BoundaryConditions(
        mu0=rng.normal(size=3),
        Sigma0=np.diag(rng.uniform(0.5, 2.0, size=3)),
        muF=rng.normal(size=3),
        SigmaF=np.diag(rng.uniform(0.5, 2.0, size=2)),
        D=rng.normal(size=(2, 3)),
    )
    path = tmp_path / "spec.json"
    cs.save_spec(path, system, bc)
    system2, bc2 = cs.load_spec(path)
    for a, b in zip(system.A + system.B + system.G, system2.A + system2.B + system2.G):
        assert np.array_equal(a, b)
    for name in ("mu0", "Sigma0", "muF", "SigmaF", "D"):
        assert np.array_equal(getattr(bc, name), getattr(bc2, name))


def test_shorthand_expansion(tmp_path):
    doc = {
        "n": 2, "m": 1, "r": 1, "N": 100,
        "A": [[1.9986, -1.0], [1.0, 0.0]],
        "B": [[0.03125], [0.0]],
        "G": [[0.0], [0.03]],
        "mu0": [-1.0, 1.0], "Sigma0": [[2.0, -1.0], [-1.0, 3.0]],
        "muF": [1.0, -1.0], "SigmaF": [[1.0, 0.1], [0.1, 2.0]],
    }
    path = tmp_path / "lti.json"
    path.write_text(json.dumps(doc))
    system, bc = cs.load_spec(path)
    assert system.N == 100
    assert len(system.A) == 101
    assert all(np.array_equal(system.A[k], system.A[0]) for k in range(101))


def test_missing_field_names_it(tmp_path):
    doc = {"n": 1, "m": 1, "r": 0, "N": 0, "A": [[1.0]], "B": [[1.0]], "G": [[]],
           "mu0": [0.0], "Sigma0": [[1.0]], "muF": [0.0]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SpecFormatError, match="SigmaF"):
        cs.load_spec(path)


def test_unknown_field_rejected(tmp_path):
    doc = {"n": 1, "m": 1, "r": 0, "N": 0, "A": [[1.0]], "B": [[1.0]], "G": [[]],
           "mu0": [0.0], "Sigma0": [[1.0]], "muF": [0.0], "SigmaF": [[1.0]],
           "extra": 1}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SpecFormatError, match="extra"):
        cs.load_spec(path)


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\n  broken\n}")
    with pytest.raises(SpecFormatError, match="line"):
        cs.load_spec(path)


def test_lti_spec_file_matches_generator(tmp_path, lti):
    system, bc = lti
    path = tmp_path / "lti.json"
    cs.save_spec(path, system, bc)
    system2, bc2 = cs.load_spec(path)
    assert system2.N == 100
    assert np.array_equal(system2.A[0], system.A[0])
    assert np.array_equal(bc2.SigmaF, bc.SigmaF)
