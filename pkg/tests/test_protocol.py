"""Protocol object tests: POVM, key map, pinching, observables, scalars."""

import math

import numpy as np
import pytest

from renyi_qkd.protocol import (
    ProtocolError,
    ProtocolParams,
    apply_G,
    apply_G_adjoint,
    apply_Z,
    binary_entropy,
    effective_qber,
    key_map_kraus,
    povm_elements,
    qber_projectors,
    werner_state,
)

BELL = np.zeros((4, 4), dtype=complex)
BELL[np.ix_([0, 3], [0, 3])] = 0.5


def random_density(rng, dim):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def test_povm_no_flip_is_projective():
    lam0, lam1 = povm_elements(0.0)
    assert np.allclose(lam0, np.diag([1.0, 0.0]))
    assert np.allclose(lam1, np.diag([0.0, 1.0]))


def test_povm_full_randomization():
    lam0, lam1 = povm_elements(0.5)
    assert np.allclose(lam0, np.eye(2) / 2)
    assert np.allclose(lam1, np.eye(2) / 2)


def test_povm_quarter_flip():
    lam0, lam1 = povm_elements(0.25)
    assert np.allclose(lam0, np.diag([0.75, 0.25]))
    assert np.allclose(lam1, np.diag([0.25, 0.75]))


def test_povm_completeness_and_psd():
    for q in np.linspace(0.0, 0.5, 11):
        lam0, lam1 = povm_elements(q)
        assert np.allclose(lam0 + lam1, np.eye(2))
        assert np.linalg.eigvalsh(lam0)[0] >= -1e-15
        assert np.linalg.eigvalsh(lam1)[0] >= -1e-15


def test_povm_rejects_out_of_range():
    with pytest.raises(ProtocolError):
        povm_elements(0.6)
    with pytest.raises(ProtocolError):
        povm_elements(-0.1)


def test_kraus_projective_at_zero_flip():
    kr = key_map_kraus(0.0)
    z0 = np.diag([1.0, 0.0])
    expect0 = np.kron(np.kron(np.eye(2), z0), np.array([[1.0], [0.0]]))
    assert np.allclose(kr.M0, expect0)


def test_kraus_completeness():
    for q in (0.0, 0.1, 0.3, 0.5):
        kr = key_map_kraus(q)
        total = kr.M0.conj().T @ kr.M0 + kr.M1.conj().T @ kr.M1
        assert np.linalg.norm(total - np.eye(4)) < 1e-12


def test_kraus_half_flip_b_part():
    kr = key_map_kraus(0.5)
    # B factor of each branch is I/sqrt(2)
    b_block = kr.M0[np.ix_([0, 2], [0, 1])]
    assert np.allclose(b_block, np.eye(2) / math.sqrt(2.0))


def test_isometry_property():
    # W = M0 + M1 satisfies W-dagger W = identity, so G is trace preserving
    for q in (0.0, 0.2, 0.5):
        w = key_map_kraus(q).isometry
        assert np.linalg.norm(w.conj().T @ w - np.eye(4)) < 1e-12


def test_apply_G_trace_and_positivity_200_random():
    rng = np.random.default_rng(12)
    kr = key_map_kraus(0.15)
    for _ in range(200):
        rho = random_density(rng, 4)
        out = apply_G(rho, kr)
        assert abs(np.trace(out).real - 1.0) < 1e-12
        assert np.linalg.eigvalsh(out)[0] > -1e-12


def test_apply_G_mixed_input_block_traces():
    kr = key_map_kraus(0.0)
    out = apply_G(np.eye(4, dtype=complex) / 4.0, kr)
    # Y1 is the fastest index: even/odd interleave
    idx0 = [0, 2, 4, 6]
    idx1 = [1, 3, 5, 7]
    assert abs(np.trace(out[np.ix_(idx0, idx0)]).real - 0.5) < 1e-12
    assert abs(np.trace(out[np.ix_(idx1, idx1)]).real - 0.5) < 1e-12


def test_apply_G_bell_branches_are_orthogonal():
    # the isometry sends the Bell state to one coherent vector whose two
    # key-register branches are orthogonal
    kr = key_map_kraus(0.0)
    out = apply_G(BELL, kr)
    vec0 = kr.M0 @ BELL @ kr.M0.conj().T
    vec1 = kr.M1 @ BELL @ kr.M1.conj().T
    assert abs(np.trace(vec0 @ vec1)) < 1e-14
    assert np.linalg.matrix_rank(out, tol=1e-12) == 1


def test_adjoint_unitality():
    kr = key_map_kraus(0.3)
    assert np.allclose(apply_G_adjoint(np.eye(8, dtype=complex), kr), np.eye(4))


def test_adjoint_identity_random():
    rng = np.random.default_rng(19)
    kr = key_map_kraus(0.2)
    for _ in range(30):
        w = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        w = (w + w.conj().T) / 2
        rho = random_density(rng, 4)
        lhs = np.trace(w @ apply_G(rho, kr)).real
        rhs = np.trace(apply_G_adjoint(w, kr) @ rho).real
        assert abs(lhs - rhs) < 1e-11 * max(1.0, abs(lhs))


def test_adjoint_zero():
    kr = key_map_kraus(0.1)
    assert np.allclose(apply_G_adjoint(np.zeros((8, 8), dtype=complex), kr), 0.0)


def test_pinching_fixed_point_and_idempotence():
    rng = np.random.default_rng(29)
    sigma = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    sigma = (sigma + sigma.conj().T) / 2
    once = apply_Z(sigma)
    assert np.allclose(apply_Z(once), once)
    assert abs(np.trace(once) - np.trace(sigma)) < 1e-12


def test_pinching_self_adjoint():
    rng = np.random.default_rng(43)
    for _ in range(20):
        w = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        s = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        lhs = np.trace(w @ apply_Z(s))
        rhs = np.trace(apply_Z(w) @ s)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_pinched_key_register_is_classical():
    rng = np.random.default_rng(47)
    kr = key_map_kraus(0.25)
    rho = random_density(rng, 4)
    out = apply_Z(apply_G(rho, kr))
    # off-diagonal Y1 blocks vanish exactly
    idx0 = [0, 2, 4, 6]
    idx1 = [1, 3, 5, 7]
    assert np.count_nonzero(out[np.ix_(idx0, idx1)]) == 0
    assert np.count_nonzero(out[np.ix_(idx1, idx0)]) == 0


def test_qber_projectors_are_projectors():
    pi_x, pi_z = qber_projectors()
    for pi in (pi_x, pi_z):
        assert np.allclose(pi @ pi, pi)
        assert abs(np.trace(pi).real - 2.0) < 1e-12


def test_bell_state_has_no_errors():
    pi_x, pi_z = qber_projectors()
    assert abs(np.trace(pi_z @ BELL)) < 1e-14
    assert abs(np.trace(pi_x @ BELL)) < 1e-14


def test_werner_error_rates():
    pi_x, pi_z = qber_projectors()
    for v in (0.2, 0.5, 0.9):
        w = werner_state(v)
        assert abs(np.trace(pi_x @ w).real - (1.0 - v) / 2.0) < 1e-12
        assert abs(np.trace(pi_z @ w).real - (1.0 - v) / 2.0) < 1e-12


def test_werner_eigenvalues_quarter():
    w = werner_state(0.5)
    assert np.allclose(np.linalg.eigvalsh(w), [0.125, 0.125, 0.125, 0.625])


def test_werner_reduced_state_maximally_mixed():
    w = werner_state(0.78)
    rho_a = w[:2, :2] + w[2:, 2:]
    assert np.allclose(rho_a, np.eye(2) / 2)


def test_effective_qber_values():
    assert effective_qber(0.13, 0.0) == pytest.approx(0.13, abs=1e-15)
    assert effective_qber(0.13, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert effective_qber(0.11, 0.077) == pytest.approx(0.17006, abs=5e-6)


def test_effective_qber_symmetry_and_range():
    rng = np.random.default_rng(53)
    for _ in range(50):
        p, q = rng.uniform(0.0, 0.5, size=2)
        s = effective_qber(p, q)
        assert s == pytest.approx(effective_qber(q, p), abs=1e-15)
        assert 0.0 <= s <= 0.5
    with pytest.raises(ProtocolError):
        effective_qber(0.6, 0.1)


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0, abs=1e-15)
    assert binary_entropy(0.11) == pytest.approx(0.49992, abs=1e-4)
    with pytest.raises(ProtocolError):
        binary_entropy(-0.01)
    with pytest.raises(ProtocolError):
        binary_entropy(1.01)


def test_params_validation():
    ProtocolParams(p=0.1, q=0.0, alpha=1.2)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.6, q=0.0, alpha=1.2)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.1, q=0.7, alpha=1.2)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.1, q=0.0, alpha=1.0)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.1, q=0.0, alpha=2.5)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.1, q=0.0, alpha=1.5, epsilon=0.0)
    with pytest.raises(ProtocolError):
        ProtocolParams(p=0.1, q=0.0, alpha=1.5, m=0.0)
