"""BB84 protocol objects: trusted-noise key map, pinching, and error observables.

Conventions, fixed once and used everywhere:

* Z basis {|0>, |1>}, X basis |+->  = (|0> +- |1>)/sqrt(2).
* Tensor ordering A (x) B (x) Y1 with A the slowest index, so a basis ket
  |a b y> sits at flat index 4a + 2b + y; on the 4-dimensional AB space
  |a b> sits at 2a + b.
* The key register Y1 records Bob's (noisy) measurement outcome.  The key map
  is the isometry W = M0 + M1 with branch blocks
  M_j = I_A (x) sqrt(POVM_j) (x) |j>_Y1, applied coherently: G(rho) = W rho W^dag.
  Dephasing Y1 afterwards (the pinching Z) yields the classical measurement
  record; the gap between G(rho) and its pinching is exactly what the
  divergence objective measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import assert_hermitian, hermitize

DIM_AB = 4
DIM_ABY = 8

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

KET_PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
KET_MINUS = np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0)

BELL_PHI_PLUS = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / math.sqrt(2.0)

# Pinching mask: entry (ab y, a'b' y') survives iff y == y'.
_Y_PARITY = np.arange(DIM_ABY) % 2
_PINCH_MASK = (_Y_PARITY[:, None] == _Y_PARITY[None, :]).astype(float)


class ProtocolError(ValueError):
    """Raised on out-of-domain protocol parameters."""


@dataclass(frozen=True)
class ProtocolParams:
    """Scenario of one key-rate evaluation.

    p: depolarizing QBER observed in both bases.
    q: trusted bit-flip probability applied to Bob's sifted outcomes.
    alpha: Renyi order used in the finite-size bound, in (1, 2].
    epsilon: secrecy parameter, in (0, 1).
    m: number of sifted rounds.
    """

    p: float
    q: float
    alpha: float
    epsilon: float = 1e-10
    m: float = 1e15

    def __post_init__(self):
        if not 0.0 <= self.p <= 0.5:
            raise ProtocolError(f"QBER p must lie in [0, 1/2], got {self.p}")
        if not 0.0 <= self.q <= 0.5:
            raise ProtocolError(f"trusted noise q must lie in [0, 1/2], got {self.q}")
        if not 1.0 < self.alpha <= 2.0:
            raise ProtocolError(f"Renyi order alpha must lie in (1, 2], got {self.alpha}")
        if not 0.0 < self.epsilon < 1.0:
            raise ProtocolError(f"secrecy parameter epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.m >= 1.0:
            raise ProtocolError(f"block size m must be >= 1, got {self.m}")


class KeyMapKraus(NamedTuple):
    """Branch blocks of the key-register isometry W = M0 + M1 (each 8x4)."""

    M0: np.ndarray
    M1: np.ndarray

    @property
    def isometry(self) -> np.ndarray:
        return self.M0 + self.M1


def povm_elements(q: float) -> tuple[np.ndarray, np.ndarray]:
    """Bob's effective Z-basis POVM after trusted flipping with probability q.

    Lambda_0 = (1-q)|0><0| + q|1><1| and Lambda_1 mirrored; at q = 1/2 both
    collapse to I/2 and the key decouples from the measurement.
    """
    if not 0.0 <= q <= 0.5:
        raise ProtocolError(f"trusted noise q must lie in [0, 1/2], got {q}")
    lam0 = np.diag([1.0 - q, q]).astype(complex)
    lam1 = np.diag([q, 1.0 - q]).astype(complex)
    return lam0, lam1


def key_map_kraus(q: float) -> KeyMapKraus:
    """Build M_j = I_A (x) sqrt(Lambda_j) (x) |j>_Y1 as dense 8x4 blocks."""
    lam0, lam1 = povm_elements(q)
    eye_a = np.eye(2, dtype=complex)
    kets = (np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex))
    blocks = []
    for j, lam in enumerate((lam0, lam1)):
        root = np.diag(np.sqrt(np.diag(lam).real)).astype(complex)
        blocks.append(np.kron(np.kron(eye_a, root), kets[j].reshape(2, 1)))
    m0, m1 = blocks
    return KeyMapKraus(m0, m1)


def apply_G(rho: np.ndarray, kraus: KeyMapKraus) -> np.ndarray:
    """Key map G(rho) = W rho W^dag, an 8x8 state with the same rank as rho."""
    w = kraus.isometry
    return hermitize(w @ rho @ w.conj().T)


def apply_G_adjoint(op: np.ndarray, kraus: KeyMapKraus) -> np.ndarray:
    """Adjoint G^dag(V) = W^dag V W, satisfying tr(V G(rho)) = tr(G^dag(V) rho)."""
    w = kraus.isometry
    return hermitize(w.conj().T @ op @ w)


def apply_Z(sigma: np.ndarray) -> np.ndarray:
    """Pinching that dephases the Y1 register (zeroes blocks with y != y')."""
    return np.asarray(sigma) * _PINCH_MASK


def qber_projectors() -> tuple[np.ndarray, np.ndarray]:
    """(Pi_Z_err, Pi_X_err): projectors onto anticorrelated outcomes per basis."""
    pi_z = np.diag([0.0, 1.0, 1.0, 0.0]).astype(complex)
    plus_minus = np.kron(KET_PLUS, KET_MINUS)
    minus_plus = np.kron(KET_MINUS, KET_PLUS)
    pi_x = np.outer(plus_minus, plus_minus.conj()) + np.outer(minus_plus, minus_plus.conj())
    return pi_z, hermitize(pi_x)


def werner_state(v: float) -> np.ndarray:
    """Werner mixture v |Phi+><Phi+| + (1-v) I/4; QBER (1-v)/2 in both bases."""
    bell = np.outer(BELL_PHI_PLUS, BELL_PHI_PLUS.conj())
    return hermitize(v * bell + (1.0 - v) * np.eye(4, dtype=complex) / 4.0)


def effective_qber(p: float, q: float) -> float:
    """Error rate of the sifted key after trusted flipping: s = p + q - 2 p q."""
    if not 0.0 <= p <= 0.5:
        raise ProtocolError(f"QBER p must lie in [0, 1/2], got {p}")
    if not 0.0 <= q <= 0.5:
        raise ProtocolError(f"trusted noise q must lie in [0, 1/2], got {q}")
    return p + q - 2.0 * p * q

def binary_entropy(x: float) -> float:
    """h2(x) in bits, with the continuous limits h2(0) = h2(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise ProtocolError(f"binary entropy argument must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def assert_density(rho: np.ndarray, tol: float = 1e-9, what: str = "state") -> np.ndarray:
    """Validate a density operator (Hermitian, unit trace, PSD up to tol)."""
    rho = assert_hermitian(rho, what=what)
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > tol:
        raise ProtocolError(f"{what} has trace {tr}, expected 1")
    wmin = float(np.linalg.eigvalsh(rho)[0])
    if wmin < -tol:
        raise ProtocolError(f"{what} has negative eigenvalue {wmin:.3e}")
    return rho
