"""Hermitian eigen-calculus: fractional operator powers and their derivatives.

Everything downstream (divergence values, gradients, optimizer certificates)
reduces to eigendecompositions of small Hermitian matrices, fractional powers
on the support, and the Frechet derivative of ``Y -> Y**mu``.  Two independent
routes to that derivative are kept deliberately: a fast divided-difference
form used in production and a slow integral-representation form used as a
cross-check oracle.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.integrate import quad_vec

HERMITICITY_TOL = 1e-12
SUPPORT_CUTOFF_REL = 1e-12
DEGENERACY_TOL_REL = 1e-9


class LinalgError(ValueError):
    """Raised when an operator violates a precondition (non-Hermitian, not PSD, ...)."""


class EigenSystem(NamedTuple):
    """Spectral decomposition of a Hermitian matrix.

    ``eigenvalues`` are ascending; column ``eigenvectors[:, i]`` belongs to
    ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        w, u = self
        return (u * w) @ u.conj().T


def hermitize(a: np.ndarray) -> np.ndarray:
    """Symmetrize away floating-point asymmetry from operator products."""
    return 0.5 * (a + a.conj().T)


def assert_hermitian(h: np.ndarray, tol: float = HERMITICITY_TOL, what: str = "operator") -> np.ndarray:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise LinalgError(f"{what} must be a square matrix, got shape {h.shape}")
    dev = np.max(np.abs(h - h.conj().T))
    scale = max(1.0, float(np.max(np.abs(h))))
    if dev > tol * scale:
        raise LinalgError(f"{what} is not Hermitian: max |H - H^dag| = {dev:.3e}")
    return hermitize(h)


def eig_hermitian(h: np.ndarray) -> EigenSystem:
    """Eigendecomposition with an explicit hermiticity gate.

    Rejects inputs whose anti-Hermitian part exceeds the tolerance instead of
    silently symmetrizing garbage; callers that build operators from products
    are expected to ``hermitize`` first.
    """
    h = assert_hermitian(h)
    w, u = np.linalg.eigh(h)
    return EigenSystem(w, u)


def _resolve_cutoff(w: np.ndarray, cutoff: float | None) -> float:
    if cutoff is not None:
        return float(cutoff)
    top = float(w[-1]) if w.size else 0.0
    return SUPPORT_CUTOFF_REL * max(top, 0.0)


def power_psd(y: np.ndarray, mu: float, cutoff: float | None = None) -> np.ndarray:
    """Fractional power ``Y**mu`` of a PSD matrix, restricted to its support.

    Eigenvalues at or below ``cutoff`` are treated as exact kernel: mapped to
    zero for any ``mu``, including negative exponents (pseudo-inverse
    convention).  ``cutoff=None`` uses ``1e-12`` relative to the largest
    eigenvalue.  Eigenvalues below ``-cutoff`` mean the input was not PSD and
    are rejected.
    """
    es = eig_hermitian(y)
    w, u = es
    cut = _resolve_cutoff(w, cutoff)
    neg_floor = -max(cut, HERMITICITY_TOL * max(float(w[-1]), 1.0))
    if w[0] < neg_floor:
        raise LinalgError(f"matrix is not PSD: min eigenvalue {w[0]:.3e} < {neg_floor:.3e}")
    sup = w > cut
    powered = np.zeros_like(w)
    powered[sup] = np.power(w[sup], mu)
    return (u * powered) @ u.conj().T


def powers_from_eigs(es: EigenSystem, mu: float, cutoff: float | None = None) -> np.ndarray:
    """Same support convention as :func:`power_psd`, reusing a decomposition."""
    w, u = es
    cut = _resolve_cutoff(w, cutoff)
    sup = w > cut
    powered = np.zeros_like(w)
    powered[sup] = np.power(w[sup], mu)
    return (u * powered) @ u.conj().T


def _divided_difference_kernel(w: np.ndarray, mu: float) -> np.ndarray:
    """First divided differences of ``t -> t**mu`` on the spectrum ``w``.

    K[i, j] = (w_i**mu - w_j**mu) / (w_i - w_j), with the confluent limit
    mu * w_i**(mu-1) whenever |w_i - w_j| < 1e-9 * max|w|.
    """
    wmu = np.power(w, mu)
    dw = w[:, None] - w[None, :]
    dmu = wmu[:, None] - wmu[None, :]
    degtol = DEGENERACY_TOL_REL * max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    close = np.abs(dw) < degtol
    # Diagonal-limit values, broadcast onto the near-degenerate pairs.
    deriv = mu * np.power(w, mu - 1.0)
    kernel = np.where(close, 0.5 * (deriv[:, None] + deriv[None, :]), dmu / np.where(close, 1.0, dw))
    return kernel


def frechet_power_from_eigs(es: EigenSystem, mu: float, delta: np.ndarray) -> np.ndarray:
    """Frechet derivative of ``Y -> Y**mu`` at ``Y`` applied to ``delta``.

    Daleckii-Krein form in the eigenbasis of Y: conjugate ``delta`` into the
    eigenbasis, multiply entrywise by the divided-difference kernel, conjugate
    back.  Self-adjoint with respect to the trace pairing because the kernel
    is real symmetric.
    """
    w, u = es
    kernel = _divided_difference_kernel(w, mu)
    d_eig = u.conj().T @ delta @ u
    return u @ (kernel * d_eig) @ u.conj().T


def frechet_power(y: np.ndarray, mu: float, delta: np.ndarray, cutoff: float | None = None) -> np.ndarray:
    """Divided-difference Frechet derivative of ``Y**mu`` along ``delta``.

    ``Y`` must be PSD with full support above the cutoff wherever ``delta``
    acts: a kernel component intersecting the support of ``delta`` makes the
    derivative unbounded and is rejected with advice to perturb Y first.
    ``delta`` must be Hermitian (the map extends linearly, but all callers
    differentiate along Hermitian directions).
    """
    es = eig_hermitian(y)
    delta = assert_hermitian(delta, what="direction")
    w, u = es
    cut = _resolve_cutoff(w, cutoff)
    if w[0] < -cut:
        raise LinalgError(f"matrix is not PSD: min eigenvalue {w[0]:.3e}")
    ker = w <= cut
    if np.any(ker):
        d_eig = u.conj().T @ delta @ u
        overlap = np.max(np.abs(d_eig[ker, :]))
        if overlap > HERMITICITY_TOL * max(1.0, float(np.max(np.abs(delta)))):
            raise LinalgError(
                "Y has a kernel component intersecting the support of delta; "
                "perturb Y to full rank (e.g. mix with the identity) before "
                "differentiating Y**mu"
            )
        sup = ~ker
        u_s = u[:, sup]
        kernel = _divided_difference_kernel(w[sup], mu)
        d_sub = u_s.conj().T @ delta @ u_s
        return u_s @ (kernel * d_sub) @ u_s.conj().T
    return frechet_power_from_eigs(es, mu, delta)


def frechet_power_quadrature(
    y: np.ndarray,
    mu: float,
    delta: np.ndarray,
    tail_tol: float = 1e-9,
) -> np.ndarray:
    """Integral-representation oracle for the Frechet derivative of ``Y**mu``.

    For mu in (0, 1),

        dY**mu[delta] = sin(pi mu)/pi * int_0^inf (Y+s)^-1 delta (Y+s)^-1 s**mu ds.

    Evaluated by adaptive quadrature on [0, S] with resolvents formed by dense
    solves (no eigendecomposition, keeping the route independent of
    :func:`frechet_power`).  The truncated tail is bounded using
    ||(Y+s)^-1|| <= 1/s:

        ||tail|| <= L(mu) ||delta|| S^(mu-1) / (1-mu),  L(mu) = sin(pi mu)/pi,

    and S is chosen to push that below ``tail_tol * ||delta||``.
    """
    if not 0.0 < mu < 1.0:
        raise LinalgError(f"integral representation requires mu in (0, 1), got {mu}")
    y = assert_hermitian(y)
    delta = assert_hermitian(delta, what="direction")
    w = np.linalg.eigvalsh(y)
    if w[0] <= 0.0:
        raise LinalgError("quadrature oracle requires strictly positive definite Y")
    n = y.shape[0]
    eye = np.eye(n)
    prefactor = np.sin(np.pi * mu) / np.pi
    upper = (prefactor / ((1.0 - mu) * tail_tol)) ** (1.0 / (1.0 - mu))

    def integrand(s: float) -> np.ndarray:
        resolvent = np.linalg.inv(y + s * eye)
        return (s**mu) * (resolvent @ delta @ resolvent)

    # Break points concentrate the subdivision effort around the spectrum;
    # beyond max(w) the integrand decays like s**(mu-2).
    lo = max(w[0] * 1e-3, 1e-12)
    hi = min(max(w[-1] * 1e3, 1.0), upper * 0.5)
    points = np.geomspace(lo, hi, 24)
    result, _ = quad_vec(
        integrand,
        0.0,
        upper,
        epsabs=1e-13 * max(1.0, float(np.max(np.abs(delta)))),
        epsrel=1e-11,
        points=points,
        limit=2000,
    )
    return prefactor * hermitize(result)
