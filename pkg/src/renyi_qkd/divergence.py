"""Sandwiched Renyi divergence of order beta in (1/2, 1), values and gradients.

For density operators X, Y and mu = (1-beta)/(2*beta):

    Xi       = Y^mu X Y^mu
    Q        = tr[Xi^beta]
    D_beta   = log2(Q) / (beta - 1)        (bits, >= 0 for unit-trace X, Y)

The key-rate objective evaluates this at X = G(rho) and Y = Z(sigma) and
needs both block gradients.  Differentiating Q gives, with all powers taken
on the support of Xi,

    dQ/dX  pairing:  chi2 = beta * Y^mu Xi^(beta-1) Y^mu
    dQ/dY  pairing:  chi1 + chi3 = beta * T_mu^Y(X Y^mu Xi^(beta-1) + h.c.)

where T_mu^Y is the Frechet derivative of Y -> Y^mu.  The gradients of
D_beta then carry the common prefactor 1/((beta-1) ln2 Q).

Joint convexity of (X, Y) -> D_beta for beta in [1/2, 1) is what makes the
conditional-gradient certificate in the optimizer sound; nothing here assumes
more than that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    EigenSystem,
    LinalgError,
    assert_hermitian,
    eig_hermitian,
    frechet_power_from_eigs,
    hermitize,
    powers_from_eigs,
)
from .protocol import DIM_ABY, KeyMapKraus, ProtocolParams, apply_Z, binary_entropy, effective_qber

LN2 = math.log(2.0)

# Below this floor on lambda_min(Z(sigma)) the evaluation point is nudged to
# the interior mixture (1-delta) sigma + delta I/8, which commutes with the
# pinching, so the nudged point is itself feasible and every certificate drawn
# at it is exact.
INTERIOR_EIG_FLOOR = 1e-9
INTERIOR_DELTA = 1e-10

XI_SUPPORT_REL = 1e-12


class DivergenceError(ValueError):
    """Raised on out-of-domain orders or rank-deficient second arguments."""


def beta_of_alpha(alpha: float) -> float:
    """Conjugate order beta = alpha/(2 alpha - 1), mapping (1, 2] onto [2/3, 1)."""
    if not 1.0 < alpha <= 2.0:
        raise DivergenceError(f"alpha must lie in (1, 2], got {alpha}")
    return alpha / (2.0 * alpha - 1.0)


def _check_beta(beta: float) -> float:
    if not 0.5 < beta < 1.0:
        raise DivergenceError(f"beta must lie in (1/2, 1), got {beta}")
    return float(beta)


@dataclass(frozen=True)
class DivergenceEvaluation:
    """Value in bits plus the trace functional and sandwiched spectrum."""

    value: float
    trace_functional: float
    xi_eigenvalues: np.ndarray


def _xi_value(x: np.ndarray, y_es: EigenSystem, beta: float) -> tuple[float, float, np.ndarray, np.ndarray, EigenSystem]:
    """Shared kernel: returns (value, Q, Y^mu, Xi^(beta-1) on support, Xi eigensystem)."""
    mu = (1.0 - beta) / (2.0 * beta)
    y_mu = powers_from_eigs(y_es, mu)
    xi = hermitize(y_mu @ x @ y_mu)
    xi_es = eig_hermitian(xi)
    w = xi_es.eigenvalues
    top = max(float(w[-1]), 0.0)
    if top <= 0.0:
        raise DivergenceError("sandwiched operator vanished; X has no weight on the support of Y")
    cut = XI_SUPPORT_REL * top
    if w[0] < -1e-10 * top:
        raise DivergenceError(f"sandwiched operator has negative eigenvalue {w[0]:.3e}")
    sup = w > cut
    q_val = float(np.sum(np.power(w[sup], beta)))
    value = math.log2(q_val) / (beta - 1.0)
    u_s = xi_es.eigenvectors[:, sup]
    xi_bm1 = (u_s * np.power(w[sup], beta - 1.0)) @ u_s.conj().T
    return value, q_val, y_mu, xi_bm1, xi_es


def renyi_divergence(x: np.ndarray, y: np.ndarray, beta: float) -> DivergenceEvaluation:
    """D_beta(X || Y) for PSD X and full-rank PSD Y (caller perturbs if not).

    The support convention on Xi keeps the value finite for rank-deficient X;
    a rank-deficient Y is rejected because the sandwich is then blind to part
    of X and the divergence is no longer faithful.
    """
    beta = _check_beta(beta)
    x = assert_hermitian(x, what="first argument")
    y = assert_hermitian(y, what="second argument")
    y_es = eig_hermitian(y)
    w = y_es.eigenvalues
    if w[0] <= XI_SUPPORT_REL * max(float(w[-1]), 0.0):
        raise DivergenceError(
            "second argument is rank deficient; mix it toward the maximally "
            "mixed state before evaluating"
        )
    if float(np.linalg.eigvalsh(x)[0]) < -1e-10:
        raise LinalgError("first argument is not PSD")
    value, q_val, _, _, xi_es = _xi_value(x, y_es, beta)
    return DivergenceEvaluation(value, q_val, xi_es.eigenvalues)


@dataclass(frozen=True)
class StateEvaluation:
    """One pass of the objective at (rho, sigma): value and optional gradients.

    ``sigma_effective`` is the point actually evaluated: equal to sigma unless
    Z(sigma) fell below the interior eigenvalue floor, in which case it is the
    feasible interior mixture recorded here so that certificates refer to a
    point that was genuinely evaluated.
    """

    value: float
    trace_functional: float
    grad_rho: np.ndarray | None
    grad_sigma: np.ndarray | None
    sigma_effective: np.ndarray
    perturbed: bool


def evaluate_state(
    rho: np.ndarray,
    sigma: np.ndarray,
    beta: float,
    kraus: KeyMapKraus,
    need_grad_rho: bool = False,
    need_grad_sigma: bool = False,
) -> StateEvaluation:
    """Evaluate D_beta(G(rho) || Z(sigma)) and its block gradients.

    All pieces reuse one eigendecomposition of Z(sigma) and one of Xi, per the
    shared-spectra layout; gradients are exact at the (possibly interior-
    nudged) returned point, including rank-deficient G(rho), because every
    feasible displacement of rho moves Xi inside its own support.
    """
    beta = _check_beta(beta)
    w_iso = kraus.isometry
    x = hermitize(w_iso @ rho @ w_iso.conj().T)
    y_raw = apply_Z(sigma)
    eigs_raw = np.linalg.eigvalsh(hermitize(y_raw))
    perturbed = bool(eigs_raw[0] < INTERIOR_EIG_FLOOR)
    if perturbed:
        sigma_eff = (1.0 - INTERIOR_DELTA) * sigma + INTERIOR_DELTA * np.eye(DIM_ABY) / DIM_ABY
        y = apply_Z(sigma_eff)
    else:
        sigma_eff = sigma
        y = y_raw
    y_es = eig_hermitian(hermitize(y))
    value, q_val, y_mu, xi_bm1, _ = _xi_value(x, y_es, beta)
    pre = 1.0 / ((beta - 1.0) * LN2 * q_val)

    grad_r = None
    if need_grad_rho:
        chi2 = beta * (y_mu @ xi_bm1 @ y_mu)
        grad_r = hermitize(pre * (w_iso.conj().T @ chi2 @ w_iso))

    grad_s = None
    if need_grad_sigma:
        a1 = x @ y_mu @ xi_bm1
        chi13 = beta * frechet_power_from_eigs(y_es, (1.0 - beta) / (2.0 * beta), hermitize(a1 + a1.conj().T))
        grad_s = hermitize(pre * apply_Z(chi13))

    return StateEvaluation(value, q_val, grad_r, grad_s, sigma_eff, perturbed)


def grad_rho(rho: np.ndarray, sigma: np.ndarray, beta: float, kraus: KeyMapKraus) -> np.ndarray:
    """Gradient of D_beta(G(rho) || Z(sigma)) with respect to rho (Hermitian 4x4)."""
    return evaluate_state(rho, sigma, beta, kraus, need_grad_rho=True).grad_rho


def grad_sigma(rho: np.ndarray, sigma: np.ndarray, beta: float, kraus: KeyMapKraus) -> np.ndarray:
    """Gradient with respect to sigma; Y1-block-diagonal by construction."""
    return evaluate_state(rho, sigma, beta, kraus, need_grad_sigma=True).grad_sigma


def objective_f(params: ProtocolParams, rho: np.ndarray, sigma: np.ndarray, kraus: KeyMapKraus) -> float:
    """Full finite-size objective f = D_beta - h2(s) - g_eps(alpha)/m in bits."""
    from .keyrate import finite_size_correction  # local import to avoid a cycle

    beta = beta_of_alpha(params.alpha)
    ev = evaluate_state(rho, sigma, beta, kraus)
    s = effective_qber(params.p, params.q)
    return ev.value - binary_entropy(s) - finite_size_correction(params.alpha, params.epsilon) / params.m
