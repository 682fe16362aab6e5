"""Divergence objective tests: classical oracles, limits, and gradients.

The gradient checks run against centered finite differences of the value
function, which is the independent route; nothing here reuses the analytic
gradient formulas being tested.
"""

import math

import numpy as np
import pytest

from renyi_qkd.divergence import (
    DivergenceError,
    beta_of_alpha,
    evaluate_state,
    grad_rho,
    grad_sigma,
    objective_f,
    renyi_divergence,
)
from renyi_qkd.linalg import hermitize
from renyi_qkd.protocol import ProtocolParams, apply_G, apply_Z, key_map_kraus


def random_density(rng, dim, mix=0.2):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    rho = rho / np.trace(rho).real
    return hermitize((1.0 - mix) * rho + mix * np.eye(dim) / dim)


def random_traceless_hermitian(rng, dim):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = hermitize(a + a.conj().T)
    h -= np.trace(h).real / dim * np.eye(dim)
    return h / np.linalg.norm(h)


def classical_renyi(xs, ys, beta):
    q = sum(x ** beta * y ** (1.0 - beta) for x, y in zip(xs, ys))
    return math.log2(q) / (beta - 1.0)


def test_beta_of_alpha_values():
    assert beta_of_alpha(2.0) == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert beta_of_alpha(1.25) == pytest.approx(5.0 / 6.0, abs=1e-15)
    assert beta_of_alpha(1.0001) > 0.9999


def test_beta_of_alpha_monotone_and_rejects():
    alphas = np.linspace(1.001, 2.0, 40)
    betas = [beta_of_alpha(a) for a in alphas]
    assert all(b2 < b1 for b1, b2 in zip(betas, betas[1:]))
    for bad in (1.0, 0.5, 2.1):
        with pytest.raises(DivergenceError):
            beta_of_alpha(bad)


def test_divergence_zero_iff_equal():
    rng = np.random.default_rng(61)
    y = random_density(rng, 4)
    ev = renyi_divergence(y, y, 0.75)
    assert abs(ev.value) < 1e-12
    x = random_density(rng, 4)
    assert renyi_divergence(x, y, 0.75).value > 1e-4


def test_divergence_classical_two_level():
    x = np.diag([0.9, 0.1]).astype(complex)
    y = np.diag([0.5, 0.5]).astype(complex)
    ev = renyi_divergence(x, y, 2.0 / 3.0)
    assert ev.value == pytest.approx(0.4044, abs=1e-3)
    assert ev.value == pytest.approx(classical_renyi([0.9, 0.1], [0.5, 0.5], 2.0 / 3.0), abs=1e-12)


def test_divergence_commuting_reduction_random():
    rng = np.random.default_rng(67)
    for _ in range(25):
        dim = 4
        xs = rng.dirichlet(np.ones(dim))
        ys = rng.dirichlet(np.ones(dim)) + 0.05
        ys = ys / ys.sum()
        beta = rng.uniform(0.55, 0.98)
        ev = renyi_divergence(np.diag(xs).astype(complex), np.diag(ys).astype(complex), beta)
        assert ev.value == pytest.approx(classical_renyi(xs, ys, beta), abs=1e-9)


def test_divergence_kl_limit():
    rng = np.random.default_rng(71)
    x = random_density(rng, 3)
    y = random_density(rng, 3)
    wx, ux = np.linalg.eigh(x)
    wy, uy = np.linalg.eigh(y)
    log_x = (ux * np.log2(wx)) @ ux.conj().T
    log_y = (uy * np.log2(wy)) @ uy.conj().T
    kl = np.trace(x @ (log_x - log_y)).real
    assert renyi_divergence(x, y, 0.999).value == pytest.approx(kl, abs=1e-3)


def test_divergence_nonnegative_unit_trace():
    rng = np.random.default_rng(73)
    for _ in range(30):
        x = random_density(rng, 4)
        y = random_density(rng, 4)
        assert renyi_divergence(x, y, rng.uniform(0.6, 0.95)).value >= -1e-12


def test_divergence_internal_consistency():
    rng = np.random.default_rng(79)
    x = random_density(rng, 4)
    y = random_density(rng, 4)
    beta = 0.7
    ev = renyi_divergence(x, y, beta)
    assert ev.value == pytest.approx(math.log2(ev.trace_functional) / (beta - 1.0), abs=1e-12)


def test_divergence_rejects_rank_deficient_y():
    rng = np.random.default_rng(83)
    x = random_density(rng, 4)
    y = np.diag([0.5, 0.5, 0.0, 0.0]).astype(complex)
    with pytest.raises(DivergenceError):
        renyi_divergence(x, y, 0.8)


def test_divergence_rejects_beta_outside_open_interval():
    rng = np.random.default_rng(89)
    x = random_density(rng, 3)
    y = random_density(rng, 3)
    for bad in (0.5, 1.0, 1.3):
        with pytest.raises(DivergenceError):
            renyi_divergence(x, y, bad)


def test_joint_convexity_samples():
    rng = np.random.default_rng(97)
    for _ in range(20):
        beta = rng.uniform(2.0 / 3.0, 0.98)
        lam = rng.uniform(0.1, 0.9)
        x1, x2 = random_density(rng, 4), random_density(rng, 4)
        y1, y2 = random_density(rng, 4), random_density(rng, 4)
        mixed = renyi_divergence(
            hermitize(lam * x1 + (1 - lam) * x2),
            hermitize(lam * y1 + (1 - lam) * y2),
            beta,
        ).value
        split = lam * renyi_divergence(x1, y1, beta).value
        split += (1 - lam) * renyi_divergence(x2, y2, beta).value
        assert mixed <= split + 1e-10


def _fd_directional(fn, t=1e-6):
    return (fn(t) - fn(-t)) / (2.0 * t)


def test_grad_rho_matches_finite_differences():
    rng = np.random.default_rng(101)
    kr = key_map_kraus(0.12)
    for _ in range(50):
        beta = rng.uniform(0.67, 0.97)
        rho = random_density(rng, 4)
        sigma = random_density(rng, 8)
        delta = random_traceless_hermitian(rng, 4)
        g = grad_rho(rho, sigma, beta, kr)
        analytic = np.trace(g @ delta).real

        def along(t):
            return evaluate_state(hermitize(rho + t * delta), sigma, beta, kr).value

        fd = _fd_directional(along)
        # mixed tolerance: FD roundoff floor is ~1e-10 at step 1e-6
        assert abs(analytic - fd) < 1e-7 + 1e-5 * abs(fd)


def test_grad_sigma_matches_finite_differences():
    rng = np.random.default_rng(103)
    kr = key_map_kraus(0.08)
    for _ in range(50):
        beta = rng.uniform(0.67, 0.97)
        rho = random_density(rng, 4)
        sigma = random_density(rng, 8)
        delta = random_traceless_hermitian(rng, 8)
        g = grad_sigma(rho, sigma, beta, kr)
        analytic = np.trace(g @ delta).real

        def along(t):
            return evaluate_state(rho, hermitize(sigma + t * delta), beta, kr).value

        fd = _fd_directional(along)
        assert abs(analytic - fd) < 1e-7 + 1e-5 * abs(fd)


def test_grad_rho_orthogonal_direction_is_flat():
    rng = np.random.default_rng(107)
    kr = key_map_kraus(0.05)
    rho = random_density(rng, 4)
    sigma = random_density(rng, 8)
    beta = 0.8
    g = grad_rho(rho, sigma, beta, kr)
    delta = random_traceless_hermitian(rng, 4)
    # project out the gradient component
    delta = delta - (np.trace(g @ delta).real / np.trace(g @ g).real) * g
    assert abs(np.trace(g @ delta).real) < 1e-10

    def along(t):
        return evaluate_state(hermitize(rho + t * delta), sigma, beta, kr).value

    assert abs(_fd_directional(along)) < 1e-7


def test_grad_sigma_is_key_register_block_diagonal():
    rng = np.random.default_rng(109)
    kr = key_map_kraus(0.2)
    g = grad_sigma(random_density(rng, 4), random_density(rng, 8), 0.75, kr)
    assert np.allclose(g, apply_Z(g))


def test_objective_noiseless_one_bit():
    bell = np.zeros((4, 4), dtype=complex)
    bell[np.ix_([0, 3], [0, 3])] = 0.5
    kr = key_map_kraus(0.0)
    params = ProtocolParams(p=0.0, q=0.0, alpha=1.001, m=1e15)
    f = objective_f(params, bell, apply_G(bell, kr), kr)
    assert f == pytest.approx(1.0, abs=1e-6)


def test_objective_block_size_shift():
    rng = np.random.default_rng(113)
    rho = random_density(rng, 4)
    sigma = random_density(rng, 8)
    kr = key_map_kraus(0.1)
    g_eps = 1.1 / 0.1 * math.log2(1e10) - 2.0
    p1 = ProtocolParams(p=0.1, q=0.1, alpha=1.1, m=1e4)
    p2 = ProtocolParams(p=0.1, q=0.1, alpha=1.1, m=1e6)
    f1 = objective_f(p1, rho, sigma, kr)
    f2 = objective_f(p2, rho, sigma, kr)
    assert f2 - f1 == pytest.approx(g_eps * (1.0 / 1e4 - 1.0 / 1e6), abs=1e-12)


def test_objective_full_randomization_leak():
    rng = np.random.default_rng(127)
    rho = random_density(rng, 4)
    sigma = random_density(rng, 8)
    kr = key_map_kraus(0.5)
    params = ProtocolParams(p=0.07, q=0.5, alpha=1.5, m=1e12)
    beta = beta_of_alpha(1.5)
    div = evaluate_state(rho, sigma, beta, kr).value
    f = objective_f(params, rho, sigma, kr)
    # effective QBER is 1/2, so the leak term is maximal
    assert f <= div - 1.0 + 1e-12
