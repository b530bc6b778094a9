import numpy as np
import pytest
from scipy.integrate import quad

from cuspidal.branchcut import SpectralPoint
from cuspidal.bundle import Channel
from cuspidal.cusp import (
    CuspField,
    apply_resolvent,
    free_solution,
    inner_product,
    interval_norm,
    l2_norm_tail,
    resolvent_kernel,
    sin_solution,
    wronskian,
)
from cuspidal.errors import ContinuousSpectrumError, DivergentTail, QuadratureError

CHANNEL = Channel(0, 0, 0.0, 1, False, 1)


def test_evaluate_and_derivative():
    field = CuspField([[2.0, 1.0]], [[-1.0, -3.0]])
    u = np.array([0.0, 0.5])
    expected = 2 * np.exp(-u) + np.exp(-3 * u)
    assert np.allclose(field.evaluate(u)[0], expected)
    assert np.allclose(field.derivative(u)[0], -2 * np.exp(-u) - 3 * np.exp(-3 * u))
    assert np.allclose(field.evaluate(u, order=2)[0], 2 * np.exp(-u) + 9 * np.exp(-3 * u))


def test_ungauged_restores_weight():
    field = CuspField([[1.0]], [[-1.0]])
    assert field.ungauged(2.0, np.array([0.5]))[0] == pytest.approx(np.exp(-1.0))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        CuspField([[1.0, 2.0]], [[1.0]])


def test_l2_flags():
    field = CuspField([[1.0, 0.0], [1.0, 1.0]], [[-1.0, 2.0], [-1.0, 0.5j]])
    assert field.l2_flags.tolist() == [True, False]


def test_tail_norm_closed_form():
    field = CuspField([[1.0, 1.0]], [[-1.0, -2.0]])
    # ∫ (e^{-u} + e^{-2u})² = 1/2 + 2/3 + 1/4
    assert l2_norm_tail(field) == pytest.approx(0.5 + 2 / 3 + 0.25)


def test_interval_norm_matches_quadrature():
    field = CuspField([[1.0, 0.5j]], [[0.3 + 1j, -0.7]])
    expected, _ = quad(
        lambda u: abs(field.evaluate(u)[0]) ** 2, 0.0, 2.0, epsabs=1e-13, epsrel=1e-12
    )
    assert interval_norm(field, 0.0, 2.0) == pytest.approx(expected, rel=1e-9)


def test_inner_product_is_sesquilinear():
    f = CuspField([[1.0]], [[-1.0]])
    g = CuspField([[2j]], [[-1.0 + 1j]])
    assert inner_product(f, g) == pytest.approx(np.conj(inner_product(g, f)))
    # ∫ e^{-u}·conj(2i e^{(-1+i)u}) = -2i/(2 + i)
    assert inner_product(f, g) == pytest.approx(-2j / (2 + 1j))


def test_divergent_tail():
    field = CuspField([[1.0]], [[0.1]])
    with pytest.raises(DivergentTail):
        l2_norm_tail(field)
    assert interval_norm(field, 0.0, 1.0) == pytest.approx((np.exp(0.2) - 1) / 0.2)


def test_free_solutions_have_constant_wronskian():
    pt = SpectralPoint(0.8 + 0.1j, 0, 0.5)
    plus = free_solution(CHANNEL, pt, 1)
    minus = free_solution(CHANNEL, pt, -1)
    w = wronskian(plus, minus, np.linspace(0, 3, 5))[0]
    rate = plus.rates[0, 0]
    assert np.allclose(w, -2 * rate)


def test_sin_solution_cauchy_data():
    lam = 0.1 + 0.2j
    field = sin_solution(CHANNEL, lam)
    assert field.evaluate(0.0)[0] == pytest.approx(0.0)
    w = np.sqrt(complex(lam - CHANNEL.threshold))
    assert field.derivative(0.0)[0] ** 2 == pytest.approx(w * w)


def test_kernel_small_w_limit():
    # close to the threshold the gauged kernel tends to min(u, r)
    c = Channel(0, 0, 0.0, 1, False, 1)
    lam = c.threshold - 1e-14
    u = np.array([0.3, 1e-6, 2e-6])
    r = np.array([0.5, 3e-6, 1e-6])
    kernel = resolvent_kernel(c, lam, u, r, gauged=True)
    assert np.allclose(kernel.real, np.minimum(u, r), atol=1e-6)


def test_kernel_series_matches_exact():
    c = Channel(0, 0, 0.0, 1, False, 1)
    lam = c.threshold - 0.01
    u, r = 2e-4, 3e-4
    series = resolvent_kernel(c, lam, u, r, gauged=True)
    w = 0.1j
    exact = 0.5j * (np.exp(1j * w * abs(u - r)) - np.exp(1j * w * (u + r))) / w
    assert series == pytest.approx(exact, rel=1e-8)


def test_kernel_on_continuous_spectrum():
    with pytest.raises(ContinuousSpectrumError):
        resolvent_kernel(CHANNEL, 1.0, 0.1, 0.2)


def test_apply_resolvent_inverts_operator():
    # (−∂² + θ − λ)g = f with g(0) = 0 and g decaying, g = u e^{-u}
    c = Channel(0, 0, 0.0, 1, False, 1)
    lam = c.threshold - 1.0
    u = np.linspace(0.0, 30.0, 6001)
    f = 2 * np.exp(-u)
    g = apply_resolvent(c, lam, u, f)
    assert np.allclose(g[:2000], (u * np.exp(-u))[:2000], atol=1e-4)


def test_apply_resolvent_needs_resolved_step():
    c = Channel(0, 0, 0.0, 1, False, 1)
    u = np.linspace(0.0, 10.0, 5)
    with pytest.raises(QuadratureError):
        apply_resolvent(c, c.threshold + 100.0 + 1j, u, np.ones(5))


def test_apply_resolvent_is_second_order():
    # g = u² e^{-u} solves (−∂² + 1)g = (4u − 2)e^{-u} with g(0) = 0
    lam = CHANNEL.threshold - 1.0
    points = np.array([1.0, 2.0, 4.0])
    errors = []
    for n in (321, 641, 1281):
        u = np.linspace(0.0, 16.0, n)
        g = apply_resolvent(CHANNEL, lam, u, (4 * u - 2) * np.exp(-u))
        index = np.rint(points / (u[1] - u[0])).astype(int)
        errors.append(np.max(np.abs(g[index] - points**2 * np.exp(-points))))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((rates >= 1.8) & (rates <= 2.2))


@pytest.mark.parametrize("gauged", [True, False])
def test_kernel_vanishes_at_the_cusp_boundary(gauged):
    r = np.array([0.0, 1e-3, 0.5, 3.0])
    lam = CHANNEL.threshold - 0.5 + 0.3j
    assert np.all(resolvent_kernel(CHANNEL, lam, 0.0, r, gauged=gauged) == 0)


@pytest.mark.parametrize("gauged", [True, False])
def test_kernel_is_symmetric(gauged):
    u = np.linspace(0.0, 4.0, 9)
    lam = CHANNEL.threshold - 0.5 + 0.3j
    K = resolvent_kernel(CHANNEL, lam, u[:, None], u[None, :], gauged=gauged)
    assert np.array_equal(K, K.T)


@pytest.mark.parametrize("gauged", [True, False])
def test_kernel_derivative_jump(gauged):
    lam = CHANNEL.threshold - 0.5 + 0.3j
    r, delta = 1.0, 1e-4

    def K(u):
        return resolvent_kernel(CHANNEL, lam, u, r, gauged=gauged)

    right = (-3 * K(r) + 4 * K(r + delta) - K(r + 2 * delta)) / (2 * delta)
    left = (3 * K(r) - 4 * K(r - delta) + K(r - 2 * delta)) / (2 * delta)
    expected = -1.0 if gauged else -np.exp(2 * CHANNEL.a * r)
    assert right - left == pytest.approx(expected, abs=1e-6)
