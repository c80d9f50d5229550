"""Intensity-curve and quote-optimisation tests.

The logistic maximiser has an independent closed form through the Lambert W
function: writing b for the slope and E = exp(-(alpha + b*p + 1)), the
first-order condition b*(delta - p) = 1/(1 - s) with s the logistic value
rearranges to (x - 1) e^(x - 1) = E for x = b*(delta - p), so

    delta_star(p) = p + (1 + W0(E)) / b.

That oracle, plus brute-force grid search and finite differences, checks the
Newton solver, the Hamiltonian and its envelope derivative.
"""

import math

import numpy as np
import pytest
from scipy.special import expit, lambertw

from optmm.quoting import (
    IntensityCurve,
    TradeSizeLaw,
    hamiltonian,
    hamiltonian_prime,
    intensity,
    optimal_quote,
)

LOW_FLOOR = -100.0


def lambert_delta_star(curve: IntensityCurve, p):
    b = curve.slope
    arg = np.exp(-(curve.alpha + b * np.asarray(p, dtype=float) + 1.0))
    return p + (1.0 + lambertw(arg).real) / b


# ---------------------------------------------------------------------------
# Curve values and construction
# ---------------------------------------------------------------------------

def test_logistic_values_anchor_points():
    vega = 1.25
    curve = IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7,
                                    slope=150.0 / vega)
    # at zero distance the fill probability factor is 1/(1 + e^0.7)
    assert curve.value(0.0) / 7560.0 == pytest.approx(
        1.0 / (1.0 + math.exp(0.7)), abs=1e-12)
    # one percent of vega below/above fair value moves the exponent by -+1.5
    assert curve.value(-0.01 * vega) / 7560.0 == pytest.approx(
        1.0 / (1.0 + math.exp(-0.8)), abs=1e-12)
    assert curve.value(0.01 * vega) / 7560.0 == pytest.approx(
        1.0 / (1.0 + math.exp(2.2)), abs=1e-12)


def test_exponential_values():
    curve = IntensityCurve.exponential(scale=120.0, decay=30.0)
    grid = np.linspace(-0.2, 0.4, 7)
    assert np.allclose(curve.value(grid), 120.0 * np.exp(-30.0 * grid),
                       rtol=1e-14)
    assert curve.value(0.0) == pytest.approx(120.0, rel=1e-15)


def test_inverse_round_trip():
    logistic = IntensityCurve.logistic(lambda_max=100.0, alpha=0.3, slope=25.0)
    expo = IntensityCurve.exponential(scale=100.0, decay=25.0)
    deltas = np.linspace(-0.3, 0.5, 9)
    for curve in (logistic, expo):
        back = curve.inverse(curve.value(deltas))
        assert np.allclose(back, deltas, atol=1e-12)
    with pytest.raises(ValueError):
        logistic.inverse(100.0)  # at the cap
    with pytest.raises(ValueError):
        logistic.inverse(0.0)
    with pytest.raises(ValueError):
        expo.inverse(-1.0)


def test_constructor_rejections():
    with pytest.raises(ValueError):
        IntensityCurve.logistic(lambda_max=0.0, alpha=0.7, slope=10.0)
    with pytest.raises(ValueError):
        IntensityCurve.logistic(lambda_max=10.0, alpha=0.7, slope=-1.0)
    with pytest.raises(ValueError):
        IntensityCurve.exponential(scale=-1.0, decay=10.0)
    with pytest.raises(ValueError):
        IntensityCurve.exponential(scale=10.0, decay=0.0)
    with pytest.raises(ValueError):
        IntensityCurve(family="linear", scale=1.0, decay=1.0)


def test_derivatives_match_finite_differences():
    curves = [
        IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7, slope=120.0),
        IntensityCurve.exponential(scale=300.0, decay=40.0),
    ]
    h = 1e-7
    for curve in curves:
        for d in (-0.05, 0.0, 0.02, 0.1):
            fd1 = (curve.value(d + h) - curve.value(d - h)) / (2 * h)
            assert curve.derivative(d) == pytest.approx(fd1, rel=1e-6)
            fd2 = (curve.value(d + h) - 2 * curve.value(d)
                   + curve.value(d - h)) / h**2
            assert curve.second_derivative(d) == pytest.approx(fd2, rel=1e-3)


def test_concavity_ratio_within_hypothesis():
    # Lambda * Lambda'' / Lambda'^2 stays below 2 for both families
    for curve in (IntensityCurve.logistic(lambda_max=10.0, alpha=0.7,
                                          slope=30.0),
                  IntensityCurve.exponential(scale=10.0, decay=30.0)):
        grid = np.linspace(-0.5, 0.5, 501)
        lam = curve.value(grid)
        ratio = lam * curve.second_derivative(grid) / curve.derivative(grid)**2
        assert np.max(ratio) < 2.0
        assert np.all(lam > 0)
        assert np.all(curve.derivative(grid) < 0)


def test_dominating_rate():
    logistic = IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7,
                                       slope=120.0)
    assert logistic.dominating_rate(-5.0) == 7560.0
    assert logistic.dominating_rate(0.3) == 7560.0
    expo = IntensityCurve.exponential(scale=100.0, decay=25.0)
    assert expo.dominating_rate(-0.1) == pytest.approx(
        100.0 * math.exp(2.5), rel=1e-14)


def test_trade_size_law():
    law = TradeSizeLaw(z=5e5)
    assert law.z == 5e5 and law.law == "point_mass"
    with pytest.raises(ValueError):
        TradeSizeLaw(z=0.0)
    with pytest.raises(ValueError):
        TradeSizeLaw(z=1.0, law="lognormal")


# ---------------------------------------------------------------------------
# Hamiltonian transform: closed forms and oracles
# ---------------------------------------------------------------------------

def test_exponential_hamiltonian_closed_form():
    scale, decay = 240.0, 35.0
    curve = IntensityCurve.exponential(scale=scale, decay=decay)
    for p in np.linspace(-0.4, 0.6, 21):
        d_ref = p + 1.0 / decay
        h_ref = (scale / decay) * math.exp(-decay * p - 1.0)
        h, d = curve.hamiltonian_pair(float(p), LOW_FLOOR)
        assert d == pytest.approx(d_ref, rel=1e-12)
        assert h == pytest.approx(h_ref, rel=1e-12)
        assert hamiltonian(curve, float(p), LOW_FLOOR) == pytest.approx(
            h_ref, rel=1e-12)
        assert hamiltonian_prime(curve, float(p), LOW_FLOOR) == pytest.approx(
            -scale * math.exp(-decay * p - 1.0), rel=1e-12)


def test_logistic_optimiser_matches_lambert_w_oracle():
    rng = np.random.default_rng(2024)
    for alpha, slope in [(0.7, 119.8), (0.0, 30.0), (-1.2, 250.0)]:
        curve = IntensityCurve.logistic(lambda_max=5000.0, alpha=alpha,
                                        slope=slope)
        p = rng.uniform(-0.5, 0.8, size=60)
        got = curve.delta_star(p, LOW_FLOOR)
        ref = lambert_delta_star(curve, p)
        assert np.allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_logistic_hamiltonian_matches_grid_search():
    curve = IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7, slope=119.8)
    rng = np.random.default_rng(7)
    for p in rng.uniform(-0.2, 0.5, size=12):
        h, d = curve.hamiltonian_pair(float(p), LOW_FLOOR)
        # refine a local grid around the reported maximiser
        grid = d + np.linspace(-0.02, 0.02, 4001)
        values = curve.value(grid) * (grid - p)
        assert h >= values.max() - 1e-12 * abs(h)
        assert abs(h - values.max()) <= 1e-8 * abs(h)
        assert abs(grid[np.argmax(values)] - d) <= 2e-5


def test_floor_clipping_and_envelope():
    curve = IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7, slope=119.8)
    p = -0.3
    unclipped = curve.delta_star(p, LOW_FLOOR)
    floor = unclipped + 0.05  # force the clip
    d = curve.delta_star(p, floor)
    assert d == floor
    h = hamiltonian(curve, p, floor)
    assert h == pytest.approx(curve.value(floor) * (floor - p), rel=1e-12)
    # envelope derivative holds in clipped and unclipped regimes alike
    eps = 1e-6
    for flr in (LOW_FLOOR, floor):
        fd = (hamiltonian(curve, p + eps, flr)
              - hamiltonian(curve, p - eps, flr)) / (2 * eps)
        assert hamiltonian_prime(curve, p, flr) == pytest.approx(fd, rel=1e-5)


def test_hamiltonian_decreasing_and_convex_in_p():
    for curve in (IntensityCurve.logistic(lambda_max=100.0, alpha=0.7,
                                          slope=40.0),
                  IntensityCurve.exponential(scale=100.0, decay=40.0)):
        p = np.linspace(-0.5, 0.8, 201)
        h, d = curve.hamiltonian_pair(p, LOW_FLOOR)
        assert np.all(np.diff(h) < 0)            # strictly decreasing
        assert np.all(np.diff(h, 2) > -1e-12)    # convex
        assert np.all(np.diff(d) > 0)            # quotes rise with p
        assert np.all(h > 0)


def test_optimal_quote_shifts_with_reservation_spread():
    curve = IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7, slope=119.8)
    base = optimal_quote(curve, 0.0, LOW_FLOOR)
    shifted = optimal_quote(curve, 0.1, LOW_FLOOR)
    assert shifted > base
    # d(delta*)/dp = 1 - W/(1 + W) lies strictly inside (0, 1), so the quote
    # follows the spread shift but never by its full amount
    assert 0.0 < shifted - base < 0.1


def test_warm_start_converges_to_same_roots():
    curve = IntensityCurve.logistic(lambda_max=5000.0, alpha=0.7, slope=119.8)
    p = np.linspace(-0.3, 0.6, 40)
    cold = curve.delta_star(p, LOW_FLOOR)
    warm_good = curve.delta_star(p, LOW_FLOOR, warm=cold + 1e-3)
    warm_far = curve.delta_star(p, LOW_FLOOR, warm=np.full_like(p, 5.0))
    assert np.allclose(warm_good, cold, atol=1e-10)
    assert np.allclose(warm_far, cold, atol=1e-10)


def test_scalar_and_vector_paths_agree():
    curve = IntensityCurve.logistic(lambda_max=5000.0, alpha=0.7, slope=119.8)
    p = np.array([-0.1, 0.0, 0.25])
    vec_h, vec_d = curve.hamiltonian_pair(p, LOW_FLOOR)
    for k, pk in enumerate(p):
        h, d = curve.hamiltonian_pair(float(pk), LOW_FLOOR)
        assert isinstance(h, float) and isinstance(d, float)
        assert h == pytest.approx(vec_h[k], rel=1e-14)
        assert d == pytest.approx(vec_d[k], rel=1e-14)
    assert intensity(curve, 0.0) == curve.value(0.0)


def test_first_order_condition_residual():
    # the root satisfies Lambda(d) + Lambda'(d) (d - p) = 0 to tight scale
    for curve in (IntensityCurve.logistic(lambda_max=7560.0, alpha=0.7,
                                          slope=119.8),
                  IntensityCurve.exponential(scale=300.0, decay=45.0)):
        p = np.linspace(-0.4, 0.7, 31)
        d = curve.delta_star(p, LOW_FLOOR)
        residual = curve.value(d) + curve.derivative(d) * (d - p)
        scale = np.maximum(1.0, curve.value(d))
        assert np.max(np.abs(residual) / scale) < 1e-9
