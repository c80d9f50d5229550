"""Market model: Heston dynamics, Monte Carlo simulation and option pricing.

The spot/variance pair follows

    dS  = mu * S dt + sqrt(v) * S dW_s          (historical measure)
    dS  =             sqrt(v) * S dW_s          (pricing measure)
    dv  = kappa * (theta - v) dt + xi * sqrt(v) dW_v
    d<W_s, W_v> = rho dt

with separate mean-reversion parameters under the two measures and zero
interest rates throughout.  Discretisation is a log-Euler step for the spot
and a full-truncation Euler step for the variance (the truncated part enters
both the drift and the diffusion).  Semi-analytic call prices come from the
standard characteristic-function representation in the numerically stable
("little trap") form, integrated adaptively for the scalar oracle and on a
fixed Gauss-Legendre rule for vectorised grid/state evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

Measure = Literal["P", "Q"]
OptionKind = Literal["call", "put"]


class IntegrationError(RuntimeError):
    """Raised when the pricing integral does not converge to tolerance."""


class ImpliedVolError(ValueError):
    """Raised when a target price sits outside the arbitrage band."""


@dataclass(frozen=True)
class MeanReversion:
    """Affine variance drift a(v) = kappa * (theta - v)."""

    kappa: float
    theta: float

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be positive, got {self.theta}")

    def rate(self, variance):
        return self.kappa * (self.theta - variance)


@dataclass(frozen=True)
class StochVolParams:
    """Full parameter set of the stochastic-volatility model.

    `drift_p` drives the variance under the historical measure, `drift_q`
    under the pricing measure; `mu` is the historical spot drift.  The Feller
    condition 2*kappa*theta > xi**2 must hold under both measures so the
    variance stays away from zero.
    """

    mu: float
    xi: float
    rho: float
    drift_p: MeanReversion
    drift_q: MeanReversion

    def __post_init__(self):
        if not (self.xi > 0 and math.isfinite(self.xi)):
            raise ValueError(f"xi must be positive, got {self.xi}")
        if not (-1.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        for name, mr in (("P", self.drift_p), ("Q", self.drift_q)):
            if 2.0 * mr.kappa * mr.theta <= self.xi**2:
                raise ValueError(
                    f"Feller condition violated under {name}: "
                    f"2*{mr.kappa}*{mr.theta} <= {self.xi}**2"
                )

    def drift(self, measure: Measure) -> MeanReversion:
        return self.drift_p if measure == "P" else self.drift_q

    def spot_drift(self, measure: Measure) -> float:
        return self.mu if measure == "P" else 0.0


@dataclass(frozen=True)
class MarketState:
    """Spot/variance snapshot at a given time (years)."""

    spot: float
    variance: float
    time: float = 0.0

    def __post_init__(self):
        if not (self.spot > 0):
            raise ValueError(f"spot must be positive, got {self.spot}")
        if not (self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")
        if self.time < 0:
            raise ValueError("time must be nonnegative")


@dataclass(frozen=True)
class OptionSpec:
    """European option on the spot; strike 0 is the degenerate spot claim."""

    strike: float
    maturity: float
    kind: OptionKind = "call"

    def __post_init__(self):
        if self.strike < 0:
            raise ValueError("strike must be nonnegative")
        if not (self.maturity > 0):
            raise ValueError("maturity must be positive")
        if self.kind not in ("call", "put"):
            raise ValueError(f"unknown option kind {self.kind!r}")

    def payoff(self, terminal_spot):
        if self.kind == "call":
            return np.maximum(terminal_spot - self.strike, 0.0)
        return np.maximum(self.strike - terminal_spot, 0.0)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths: times (n_steps+1,), spot/variance (n_paths, n_steps+1)."""

    times: np.ndarray
    spot: np.ndarray
    variance: np.ndarray


def diffusion_step(spot, variance_raw, dt, z_spot, z_perp, params: StochVolParams,
                   measure: Measure):
    """One Euler step shared by every simulator in the package.

    `variance_raw` is the untruncated variance chain; its positive part feeds
    the drift and the diffusion (full truncation) as well as the spot step.
    The variance Brownian is built from the spot one by Cholesky,
    W_v = rho * W_s + sqrt(1-rho^2) * W_perp.  Returns the new raw pair.
    """
    v_pos = np.maximum(variance_raw, 0.0)
    sqrt_v_dt = np.sqrt(v_pos * dt)
    z_var = params.rho * z_spot + math.sqrt(1.0 - params.rho**2) * z_perp
    new_spot = spot * np.exp(
        (params.spot_drift(measure) - 0.5 * v_pos) * dt + sqrt_v_dt * z_spot
    )
    mr = params.drift(measure)
    new_variance = variance_raw + mr.rate(v_pos) * dt + params.xi * sqrt_v_dt * z_var
    return new_spot, new_variance


def simulate_paths(params: StochVolParams, measure: Measure, initial: MarketState,
                   horizon: float, n_steps: int, n_paths: int, seed: int) -> PathEnsemble:
    """Simulate an ensemble of (spot, variance) paths over `horizon` years.

    Reported variance samples are the truncated (nonnegative) values actually
    used by the scheme.  The same seed always reproduces the same ensemble.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be at least 1")
    rng = np.random.default_rng(seed)
    dt = horizon / n_steps
    spot = np.full(n_paths, float(initial.spot))
    var_raw = np.full(n_paths, float(initial.variance))
    spots = np.empty((n_paths, n_steps + 1))
    variances = np.empty((n_paths, n_steps + 1))
    spots[:, 0] = spot
    variances[:, 0] = var_raw
    for k in range(n_steps):
        z_s = rng.standard_normal(n_paths)
        z_p = rng.standard_normal(n_paths)
        spot, var_raw = diffusion_step(spot, var_raw, dt, z_s, z_p, params, measure)
        spots[:, k + 1] = spot
        variances[:, k + 1] = np.maximum(var_raw, 0.0)
    times = initial.time + np.linspace(0.0, horizon, n_steps + 1)
    return PathEnsemble(times=times, spot=spots, variance=variances)


def _terminal_spot(params, initial, horizon, n_steps, n_paths, rng):
    """Streaming version of simulate_paths under Q keeping only S_T."""
    dt = horizon / n_steps
    spot = np.full(n_paths, float(initial.spot))
    var_raw = np.full(n_paths, float(initial.variance))
    for _ in range(n_steps):
        z_s = rng.standard_normal(n_paths)
        z_p = rng.standard_normal(n_paths)
        spot, var_raw = diffusion_step(spot, var_raw, dt, z_s, z_p, params, "Q")
    return spot


def default_pricing_steps(horizon: float, steps_per_year: int = 100) -> int:
    return max(1, int(round(horizon * steps_per_year)))


def price_option(option: OptionSpec, initial: MarketState, params: StochVolParams,
                 n_paths: int, n_steps: int | None = None, seed: int = 0
                 ) -> tuple[float, float]:
    """Monte Carlo price under the pricing measure; returns (price, stderr)."""
    horizon = option.maturity - initial.time
    if horizon <= 0:
        raise ValueError("option already expired at the valuation time")
    if n_steps is None:
        n_steps = default_pricing_steps(horizon)
    rng = np.random.default_rng(seed)
    terminal = _terminal_spot(params, initial, horizon, n_steps, n_paths, rng)
    payoff = option.payoff(terminal)
    price = float(np.mean(payoff))
    stderr = float(np.std(payoff, ddof=1) / math.sqrt(n_paths))
    return price, stderr


# ---------------------------------------------------------------------------
# Semi-analytic pricing
# ---------------------------------------------------------------------------

def _cf_terms(u, j: int, params: StochVolParams, tau: float):
    """C(u), D(u) of the j-th characteristic function, little-trap form."""
    mr = params.drift_q
    xi = params.xi
    a = mr.kappa * mr.theta
    u_j = 0.5 if j == 1 else -0.5
    b_j = mr.kappa - params.rho * xi if j == 1 else mr.kappa
    beta = b_j - 1j * params.rho * xi * u
    d = np.sqrt(beta**2 - xi**2 * (2.0 * u_j * 1j * u - u**2))
    g = (beta - d) / (beta + d)
    e_dt = np.exp(-d * tau)
    c = (a / xi**2) * ((beta - d) * tau - 2.0 * np.log((1.0 - g * e_dt) / (1.0 - g)))
    dd = ((beta - d) / xi**2) * (1.0 - e_dt) / (1.0 - g * e_dt)
    return c, dd


def heston_closed_form(option: OptionSpec, initial: MarketState,
                       params: StochVolParams) -> float:
    """Semi-analytic price under the pricing measure (zero rates).

    Adaptive quadrature of the two tail probabilities; the quadrature error
    estimate is checked so the absolute price tolerance is below 1e-6, and a
    failed integration raises IntegrationError rather than returning a value.
    """
    tau = option.maturity - initial.time
    if tau <= 0:
        raise ValueError("option already expired at the valuation time")
    spot, nu = initial.spot, initial.variance
    if option.strike == 0.0:
        # degenerate claim on the spot itself: a martingale under Q
        return spot if option.kind == "call" else 0.0
    log_k = math.log(option.strike)
    log_s = math.log(spot)

    def make_integrand(j):
        def f(u):
            c, dd = _cf_terms(u, j, params, tau)
            phi = np.exp(c + dd * nu + 1j * u * log_s)
            return (np.exp(-1j * u * log_k) * phi / (1j * u)).real
        return f

    probs = []
    for j in (1, 2):
        val, err = quad(make_integrand(j), 1e-12, 400.0, epsabs=1e-10,
                        epsrel=1e-10, limit=400)
        if err > 1e-7:
            raise IntegrationError(
                f"pricing integral error estimate {err:.2e} exceeds tolerance"
            )
        probs.append(0.5 + val / math.pi)
    call = spot * probs[0] - option.strike * probs[1]
    if option.kind == "call":
        return call
    return call - spot + option.strike  # parity at zero rates


@lru_cache(maxsize=8)
def _gauss_legendre(n_nodes: int, u_max: float):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * u_max * (x + 1.0)
    return u, 0.5 * u_max * w


def heston_price_states(option: OptionSpec, params: StochVolParams, tau: float,
                        spot, variance, n_nodes: int = 256,
                        u_max: float = 400.0) -> np.ndarray:
    """Vectorised semi-analytic price over arrays of (spot, variance) states.

    Same representation as heston_closed_form on a fixed Gauss-Legendre rule,
    so many states share the per-node C/D coefficients.  Intended for grid and
    path-batch valuation; accuracy versus the adaptive oracle is ~1e-8 for the
    maturities used here.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    spot = np.asarray(spot, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if option.strike == 0.0:
        base = spot if option.kind == "call" else np.zeros_like(spot)
        return base * np.ones_like(variance)
    u, w = _gauss_legendre(n_nodes, u_max)
    log_k = math.log(option.strike)
    log_s = np.log(spot)
    call = -option.strike * 0.5 + spot * 0.5
    for j, weight_s in ((1, True), (2, False)):
        c, dd = _cf_terms(u, j, params, tau)
        phi = np.exp(
            c[None, :] + dd[None, :] * variance[..., None]
            + 1j * u[None, :] * log_s[..., None]
        )
        integrand = (np.exp(-1j * u * log_k)[None, :] * phi / (1j * u)[None, :]).real
        tail = integrand @ w / math.pi
        call = call + (spot if weight_s else -option.strike) * tail
    if option.kind == "call":
        return call
    return call - spot + option.strike


# ---------------------------------------------------------------------------
# Black-Scholes utilities and implied volatility
# ---------------------------------------------------------------------------

def black_scholes_price(spot, strike, tau, sigma, kind: OptionKind = "call"):
    """Black-Scholes price at zero rates."""
    spot = np.asarray(spot, dtype=float)
    if strike == 0.0:
        return spot + 0.0 if kind == "call" else np.zeros_like(spot)
    total = sigma * math.sqrt(tau)
    if np.ndim(total) == 0 and total <= 0:
        intrinsic = spot - strike if kind == "call" else strike - spot
        return np.maximum(intrinsic, 0.0)
    d1 = (np.log(spot / strike) + 0.5 * sigma**2 * tau) / total
    d2 = d1 - total
    call = spot * norm.cdf(d1) - strike * norm.cdf(d2)
    if kind == "call":
        return call
    return call - spot + strike


def black_scholes_vega(spot, strike, tau, sigma):
    """d(price)/d(sigma), identical for calls and puts at zero rates."""
    total = sigma * math.sqrt(tau)
    d1 = (np.log(np.asarray(spot, dtype=float) / strike) + 0.5 * sigma**2 * tau) / total
    return spot * norm.pdf(d1) * math.sqrt(tau)


def implied_vol(price: float, option: OptionSpec, spot: float,
                time: float = 0.0) -> float:
    """Black-Scholes implied volatility by bisection-safeguarded Newton.

    The target price must lie strictly inside the arbitrage band
    (intrinsic, spot) for calls and (intrinsic, strike) for puts; the solver
    reproduces the price to 1e-8 in currency.
    """
    tau = option.maturity - time
    if tau <= 0:
        raise ValueError("option already expired at the valuation time")
    if option.kind == "call":
        lower, upper = max(spot - option.strike, 0.0), spot
    else:
        lower, upper = max(option.strike - spot, 0.0), option.strike
    if not (lower < price < upper):
        raise ImpliedVolError(
            f"price {price} outside arbitrage band ({lower}, {upper})"
        )

    def value(sig):
        return float(black_scholes_price(spot, option.strike, tau, sig, option.kind))

    lo, hi = 1e-12, 1.0
    while value(hi) < price:
        hi *= 2.0
        if hi > 1e6:  # unreachable inside the band, but bound the loop
            raise ImpliedVolError("bracket expansion failed")
    sigma = 0.5 * (lo + hi)
    for _ in range(200):
        diff = value(sigma) - price
        if abs(diff) <= 1e-10:
            return sigma
        if diff > 0:
            hi = sigma
        else:
            lo = sigma
        vga = float(black_scholes_vega(spot, option.strike, tau, sigma))
        if vga > 1e-14:
            candidate = sigma - diff / vga
        else:
            candidate = 0.5 * (lo + hi)
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if hi - lo < 1e-16 * max(1.0, hi):
            sigma = 0.5 * (lo + hi)
            break
        sigma = candidate
    if abs(value(sigma) - price) > 1e-8:
        raise ImpliedVolError("implied volatility iteration did not converge")
    return sigma


# ---------------------------------------------------------------------------
# Greeks in the bumped sense used throughout the package
# ---------------------------------------------------------------------------

def vega(option: OptionSpec, state: MarketState, params: StochVolParams,
         bump: float = 1e-2) -> float:
    """Price sensitivity to spot volatility sqrt(v), by central difference.

    The bump is applied in sqrt-variance units with the semi-analytic pricer
    on both sides, so vega = (O((s+h)^2) - O((s-h)^2)) / (2h) with s=sqrt(v).
    """
    s = math.sqrt(state.variance)
    if s - bump <= 0:
        raise ValueError("bump too large for the current variance level")
    up = MarketState(state.spot, (s + bump) ** 2, state.time)
    dn = MarketState(state.spot, (s - bump) ** 2, state.time)
    return (heston_closed_form(option, up, params)
            - heston_closed_form(option, dn, params)) / (2.0 * bump)


def vega_mc(option: OptionSpec, state: MarketState, params: StochVolParams,
            bump: float = 1e-2, n_paths: int = 50_000, n_steps: int | None = None,
            seed: int = 0) -> tuple[float, float]:
    """Monte Carlo counterpart of `vega` with common random numbers.

    Both bumped ensembles reuse the same normals, the estimator is the mean of
    the per-path payoff differences; returns (vega, stderr).
    """
    horizon = option.maturity - state.time
    if n_steps is None:
        n_steps = default_pricing_steps(horizon)
    s = math.sqrt(state.variance)
    if s - bump <= 0:
        raise ValueError("bump too large for the current variance level")
    rng = np.random.default_rng(seed)
    dt = horizon / n_steps
    spot_u = np.full(n_paths, float(state.spot))
    spot_d = spot_u.copy()
    var_u = np.full(n_paths, (s + bump) ** 2)
    var_d = np.full(n_paths, (s - bump) ** 2)
    for _ in range(n_steps):
        z_s = rng.standard_normal(n_paths)
        z_p = rng.standard_normal(n_paths)
        spot_u, var_u = diffusion_step(spot_u, var_u, dt, z_s, z_p, params, "Q")
        spot_d, var_d = diffusion_step(spot_d, var_d, dt, z_s, z_p, params, "Q")
    diff = (option.payoff(spot_u) - option.payoff(spot_d)) / (2.0 * bump)
    return float(np.mean(diff)), float(np.std(diff, ddof=1) / math.sqrt(n_paths))


def delta(option: OptionSpec, state: MarketState, params: StochVolParams,
          rel_bump: float = 1e-3) -> float:
    """dO/dS by central difference of the semi-analytic price."""
    h = rel_bump * state.spot
    up = MarketState(state.spot + h, state.variance, state.time)
    dn = MarketState(state.spot - h, state.variance, state.time)
    return (heston_closed_form(option, up, params)
            - heston_closed_form(option, dn, params)) / (2.0 * h)
