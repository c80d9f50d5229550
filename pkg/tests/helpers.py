"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from optmm.hjb import OptionBook, SolverGrid, TraderConfig
from optmm.model import MarketState, MeanReversion, OptionSpec, StochVolParams
from optmm.quoting import IntensityCurve, TradeSizeLaw


def make_params(mu=0.0, xi=0.2, rho=-0.5, kappa_p=2.0, theta_p=0.04,
                kappa_q=3.0, theta_q=0.0225) -> StochVolParams:
    return StochVolParams(
        mu=mu, xi=xi, rho=rho,
        drift_p=MeanReversion(kappa=kappa_p, theta=theta_p),
        drift_q=MeanReversion(kappa=kappa_q, theta=theta_q),
    )


def flat_drift_params(mu=0.0, xi=0.2, rho=-0.5, kappa=2.0, theta=0.04
                      ) -> StochVolParams:
    """Identical variance drift under both measures."""
    return make_params(mu=mu, xi=xi, rho=rho, kappa_p=kappa, theta_p=theta,
                       kappa_q=kappa, theta_q=theta)


def near_constant_vol_params(variance: float, mu=0.0, rho=0.0) -> StochVolParams:
    """Essentially frozen variance: vanishing vol-of-vol and mean reversion.

    The Feller condition still holds (2 * 1e-9 * variance > (1e-6)^2 for any
    variance above 5e-4), so the constructor accepts it; the spot then behaves
    like a constant-volatility lognormal to within ~1e-6 over a few years.
    """
    return StochVolParams(
        mu=mu, xi=1e-6, rho=rho,
        drift_p=MeanReversion(kappa=1e-9, theta=variance),
        drift_q=MeanReversion(kappa=1e-9, theta=variance),
    )


def one_option_book(option: OptionSpec | None = None, vega_value: float = 1.25,
                    z: float = 100.0, lambda_max: float = 7560.0,
                    alpha: float = 0.7, slope: float | None = None,
                    curve: IntensityCurve | None = None) -> OptionBook:
    if option is None:
        option = OptionSpec(strike=10.0, maturity=1.0, kind="call")
    if curve is None:
        curve = IntensityCurve.logistic(
            lambda_max=lambda_max, alpha=alpha,
            slope=slope if slope is not None else 150.0 / vega_value)
    return OptionBook(
        options=(option,),
        vegas=np.array([vega_value]),
        sizes=(TradeSizeLaw(z=z),),
        curves=((curve, curve),),
    )


def small_trader(gamma=1e-3, delta_floor=-1.0, vega_limit=1e7,
                 horizon=0.0012) -> TraderConfig:
    return TraderConfig(gamma=gamma, delta_floor=delta_floor,
                        vega_limit=vega_limit, horizon=horizon)


def vega_multiple_grid(n_time: int, nu_min: float, nu_max: float, n_nu: int,
                       vega_jump: float, n_lots: int) -> SolverGrid:
    """Vega axis with nodes at exact multiples of one fill's vega jump."""
    return SolverGrid(
        n_time=n_time,
        nu_nodes=np.linspace(nu_min, nu_max, n_nu),
        vega_nodes=np.linspace(-n_lots * vega_jump, n_lots * vega_jump,
                               2 * n_lots + 1),
    )
