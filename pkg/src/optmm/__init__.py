"""Optimal market making for a book of European options.

The package prices under a stochastic-volatility model, reduces the quoting
problem to a three-dimensional control problem via a constant-vega
approximation, solves it with a monotone explicit scheme, and validates the
resulting policy in an event-driven simulator with hedging, risk limits and
a first-order correction for vega drift.
"""

from .config import ExperimentConfig, build_book, build_grid, build_params, build_trader
from .correction import PhiEstimate, VegaDeviationField, build_vega_tables, phi
from .hjb import (CFLViolation, OptionBook, QuotePolicy, SolverGrid,
                  TraderConfig, ValueFunction, load_value_function,
                  quote_policy, save_value_function, solve, value_at)
from .model import (ImpliedVolError, IntegrationError, MarketState,
                    MeanReversion, OptionSpec, StochVolParams,
                    heston_closed_form, implied_vol, price_option,
                    simulate_paths, vega)
from .quoting import (IntensityCurve, RootSolveError, TradeSizeLaw,
                      hamiltonian, hamiltonian_prime, intensity,
                      optimal_quote)
from .sim import (BatchResult, MyopicPolicy, NoQuotePolicy, SimReport,
                  evaluate_objective, simulate_batch, simulate_episode)

__version__ = "0.1.0"

__all__ = [
    "BatchResult", "CFLViolation", "ExperimentConfig", "ImpliedVolError",
    "IntegrationError", "IntensityCurve", "MarketState", "MeanReversion",
    "MyopicPolicy", "NoQuotePolicy", "OptionBook", "OptionSpec",
    "PhiEstimate", "QuotePolicy", "RootSolveError", "SimReport",
    "SolverGrid", "StochVolParams", "TradeSizeLaw", "TraderConfig",
    "ValueFunction", "VegaDeviationField", "build_book", "build_grid",
    "build_params", "build_trader", "build_vega_tables", "evaluate_objective",
    "hamiltonian", "hamiltonian_prime", "heston_closed_form", "implied_vol",
    "intensity", "load_value_function", "optimal_quote", "phi",
    "price_option", "quote_policy", "save_value_function", "simulate_batch",
    "simulate_episode", "simulate_paths", "solve", "value_at", "vega",
]
