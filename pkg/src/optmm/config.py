"""Experiment configuration: JSON schema, defaults, and object builders.

The default configuration is the bundled reference experiment: 20 call
options (strikes 8..12, maturities 1..3 years) on a spot of 10, logistic
intensity curves with per-option arrival scale 252*30/(1 + 0.7|S0 - K|),
trade sizes chosen so each fill carries a 5e5 notional, a hard vega limit of
1e7, and a 180 x 30 x 40 solver grid over [0, 0.0012] x [0.0144, 0.0324] x
[-1e7, 1e7].  Configs round-trip exactly through JSON; unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .hjb import OptionBook, SolverGrid, TraderConfig
from .model import (MarketState, MeanReversion, OptionSpec, StochVolParams,
                    price_option, vega)
from .quoting import IntensityCurve, TradeSizeLaw


@dataclass(frozen=True)
class ModelSection:
    spot: float = 10.0
    variance: float = 0.0225
    mu: float = 0.0
    xi: float = 0.2
    rho: float = -0.5
    kappa_p: float = 2.0
    theta_p: float = 0.04
    kappa_q: float = 3.0
    theta_q: float = 0.0225


@dataclass(frozen=True)
class BookSection:
    strikes: tuple = (8.0, 9.0, 10.0, 11.0, 12.0)
    maturities: tuple = (1.0, 1.5, 2.0, 3.0)
    kind: str = "call"
    rate_scale: float = 252.0 * 30.0   # arrivals/year at the money
    rate_decay: float = 0.7            # 1/currency moneyness decay
    alpha: float = 0.7
    beta: float = 150.0                # intensity slope in vol-normalised units
    notional_per_trade: float = 5e5
    size_seed: int = 90210             # seed of the size-setting MC pricing
    size_paths: int = 50000
    floor_scale: float = -50.0         # quote floor in beta/vega units


@dataclass(frozen=True)
class TraderSection:
    gamma: float = 1e-3
    vega_limit: float = 1e7
    horizon: float = 0.0012


@dataclass(frozen=True)
class GridSection:
    n_time: int = 180
    nu_min: float = 0.0144
    nu_max: float = 0.0324
    n_nu: int = 30
    n_vega: int = 40


@dataclass(frozen=True)
class SurfaceSection:
    n_paths: int = 100000
    seed: int = 101
    steps_per_year: int = 100


@dataclass(frozen=True)
class SimSection:
    n_episodes: int = 1000
    seed: int = 202
    step_years: float = 1e-6
    hedge: str = "delta"        # or "optimal"
    pricing: str = "table"      # or "exact"


@dataclass(frozen=True)
class CorrectionSection:
    n_paths: int = 4096
    seed: int = 303
    table_n_t: int = 5
    table_n_s: int = 81
    table_n_v: int = 21


_SECTIONS = {
    "model": ModelSection,
    "book": BookSection,
    "trader": TraderSection,
    "grid": GridSection,
    "surface": SurfaceSection,
    "sim": SimSection,
    "correction": CorrectionSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    book: BookSection = field(default_factory=BookSection)
    trader: TraderSection = field(default_factory=TraderSection)
    grid: GridSection = field(default_factory=GridSection)
    surface: SurfaceSection = field(default_factory=SurfaceSection)
    sim: SimSection = field(default_factory=SimSection)
    correction: CorrectionSection = field(default_factory=CorrectionSection)


def _build_section(cls, overrides: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(overrides) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {}
    for key, value in overrides.items():
        if isinstance(value, list):
            value = tuple(float(x) for x in value)
        coerced[key] = value
    return cls(**coerced)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sections = {name: _build_section(cls, data.get(name, {}) or {})
                for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    for section in out.values():
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2) + "\n"


def loads(text: str) -> ExperimentConfig:
    return from_dict(json.loads(text))


def load(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def dump(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def validate(cfg: ExperimentConfig) -> None:
    """Cheap structural checks; full model invariants fire in the builders."""
    build_params(cfg)  # Feller and range checks live in the constructor
    if not cfg.book.strikes or not cfg.book.maturities:
        raise ValueError("book needs at least one strike and one maturity")
    if min(cfg.book.maturities) <= cfg.trader.horizon:
        raise ValueError("every option maturity must exceed the horizon")
    if any(k < 0 for k in cfg.book.strikes):
        raise ValueError("strikes must be nonnegative")
    if cfg.book.beta <= 0 or cfg.book.rate_scale <= 0:
        raise ValueError("intensity scale and slope must be positive")
    if cfg.book.notional_per_trade <= 0:
        raise ValueError("notional_per_trade must be positive")
    if not (0 < cfg.grid.nu_min < cfg.grid.nu_max):
        raise ValueError("need 0 < nu_min < nu_max")
    if cfg.grid.n_nu < 2 or cfg.grid.n_vega < 2 or cfg.grid.n_time < 1:
        raise ValueError("grid too small")
    if cfg.sim.hedge not in ("delta", "optimal"):
        raise ValueError("sim.hedge must be 'delta' or 'optimal'")
    if cfg.sim.pricing not in ("table", "exact"):
        raise ValueError("sim.pricing must be 'table' or 'exact'")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_params(cfg: ExperimentConfig) -> StochVolParams:
    m = cfg.model
    return StochVolParams(
        mu=m.mu, xi=m.xi, rho=m.rho,
        drift_p=MeanReversion(kappa=m.kappa_p, theta=m.theta_p),
        drift_q=MeanReversion(kappa=m.kappa_q, theta=m.theta_q),
    )


def initial_state(cfg: ExperimentConfig) -> MarketState:
    return MarketState(spot=cfg.model.spot, variance=cfg.model.variance,
                       time=0.0)


def option_list(cfg: ExperimentConfig) -> tuple[OptionSpec, ...]:
    return tuple(OptionSpec(strike=k, maturity=t, kind=cfg.book.kind)
                 for t in cfg.book.maturities for k in cfg.book.strikes)


def _child_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence([root, index]).generate_state(1)[0])


def arrival_rate(cfg: ExperimentConfig, strike: float) -> float:
    return cfg.book.rate_scale / (
        1.0 + cfg.book.rate_decay * abs(cfg.model.spot - strike))


def build_book(cfg: ExperimentConfig) -> OptionBook:
    """Assemble the book: frozen vegas, notional-based sizes, intensity curves.

    Each size is notional_per_trade divided by a seeded MC price of the
    option, so identical configs produce identical books.
    """
    params = build_params(cfg)
    initial = initial_state(cfg)
    options = option_list(cfg)
    vegas = np.array([vega(opt, initial, params) for opt in options])
    sizes = []
    curves = []
    for i, opt in enumerate(options):
        price, _ = price_option(opt, initial, params,
                                n_paths=cfg.book.size_paths,
                                seed=_child_seed(cfg.book.size_seed, i))
        sizes.append(TradeSizeLaw(z=cfg.book.notional_per_trade / price))
        curve = IntensityCurve.logistic(
            lambda_max=arrival_rate(cfg, opt.strike),
            alpha=cfg.book.alpha,
            slope=cfg.book.beta / vegas[i],
        )
        curves.append((curve, curve))
    return OptionBook(options=options, vegas=vegas, sizes=tuple(sizes),
                      curves=tuple(curves))


def quote_floor(cfg: ExperimentConfig, book: OptionBook) -> float:
    """Currency quote floor: floor_scale vega/beta units of the largest vega."""
    return cfg.book.floor_scale * float(np.max(book.vegas)) / cfg.book.beta


def build_trader(cfg: ExperimentConfig, book: OptionBook) -> TraderConfig:
    return TraderConfig(
        gamma=cfg.trader.gamma,
        delta_floor=quote_floor(cfg, book),
        vega_limit=cfg.trader.vega_limit,
        horizon=cfg.trader.horizon,
    )


def build_grid(cfg: ExperimentConfig) -> SolverGrid:
    return SolverGrid.regular(
        n_time=cfg.grid.n_time, nu_min=cfg.grid.nu_min,
        nu_max=cfg.grid.nu_max, n_nu=cfg.grid.n_nu,
        vega_limit=cfg.trader.vega_limit, n_vega=cfg.grid.n_vega,
    )
