"""Event-driven simulation of quoting episodes with hedging and accounting.

Client fills arrive per option and side by thinning a dominating Poisson
stream: in each time step a candidate count is drawn at the dominating rate
and each candidate is accepted with probability Lambda(quote)/rate, skipped
when the fill would push the portfolio vega beyond the hard limit.  Between
events the spot/variance pair diffuses under the historical measure, the
underlying position is rebalanced to the delta hedge (or the variance-optimal
variant, which shorts an extra rho*xi*vega/(2*sqrt(nu)*spot) of stock), and
the mark-to-market V = cash + stock*spot + sum(q_i * price_i) is tracked
together with the running vega-risk penalty (gamma*xi^2/8) * vega^2.

Episodes are vectorised: one batch call simulates every episode in lock-step,
and the random stream consumption per step does not depend on the policy, so
two policies run from the same seed see identical candidate arrivals.  Large
batches value the book off precomputed price/delta tables; single episodes
default to exact semi-analytic repricing each step.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .hjb import SIDES, OptionBook, TraderConfig, side_sign, validate_book_trader
from .model import MarketState, StochVolParams, diffusion_step, heston_price_states
from .quoting import optimal_quote
from .tables import build_delta_table, build_price_table

logger = logging.getLogger(__name__)

DEFAULT_STEP_YEARS = 1e-6


# ---------------------------------------------------------------------------
# Policies (anything with quote_batch works, including hjb.QuotePolicy)
# ---------------------------------------------------------------------------

@dataclass
class ConstantQuotePolicy:
    """Fixed quote distances; either one number or a {(option, side): delta} map."""

    quote: float | dict = 0.0

    def quote_batch(self, i, side, t, nu, vega):
        q = self.quote[(i, side)] if isinstance(self.quote, dict) else self.quote
        return np.full(np.shape(vega), float(q))


@dataclass
class NoQuotePolicy:
    """Never quotes; the NaN marker suppresses every candidate."""

    def quote_batch(self, i, side, t, nu, vega):
        return np.full(np.shape(vega), np.nan)


@dataclass
class MyopicPolicy:
    """Inventory-blind baseline: maximises instantaneous spread revenue.

    The quote solves sup_delta Lambda(delta)*delta, i.e. the Hamiltonian
    maximiser at reservation spread zero, held constant over the episode.
    """

    book: OptionBook
    trader: TraderConfig
    _cache: dict = field(default_factory=dict, repr=False)

    def quote_batch(self, i, side, t, nu, vega):
        key = (i, side)
        if key not in self._cache:
            curve = self.book.curves[i][0 if side == "bid" else 1]
            self._cache[key] = float(
                optimal_quote(curve, 0.0, self.trader.delta_floor))
        return np.full(np.shape(vega), self._cache[key])


# ---------------------------------------------------------------------------
# Pricers
# ---------------------------------------------------------------------------

class _ExactPricer:
    """Semi-analytic prices and bump deltas evaluated on demand."""

    def __init__(self, book, params, initial, rel_bump=1e-3):
        self.book = book
        self.params = params
        self.t0 = initial.time
        self.h = rel_bump * initial.spot

    def price(self, i, t, spot, variance):
        tau = self.book.options[i].maturity - (self.t0 + t)
        return heston_price_states(self.book.options[i], self.params, tau,
                                   spot, variance)

    def delta(self, i, t, spot, variance):
        up = self.price(i, t, spot + self.h, variance)
        dn = self.price(i, t, spot - self.h, variance)
        return (up - dn) / (2.0 * self.h)


class _TablePricer:
    """Trilinear price/delta tables over the reachable state range."""

    def __init__(self, book, params, initial, horizon, n_t=3, n_s=81, n_v=41,
                 n_sigma=8.0):
        self.price_tables = [
            build_price_table(opt, params, initial, horizon, n_t, n_s, n_v, n_sigma)
            for opt in book.options
        ]
        self.delta_tables = [
            build_delta_table(opt, params, initial, horizon, n_t, n_s, n_v, n_sigma)
            for opt in book.options
        ]

    def price(self, i, t, spot, variance):
        return self.price_tables[i].at(t, spot, variance)

    def delta(self, i, t, spot, variance):
        return self.delta_tables[i].at(t, spot, variance)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trade:
    time: float
    option: int
    side: str
    size: float
    quote: float
    cash: float
    vega_portfolio: float
    mtm: float


@dataclass(frozen=True)
class MtMPath:
    """Per-step state samples of a single episode (post fills and hedge)."""

    times: np.ndarray
    spot: np.ndarray
    variance: np.ndarray
    cash: np.ndarray
    stock: np.ndarray
    inventory: np.ndarray  # (n_steps+1, n_options)
    mtm: np.ndarray
    vega_portfolio: np.ndarray
    delta_portfolio: np.ndarray


@dataclass(frozen=True)
class BatchResult:
    """Vectorised episode statistics; one entry per episode."""

    terminal_mtm: np.ndarray
    penalty: np.ndarray
    penalty_hedge_adjusted: np.ndarray
    spread_revenue: np.ndarray
    trade_count: np.ndarray
    candidates: np.ndarray  # (n_options, 2) totals across the batch
    accepted: np.ndarray
    seed: int
    hedge: str
    trades: list = field(default_factory=list)
    paths: list = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.terminal_mtm)


@dataclass(frozen=True)
class SimReport:
    """Single-episode output: terminal MtM, penalty, logs and the MtM path."""

    terminal_mtm: float
    penalty_integral: float
    penalty_integral_hedge_adjusted: float
    spread_revenue: float
    trade_log: tuple
    mtm_path: MtMPath
    candidates: np.ndarray
    accepted: np.ndarray


@dataclass(frozen=True)
class ObjectiveStats:
    n_episodes: int
    mean_pnl: float
    pnl_stderr: float
    mean_penalty: float
    penalty_stderr: float
    objective: float
    objective_stderr: float


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

def default_n_steps(horizon: float, step_years: float = DEFAULT_STEP_YEARS) -> int:
    return max(1, int(round(horizon / step_years)))


def simulate_batch(policy, params: StochVolParams, book: OptionBook,
                   trader: TraderConfig, initial: MarketState, *,
                   hedge: str = "delta", n_episodes: int, seed: int,
                   n_steps: int | None = None, pricing: str = "table",
                   track_mtm: bool = True, record_paths: bool = False,
                   record_trades: bool = False) -> BatchResult:
    """Simulate `n_episodes` quoting episodes in lock-step.

    `hedge` is "delta" or "optimal"; `pricing` is "table" or "exact";
    `track_mtm=False` skips all valuation and hedging and only runs the
    arrival/inventory machinery (useful for pure event statistics).
    """
    if hedge not in ("delta", "optimal"):
        raise ValueError(f"unknown hedge mode {hedge!r}")
    validate_book_trader(book, trader)
    n = book.n_options
    if n_steps is None:
        n_steps = default_n_steps(trader.horizon)
    dt = trader.horizon / n_steps
    dom = np.array([
        [book.curves[i][s].dominating_rate(trader.delta_floor) for s in (0, 1)]
        for i in range(n)
    ])
    p_two = 1.0 - math.exp(-dom.max() * dt) * (1.0 + dom.max() * dt)
    if p_two > 0.01:
        logger.warning(
            "time step too coarse for thinning: multiple-arrival probability "
            "%.3f per step exceeds 1%%", p_two)

    pricer = None
    if track_mtm:
        if pricing == "exact":
            pricer = _ExactPricer(book, params, initial)
        elif pricing == "table":
            pricer = _TablePricer(book, params, initial, trader.horizon)
        else:
            raise ValueError(f"unknown pricing mode {pricing!r}")

    rng = np.random.default_rng(seed)
    zs = np.array([law.z for law in book.sizes])
    vega_jumps = np.array([book.vega_jump(i) for i in range(n)])
    pen_rate = trader.gamma * params.xi**2 / 8.0

    spot = np.full(n_episodes, float(initial.spot))
    var_raw = np.full(n_episodes, float(initial.variance))
    cash = np.zeros(n_episodes)
    stock = np.zeros(n_episodes)
    inventory = np.zeros((n_episodes, n))
    vega_pi = np.zeros(n_episodes)
    penalty_acc = np.zeros(n_episodes)
    spread_rev = np.zeros(n_episodes)
    trade_count = np.zeros(n_episodes, dtype=int)
    candidates = np.zeros((n, 2), dtype=int)
    accepted = np.zeros((n, 2), dtype=int)
    trades: list = []
    lam_dt = dom * dt

    def mark_to_market(t, v_pos):
        total = cash + stock * spot
        for i in range(n):
            if np.any(inventory[:, i] != 0.0):
                total = total + inventory[:, i] * pricer.price(i, t, spot, v_pos)
        return total

    path_samples = None
    if record_paths:
        path_samples = {
            "times": np.empty(n_steps + 1),
            "spot": np.empty((n_episodes, n_steps + 1)),
            "variance": np.empty((n_episodes, n_steps + 1)),
            "cash": np.empty((n_episodes, n_steps + 1)),
            "stock": np.empty((n_episodes, n_steps + 1)),
            "inventory": np.empty((n_episodes, n_steps + 1, n)),
            "mtm": np.empty((n_episodes, n_steps + 1)),
            "vega": np.empty((n_episodes, n_steps + 1)),
            "delta_pi": np.empty((n_episodes, n_steps + 1)),
        }

    for k in range(n_steps):
        t = k * dt
        v_pos = np.maximum(var_raw, 0.0)
        counts = rng.poisson(lam=lam_dt, size=(n_episodes, n, 2))
        kmax = int(counts.max())
        unif = [(rng.uniform(size=(n_episodes, n, 2)),
                 rng.uniform(size=(n_episodes, n, 2))) for _ in range(kmax)]
        z_s = rng.standard_normal(n_episodes)
        z_p = rng.standard_normal(n_episodes)

        if kmax > 0:
            step_prices = {}
            step_quotes = {}
            for i in range(n):
                for s_idx, side in enumerate(SIDES):
                    ep = np.nonzero(counts[:, i, s_idx])[0]
                    if ep.size == 0:
                        continue
                    candidates[i, s_idx] += int(counts[ep, i, s_idx].sum())
                    step_quotes[(i, s_idx)] = (
                        ep, policy.quote_batch(i, side, t, v_pos[ep], vega_pi[ep]))
            for c in range(kmax):
                accept_u, jitter_u = unif[c]
                for i in range(n):
                    for s_idx, side in enumerate(SIDES):
                        if (i, s_idx) not in step_quotes:
                            continue
                        ep, quotes = step_quotes[(i, s_idx)]
                        live = counts[ep, i, s_idx] > c
                        if not np.any(live):
                            continue
                        curve = book.curves[i][s_idx]
                        with np.errstate(invalid="ignore"):
                            p_acc = np.where(
                                np.isnan(quotes), 0.0,
                                np.asarray(curve.value(np.nan_to_num(quotes)))
                                / dom[i, s_idx])
                        jump = -side_sign(side) * vega_jumps[i]
                        ok = (live
                              & (accept_u[ep, i, s_idx] < p_acc)
                              & (np.abs(vega_pi[ep] + jump)
                                 <= trader.vega_limit * (1.0 + 1e-12)))
                        if not np.any(ok):
                            continue
                        hit = ep[ok]
                        q_fill = quotes[ok]
                        vega_pi[hit] += jump
                        inventory[hit, i] += -side_sign(side) * zs[i]
                        fill_cash = zs[i] * q_fill
                        if track_mtm:
                            px = step_prices.get(i)
                            if px is None:
                                px = pricer.price(i, t, spot, v_pos)
                                step_prices[i] = px
                            fill_cash = fill_cash + side_sign(side) * zs[i] * px[hit]
                        cash[hit] += fill_cash
                        spread_rev[hit] += zs[i] * q_fill
                        trade_count[hit] += 1
                        accepted[i, s_idx] += int(ok.sum())
                        if record_trades:
                            t_fill = t + jitter_u[hit, i, s_idx] * dt
                            for row, epi in enumerate(hit):
                                trades.append((int(epi), float(t_fill[row]), i,
                                               side, float(zs[i]),
                                               float(q_fill[row]),
                                               float(cash[epi]),
                                               float(vega_pi[epi])))
        if np.any(np.abs(vega_pi) > trader.vega_limit * (1.0 + 1e-9)):
            raise RuntimeError("internal error: vega limit breached by a fill")

        delta_pi = np.zeros(n_episodes)
        if track_mtm:
            for i in range(n):
                if np.any(inventory[:, i] != 0.0):
                    delta_pi += inventory[:, i] * pricer.delta(i, t, spot, v_pos)
            target = -delta_pi
            if hedge == "optimal":
                target = target - (params.rho * params.xi * vega_pi
                                   / (2.0 * np.sqrt(v_pos) * spot))
            cash -= (target - stock) * spot
            stock = target

        penalty_acc += vega_pi**2 * dt

        if record_paths:
            path_samples["times"][k] = t
            path_samples["spot"][:, k] = spot
            path_samples["variance"][:, k] = v_pos
            path_samples["cash"][:, k] = cash
            path_samples["stock"][:, k] = stock
            path_samples["inventory"][:, k] = inventory
            path_samples["vega"][:, k] = vega_pi
            path_samples["delta_pi"][:, k] = delta_pi
            path_samples["mtm"][:, k] = (mark_to_market(t, v_pos)
                                         if track_mtm else cash.copy())

        spot, var_raw = diffusion_step(spot, var_raw, dt, z_s, z_p, params, "P")

    v_pos = np.maximum(var_raw, 0.0)
    terminal = mark_to_market(trader.horizon, v_pos) if track_mtm else cash.copy()
    if record_paths:
        path_samples["times"][n_steps] = trader.horizon
        path_samples["spot"][:, n_steps] = spot
        path_samples["variance"][:, n_steps] = v_pos
        path_samples["cash"][:, n_steps] = cash
        path_samples["stock"][:, n_steps] = stock
        path_samples["inventory"][:, n_steps] = inventory
        path_samples["vega"][:, n_steps] = vega_pi
        path_samples["delta_pi"][:, n_steps] = path_samples["delta_pi"][:, n_steps - 1]
        path_samples["mtm"][:, n_steps] = terminal

    paths = []
    if record_paths:
        for e in range(n_episodes):
            paths.append(MtMPath(
                times=path_samples["times"].copy(),
                spot=path_samples["spot"][e],
                variance=path_samples["variance"][e],
                cash=path_samples["cash"][e],
                stock=path_samples["stock"][e],
                inventory=path_samples["inventory"][e],
                mtm=path_samples["mtm"][e],
                vega_portfolio=path_samples["vega"][e],
                delta_portfolio=path_samples["delta_pi"][e],
            ))
    rho2 = 1.0 - params.rho**2
    return BatchResult(
        terminal_mtm=terminal,
        penalty=pen_rate * penalty_acc,
        penalty_hedge_adjusted=rho2 * pen_rate * penalty_acc,
        spread_revenue=spread_rev,
        trade_count=trade_count,
        candidates=candidates,
        accepted=accepted,
        seed=seed,
        hedge=hedge,
        trades=trades,
        paths=paths,
    )


def simulate_episode(policy, params: StochVolParams, book: OptionBook,
                     trader: TraderConfig, initial: MarketState,
                     hedge: str = "delta", n_steps: int | None = None,
                     seed: int = 0, pricing: str = "exact") -> SimReport:
    """One fully logged episode (exact repricing by default)."""
    batch = simulate_batch(
        policy, params, book, trader, initial, hedge=hedge, n_episodes=1,
        seed=seed, n_steps=n_steps, pricing=pricing, record_paths=True,
        record_trades=True)
    path = batch.paths[0]
    trade_log = []
    for (_, t_fill, i, side, size, quote, cash_after, vega_after) in batch.trades:
        k = min(int(t_fill / (trader.horizon / len(path.times[:-1]))),
                len(path.times) - 1)
        trade_log.append(Trade(time=t_fill, option=i, side=side, size=size,
                               quote=quote, cash=cash_after,
                               vega_portfolio=vega_after,
                               mtm=float(path.mtm[k])))
    return SimReport(
        terminal_mtm=float(batch.terminal_mtm[0]),
        penalty_integral=float(batch.penalty[0]),
        penalty_integral_hedge_adjusted=float(batch.penalty_hedge_adjusted[0]),
        spread_revenue=float(batch.spread_revenue[0]),
        trade_log=tuple(trade_log),
        mtm_path=path,
        candidates=batch.candidates,
        accepted=batch.accepted,
    )


def evaluate_objective(result, penalty: str = "raw") -> ObjectiveStats:
    """Mean PnL, mean penalty and their difference with standard errors.

    Accepts a BatchResult or a list of SimReport; `penalty` selects the raw
    integral or its (1-rho^2) hedge-adjusted variant.
    """
    if isinstance(result, BatchResult):
        pnl = np.asarray(result.terminal_mtm, dtype=float)
        pen = np.asarray(result.penalty if penalty == "raw"
                         else result.penalty_hedge_adjusted, dtype=float)
    else:
        pnl = np.array([r.terminal_mtm for r in result], dtype=float)
        pen = np.array([
            r.penalty_integral if penalty == "raw"
            else r.penalty_integral_hedge_adjusted for r in result])
    n = len(pnl)
    if n == 0:
        raise ValueError("no episodes to evaluate")
    scale = math.sqrt(n) if n > 1 else 1.0
    sample = pnl - pen
    return ObjectiveStats(
        n_episodes=n,
        mean_pnl=float(np.mean(pnl)),
        pnl_stderr=float(np.std(pnl, ddof=1) / scale) if n > 1 else float("nan"),
        mean_penalty=float(np.mean(pen)),
        penalty_stderr=float(np.std(pen, ddof=1) / scale) if n > 1 else float("nan"),
        objective=float(np.mean(sample)),
        objective_stderr=float(np.std(sample, ddof=1) / scale) if n > 1 else float("nan"),
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def trade_log_csv(report: SimReport) -> str:
    """Events of one episode: fills first, then per-step mark rows."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["time", "event_type", "option_id", "side", "size", "quote",
                "cash", "vega_portfolio", "mtm"])
    for tr in report.trade_log:
        w.writerow([f"{tr.time:.12g}", "fill", tr.option, tr.side,
                    f"{tr.size:.12g}", f"{tr.quote:.12g}", f"{tr.cash:.12g}",
                    f"{tr.vega_portfolio:.12g}", f"{tr.mtm:.12g}"])
    path = report.mtm_path
    for k in range(len(path.times)):
        w.writerow([f"{path.times[k]:.12g}", "mark", "", "", "", "",
                    f"{path.cash[k]:.12g}", f"{path.vega_portfolio[k]:.12g}",
                    f"{path.mtm[k]:.12g}"])
    return out.getvalue()


def episodes_csv(batch: BatchResult) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["episode", "terminal_mtm", "penalty", "penalty_hedge_adjusted",
                "spread_revenue", "trades", "pnl_minus_penalty"])
    for e in range(batch.n_episodes):
        w.writerow([
            e, f"{batch.terminal_mtm[e]:.12g}", f"{batch.penalty[e]:.12g}",
            f"{batch.penalty_hedge_adjusted[e]:.12g}",
            f"{batch.spread_revenue[e]:.12g}", int(batch.trade_count[e]),
            f"{batch.terminal_mtm[e] - batch.penalty[e]:.12g}",
        ])
    return out.getvalue()
