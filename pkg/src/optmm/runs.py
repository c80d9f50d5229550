"""Computational cores of the five experiment commands.

Each run_* function is pure given (config, seed) and returns JSON-friendly
dictionaries plus CSV text, so the HTTP service and the command line share
one implementation.  Book construction involves seeded Monte-Carlo pricing
for the trade sizes; books are memoised per (model, book) config section so
repeated commands against one configuration price the book once per process.
"""

from __future__ import annotations

import csv
import io
import json
import logging

import numpy as np

from . import config as cfgmod
from . import sim
from .correction import build_vega_tables, phi
from .hjb import (SIDES, SolverGrid, artifact_id, quote_policy, solve,
                  value_function_bytes, value_function_csv)
from .model import (ImpliedVolError, OptionSpec, default_pricing_steps,
                    heston_closed_form, implied_vol, price_option)

logger = logging.getLogger(__name__)

_BOOK_CACHE: dict = {}


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.12g}"


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return out.getvalue()


def get_book(cfg: cfgmod.ExperimentConfig):
    """Memoised (params, initial, book) for the config's market sections."""
    d = cfgmod.to_dict(cfg)
    key = json.dumps({"model": d["model"], "book": d["book"]}, sort_keys=True)
    if key not in _BOOK_CACHE:
        _BOOK_CACHE[key] = (cfgmod.build_params(cfg), cfgmod.initial_state(cfg),
                            cfgmod.build_book(cfg))
    return _BOOK_CACHE[key]


# ---------------------------------------------------------------------------
# surface
# ---------------------------------------------------------------------------

def run_surface(cfg: cfgmod.ExperimentConfig, seed: int | None = None,
                oracle: bool = False, sentinel: bool = False) -> dict:
    """MC prices and implied vols of every configured option."""
    params = cfgmod.build_params(cfg)
    initial = cfgmod.initial_state(cfg)
    options = list(cfgmod.option_list(cfg))
    if sentinel:
        options.append(OptionSpec(strike=0.0, maturity=options[0].maturity,
                                  kind="call"))
    root = cfg.surface.seed if seed is None else seed
    rows = []
    for i, opt in enumerate(options):
        steps = default_pricing_steps(opt.maturity - initial.time,
                                      cfg.surface.steps_per_year)
        price, stderr = price_option(opt, initial, params,
                                     n_paths=cfg.surface.n_paths,
                                     n_steps=steps,
                                     seed=cfgmod._child_seed(root, i))
        note = ""
        iv = None
        try:
            iv = implied_vol(price, opt, initial.spot)
        except (ImpliedVolError, ValueError) as exc:
            note = f"implied vol unavailable: {exc}"
        row = {
            "strike": opt.strike, "maturity": opt.maturity,
            "price": price, "stderr": stderr, "implied_vol": iv,
        }
        if oracle:
            ref = heston_closed_form(opt, initial, params)
            row["oracle_price"] = ref
            row["abs_diff"] = abs(price - ref)
            row["within_3_stderr"] = bool(abs(price - ref) <= 3.0 * stderr)
        row["note"] = note or ("sentinel" if opt.strike == 0.0 else "")
        rows.append(row)
    header = ["strike", "maturity", "price", "stderr", "implied_vol"]
    if oracle:
        header += ["oracle_price", "abs_diff", "within_3_stderr"]
    header += ["note"]
    csv_rows = []
    for row in rows:
        rec = [_fmt(row["strike"]), _fmt(row["maturity"]), _fmt(row["price"]),
               _fmt(row["stderr"]), _fmt(row.get("implied_vol"))]
        if oracle:
            rec += [_fmt(row["oracle_price"]), _fmt(row["abs_diff"]),
                    str(row["within_3_stderr"]).lower()]
        rec += [row["note"]]
        csv_rows.append(rec)
    return {"rows": rows, "csv": _csv_text(header, csv_rows)}


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def run_solve(cfg: cfgmod.ExperimentConfig, refine: bool = False,
              auto_refine: bool = False):
    """Solve the value function; returns (payload dict, ValueFunction)."""
    params, initial, book = get_book(cfg)
    trader = cfgmod.build_trader(cfg, book)
    grid = cfgmod.build_grid(cfg)
    vf = solve(params, book, trader, grid, auto_refine=auto_refine)
    raw = value_function_bytes(vf)
    nu0 = cfg.model.variance
    v0 = vf.value_at(0.0, nu0, 0.0)
    summary = {
        "artifact_id": artifact_id(raw),
        "n_time": vf.grid.n_time,
        "n_nu": len(vf.grid.nu_nodes),
        "n_vega": len(vf.grid.vega_nodes),
        "value_at_origin": v0,
        "terminal_max_abs": float(np.max(np.abs(vf.values[-1]))),
    }
    if refine:
        fine = SolverGrid.regular(
            n_time=cfg.grid.n_time * 2, nu_min=cfg.grid.nu_min,
            nu_max=cfg.grid.nu_max, n_nu=cfg.grid.n_nu,
            vega_limit=cfg.trader.vega_limit, n_vega=cfg.grid.n_vega * 2)
        vf_fine = solve(params, book, trader, fine, auto_refine=auto_refine)
        v0_fine = vf_fine.value_at(0.0, nu0, 0.0)
        summary["refined_value_at_origin"] = v0_fine
        summary["refine_rel_delta"] = abs(v0_fine - v0) / max(abs(v0), 1e-300)
    payload = {
        "summary": summary,
        "csv_t0": value_function_csv(vf, t_index=0),
    }
    return payload, vf, raw


# ---------------------------------------------------------------------------
# quotes
# ---------------------------------------------------------------------------

def run_quotes(cfg: cfgmod.ExperimentConfig, vf) -> dict:
    """Quote ladder on the vega axis at t=0 and the initial variance."""
    params, initial, book = get_book(cfg)
    trader = cfgmod.build_trader(cfg, book)
    policy = quote_policy(vf, book, trader)
    nu0 = cfg.model.variance
    table = policy.quote_table(0.0, nu0)
    vega_nodes = vf.grid.vega_nodes
    prices = [heston_closed_form(opt, initial, params) for opt in book.options]
    header = ["option", "strike", "maturity", "side", "vega_node", "quote",
              "quote_over_price", "implied_vol_of_quote", "note"]
    rows = []
    for i, opt in enumerate(book.options):
        for s_idx, side in enumerate(SIDES):
            for m, node in enumerate(vega_nodes):
                q = table[i, s_idx, m]
                if np.isnan(q):
                    rows.append([i, _fmt(opt.strike), _fmt(opt.maturity), side,
                                 _fmt(node), "", "", "", "no-quote"])
                    continue
                level = prices[i] - q if side == "bid" else prices[i] + q
                note = ""
                iv = None
                try:
                    iv = implied_vol(level, opt, initial.spot)
                except (ImpliedVolError, ValueError) as exc:
                    note = f"implied vol unavailable: {exc}"
                rows.append([i, _fmt(opt.strike), _fmt(opt.maturity), side,
                             _fmt(node), _fmt(q), _fmt(q / prices[i]),
                             _fmt(iv), note])
    return {"csv": _csv_text(header, rows), "n_rows": len(rows)}


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(cfg: cfgmod.ExperimentConfig, vf, n_episodes: int | None = None,
                 seed: int | None = None, hedge: str | None = None,
                 policy_name: str = "hjb") -> dict:
    params, initial, book = get_book(cfg)
    trader = cfgmod.build_trader(cfg, book)
    if policy_name == "hjb":
        policy = quote_policy(vf, book, trader)
    elif policy_name == "myopic":
        policy = sim.MyopicPolicy(book, trader)
    elif policy_name == "none":
        policy = sim.NoQuotePolicy()
    else:
        raise ValueError(f"unknown policy {policy_name!r}")
    episodes = cfg.sim.n_episodes if n_episodes is None else int(n_episodes)
    batch = sim.simulate_batch(
        policy, params, book, trader, initial,
        hedge=hedge or cfg.sim.hedge,
        n_episodes=episodes,
        seed=cfg.sim.seed if seed is None else seed,
        n_steps=sim.default_n_steps(trader.horizon, cfg.sim.step_years),
        pricing=cfg.sim.pricing,
    )
    raw = sim.evaluate_objective(batch, penalty="raw")
    adj = sim.evaluate_objective(batch, penalty="hedge_adjusted")
    summary = {
        "policy": policy_name,
        "hedge": batch.hedge,
        "seed": batch.seed,
        "n_episodes": batch.n_episodes,
        "mean_pnl": raw.mean_pnl,
        "pnl_stderr": raw.pnl_stderr,
        "mean_penalty": raw.mean_penalty,
        "penalty_stderr": raw.penalty_stderr,
        "objective": raw.objective,
        "objective_stderr": raw.objective_stderr,
        "mean_penalty_hedge_adjusted": adj.mean_penalty,
        "objective_hedge_adjusted": adj.objective,
        "total_trades": int(np.sum(batch.trade_count)),
        "total_candidates": int(np.sum(batch.candidates)),
        "total_accepted": int(np.sum(batch.accepted)),
    }
    return {"summary": summary, "csv": sim.episodes_csv(batch)}


# ---------------------------------------------------------------------------
# correct
# ---------------------------------------------------------------------------

def default_states(cfg: cfgmod.ExperimentConfig, book) -> list[dict]:
    """One default query: t=0 at the initial market, long one lot of option 0."""
    inventory = [0.0] * book.n_options
    inventory[0] = book.sizes[0].z
    return [{"time": 0.0, "spot": cfg.model.spot,
             "variance": cfg.model.variance, "inventory": inventory}]


def run_correct(cfg: cfgmod.ExperimentConfig, vf, states: list[dict] | None = None,
                seed: int | None = None,
                stderr_tol: float | None = None) -> dict:
    params, initial, book = get_book(cfg)
    trader = cfgmod.build_trader(cfg, book)
    field = build_vega_tables(
        book, params, initial, trader.horizon,
        n_t=cfg.correction.table_n_t, n_s=cfg.correction.table_n_s,
        n_v=cfg.correction.table_n_v)
    if states is None:
        states = default_states(cfg, book)
    root = cfg.correction.seed if seed is None else seed
    header = ["time", "spot", "variance", "inventory", "phi", "stderr",
              "n_paths", "flagged"]
    rows = []
    results = []
    for j, state in enumerate(states):
        inventory = np.asarray(state["inventory"], dtype=float)
        est = phi(float(state["time"]), float(state["spot"]),
                  float(state["variance"]), inventory, vf, field, params,
                  book, trader, n_paths=cfg.correction.n_paths,
                  seed=cfgmod._child_seed(root, j), stderr_tol=stderr_tol)
        results.append({
            "time": state["time"], "spot": state["spot"],
            "variance": state["variance"],
            "inventory": [float(x) for x in inventory],
            "phi": est.value, "stderr": est.stderr, "n_paths": est.n_paths,
            "flagged": est.flagged, "intensity_min": est.intensity_min,
            "intensity_max": est.intensity_max, "mean_fills": est.mean_fills,
        })
        rows.append([_fmt(state["time"]), _fmt(state["spot"]),
                     _fmt(state["variance"]),
                     ";".join(_fmt(x) for x in inventory),
                     _fmt(est.value), _fmt(est.stderr), est.n_paths,
                     str(est.flagged).lower()])
    return {"rows": results, "csv": _csv_text(header, rows)}
