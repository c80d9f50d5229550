"""Precomputed option-value tables over (time, spot, variance) states.

Episode simulation and the vega-deviation correction both need option prices,
deltas and vegas at millions of path states.  Evaluating the semi-analytic
pricer pointwise would dominate the runtime, so the values are tabulated once
on a small grid covering the states reachable over the trading horizon and
interpolated trilinearly along paths.  The grid is centred on the initial
state and sized from diffusion quantiles, so path excursions beyond it are
vanishingly rare (queries clamp to the edge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MarketState, OptionSpec, StochVolParams, heston_price_states


def reachable_ranges(params: StochVolParams, initial: MarketState,
                     horizon: float, n_sigma: float = 6.0
                     ) -> tuple[float, float, float, float]:
    """(spot_lo, spot_hi, var_lo, var_hi) covering the horizon's diffusion.

    Widths are n_sigma standard deviations of the driving Brownians plus the
    drift envelopes; at the default six sigma the coverage is far beyond the
    99.9% quantile of either marginal.
    """
    vol = math.sqrt(initial.variance)
    s_width = n_sigma * vol * math.sqrt(horizon) + abs(params.mu) * horizon
    spot_lo = initial.spot * math.exp(-s_width)
    spot_hi = initial.spot * math.exp(s_width)
    drift_pull = max(
        abs(params.drift_p.rate(initial.variance)),
        abs(params.drift_q.rate(initial.variance)),
    ) * horizon
    v_width = n_sigma * params.xi * vol * math.sqrt(horizon) + 2.0 * drift_pull
    var_lo = max(initial.variance * 0.05, initial.variance - v_width)
    var_hi = initial.variance + v_width
    return spot_lo, spot_hi, var_lo, var_hi


@dataclass(frozen=True)
class StateGridTable:
    """Trilinear interpolant of one scalar field over (t, spot, variance)."""

    t_nodes: np.ndarray
    s_nodes: np.ndarray
    v_nodes: np.ndarray
    values: np.ndarray  # shape (n_t, n_s, n_v)

    def at(self, t: float, spot, variance) -> np.ndarray:
        spot = np.asarray(spot, dtype=float)
        variance = np.asarray(variance, dtype=float)
        tn = self.t_nodes
        # the delta form c0 + w*(c1 - c0) reproduces constant fields exactly
        if len(tn) == 1:
            slab = self.values[0]
        else:
            x = np.clip((t - tn[0]) / (tn[1] - tn[0]), 0.0, len(tn) - 1.0)
            k = min(int(x), len(tn) - 2)
            w = x - k
            slab = self.values[k] + w * (self.values[k + 1] - self.values[k])
        s_c = np.clip(spot, self.s_nodes[0], self.s_nodes[-1])
        v_c = np.clip(variance, self.v_nodes[0], self.v_nodes[-1])
        i = np.clip(np.searchsorted(self.s_nodes, s_c, side="right") - 1,
                    0, len(self.s_nodes) - 2)
        j = np.clip(np.searchsorted(self.v_nodes, v_c, side="right") - 1,
                    0, len(self.v_nodes) - 2)
        wi = (s_c - self.s_nodes[i]) / (self.s_nodes[i + 1] - self.s_nodes[i])
        wj = (v_c - self.v_nodes[j]) / (self.v_nodes[j + 1] - self.v_nodes[j])
        lo = slab[i, j] + wi * (slab[i + 1, j] - slab[i, j])
        hi = slab[i, j + 1] + wi * (slab[i + 1, j + 1] - slab[i, j + 1])
        return lo + wj * (hi - lo)


def _grid_axes(params, initial, horizon, n_t, n_s, n_v, n_sigma):
    s_lo, s_hi, v_lo, v_hi = reachable_ranges(params, initial, horizon, n_sigma)
    t_nodes = np.linspace(0.0, horizon, n_t)
    # odd node counts put the initial state exactly on a node
    s_nodes = np.linspace(s_lo, s_hi, n_s)
    v_nodes = np.linspace(v_lo, v_hi, n_v)
    return t_nodes, s_nodes, v_nodes


def _price_cube(option, params, t_nodes, s_nodes, v_nodes, initial_time=0.0):
    n_t, n_s, n_v = len(t_nodes), len(s_nodes), len(v_nodes)
    ss, vv = np.meshgrid(s_nodes, v_nodes, indexing="ij")
    cube = np.empty((n_t, n_s, n_v))
    for k, t in enumerate(t_nodes):
        tau = option.maturity - (initial_time + t)
        cube[k] = heston_price_states(option, params, tau,
                                      ss.ravel(), vv.ravel()).reshape(n_s, n_v)
    return cube


def build_price_table(option: OptionSpec, params: StochVolParams,
                      initial: MarketState, horizon: float, n_t: int = 3,
                      n_s: int = 81, n_v: int = 41,
                      n_sigma: float = 6.0) -> StateGridTable:
    t_nodes, s_nodes, v_nodes = _grid_axes(params, initial, horizon,
                                           n_t, n_s, n_v, n_sigma)
    cube = _price_cube(option, params, t_nodes, s_nodes, v_nodes, initial.time)
    return StateGridTable(t_nodes, s_nodes, v_nodes, cube)


def build_delta_table(option: OptionSpec, params: StochVolParams,
                      initial: MarketState, horizon: float, n_t: int = 3,
                      n_s: int = 81, n_v: int = 41, n_sigma: float = 6.0,
                      rel_bump: float = 1e-3) -> StateGridTable:
    t_nodes, s_nodes, v_nodes = _grid_axes(params, initial, horizon,
                                           n_t, n_s, n_v, n_sigma)
    h = rel_bump * initial.spot
    up = _price_cube(option, params, t_nodes, s_nodes + h, v_nodes, initial.time)
    dn = _price_cube(option, params, t_nodes, s_nodes - h, v_nodes, initial.time)
    return StateGridTable(t_nodes, s_nodes, v_nodes, (up - dn) / (2.0 * h))


def build_vega_table(option: OptionSpec, params: StochVolParams,
                     initial: MarketState, horizon: float, n_t: int = 3,
                     n_s: int = 41, n_v: int = 41, n_sigma: float = 6.0,
                     bump: float = 1e-2) -> StateGridTable:
    """Table of the sqrt-variance sensitivity over reachable states."""
    t_nodes, s_nodes, v_nodes = _grid_axes(params, initial, horizon,
                                           n_t, n_s, n_v, n_sigma)
    if math.sqrt(v_nodes[0]) - bump <= 0:
        raise ValueError("vega bump too large for the variance grid")
    up_nodes = (np.sqrt(v_nodes) + bump) ** 2
    dn_nodes = (np.sqrt(v_nodes) - bump) ** 2
    up = _price_cube(option, params, t_nodes, s_nodes, up_nodes, initial.time)
    dn = _price_cube(option, params, t_nodes, s_nodes, dn_nodes, initial.time)
    return StateGridTable(t_nodes, s_nodes, v_nodes, (up - dn) / (2.0 * bump))
