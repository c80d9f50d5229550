"""First-order value correction for the drift of option vegas.

The reduced value function freezes every option's vega at its initial value.
Along a real trajectory the instantaneous vegas move with (t, S, nu), and the
first-order effect on the objective admits an expectation representation:
with W(t,S,nu,q) = sum_i q_i (true_vega_i(t,S,nu) - frozen_vega_i),

    phi(t,S,nu,q) = E[ integral_t^T ( (a_p - a_q)/(2 sqrt(nu_s)) * W_s
                                       - (gamma xi^2 / 4) * W_s * Vpi_s ) ds ]

where Vpi is the frozen-vega portfolio vega and the expectation runs over
paths whose inventory jumps at the tilted arrival rates Lambda_i(delta*)
implied by the solved value function, with no risk limit on the inventory
(value lookups beyond the vega grid clamp at its edge).  The module builds
the true-vega lookup tables, evaluates phi by vectorised Monte Carlo, and
reports the estimate with its standard error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .hjb import OptionBook, SIDES, TraderConfig, ValueFunction, side_sign
from .model import MarketState, StochVolParams, diffusion_step
from .tables import StateGridTable, build_vega_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VegaDeviationField:
    """Per-option true-vega tables plus the frozen vegas they deviate from."""

    tables: tuple[StateGridTable, ...]
    base_vegas: np.ndarray

    def __post_init__(self):
        if len(self.tables) != len(self.base_vegas):
            raise ValueError("one table per frozen vega required")

    @property
    def n_options(self) -> int:
        return len(self.tables)

    def vega(self, i: int, t: float, spot, variance):
        return self.tables[i].at(t, spot, variance)

    def deviation(self, t: float, spot, variance, inventory) -> np.ndarray:
        """W = sum_i q_i (vega_i(t, S, nu) - frozen_i); inventory is (..., N)."""
        inventory = np.asarray(inventory, dtype=float)
        out = np.zeros(np.shape(spot), dtype=float)
        for i in range(self.n_options):
            q_i = inventory[..., i]
            if np.any(q_i != 0.0):
                out = out + q_i * (self.vega(i, t, spot, variance)
                                   - self.base_vegas[i])
        return out

    def scale_deviation(self, c: float) -> "VegaDeviationField":
        """Field with the deviation from the frozen vegas scaled by c."""
        tables = tuple(
            replace(tab, values=self.base_vegas[i]
                    + c * (tab.values - self.base_vegas[i]))
            for i, tab in enumerate(self.tables)
        )
        return VegaDeviationField(tables=tables, base_vegas=self.base_vegas)


def build_vega_tables(book: OptionBook, params: StochVolParams,
                      initial: MarketState, horizon: float, *, n_t: int = 5,
                      n_s: int = 81, n_v: int = 21,
                      n_sigma: float = 6.0) -> VegaDeviationField:
    """True-vega tables over the state range reachable within the horizon."""
    tables = tuple(
        build_vega_table(opt, params, initial, horizon, n_t=n_t, n_s=n_s,
                         n_v=n_v, n_sigma=n_sigma)
        for opt in book.options
    )
    return VegaDeviationField(tables=tables,
                              base_vegas=np.asarray(book.vegas, dtype=float))


@dataclass(frozen=True)
class PhiEstimate:
    value: float
    stderr: float
    n_paths: int
    seed: int
    flagged: bool
    intensity_min: float
    intensity_max: float
    mean_fills: float


def phi(t: float, spot: float, variance: float, inventory,
        vf: ValueFunction, field: VegaDeviationField, params: StochVolParams,
        book: OptionBook, trader: TraderConfig, *, n_paths: int = 4096,
        seed: int = 0, n_steps: int | None = None,
        stderr_tol: float | None = None) -> PhiEstimate:
    """Monte-Carlo estimate of the first-order correction from (t, S, nu, q).

    Paths diffuse under the historical measure; the inventory of option i
    jumps by +-z_i at the tilted rate Lambda_i(delta*_i(p)) read off the
    value function, with no risk limit.  The time integral uses the left
    endpoint of each step.  An estimate whose standard error exceeds
    `stderr_tol` is flagged, never silently returned.
    """
    n = book.n_options
    q0 = np.asarray(inventory, dtype=float)
    if q0.shape != (n,):
        raise ValueError(f"inventory must have one entry per option, got "
                         f"shape {q0.shape}")
    remaining = trader.horizon - t
    if remaining < 0:
        raise ValueError("query time is beyond the trading horizon")
    if remaining == 0.0:
        return PhiEstimate(0.0, 0.0, n_paths, seed, False,
                           math.inf, -math.inf, 0.0)
    if n_steps is None:
        n_steps = max(1, int(round(remaining / 1e-6)))
    dt = remaining / n_steps

    rng = np.random.default_rng(seed)
    vegas0 = np.asarray(book.vegas, dtype=float)
    zs = np.array([law.z for law in book.sizes])
    gamma_term = trader.gamma * params.xi**2 / 4.0

    s = np.full(n_paths, float(spot))
    var_raw = np.full(n_paths, float(variance))
    q = np.tile(q0, (n_paths, 1))
    integral = np.zeros(n_paths)
    fills = np.zeros(n_paths)
    lam_lo = math.inf
    lam_hi = -math.inf
    warm: dict[tuple[int, int], np.ndarray | None] = {
        (i, s_idx): None for i in range(n) for s_idx in range(2)}
    coarse_warned = False

    for k in range(n_steps):
        t_k = t + k * dt
        v_pos = np.maximum(var_raw, 0.0)
        u_fill = rng.uniform(size=(n_paths, n, 2))
        z_s = rng.standard_normal(n_paths)
        z_p = rng.standard_normal(n_paths)

        v_frozen = q @ vegas0
        dev = field.deviation(t_k, s, v_pos, q)
        drift_gap = (params.drift_p.rate(v_pos) - params.drift_q.rate(v_pos))
        integrand = (drift_gap / (2.0 * np.sqrt(v_pos)) * dev
                     - gamma_term * dev * v_frozen)
        integral += integrand * dt

        here = vf.value_batch(t_k, v_pos, v_frozen)
        for i in range(n):
            jump_abs = book.vega_jump(i)
            for s_idx, side in enumerate(SIDES):
                target = v_frozen - side_sign(side) * jump_abs
                there = vf.value_batch(t_k, v_pos, target)
                p = (here - there) / zs[i]
                curve = book.curves[i][s_idx]
                d_star = curve.delta_star(p, trader.delta_floor,
                                          warm=warm[(i, s_idx)])
                warm[(i, s_idx)] = np.asarray(d_star, dtype=float)
                lam = np.maximum(np.asarray(curve.value(d_star)), 0.0)
                lam_lo = min(lam_lo, float(lam.min()))
                lam_hi = max(lam_hi, float(lam.max()))
                prob = lam * dt
                if not coarse_warned and float(prob.max()) > 0.1:
                    logger.warning(
                        "correction time step is coarse: per-step fill "
                        "probability %.3f", float(prob.max()))
                    coarse_warned = True
                hit = u_fill[:, i, s_idx] < prob
                if np.any(hit):
                    q[hit, i] += -side_sign(side) * zs[i]
                    fills[hit] += 1.0
        s, var_raw = diffusion_step(s, var_raw, dt, z_s, z_p, params, "P")

    value = float(np.mean(integral))
    stderr = (float(np.std(integral, ddof=1) / math.sqrt(n_paths))
              if n_paths > 1 else float("nan"))
    flagged = stderr_tol is not None and not (stderr <= stderr_tol)
    if flagged:
        logger.warning("phi standard error %.3g exceeds tolerance %.3g",
                       stderr, stderr_tol)
    return PhiEstimate(
        value=value, stderr=stderr, n_paths=n_paths, seed=seed,
        flagged=flagged, intensity_min=lam_lo, intensity_max=lam_hi,
        mean_fills=float(np.mean(fills)),
    )
