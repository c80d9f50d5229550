"""Backward solver for the reduced quoting value function and its policy.

Under a constant-vega approximation of the book, the trader's value function
depends on time, instantaneous variance and the portfolio vega only.  It
solves, backward from a zero terminal condition,

    0 = dv/dt + a_p(v_t) dv/dnu + 0.5 nu xi^2 d2v/dnu2
        + V * (a_p - a_q) / (2 sqrt(nu)) - (gamma xi^2 / 8) V^2
        + sum_{i,side} z_i * 1{post-trade vega within limit}
            * H_i((v(t,nu,V) - v(t,nu,V -+ z_i vega_i)) / z_i)

where V is the portfolio vega, the bid side shifts V up by z_i*vega_i and the
ask side down, and H_i is the quoting Hamiltonian of that option's intensity
curve.  The scheme is an explicit Euler step in time, monotone upwind for the
nu advection, central differences with first-order (ghost node) Neumann
boundaries for the nu diffusion, and linear interpolation along the vega axis
for the jump targets.  The explicit-step CFL bound is validated before
marching; violations abort unless auto refinement is requested.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import OptionSpec
from .quoting import IntensityCurve, TradeSizeLaw

logger = logging.getLogger(__name__)

_MAGIC = b"OPTION-MM-VALFN\x00"
_VERSION = 1


class CFLViolation(RuntimeError):
    """Raised when the requested time step breaks the explicit-scheme bound."""


@dataclass(frozen=True)
class TraderConfig:
    """Risk and quoting configuration of the market maker."""

    gamma: float          # running vega-risk penalty weight
    delta_floor: float    # lowest admissible quote distance, in currency
    vega_limit: float     # hard cap on |portfolio vega|
    horizon: float        # trading horizon in years

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not (self.vega_limit > 0):
            raise ValueError("vega_limit must be positive")
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        if not math.isfinite(self.delta_floor):
            raise ValueError("delta_floor must be finite")


@dataclass(frozen=True)
class OptionBook:
    """Quoted options with their frozen vegas, sizes and intensity curves.

    `vegas` are the sqrt-variance sensitivities frozen at the initial state;
    `curves[i]` holds the (bid, ask) intensity curves of option i.
    """

    options: tuple[OptionSpec, ...]
    vegas: np.ndarray
    sizes: tuple[TradeSizeLaw, ...]
    curves: tuple[tuple[IntensityCurve, IntensityCurve], ...]

    def __post_init__(self):
        n = len(self.options)
        if n == 0:
            raise ValueError("book must contain at least one option")
        if not (len(self.vegas) == len(self.sizes) == len(self.curves) == n):
            raise ValueError("book fields must have one entry per option")
        if np.any(np.asarray(self.vegas) <= 0):
            raise ValueError("every frozen vega must be positive")

    @property
    def n_options(self) -> int:
        return len(self.options)

    def vega_jump(self, i: int) -> float:
        """Portfolio-vega step of one fill in option i."""
        return self.sizes[i].z * float(self.vegas[i])


SIDES = ("bid", "ask")


def side_sign(side: str) -> int:
    """+1 for ask, -1 for bid: a bid fill adds z*vega to the portfolio."""
    if side == "ask":
        return 1
    if side == "bid":
        return -1
    raise ValueError(f"unknown side {side!r}")


def validate_book_trader(book: OptionBook, trader: TraderConfig) -> None:
    for opt in book.options:
        if opt.maturity <= trader.horizon:
            raise ValueError(
                f"option maturity {opt.maturity} does not outlive the "
                f"trading horizon {trader.horizon}"
            )
    if not any(book.vega_jump(i) < 2.0 * trader.vega_limit
               for i in range(book.n_options)):
        raise ValueError("every option's vega jump exceeds twice the risk limit")


@dataclass(frozen=True)
class SolverGrid:
    """Uniform (time, nu, vega) grid; vega nodes symmetric about zero."""

    n_time: int
    nu_nodes: np.ndarray
    vega_nodes: np.ndarray

    def __post_init__(self):
        if self.n_time < 1:
            raise ValueError("n_time must be at least 1")
        nu = np.asarray(self.nu_nodes, dtype=float)
        vg = np.asarray(self.vega_nodes, dtype=float)
        if nu.ndim != 1 or nu.size < 2 or vg.ndim != 1 or vg.size < 2:
            raise ValueError("nu and vega axes need at least two nodes")
        for name, ax in (("nu", nu), ("vega", vg)):
            d = np.diff(ax)
            if np.any(d <= 0):
                raise ValueError(f"{name} nodes must be strictly increasing")
            if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
                raise ValueError(f"{name} nodes must be uniformly spaced")
        if np.any(nu <= 0):
            raise ValueError("nu nodes must be positive")
        if not np.allclose(vg + vg[::-1], 0.0, atol=1e-9 * float(vg[-1])):
            raise ValueError("vega nodes must be symmetric about zero")

    @classmethod
    def regular(cls, n_time: int, nu_min: float, nu_max: float, n_nu: int,
                vega_limit: float, n_vega: int) -> "SolverGrid":
        return cls(
            n_time=n_time,
            nu_nodes=np.linspace(nu_min, nu_max, n_nu),
            vega_nodes=np.linspace(-vega_limit, vega_limit, n_vega),
        )

    @property
    def d_nu(self) -> float:
        return float(self.nu_nodes[1] - self.nu_nodes[0])

    @property
    def d_vega(self) -> float:
        return float(self.vega_nodes[1] - self.vega_nodes[0])


@dataclass(frozen=True)
class ValueFunction:
    """Solved value table on the grid, with interpolation accessors.

    `values` has shape (n_time+1, n_nu, n_vega) and `values[-1]` is the
    terminal slice.  Lookups interpolate linearly in time and bilinearly in
    (nu, vega); nu and vega queries outside the grid are clamped (with a log
    warning for nu, whose grid is a modelling choice rather than a hard
    domain boundary).
    """

    grid: SolverGrid
    horizon: float
    values: np.ndarray

    def __post_init__(self):
        expected = (self.grid.n_time + 1, len(self.grid.nu_nodes),
                    len(self.grid.vega_nodes))
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.grid.n_time + 1)

    def _time_blend(self, t: float) -> np.ndarray:
        dt = self.horizon / self.grid.n_time
        x = min(max(t / dt, 0.0), float(self.grid.n_time))
        k = min(int(x), self.grid.n_time - 1)
        w = x - k
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def value_batch(self, t: float, nu, vega) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        vega = np.asarray(vega, dtype=float)
        slab = self._time_blend(t)
        nug = self.grid.nu_nodes
        vgg = self.grid.vega_nodes
        if np.any(nu < nug[0] - 1e-12 * abs(nug[0])) or \
           np.any(nu > nug[-1] + 1e-12 * abs(nug[-1])):
            logger.warning("variance query outside the solver grid; clamping")
        nu_c = np.clip(nu, nug[0], nug[-1])
        vg_c = np.clip(vega, vgg[0], vgg[-1])
        i = np.clip(np.searchsorted(nug, nu_c, side="right") - 1, 0, len(nug) - 2)
        j = np.clip(np.searchsorted(vgg, vg_c, side="right") - 1, 0, len(vgg) - 2)
        wi = (nu_c - nug[i]) / (nug[i + 1] - nug[i])
        wj = (vg_c - vgg[j]) / (vgg[j + 1] - vgg[j])
        return ((1 - wi) * (1 - wj) * slab[i, j]
                + wi * (1 - wj) * slab[i + 1, j]
                + (1 - wi) * wj * slab[i, j + 1]
                + wi * wj * slab[i + 1, j + 1])

    def value_at(self, t: float, nu: float, vega: float) -> float:
        return float(self.value_batch(t, np.atleast_1d(nu), np.atleast_1d(vega))[0])


def value_at(vf: ValueFunction, t: float, nu: float, vega: float) -> float:
    return vf.value_at(t, nu, vega)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def cfl_number(params, trader: TraderConfig, grid: SolverGrid) -> float:
    """Explicit-step stability number from advection and diffusion in nu."""
    nu = grid.nu_nodes
    a_p = params.drift_p.rate(nu)
    dt = trader.horizon / grid.n_time
    return float(dt * np.max(np.abs(a_p) / grid.d_nu
                             + nu * params.xi**2 / grid.d_nu**2))


def _jump_stencils(book: OptionBook, trader: TraderConfig, grid: SolverGrid):
    """Per (option, side): admissible nodes and interp weights of the target.

    A fill moves the portfolio vega from V to V - sign*z*vega; nodes whose
    target leaves [-vega_limit, vega_limit] are excluded by the risk
    indicator.  The grid spans exactly that interval, so every admissible
    target interpolates without extrapolation.
    """
    vg = grid.vega_nodes
    tol = 1e-9 * trader.vega_limit
    stencils = []
    for i in range(book.n_options):
        jump = book.vega_jump(i)
        for side in SIDES:
            target = vg - side_sign(side) * jump
            adm = np.abs(target) <= trader.vega_limit + tol
            tgt = np.clip(target[adm], vg[0], vg[-1])
            lo = np.clip(np.searchsorted(vg, tgt, side="right") - 1, 0, len(vg) - 2)
            w = (tgt - vg[lo]) / (vg[lo + 1] - vg[lo])
            stencils.append((i, side, np.nonzero(adm)[0], lo, w))
    return stencils


def solve(params, book: OptionBook, trader: TraderConfig, grid: SolverGrid,
          auto_refine: bool = False,
          terminal: np.ndarray | None = None) -> ValueFunction:
    """March the reduced equation backward from v(T, ., .) = `terminal`.

    The terminal slice defaults to zero (the trader's natural horizon
    condition); a caller-supplied (n_nu, n_vega) array replaces it, which is
    mainly useful for studying how the scheme propagates perturbations.

    With auto_refine the number of time steps is increased to meet the CFL
    bound instead of aborting.  The Hamiltonian root solves are warm-started
    from the previous time slice, which keeps the Newton iterations short.
    """
    validate_book_trader(book, trader)
    vg = grid.vega_nodes
    if not (math.isclose(vg[0], -trader.vega_limit, rel_tol=1e-9)
            and math.isclose(vg[-1], trader.vega_limit, rel_tol=1e-9)):
        raise ValueError("vega axis must span [-vega_limit, vega_limit]")

    n_time = grid.n_time
    number = cfl_number(params, trader, grid)
    if number > 1.0:
        if auto_refine:
            n_time = int(math.ceil(grid.n_time * number * 1.05))
            logger.info("CFL %.3f > 1; refining time axis to %d steps",
                        number, n_time)
            grid = SolverGrid(n_time=n_time, nu_nodes=grid.nu_nodes,
                              vega_nodes=grid.vega_nodes)
        else:
            raise CFLViolation(
                f"explicit step unstable: CFL={number:.4f} with n_time="
                f"{grid.n_time}; need at least "
                f"{int(math.ceil(grid.n_time * number))} steps or auto_refine"
            )

    nu = grid.nu_nodes
    dt = trader.horizon / n_time
    d_nu = grid.d_nu
    a_p = params.drift_p.rate(nu)[:, None]
    a_q = params.drift_q.rate(nu)[:, None]
    a_pos = np.maximum(a_p, 0.0)
    a_neg = np.minimum(a_p, 0.0)
    half_diff = 0.5 * nu[:, None] * params.xi**2
    source = (vg[None, :] * (a_p - a_q) / (2.0 * np.sqrt(nu)[:, None])
              - trader.gamma * params.xi**2 / 8.0 * vg[None, :] ** 2)

    stencils = _jump_stencils(book, trader, grid)
    warm: dict[int, np.ndarray | None] = {k: None for k in range(len(stencils))}

    values = np.empty((n_time + 1, len(nu), len(vg)))
    if terminal is None:
        values[n_time] = 0.0
    else:
        terminal = np.asarray(terminal, dtype=float)
        if terminal.shape != (len(nu), len(vg)):
            raise ValueError(
                f"terminal slice must have shape {(len(nu), len(vg))}, "
                f"got {terminal.shape}"
            )
        values[n_time] = terminal
    for k in range(n_time - 1, -1, -1):
        v = values[k + 1]
        padded = np.vstack([v[:1], v, v[-1:]])  # Neumann ghost rows in nu
        fwd = (padded[2:] - padded[1:-1]) / d_nu
        bwd = (padded[1:-1] - padded[:-2]) / d_nu
        advection = a_pos * fwd + a_neg * bwd
        diffusion = half_diff * (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / d_nu**2
        total = v + dt * (advection + diffusion + source)
        for s_idx, (i, side, adm, lo, w) in enumerate(stencils):
            if adm.size == 0:
                continue
            z = book.sizes[i].z
            shifted = v[:, lo] * (1.0 - w)[None, :] + v[:, lo + 1] * w[None, :]
            p = (v[:, adm] - shifted) / z
            curve = book.curves[i][0 if side == "bid" else 1]
            flat = p.ravel()
            h, d_star = curve.hamiltonian_pair(flat, trader.delta_floor,
                                               warm=warm[s_idx])
            warm[s_idx] = np.asarray(d_star, dtype=float)
            total[:, adm] += dt * z * np.asarray(h).reshape(p.shape)
        values[k] = total
    return ValueFunction(grid=grid, horizon=trader.horizon, values=values)


# ---------------------------------------------------------------------------
# Quote policy
# ---------------------------------------------------------------------------

@dataclass
class QuotePolicy:
    """Optimal quote distances read off a solved value function.

    For option i the bid (ask) spread at state (t, nu, V) is the curve's
    maximiser at reservation spread p = (v(t,nu,V) - v(t,nu,V +- z*vega))/z;
    states where the fill would breach the vega limit return NaN, the
    distinguished no-quote marker.
    """

    vf: ValueFunction
    book: OptionBook
    trader: TraderConfig
    _warm: dict = field(default_factory=dict, repr=False)

    def reservation_spread(self, i: int, side: str, t: float, nu, vega):
        z = self.book.sizes[i].z
        vega = np.asarray(vega, dtype=float)
        target = vega + side_sign(side) * (-self.book.vega_jump(i))
        here = self.vf.value_batch(t, nu, vega)
        there = self.vf.value_batch(t, nu, np.clip(
            target, -self.trader.vega_limit, self.trader.vega_limit))
        return (here - there) / z

    def admissible(self, i: int, side: str, vega):
        vega = np.asarray(vega, dtype=float)
        post = vega - side_sign(side) * self.book.vega_jump(i)
        return np.abs(post) <= self.trader.vega_limit * (1.0 + 1e-12)

    def quote_batch(self, i: int, side: str, t: float, nu, vega) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        vega = np.asarray(vega, dtype=float)
        ok = self.admissible(i, side, vega)
        out = np.full(vega.shape, np.nan)
        if not np.any(ok):
            return out
        p = self.reservation_spread(i, side, t, nu[ok] if nu.shape == vega.shape
                                    else nu, vega[ok])
        curve = self.book.curves[i][0 if side == "bid" else 1]
        out[ok] = curve.delta_star(p, self.trader.delta_floor)
        return out

    def quote(self, i: int, side: str, t: float, nu: float, vega: float) -> float:
        return float(self.quote_batch(i, side, t, np.atleast_1d(float(nu)),
                                      np.atleast_1d(float(vega)))[0])

    def quote_table(self, t: float, nu: float) -> np.ndarray:
        """Quotes on the vega axis: shape (n_options, 2, n_vega), NaN = no quote."""
        vg = self.vf.grid.vega_nodes
        nus = np.full(vg.shape, float(nu))
        out = np.empty((self.book.n_options, 2, len(vg)))
        for i in range(self.book.n_options):
            for s_idx, side in enumerate(SIDES):
                out[i, s_idx] = self.quote_batch(i, side, t, nus, vg)
        return out


def quote_policy(vf: ValueFunction, book: OptionBook,
                 trader: TraderConfig) -> QuotePolicy:
    validate_book_trader(book, trader)
    return QuotePolicy(vf=vf, book=book, trader=trader)


# ---------------------------------------------------------------------------
# Artifact export / import
# ---------------------------------------------------------------------------

def value_function_bytes(vf: ValueFunction) -> bytes:
    """Serialise: 16-byte magic, version byte, dims, axes, row-major float64."""
    nt, n_nu, n_vega = vf.values.shape
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<B", _VERSION))
    buf.write(struct.pack("<III", nt, n_nu, n_vega))
    buf.write(struct.pack("<d", vf.horizon))
    buf.write(np.ascontiguousarray(vf.grid.nu_nodes, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(vf.grid.vega_nodes, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(vf.values, dtype="<f8").tobytes())
    return buf.getvalue()


def value_function_from_bytes(raw: bytes) -> ValueFunction:
    if raw[:16] != _MAGIC:
        raise ValueError("not a value-function artifact (bad magic)")
    version = raw[16]
    if version != _VERSION:
        raise ValueError(f"unsupported artifact version {version}")
    nt, n_nu, n_vega = struct.unpack_from("<III", raw, 17)
    (horizon,) = struct.unpack_from("<d", raw, 29)
    off = 37
    nu = np.frombuffer(raw, dtype="<f8", count=n_nu, offset=off).copy()
    off += 8 * n_nu
    vg = np.frombuffer(raw, dtype="<f8", count=n_vega, offset=off).copy()
    off += 8 * n_vega
    vals = np.frombuffer(raw, dtype="<f8", count=nt * n_nu * n_vega,
                         offset=off).copy().reshape(nt, n_nu, n_vega)
    grid = SolverGrid(n_time=nt - 1, nu_nodes=nu, vega_nodes=vg)
    return ValueFunction(grid=grid, horizon=horizon, values=vals)


def save_value_function(vf: ValueFunction, path) -> None:
    with open(path, "wb") as fh:
        fh.write(value_function_bytes(vf))


def load_value_function(path) -> ValueFunction:
    with open(path, "rb") as fh:
        return value_function_from_bytes(fh.read())


def artifact_id(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()[:16]


def value_function_csv(vf: ValueFunction, t_index: int | None = None) -> str:
    """CSV table (t_index, nu_index, vega_index, value); optionally one slice."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t_index", "nu_index", "vega_index", "value"])
    t_range = range(vf.values.shape[0]) if t_index is None else [t_index]
    for k in t_range:
        for m in range(vf.values.shape[1]):
            for l in range(vf.values.shape[2]):
                writer.writerow([k, m, l, f"{vf.values[k, m, l]:.12g}"])
    return out.getvalue()
