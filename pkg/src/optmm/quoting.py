"""Quote intensity curves and the per-stream Hamiltonian transform.

An intensity curve maps a mid-to-quote distance delta (currency per contract)
to the arrival rate of client fills at that quote.  Admissible curves are
positive, strictly decreasing, twice differentiable, vanish at +infinity and
satisfy sup_delta Lambda * Lambda'' / Lambda'^2 < 2; that bound makes

    H(p) = sup_{delta >= floor} Lambda(delta) * (delta - p)

well defined with a unique unclipped maximiser, because the first-order
condition rewritten as f(delta) = delta - p + Lambda/Lambda' has slope
f' = 2 - Lambda*Lambda''/Lambda'^2 > 0.  Two families are provided: the
logistic curve lam / (1 + exp(alpha + slope*delta)) and the exponential curve
scale * exp(-decay*delta), which admits closed forms used as test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class RootSolveError(RuntimeError):
    """Raised when the quote first-order condition cannot be solved."""


_FOC_TOL = 1e-10
_MAX_NEWTON = 60
_MAX_BISECT = 200


@dataclass(frozen=True)
class TradeSizeLaw:
    """Trade size distribution; a Dirac mass at z contracts per fill."""

    z: float
    law: str = "point_mass"

    def __post_init__(self):
        if not (self.z > 0 and math.isfinite(self.z)):
            raise ValueError(f"trade size must be positive, got {self.z}")
        if self.law != "point_mass":
            raise ValueError("only point-mass size laws are supported")


@dataclass(frozen=True)
class IntensityCurve:
    """One admissible fill-intensity curve (single option, single side)."""

    family: str
    lambda_max: float = 0.0   # logistic: rate cap
    alpha: float = 0.0        # logistic: intercept
    slope: float = 0.0        # logistic: slope in 1/currency (beta over vega)
    scale: float = 0.0        # exponential: level at delta = 0
    decay: float = 0.0        # exponential: decay in 1/currency

    @classmethod
    def logistic(cls, lambda_max: float, alpha: float, slope: float) -> "IntensityCurve":
        return cls(family="logistic", lambda_max=lambda_max, alpha=alpha, slope=slope)

    @classmethod
    def exponential(cls, scale: float, decay: float) -> "IntensityCurve":
        return cls(family="exponential", scale=scale, decay=decay)

    def __post_init__(self):
        if self.family == "logistic":
            if not (self.lambda_max > 0 and self.slope > 0):
                raise ValueError("logistic curve needs lambda_max > 0 and slope > 0")
        elif self.family == "exponential":
            if not (self.scale > 0 and self.decay > 0):
                raise ValueError("exponential curve needs scale > 0 and decay > 0")
        else:
            raise ValueError(f"unknown intensity family {self.family!r}")
        self._audit_shape()

    # -- curve values -------------------------------------------------------

    def value(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.family == "logistic":
            out = self.lambda_max * expit(-(self.alpha + self.slope * delta))
        else:
            out = self.scale * np.exp(-self.decay * delta)
        return out if out.ndim else float(out)

    def derivative(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.family == "logistic":
            s = expit(-(self.alpha + self.slope * delta))
            out = -self.lambda_max * self.slope * s * (1.0 - s)
        else:
            out = -self.decay * self.scale * np.exp(-self.decay * delta)
        return out if out.ndim else float(out)

    def second_derivative(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.family == "logistic":
            s = expit(-(self.alpha + self.slope * delta))
            out = self.lambda_max * self.slope**2 * s * (1.0 - s) * (1.0 - 2.0 * s)
        else:
            out = self.decay**2 * self.scale * np.exp(-self.decay * delta)
        return out if out.ndim else float(out)

    def inverse(self, intensity):
        """delta at which the curve equals `intensity` (must be in range)."""
        intensity = np.asarray(intensity, dtype=float)
        if self.family == "logistic":
            if np.any(intensity <= 0) or np.any(intensity >= self.lambda_max):
                raise ValueError("intensity outside the logistic range")
            out = (np.log(self.lambda_max / intensity - 1.0) - self.alpha) / self.slope
        else:
            if np.any(intensity <= 0):
                raise ValueError("intensity must be positive")
            out = np.log(self.scale / intensity) / self.decay
        return out if out.ndim else float(out)

    def characteristic_slope(self) -> float:
        return self.slope if self.family == "logistic" else self.decay

    def dominating_rate(self, delta_floor: float) -> float:
        """Upper bound of the curve on [delta_floor, inf), used for thinning.

        The logistic family is globally capped by lambda_max; the exponential
        family is only bounded on the admissible quote range.
        """
        if self.family == "logistic":
            return self.lambda_max
        return float(self.value(delta_floor))

    def _audit_shape(self):
        """Numerically audit the curve hypotheses on a wide delta grid.

        The grid spans +-30 characteristic widths, the largest range on which
        the logistic tail is still representable in float64.
        """
        span = 30.0 / self.characteristic_slope()
        grid = np.linspace(-span, span, 2001)
        lam = np.asarray(self.value(grid))
        lam1 = np.asarray(self.derivative(grid))
        lam2 = np.asarray(self.second_derivative(grid))
        if np.any(lam <= 0):
            raise ValueError("intensity curve must be strictly positive")
        if np.any(lam1 >= 0):
            raise ValueError("intensity curve must be strictly decreasing")
        ratio = lam * lam2 / lam1**2
        if not np.all(np.isfinite(ratio)) or np.max(ratio) >= 2.0:
            raise ValueError(
                "curve violates sup Lambda*Lambda''/Lambda'^2 < 2 "
                f"(max {np.max(ratio):.6f})"
            )

    # -- Hamiltonian transform ---------------------------------------------

    def _newton_unclipped(self, p: np.ndarray, warm: np.ndarray | None) -> np.ndarray:
        if self.family == "exponential":
            return p + 1.0 / self.decay
        b = self.slope
        delta = warm.copy() if warm is not None else p + 1.0 / b
        # f(d) = d - p - (1 + E)/b with E = exp(-(alpha + b d)); f' = 1 + E,
        # so the Newton step collapses to d - (d - p)/(1 + E) + 1/b.
        for _ in range(_MAX_NEWTON):
            with np.errstate(over="ignore"):
                e = np.exp(-(self.alpha + b * delta))
            new = delta - (delta - p) / (1.0 + e) + 1.0 / b
            done = np.abs(new - delta) <= 1e-14 * np.maximum(1.0, np.abs(new))
            delta = new
            if np.all(done):
                break
        bad = ~self._foc_ok(p, delta)
        if np.any(bad):
            delta[bad] = self._bisect(p[bad])
            still = ~self._foc_ok(p[bad], delta[bad])
            if np.any(still):
                raise RootSolveError(
                    f"{int(np.sum(still))} quote first-order conditions "
                    "unresolved after bisection fallback"
                )
        return delta

    def _foc_ok(self, p, delta):
        lam = np.asarray(self.value(delta))
        term = np.asarray(self.derivative(delta)) * (delta - p)
        residual = np.abs(lam + term)
        scale = np.maximum(1.0, np.maximum(lam, np.abs(term)))
        return residual <= _FOC_TOL * scale

    def _bisect(self, p: np.ndarray) -> np.ndarray:
        b = self.characteristic_slope()

        def f(d):
            with np.errstate(over="ignore"):
                e = np.exp(-(self.alpha + self.slope * d))
            return d - p - (1.0 + e) / self.slope

        lo = p - 1.0 / b
        hi = p + 2.0 / b
        for _ in range(_MAX_BISECT):
            mask = f(lo) > 0
            if not np.any(mask):
                break
            lo[mask] -= 1.0 / b * 2.0
        for _ in range(_MAX_BISECT):
            mask = f(hi) < 0
            if not np.any(mask):
                break
            hi[mask] += 1.0 / b * 2.0
        for _ in range(_MAX_BISECT):
            mid = 0.5 * (lo + hi)
            high = f(mid) > 0
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
        return 0.5 * (lo + hi)

    def delta_star(self, p, delta_floor: float, warm=None):
        """Optimal quote distance for reservation spread p, clipped at the floor."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float)).copy()
        warm_arr = None
        if warm is not None:
            warm_arr = np.atleast_1d(np.asarray(warm, dtype=float)).copy()
        unclipped = self._newton_unclipped(p_arr, warm_arr)
        clipped = np.maximum(unclipped, delta_floor)
        return clipped if np.ndim(p) else float(clipped[0])

    def hamiltonian_pair(self, p, delta_floor: float, warm=None):
        """Return (H(p), delta_star(p)) with the floor applied."""
        d = self.delta_star(p, delta_floor, warm=warm)
        h = self.value(d) * (np.asarray(d) - np.asarray(p, dtype=float))
        if np.ndim(p):
            return h, d
        return float(h), d


# -- free-function interface -------------------------------------------------

def intensity(curve: IntensityCurve, delta):
    """Fill intensity at quote distance delta (vector-ready)."""
    return curve.value(delta)


def hamiltonian(curve: IntensityCurve, p, delta_floor: float):
    """sup_{delta >= floor} Lambda(delta) * (delta - p)."""
    h, _ = curve.hamiltonian_pair(p, delta_floor)
    return h


def hamiltonian_prime(curve: IntensityCurve, p, delta_floor: float):
    """dH/dp = -Lambda(delta_star(p)) by the envelope theorem."""
    d = curve.delta_star(p, delta_floor)
    out = -np.asarray(curve.value(d))
    return out if np.ndim(p) else float(out)


def optimal_quote(curve: IntensityCurve, p, delta_floor: float):
    """The maximiser itself: max(floor, unclipped root of the FOC)."""
    return curve.delta_star(p, delta_floor)
