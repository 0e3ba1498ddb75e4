"""Post-intervention exposure distributions g_delta.

Exposure integrals are written as weighted sums over an
:class:`ExposureSupport`: the points {0, 1} with unit weights for a binary
exposure, trapezoid weights on an even grid for a continuous one, and unit
weights on a finite set of points for a discrete exposure (counting measure).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from stochmed.exceptions import DomainError, NormalizerOverflow
from stochmed.model import ExposureKind, InterventionKind, InterventionSpec

#: Number of points in the continuous-exposure quadrature grid.
GRID_POINTS: int = 512

#: A non-binary exposure with at most this many distinct values gets a
#: discrete support (counting measure) instead of a quadrature grid.
DISCRETE_MAX_LEVELS: int = 16

#: Largest |delta * a| accepted before exponentiation in a tilt.
TILT_EXPONENT_CAP: float = 30.0


@dataclass(frozen=True)
class ExposureSupport:
    points: np.ndarray
    weights: np.ndarray
    kind: str  # "binary", "grid" or "discrete"

    @classmethod
    def binary(cls) -> "ExposureSupport":
        return cls(np.array([0.0, 1.0]), np.array([1.0, 1.0]), "binary")

    @classmethod
    def discrete(cls, points) -> "ExposureSupport":
        pts = np.unique(np.asarray(points, dtype=float))
        return cls(pts, np.ones_like(pts), "discrete")

    @classmethod
    def grid(cls, lo: float, hi: float, size: int = GRID_POINTS) -> "ExposureSupport":
        if not hi > lo:
            raise DomainError(f"empty grid [{lo}, {hi}]")
        pts = np.linspace(lo, hi, size)
        h = pts[1] - pts[0]
        w = np.full(size, h)
        w[0] = w[-1] = h / 2
        return cls(pts, w, "grid")

    @classmethod
    def for_data(
        cls, A, kind: ExposureKind, pad: float = 0.0, max_levels: int = DISCRETE_MAX_LEVELS
    ) -> "ExposureSupport":
        """Support used for a dataset.

        {0, 1} for a binary exposure, the observed values when there are at
        most ``max_levels`` of them, and otherwise a grid over
        [min A - pad, max A + pad].
        """
        if kind is ExposureKind.BINARY:
            return cls.binary()
        A = np.asarray(A, dtype=float)
        levels = np.unique(A)
        if levels.size <= max_levels:
            return cls.discrete(levels)
        return cls.grid(A.min() - pad, A.max() + pad)

    @property
    def is_continuous(self) -> bool:
        return self.kind == "grid"

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate values laid out as (n_points, ...) along the first axis."""
        return np.tensordot(self.weights, values, axes=(0, 0))


# =============================================================================
# Incremental propensity score
# =============================================================================


def ips_gdelta(g1w, delta_prime):
    """Propensity after multiplying the odds of exposure by ``delta_prime``."""
    g1w = np.asarray(g1w, dtype=float)
    if np.any(delta_prime <= 0):
        raise DomainError(f"odds multiplier must be positive, got {delta_prime}")
    if np.any((g1w <= 0) | (g1w >= 1)):
        raise DomainError("propensity must lie strictly inside (0, 1)")
    out = delta_prime * g1w / (delta_prime * g1w + 1.0 - g1w)
    return float(out) if out.ndim == 0 else out


# =============================================================================
# Exponential tilt
# =============================================================================


def tilt_weights(delta: float, points: np.ndarray) -> np.ndarray:
    """exp(delta * a) on the support, refusing exponents past the cap."""
    expo = delta * np.asarray(points, dtype=float)
    if np.any(np.abs(expo) > TILT_EXPONENT_CAP):
        raise NormalizerOverflow(
            f"|delta * a| reaches {np.abs(expo).max():.3g} > {TILT_EXPONENT_CAP}; rescale A or reduce delta"
        )
    return np.exp(expo)


def tilt_gdelta(g: Callable, delta: float, support: ExposureSupport) -> Tuple[Callable, float]:
    """Tilt a single conditional law a -> g(a) by exp(delta * a).

    Returns the tilted density as a callable together with the normalizer
    c = 1 / integral(exp(delta a) g(a)).
    """
    mass = support.integrate(tilt_weights(delta, support.points) * np.asarray(g(support.points), dtype=float))
    c = 1.0 / float(mass)

    def g_delta(a):
        a = np.asarray(a, dtype=float)
        return c * tilt_weights(delta, a) * np.asarray(g(a), dtype=float)

    return g_delta, c


# =============================================================================
# Modified treatment policy (two-piece shift)
# =============================================================================


def apply_policy(a, l, delta):
    """Shift exposure down by ``delta`` unless that would cross the lower bound."""
    a = np.asarray(a, dtype=float)
    out = np.where(a > l + delta, a - delta, a)
    return float(out) if out.ndim == 0 else out


def shift_gdelta(g: Callable, l, u, delta: float, a):
    """Density of the shifted exposure at ``a`` for a two-piece shift policy.

    ``g`` is the natural conditional density a -> g(a). ``l`` and ``u`` bound
    its support and may be arrays aligned with ``a``.
    """
    a = np.asarray(a, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u <= l):
        raise DomainError("upper bound must exceed lower bound")
    if delta <= 0 or np.any(delta >= u - l):
        raise DomainError(f"shift {delta} outside (0, u - l)")
    stay = (l <= a) & (a <= l + delta)
    moved = (l <= a) & (a <= u - delta)
    out = np.where(stay, g(a), 0.0) + np.where(moved, g(a + delta), 0.0)
    return float(out) if out.ndim == 0 else out


def shift_pushforward(g_values: np.ndarray, points: np.ndarray, l, delta: float) -> np.ndarray:
    """Law of the shifted exposure on a finite support (counting measure).

    ``g_values`` has shape (n_points, n_rows); ``l`` is broadcast per row.
    Mass at each support point is moved to the policy image of that point.
    """
    out = np.zeros_like(g_values)
    l = np.broadcast_to(np.asarray(l, dtype=float), g_values.shape[1:])
    for k, a in enumerate(points):
        target = apply_policy(np.full(l.shape, a), l, delta)
        idx = np.searchsorted(points, target)
        if np.any(idx >= len(points)) or np.any(~np.isclose(points[np.minimum(idx, len(points) - 1)], target)):
            raise DomainError("shift policy maps support points outside the discrete support")
        np.add.at(out, (idx, np.arange(out.shape[1])), g_values[k])
    return out


@dataclass(frozen=True)
class ShiftPolicyEval:
    """Two-piece shift d(a, w) with its inverse pieces.

    Piece 1 is the identity on [l, l + delta] (inverse h1(a) = a, h1' = 1);
    piece 2 subtracts delta on (l + delta, u] (inverse h2(a) = a + delta,
    h2' = 1).
    """

    lower: Callable
    upper: Callable
    delta: float

    def bounds(self, W):
        n = W.shape[0]
        return _as_row_fn(self.lower, n)(W), _as_row_fn(self.upper, n)(W)

    def d(self, a, W):
        l, _ = self.bounds(W)
        return apply_policy(a, l, self.delta)

    def pieces(self, W):
        l, u = self.bounds(W)
        return [
            {"interval": (l, l + self.delta), "inverse": lambda a: a, "jacobian": 1.0},
            {"interval": (l + self.delta, u), "inverse": lambda a: a + self.delta, "jacobian": 1.0},
        ]

    def check(self, W) -> None:
        l, u = self.bounds(W)
        if np.any(self.delta >= u - l):
            raise DomainError("shift magnitude must be below u(w) - l(w) for every unit")


def _as_row_fn(bound, n):
    if callable(bound):
        return lambda W: np.broadcast_to(np.asarray(bound(W), dtype=float), (W.shape[0],))
    return lambda W: np.full(W.shape[0], float(bound))


def shift_policy_for(spec: InterventionSpec, A) -> ShiftPolicyEval:
    """Resolve the support bounds of a shift policy, defaulting to the range of A."""
    A = np.asarray(A, dtype=float)
    lo = spec.lower if spec.lower is not None else float(A.min())
    hi = spec.upper if spec.upper is not None else float(A.max())
    return ShiftPolicyEval(lower=lo, upper=hi, delta=spec.delta)


# =============================================================================
# Vectorized g_delta for fitted mechanisms
# =============================================================================


def make_gdelta(
    g: Callable,
    spec: InterventionSpec,
    support: ExposureSupport,
    policy: Optional[ShiftPolicyEval] = None,
) -> Tuple[Callable, Optional[Callable]]:
    """Build g_delta(a, W) from a fitted g(a, W).

    Returns ``(g_delta, c)`` where ``c(W)`` is the tilt normalizer (``None``
    for other interventions).
    """
    kind = spec.kind
    delta = spec.delta

    if kind is InterventionKind.INCREMENTAL_PROPENSITY:
        if support.kind != "binary":
            raise DomainError("incremental propensity interventions need a binary exposure")

        def g_delta(a, W):
            a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
            p1 = ips_gdelta(np.asarray(g(np.ones(W.shape[0]), W), dtype=float), delta)
            return np.where(a == 1.0, p1, np.where(a == 0.0, 1.0 - p1, 0.0))

        return g_delta, None

    if kind is InterventionKind.EXPONENTIAL_TILT:
        tw = tilt_weights(delta, support.points)

        def c(W):
            vals = np.stack([g(np.full(W.shape[0], a), W) for a in support.points])
            return 1.0 / support.integrate(tw[:, None] * vals)

        def g_delta(a, W):
            a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
            return c(W) * tilt_weights(delta, a) * g(a, W)

        return g_delta, c

    if policy is None:
        raise DomainError("shift policies need resolved support bounds")

    if support.is_continuous:
        def g_delta(a, W):
            a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
            l, u = policy.bounds(W)
            stay = (l <= a) & (a <= l + delta)
            moved = (l <= a) & (a <= u - delta)
            out = np.zeros(W.shape[0])
            if stay.any():
                out = out + np.where(stay, g(a, W), 0.0)
            if moved.any():
                out = out + np.where(moved, g(a + delta, W), 0.0)
            return out

        return g_delta, None

    def g_delta(a, W):
        a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
        l, _ = policy.bounds(W)
        gv = np.stack([g(np.full(W.shape[0], p), W) for p in support.points])
        pushed = shift_pushforward(gv, support.points, l, delta)
        idx = np.searchsorted(support.points, a)
        idx = np.minimum(idx, len(support.points) - 1)
        hit = np.isclose(support.points[idx], a)
        return np.where(hit, pushed[idx, np.arange(W.shape[0])], 0.0)

    return g_delta, None
