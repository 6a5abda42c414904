"""Objective evaluation on empirical measures: the bilinear value, its
opponent-averaged drifts, and the entropy-regularized value with KDE-based
KL estimates.

The KL estimator is a Gaussian kernel density estimate at Silverman's
bandwidth evaluated at the sample points themselves.  It is biased (the
self-term inflates the density, smoothing deflates it) and can go slightly
negative even when the sample comes from the reference density; downstream
consumers should budget ``KL_BIAS_BUDGET`` of slack rather than treat it as
exact.  Comparisons between candidates evaluated with the same estimator
share this bias, which is why rankings are trustworthy where absolute values
are not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BaseMeasure, DimensionError, ParticleSet, Payoff

__all__ = [
    "KdeEstimator",
    "KL_BIAS_BUDGET",
    "bilinear_value",
    "drift_mu",
    "drift_nu",
    "kl_empirical_kde",
    "regularized_value",
]

# Absolute slack to allow on any single KDE-based KL estimate at desk scale
# (n >= 1000), measured on Gaussian reference runs.
KL_BIAS_BUDGET = 0.05

_CHUNK = 512  # rows per block in pairwise KDE evaluation


@dataclass
class KdeEstimator:
    """1-D Gaussian kernel density estimate at Silverman's bandwidth.

    h = 1.06 * sigma_hat * n**(-1/5) with sigma_hat the sample standard
    deviation (ddof=1).  Evaluation is chunked so n ~ 1e4 stays in fixed
    memory.
    """

    source: ParticleSet
    bandwidth: float = field(init=False)
    _sorted: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.source.d != 1:
            raise DimensionError("kernel density estimate is 1-D only")
        if self.source.n < 2:
            raise ValueError("need at least two points for a density estimate")
        # canonical (sorted) order makes every evaluation exactly invariant
        # under permutations of the sample
        pts = np.sort(self.source.as_1d())
        sigma = float(np.std(pts, ddof=1))
        if sigma == 0.0:
            raise ValueError("degenerate sample (zero variance): bandwidth undefined")
        self.bandwidth = 1.06 * sigma * self.source.n ** (-0.2)
        self._sorted = pts

    def log_density(self, t: np.ndarray) -> np.ndarray:
        """log of the KDE density at query points t (1-D array)."""
        t = np.asarray(t, dtype=np.float64).ravel()
        pts = self._sorted
        n, h = self.source.n, self.bandwidth
        const = -math.log(n * h * math.sqrt(2.0 * math.pi))
        out = np.empty(t.shape[0])
        buf = np.empty((min(_CHUNK, t.shape[0]), n))
        for lo in range(0, t.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, t.shape[0])
            b = buf[: hi - lo]
            np.subtract(t[lo:hi, None], pts[None, :], out=b)
            b /= h
            np.multiply(b, b, out=b)
            b *= -0.5
            m = b.max(axis=1)
            np.subtract(b, m[:, None], out=b)
            # the row max contributes exp(0) = 1, so terms below the normal
            # range cannot move the sum: clamping dodges subnormal slowdowns
            np.maximum(b, -708.0, out=b)
            np.exp(b, out=b)
            out[lo:hi] = m + np.log(b.sum(axis=1))
        return out + const

    def density(self, t: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(t))


def bilinear_value(payoff: Payoff, x: ParticleSet, y: ParticleSet) -> float:
    """Mean of Q over all particle pairs: (1/(n m)) sum_ij Q(x_i, y_j)."""
    _check_dims(payoff, x, y)
    vals = payoff.pair_values(x.positions, y.positions)
    return float(vals.mean())


def drift_mu(payoff: Payoff, x, y: ParticleSet, weights=None) -> np.ndarray:
    """Opponent-averaged x-gradient at query points x: mean_m grad_x Q(x, y_m).

    x may be a ParticleSet or an (n, d) / (d,) array; the entropic pull toward
    the base measure is the caller's to add.  ``weights`` reweights the
    opponent cloud (length y.n, summing to 1).
    """
    pos = _as_positions(x, payoff.dim_x)
    w = _check_weights(weights, y.n)
    return payoff.drift_x(pos, y.positions, weights=w)


def drift_nu(payoff: Payoff, x: ParticleSet, y, weights=None) -> np.ndarray:
    """Opponent-averaged y-gradient at query points y: mean_m grad_y Q(x_m, y)."""
    pos = _as_positions(y, payoff.dim_y)
    w = _check_weights(weights, x.n)
    return payoff.drift_y(x.positions, pos, weights=w)


def kl_empirical_kde(x: ParticleSet, base: BaseMeasure) -> float:
    """KL estimate of the empirical law of x against the base density:
    (1/n) sum_i log( kde(x_i) / rho(x_i) ).  May be slightly negative; see the
    module docstring for the bias budget.
    """
    if x.d != 1:
        raise DimensionError("KL estimation is implemented for d=1 only")
    if x.n < 2:
        raise ValueError("need at least two particles for a KL estimate")
    kde = KdeEstimator(x)
    pts = np.sort(x.as_1d())  # canonical order: bitwise permutation invariance
    log_p = kde.log_density(pts)
    log_rho = np.asarray(base.log_density(pts[:, None]), dtype=np.float64)
    return float(np.mean(log_p - log_rho))


def regularized_value(payoff: Payoff, x: ParticleSet, y: ParticleSet,
                      temperature: float, bases) -> float:
    """Entropy-regularized objective on empirical measures:

    bilinear value + temperature * KL(x-cloud || base_mu)
                   - temperature * KL(y-cloud || base_nu).

    ``bases`` is the (base_mu, base_nu) pair.  Temperature 0 skips the KL
    estimates entirely.
    """
    val = bilinear_value(payoff, x, y)
    if temperature == 0.0:
        return val
    base_mu, base_nu = bases
    return float(
        val
        + temperature * kl_empirical_kde(x, base_mu)
        - temperature * kl_empirical_kde(y, base_nu)
    )


def _as_positions(x, dim: int) -> np.ndarray:
    if isinstance(x, ParticleSet):
        return x.positions
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a single point in R^dim, or a column of scalars when dim == 1
        arr = arr.reshape(1, -1) if arr.shape[0] == dim and dim > 1 else arr[:, None]
    if not np.isfinite(arr).all():
        raise ValueError("non-finite query point")
    if arr.shape[1] != dim:
        raise ValueError(f"query dimension {arr.shape[1]} != payoff dimension {dim}")
    return arr


def _check_dims(payoff: Payoff, x: ParticleSet, y: ParticleSet):
    if x.d != payoff.dim_x or y.d != payoff.dim_y:
        raise ValueError(
            f"particle dimensions ({x.d}, {y.d}) do not match payoff "
            f"({payoff.dim_x}, {payoff.dim_y})"
        )


def _check_weights(weights, n: int):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be finite and nonnegative")
    s = w.sum()
    if not math.isclose(s, 1.0, rel_tol=1e-9):
        raise ValueError(f"weights must sum to 1, got {s}")
    return w
