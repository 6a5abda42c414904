"""Solution-quality measurement: 1-D empirical Wasserstein distances, a
trapezoid-quadrature oracle for Gibbs best responses, the quadrature and
3-point Nikaido-Isoda errors, and a log-Sobolev constant diagnostic.

The NI error of a pair (mu, nu) is

    NI = max over nu' of L_reg(mu, nu')  -  min over mu' of L_reg(mu', nu).

Each inner optimization is a linear functional plus/minus a KL term, so by the
Gibbs variational principle it equals a log-partition integral of the tilted
base density; in one dimension that is a single quadrature.  The KL terms of
the outer pair are estimated with the same KDE estimator everywhere, so
candidate rankings share the estimator bias.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .core import BaseMeasure, DimensionError, ParticleSet, Payoff
from .objective import kl_empirical_kde, regularized_value

__all__ = [
    "QuadratureConfig",
    "GibbsQuadrature",
    "ResolutionError",
    "w1_empirical_1d",
    "w1_to_quadrature",
    "ni_quadrature",
    "ni_three_point",
    "lsi_lower_bound",
    "quadrature_kl",
]

_KERNEL_CHUNK = 512


class ResolutionError(RuntimeError):
    """Doubling the quadrature grid changed the result more than tolerated."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Grid size and extent (in base-measure standard deviations) for the
    quadrature oracles.  Defaults: 4096 nodes over +-8 sd."""

    nodes: int = 4096
    span_sds: float = 8.0

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError("need at least 16 quadrature nodes")
        if self.span_sds < 6.0:
            raise ValueError("grid must cover at least 6 standard deviations")


class GibbsQuadrature:
    """A 1-D density on a uniform grid, normalized by trapezoid quadrature.

    Stores the unnormalized log-density values and the log normalizer; exposes
    pdf/cdf/quantiles, moments against node values, and the log partition
    (which equals log integral of the unnormalized values, i.e. the value of a
    Gibbs variational problem when the values are a tilted normalized base).
    """

    def __init__(self, nodes: np.ndarray, log_weights: np.ndarray):
        nodes = np.asarray(nodes, dtype=np.float64)
        log_weights = np.asarray(log_weights, dtype=np.float64)
        if nodes.ndim != 1 or nodes.shape != log_weights.shape or nodes.size < 16:
            raise ValueError("need matching 1-D node and log-weight arrays (>= 16 nodes)")
        steps = np.diff(nodes)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid must be uniform")
        self.nodes = nodes
        self.log_weights = log_weights
        self.step = float(steps[0])
        self.log_z = self._log_trapz(log_weights)
        self._log_pdf = log_weights - self.log_z
        pdf = np.exp(self._log_pdf)
        total = np.trapezoid(pdf, nodes)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"normalized weights integrate to {total}, not 1")
        self.pdf = pdf
        cdf = np.concatenate([[0.0], np.cumsum(self.step * 0.5 * (pdf[1:] + pdf[:-1]))])
        self.cdf = cdf / cdf[-1]

    def _log_trapz(self, logv: np.ndarray) -> float:
        m = float(logv.max())
        # clamp: terms this far below the max cannot move the trapezoid sum
        return m + math.log(np.trapezoid(np.exp(np.maximum(logv - m, -708.0)), self.nodes))

    @property
    def normalizer(self) -> float:
        """Z = integral of the unnormalized weights (may overflow; prefer log_z)."""
        return math.exp(self.log_z)

    @classmethod
    def from_base(cls, base: BaseMeasure, tilt: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  temperature: float = 1.0, sign: float = -1.0,
                  cfg: QuadratureConfig = QuadratureConfig()) -> "GibbsQuadrature":
        """Density proportional to rho(t) * exp(sign * tilt(t) / temperature).

        ``tilt`` consumes the grid as a 1-D array; None means the base itself.
        The grid spans the base center +- span_sds * base.scale (at least 6 sd
        by the config invariant).
        """
        if base.dim != 1:
            raise DimensionError("quadrature oracles are 1-D only")
        half = cfg.span_sds * base.scale
        nodes = np.linspace(-half, half, cfg.nodes)
        logv = np.asarray(base.log_density(nodes[:, None]), dtype=np.float64)
        if tilt is not None:
            if temperature <= 0.0:
                raise ValueError("tilted densities need temperature > 0")
            logv = logv + (sign / temperature) * np.asarray(tilt(nodes), dtype=np.float64)
        return cls(nodes, logv)

    def quantile(self, q) -> np.ndarray:
        """Inverse CDF by linear interpolation on the grid."""
        q = np.asarray(q, dtype=np.float64)
        if ((q < 0.0) | (q > 1.0)).any():
            raise ValueError("quantile levels must lie in [0, 1]")
        return np.interp(q, self.cdf, self.nodes)

    def expectation(self, values: np.ndarray) -> float:
        """Trapezoid expectation of node-aligned function values."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.nodes.shape:
            raise ValueError("values must be aligned with the grid")
        return float(np.trapezoid(self.pdf * values, self.nodes))

    def log_pdf(self) -> np.ndarray:
        return self._log_pdf


def quadrature_kl(p: GibbsQuadrature, q: GibbsQuadrature) -> float:
    """KL(p || q) for two densities on the same grid."""
    if p.nodes.shape != q.nodes.shape or not np.allclose(p.nodes, q.nodes):
        raise ValueError("KL requires a shared grid")
    lp, lq = p.log_pdf(), q.log_pdf()
    pd = p.pdf
    integrand = np.where(pd > 0.0, pd * (lp - lq), 0.0)
    return float(np.trapezoid(integrand, p.nodes))


# ---------------------------------------------------------------------------
# Empirical Wasserstein distances (1-D)
# ---------------------------------------------------------------------------


def w1_empirical_1d(x: ParticleSet, y: ParticleSet) -> float:
    """W1 between equal-size 1-D empirical measures: sort both samples and
    average the absolute differences (the sorted coupling is optimal in 1-D).
    """
    if x.d != 1 or y.d != 1:
        raise DimensionError("empirical W1 is implemented for d=1 only")
    if x.n != y.n:
        raise ValueError(
            f"sample sizes differ ({x.n} vs {y.n}); resample to a common size first"
        )
    return float(np.mean(np.abs(np.sort(x.as_1d()) - np.sort(y.as_1d()))))


def w1_to_quadrature(x: ParticleSet, g: GibbsQuadrature) -> float:
    """W1 between a 1-D sample and a quadrature density, by matching the i-th
    order statistic with the (i - 1/2)/n quantile of the density."""
    if x.d != 1:
        raise DimensionError("quadrature W1 is 1-D only")
    pts = np.sort(x.as_1d())
    if pts[0] < g.nodes[0] or pts[-1] > g.nodes[-1]:
        warnings.warn(
            "sample exits the quadrature grid; quantiles are clamped to the grid",
            RuntimeWarning,
        )
    n = pts.shape[0]
    targets = g.quantile((np.arange(1, n + 1) - 0.5) / n)
    return float(np.mean(np.abs(pts - targets)))


# ---------------------------------------------------------------------------
# Nikaido-Isoda errors
# ---------------------------------------------------------------------------


def _mean_kernel_rows(payoff: Payoff, pos: np.ndarray, grid: np.ndarray,
                      transpose: bool) -> np.ndarray:
    """Average of Q over a particle cloud, evaluated on the grid.

    transpose=False: t -> mean_i Q(pos_i, t); True: t -> mean_j Q(t, pos_j).
    Chunked over the cloud so n ~ 1e4 never materializes an (n, m) block.
    """
    m = grid.shape[0]
    acc = np.zeros(m)
    n = pos.shape[0]
    gcol = grid[:, None]
    for lo in range(0, n, _KERNEL_CHUNK):
        chunk = pos[lo:min(lo + _KERNEL_CHUNK, n)]
        if transpose:
            acc += payoff.pair_values(gcol, chunk).sum(axis=1)
        else:
            acc += payoff.pair_values(chunk, gcol).sum(axis=0)
    return acc / n


def _log_partitions(payoff: Payoff, x: ParticleSet, y: ParticleSet,
                    temperature: float, bases, cfg: QuadratureConfig):
    """(log Z for the max player's best response, log Z for the min player's).

    At temperature 0 the Gibbs values degenerate to grid extrema of the mean
    kernels and the returned pair is (max f, -min g) so that the caller's
    temperature-weighted sum logic still applies with weight 1.
    """
    base_mu, base_nu = bases
    half_nu = cfg.span_sds * base_nu.scale
    grid_nu = np.linspace(-half_nu, half_nu, cfg.nodes)
    half_mu = cfg.span_sds * base_mu.scale
    grid_mu = np.linspace(-half_mu, half_mu, cfg.nodes)

    f_on_nu = _mean_kernel_rows(payoff, x.positions, grid_nu, transpose=False)
    g_on_mu = _mean_kernel_rows(payoff, y.positions, grid_mu, transpose=True)

    if temperature == 0.0:
        return float(f_on_nu.max()), float(-g_on_mu.min())

    log_rho_nu = np.asarray(base_nu.log_density(grid_nu[:, None]), dtype=np.float64)
    log_rho_mu = np.asarray(base_mu.log_density(grid_mu[:, None]), dtype=np.float64)
    gq_nu = GibbsQuadrature(grid_nu, log_rho_nu + f_on_nu / temperature)
    gq_mu = GibbsQuadrature(grid_mu, log_rho_mu - g_on_mu / temperature)
    return gq_nu.log_z, gq_mu.log_z


def ni_quadrature(payoff: Payoff, x: ParticleSet, y: ParticleSet,
                  temperature: float, bases,
                  cfg: QuadratureConfig = QuadratureConfig(),
                  check_resolution: bool = True) -> float:
    """NI error of an empirical pair via best-response log partitions.

    Positive temperature:  NI = temperature * (log Z_nu + log Z_mu
                                 + KL_hat(x || base_mu) + KL_hat(y || base_nu)).
    Temperature 0:         NI = (grid max of the x-averaged kernel)
                                 - (grid min of the y-averaged kernel).

    The value inherits the KDE estimator bias and may dip slightly below zero
    (never below twice the per-estimate budget times the temperature).  A
    doubled-grid check guards against under-resolution.
    """
    if x.d != 1 or y.d != 1:
        raise DimensionError("quadrature NI is 1-D only")
    lz_nu, lz_mu = _log_partitions(payoff, x, y, temperature, bases, cfg)
    if check_resolution:
        fine = QuadratureConfig(nodes=2 * cfg.nodes, span_sds=cfg.span_sds)
        lz_nu2, lz_mu2 = _log_partitions(payoff, x, y, temperature, bases, fine)
        scale = temperature if temperature > 0.0 else 1.0
        drift = scale * (abs(lz_nu2 - lz_nu) + abs(lz_mu2 - lz_mu))
        if drift > 1e-6:
            raise ResolutionError(
                f"log-partition value moved by {drift:.3e} when doubling the grid; "
                f"increase QuadratureConfig.nodes beyond {cfg.nodes}"
            )
        lz_nu, lz_mu = lz_nu2, lz_mu2
    if temperature == 0.0:
        return float(lz_nu + lz_mu)
    kl_x = kl_empirical_kde(x, bases[0])
    kl_y = kl_empirical_kde(y, bases[1])
    return float(temperature * (lz_nu + lz_mu + kl_x + kl_y))


def ni_three_point(payoff: Payoff, candidates: Sequence[Tuple[ParticleSet, ParticleSet]],
                   temperature: float, bases) -> Tuple[float, float, float]:
    """Relative-optimality NI among exactly three candidate pairs.

    Builds the 3x3 table L[i][j] = L_reg(x_i, y_j) and returns, per candidate,
    max over its row minus min over its column.  The diagonal entry appears in
    both, so every value is >= 0.
    """
    if len(candidates) != 3:
        raise ValueError(f"need exactly three candidate pairs, got {len(candidates)}")
    table = np.empty((3, 3))
    for i, (xi, _) in enumerate(candidates):
        for j, (_, yj) in enumerate(candidates):
            table[i, j] = regularized_value(payoff, xi, yj, temperature, bases)
    return tuple(float(table[i, :].max() - table[:, i].min()) for i in range(3))


# ---------------------------------------------------------------------------
# Log-Sobolev constant diagnostic
# ---------------------------------------------------------------------------


def lsi_lower_bound(r: float, big_r: float, m: float, temperature: float, d: int) -> float:
    """Lower bound on the log-Sobolev constant of a base density exp(-U)
    (r-strongly convex, gradient big_r-Lipschitz) tilted by exp(-h/temperature)
    with h having Lipschitz norm at most m.

    Two closed-form bounds apply; this returns the larger.  The first decays
    exponentially in the perturbation-to-temperature ratio but has a simple
    form; the second trades an exponential dimension factor for polynomial
    terms.  The result is always positive and never exceeds r/2 (the
    unperturbed limit of the first branch as m -> 0).
    """
    if r <= 0 or big_r <= 0 or m <= 0 or temperature <= 0 or d <= 0:
        raise ValueError("all arguments must be positive")
    ratio = m * m / (r * temperature * temperature)
    exp_branch = 0.5 * r * math.exp(-4.0 * ratio * math.sqrt(2.0 * d / math.pi))
    poly_branch = 1.0 / (
        4.0 / r
        + (m / (r * temperature) + math.sqrt(2.0 / r)) ** 2
        * (2.0 + 0.5 * d * math.log(math.e**2 * big_r / r) + 4.0 * ratio)
        * math.exp(0.5 * ratio)
    )
    return max(exp_branch, poly_branch)
