"""Shared domain types: particle sets, base measures, payoff kernels, weighting
schemes, run configuration, and the seeded random-stream machinery used by every
solver.

Randomness contract
-------------------
All random draws in the library come from counter-based Philox streams keyed by
``(seed, domain, a, b)``.  A stream never depends on how many draws other
streams have consumed, so serial and parallel execution (and any particle
update order) produce bit-identical results.  Gaussian deviates are produced by
the inverse normal CDF applied to 53-bit uniforms::

    u = ((word >> 11) + 0.5) * 2**-53      # word: raw Philox 64-bit output
    z = ndtri(u)

which is reproducible across platforms with IEEE-754 double semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

__all__ = [
    "DimensionError",
    "DivergenceError",
    "ParticleSet",
    "BaseMeasure",
    "standard_gaussian",
    "Payoff",
    "SigmoidPayoff",
    "QuadraticPayoff",
    "SeparablePayoff",
    "CallablePayoff",
    "separable_linear",
    "WeightingScheme",
    "WeightAccumulator",
    "cum_weight",
    "RunConfig",
    "sample_base",
    "stream",
    "normal_block",
    "uniform_block",
    "derive_seed",
]

_MASK64 = (1 << 64) - 1
_STREAM_SALT = np.uint64(0x9E3779B97F4A7C15)  # fixed forever; part of the stream key

# Stream domains.  Every draw site in the library owns one of these so that no
# two call sites can ever collide on the same Philox counter block.
DOMAIN_BASE_SAMPLE = 1
DOMAIN_INIT = 2
DOMAIN_STEP = 3
DOMAIN_RESAMPLE = 4
DOMAIN_INNER_INIT = 5
DOMAIN_INNER_STEP = 6
DOMAIN_OUTPUT = 7
DOMAIN_DERIVE = 8
DOMAIN_USER = 9

PLAYER_MIN = 0
PLAYER_MAX = 1


class DimensionError(ValueError):
    """An operation only defined in one dimension was called with d > 1."""


class DivergenceError(RuntimeError):
    """Particles became non-finite during a run."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def _philox(seed: int, domain: int, a: int = 0, b: int = 0) -> np.random.Philox:
    """Philox instance for the stream (seed, domain, a, b).

    The key carries the user seed; the counter's upper words carry the stream
    path, leaving 2**64 draws per stream before any overlap is possible.
    """
    key = np.array([seed & _MASK64, int(_STREAM_SALT)], dtype=np.uint64)
    counter = np.array([0, domain & _MASK64, a & _MASK64, b & _MASK64], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter)


def stream(seed: int, domain: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """A numpy Generator on the (seed, domain, a, b) stream."""
    return np.random.Generator(_philox(seed, domain, a, b))


def uniform_block(seed: int, domain: int, a: int, b: int, shape) -> np.ndarray:
    """Uniforms in (0, 1), one 64-bit Philox word per entry."""
    gen = stream(seed, domain, a, b)
    words = gen.integers(0, 1 << 64, dtype=np.uint64, size=shape)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal_block(seed: int, domain: int, a: int, b: int, shape) -> np.ndarray:
    """Standard normal deviates via inverse CDF on :func:`uniform_block`."""
    return ndtri(uniform_block(seed, domain, a, b, shape))


def derive_seed(seed: int, domain: int, a: int = 0, b: int = 0) -> int:
    """A 64-bit sub-seed for nested runs (e.g. per Markov state)."""
    gen = stream(seed, DOMAIN_DERIVE, domain, (a << 32 | b) & _MASK64)
    return int(gen.integers(0, 1 << 64, dtype=np.uint64))


# ---------------------------------------------------------------------------
# Particle sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticleSet:
    """N points in R^d representing an empirical measure (1/N) sum of deltas.

    Positions are copied and frozen at construction; particle order carries no
    meaning.  Updates produce new instances.
    """

    positions: np.ndarray

    def __post_init__(self):
        arr = np.array(self.positions, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"positions must be (n, d), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DivergenceError("non-finite particle coordinates")
        arr.flags.writeable = False
        object.__setattr__(self, "positions", arr)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def as_1d(self) -> np.ndarray:
        if self.d != 1:
            raise DimensionError(f"as_1d requires d=1, got d={self.d}")
        return self.positions[:, 0]


# ---------------------------------------------------------------------------
# Base measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseMeasure:
    """Reference density rho = exp(-U) with strongly convex potential U.

    ``grad_potential`` maps (n, d) -> (n, d); ``log_density`` maps (n, d) -> (n,)
    and must be normalized if the measure is used in KL estimates (the built-in
    Gaussian is).  ``sampler(n, gen)`` draws n i.i.d. points using the supplied
    Generator.  ``scale`` is a typical standard deviation used to size
    quadrature grids; it defaults to 1/sqrt(strong_convexity).
    """

    grad_potential: Callable[[np.ndarray], np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray]
    strong_convexity: float
    grad_lipschitz: float
    sampler: Callable[[int, np.random.Generator], np.ndarray]
    dim: int = 1
    scale: float = 0.0

    def __post_init__(self):
        if self.strong_convexity <= 0 or self.grad_lipschitz <= 0:
            raise ValueError("strong_convexity and grad_lipschitz must be positive")
        if self.strong_convexity > self.grad_lipschitz * (1 + 1e-12):
            raise ValueError(
                f"strong convexity {self.strong_convexity} exceeds gradient "
                f"Lipschitz constant {self.grad_lipschitz}"
            )
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.scale <= 0:
            object.__setattr__(self, "scale", 1.0 / math.sqrt(self.strong_convexity))
        g0 = np.asarray(self.grad_potential(np.zeros((1, self.dim))))
        if not np.all(np.abs(g0) <= 1e-8 * max(1.0, self.grad_lipschitz)):
            raise ValueError("potential gradient must vanish at the origin")


def _gaussian_normals(gen: np.random.Generator, shape) -> np.ndarray:
    words = gen.integers(0, 1 << 64, dtype=np.uint64, size=shape)
    return ndtri(((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53)


def standard_gaussian(dim: int = 1) -> BaseMeasure:
    """N(0, I_d) base: U(x) = ||x||^2 / 2, strong convexity = grad Lipschitz = 1."""
    const = -0.5 * dim * math.log(2.0 * math.pi)

    def grad_u(x):
        return np.asarray(x, dtype=np.float64)

    def log_rho(x):
        x = np.asarray(x, dtype=np.float64)
        return const - 0.5 * np.sum(x * x, axis=-1)

    def sampler(n, gen):
        return _gaussian_normals(gen, (n, dim))

    return BaseMeasure(
        grad_potential=grad_u,
        log_density=log_rho,
        strong_convexity=1.0,
        grad_lipschitz=1.0,
        sampler=sampler,
        dim=dim,
        scale=1.0,
    )


def sample_base(base: BaseMeasure, n: int, seed: int) -> ParticleSet:
    """n i.i.d. draws from the base measure; bit-identical for equal (seed, n)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    gen = stream(seed, DOMAIN_BASE_SAMPLE)
    pts = np.asarray(base.sampler(n, gen), dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape != (n, base.dim):
        raise ValueError(f"sampler returned shape {pts.shape}, expected {(n, base.dim)}")
    return ParticleSet(pts)


# ---------------------------------------------------------------------------
# Payoff kernels
# ---------------------------------------------------------------------------


class Payoff:
    """A game kernel Q(x, y) with gradients and regularity metadata.

    Subclasses must implement :meth:`pair_values`, :meth:`pair_grad_x` and
    :meth:`pair_grad_y` on raw position arrays; :meth:`drift_x` / :meth:`drift_y`
    (opponent-averaged gradients) have generic implementations that subclasses
    may override with faster versions.

    Metadata fields (any may be None when unbounded or unknown): ``bound_m_min``
    and ``bound_m_max`` are sup-norms of the gradients in x and y; the ``lip_*``
    fields are gradient Lipschitz constants; ``sup_bound`` bounds |Q| itself.
    """

    dim_x: int = 1
    dim_y: int = 1
    bound_m_min: Optional[float] = None
    bound_m_max: Optional[float] = None
    lip_k_min: Optional[float] = None
    lip_k_max: Optional[float] = None
    lip_l_min: Optional[float] = None
    lip_l_max: Optional[float] = None
    sup_bound: Optional[float] = None

    def pair_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Q on every pair: x (n, dx), y (m, dy) -> (n, m)."""
        raise NotImplementedError

    def pair_grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """grad_x Q on every pair -> (n, m, dx)."""
        raise NotImplementedError

    def pair_grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """grad_y Q on every pair -> (n, m, dy)."""
        raise NotImplementedError

    def drift_x(self, x, y, weights=None, ws=None) -> np.ndarray:
        """Average of grad_x Q(x_i, .) over the y-cloud -> (n, dx).

        ``weights`` (length m, summing to 1) reweights the opponent particles;
        None means uniform.
        """
        g = self.pair_grad_x(x, y)
        if weights is None:
            return g.mean(axis=1)
        return (g * weights[None, :, None]).sum(axis=1)

    def drift_y(self, x, y, weights=None, ws=None) -> np.ndarray:
        """Average of grad_y Q(., y_j) over the x-cloud -> (m, dy)."""
        g = self.pair_grad_y(x, y)
        if weights is None:
            return g.mean(axis=0)
        return (g * weights[:, None, None]).sum(axis=0)

    def snapshot_drift_x(self, x_eval, x_snap, y_snap, ws=None) -> np.ndarray:
        """Gradient of the x-functional-derivative at a past snapshot pair.

        For bilinear Q this only involves the opponent snapshot.  Override for
        functionals whose derivative also depends on the own-player law.
        """
        return self.drift_x(x_eval, y_snap, ws=ws)

    def snapshot_drift_y(self, y_eval, x_snap, y_snap, ws=None) -> np.ndarray:
        return self.drift_y(x_snap, y_eval, ws=ws)


class PairBuffers:
    """Reusable scratch buffers for pairwise kernels (one per run, not shared)."""

    def __init__(self):
        self._bufs = {}

    def get(self, shape, count=2):
        key = (shape, count)
        if key not in self._bufs:
            self._bufs[key] = tuple(np.empty(shape) for _ in range(count))
        return self._bufs[key]


class SigmoidPayoff(Payoff):
    """Q(x, y) = 1 / (1 + exp(-||x - y||^2)), values in (1/2, 1), symmetric.

    The gradient profile 2u * s'(u^2) with u = ||x - y|| peaks near u = 1.02;
    the stored sup-norm 0.3936 upper-bounds it in any dimension.
    """

    def __init__(self, dim: int = 1):
        self.dim_x = self.dim_y = dim
        self.bound_m_min = self.bound_m_max = 0.3936
        self.lip_k_min = self.lip_k_max = 0.5
        self.lip_l_min = self.lip_l_max = 0.5
        self.sup_bound = 1.0

    @staticmethod
    def _sq_dist(x, y):
        diff = x[:, None, :] - y[None, :, :]
        return diff, np.sum(diff * diff, axis=-1)

    def pair_values(self, x, y):
        _, s = self._sq_dist(x, y)
        e = np.exp(-s)
        return 1.0 / (1.0 + e)

    def pair_grad_x(self, x, y):
        diff, s = self._sq_dist(x, y)
        e = np.exp(-s)
        sig_prime = e / (1.0 + e) ** 2
        return 2.0 * diff * sig_prime[..., None]

    def pair_grad_y(self, x, y):
        return -self.pair_grad_x(x, y)

    def _drift_1d(self, a, b, weights, ws):
        # gradient wrt the first argument, averaged over the second, d = 1 only
        n, m = a.shape[0], b.shape[0]
        if ws is None:
            ws = PairBuffers()
        b1, b2 = ws.get((n, m))
        np.subtract(a[:, 0][:, None], b[:, 0][None, :], out=b1)  # t = a - b
        np.multiply(b1, b1, out=b2)
        np.negative(b2, out=b2)
        np.exp(b2, out=b2)                                       # e = exp(-t^2)
        np.multiply(b1, b2, out=b1)                              # t e
        np.add(b2, 1.0, out=b2)
        np.multiply(b2, b2, out=b2)                              # (1 + e)^2
        np.divide(b1, b2, out=b1)
        np.multiply(b1, 2.0, out=b1)                             # 2 t e / (1+e)^2
        if weights is None:
            return b1.mean(axis=1)[:, None]
        np.multiply(b1, weights[None, :], out=b1)
        return b1.sum(axis=1)[:, None]

    def drift_x(self, x, y, weights=None, ws=None):
        if self.dim_x == 1:
            return self._drift_1d(x, y, weights, ws)
        return super().drift_x(x, y, weights=weights, ws=ws)

    def drift_y(self, x, y, weights=None, ws=None):
        if self.dim_y == 1:
            # grad_y Q(x, y) = 2 (y - x) s'(...): the same kernel with roles swapped
            return self._drift_1d(y, x, weights, ws)
        return super().drift_y(x, y, weights=weights, ws=ws)


class QuadraticPayoff(Payoff):
    """Q(x, y) = scale * <x, y>.  Gradients are unbounded (no sup metadata);
    used as an analytically solvable oracle: with Gaussian bases the
    equilibrium is the base pair itself.
    """

    def __init__(self, scale: float = 1.0, dim: int = 1):
        self.scale = float(scale)
        self.dim_x = self.dim_y = dim

    def pair_values(self, x, y):
        return self.scale * (x @ y.T)

    def pair_grad_x(self, x, y):
        n = x.shape[0]
        return np.broadcast_to(self.scale * y[None, :, :], (n, y.shape[0], y.shape[1])).copy()

    def pair_grad_y(self, x, y):
        m = y.shape[0]
        return np.broadcast_to(self.scale * x[:, None, :], (x.shape[0], m, x.shape[1])).copy()

    def drift_x(self, x, y, weights=None, ws=None):
        ybar = y.mean(axis=0) if weights is None else weights @ y
        out = np.empty_like(x)
        out[:] = self.scale * ybar
        return out

    def drift_y(self, x, y, weights=None, ws=None):
        xbar = x.mean(axis=0) if weights is None else weights @ x
        out = np.empty_like(y)
        out[:] = self.scale * xbar
        return out


class SeparablePayoff(Payoff):
    """Q(x, y) = g(x) + h(y): the two marginals decouple and each player runs an
    independent Langevin flow, so equilibria are Gibbs tilts of the bases.

    g, h map (k, d) -> (k,); g_grad, h_grad map (k, d) -> (k, d).
    """

    def __init__(self, g, g_grad, h, h_grad, dim: int = 1,
                 bound_m_min=None, bound_m_max=None, sup_bound=None):
        self.g, self.g_grad, self.h, self.h_grad = g, g_grad, h, h_grad
        self.dim_x = self.dim_y = dim
        self.bound_m_min = bound_m_min
        self.bound_m_max = bound_m_max
        self.sup_bound = sup_bound

    def pair_values(self, x, y):
        return np.asarray(self.g(x))[:, None] + np.asarray(self.h(y))[None, :]

    def pair_grad_x(self, x, y):
        g = np.asarray(self.g_grad(x))
        return np.broadcast_to(g[:, None, :], (x.shape[0], y.shape[0], x.shape[1])).copy()

    def pair_grad_y(self, x, y):
        h = np.asarray(self.h_grad(y))
        return np.broadcast_to(h[None, :, :], (x.shape[0], y.shape[0], y.shape[1])).copy()

    def drift_x(self, x, y, weights=None, ws=None):
        return np.asarray(self.g_grad(x), dtype=np.float64)

    def drift_y(self, x, y, weights=None, ws=None):
        return np.asarray(self.h_grad(y), dtype=np.float64)


def separable_linear(slope_x: float, slope_y: float, dim: int = 1) -> SeparablePayoff:
    """Q(x, y) = slope_x * sum(x) + slope_y * sum(y)."""
    sx, sy = float(slope_x), float(slope_y)
    return SeparablePayoff(
        g=lambda x: sx * np.sum(x, axis=-1),
        g_grad=lambda x: np.full_like(np.asarray(x, dtype=np.float64), sx),
        h=lambda y: sy * np.sum(y, axis=-1),
        h_grad=lambda y: np.full_like(np.asarray(y, dtype=np.float64), sy),
        dim=dim,
        bound_m_min=abs(sx) * math.sqrt(dim),
        bound_m_max=abs(sy) * math.sqrt(dim),
    )


class CallablePayoff(Payoff):
    """Payoff from user callables on broadcast position arrays.

    ``fn(x, y)`` consumes x (..., dx) and y (..., dy) with broadcastable leading
    axes and returns (...); the gradients return (..., dx) / (..., dy).
    """

    def __init__(self, fn, grad_x, grad_y, dim_x=1, dim_y=1, **metadata):
        self.fn, self._grad_x, self._grad_y = fn, grad_x, grad_y
        self.dim_x, self.dim_y = dim_x, dim_y
        for key, val in metadata.items():
            if not hasattr(self, key):
                raise TypeError(f"unknown payoff metadata field {key!r}")
            setattr(self, key, val)

    def pair_values(self, x, y):
        return np.asarray(self.fn(x[:, None, :], y[None, :, :]), dtype=np.float64)

    def pair_grad_x(self, x, y):
        return np.asarray(self._grad_x(x[:, None, :], y[None, :, :]), dtype=np.float64)

    def pair_grad_y(self, x, y):
        return np.asarray(self._grad_y(x[:, None, :], y[None, :, :]), dtype=np.float64)


# ---------------------------------------------------------------------------
# Weighting schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightingScheme:
    """Per-epoch averaging weights beta_k = k**exponent, exponent >= 0.

    Larger exponents favor recent iterates; exponent 1 optimizes the leading
    constant of the averaged dynamics and is the default everywhere.
    """

    exponent: float = 1.0

    def __post_init__(self):
        if not (self.exponent >= 0.0):
            raise ValueError(f"weight exponent must be >= 0, got {self.exponent}")

    def weight(self, k: int) -> float:
        if k < 1:
            raise ValueError(f"epoch index must be >= 1, got {k}")
        return float(k) ** self.exponent


class WeightAccumulator:
    """Incremental cumulative weights B_k = sum_{j<=k} beta_j for drivers."""

    def __init__(self, scheme: WeightingScheme):
        self.scheme = scheme
        self.k = 0
        self.total = 0.0

    def advance(self) -> float:
        """Include epoch k+1; returns the new B_{k+1}."""
        self.k += 1
        self.total += self.scheme.weight(self.k)
        return self.total


def cum_weight(scheme: WeightingScheme, k: int) -> float:
    """B_k = sum_{j=1}^{k} j**exponent."""
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    acc = WeightAccumulator(scheme)
    for _ in range(k):
        acc.advance()
    return acc.total


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Solver parameters shared by all three dynamics.

    ``temperature`` is the entropic regularization strength (0 disables both
    noise and the KL terms; kept legal for deterministic limits), ``step_size``
    the Euler step, ``epochs`` the number of update steps.  The outer/inner/mix
    fields configure the anchored best-response loop only; ``history_limit``
    caps the snapshot history kept by the general averaged-gradient mode.
    """

    temperature: float
    step_size: float
    particles: int
    epochs: int
    seed: int
    weight_exponent: float = 1.0
    outer_iters: int = 0
    inner_iters: int = 0
    mix_fraction: float = 0.0
    warm_start: bool = False
    history_limit: int = 4096

    def __post_init__(self):
        if not (self.temperature >= 0.0):
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not (self.step_size > 0.0):
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.particles < 1:
            raise ValueError(f"particles must be >= 1, got {self.particles}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.weight_exponent >= 0.0):
            raise ValueError("weight_exponent must be >= 0")
        if self.history_limit < 1:
            raise ValueError("history_limit must be >= 1")

    def require_abr(self):
        """Validate the fields the anchored best-response loop needs."""
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("anchored best response needs outer_iters >= 1 and inner_iters >= 1")
        if not (0.0 < self.mix_fraction <= 1.0):
            raise ValueError(f"mix_fraction must lie in (0, 1], got {self.mix_fraction}")
        if int(self.mix_fraction * self.particles) < 1:
            raise ValueError(
                f"mix_fraction * particles = {self.mix_fraction * self.particles:.3f} < 1: "
                "no particle would ever be replaced"
            )

    def scheme(self) -> WeightingScheme:
        return WeightingScheme(self.weight_exponent)
