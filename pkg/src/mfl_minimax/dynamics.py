"""The three particle solvers.

* Descent-ascent (``mfl-da``): both players take simultaneous Euler-Maruyama
  steps against the opponent's pre-step cloud.
* Averaged gradient (``mfl-ag``): the drift is the history-weighted average of
  the per-epoch gradients.  For bilinear payoffs this collapses to the drift
  against a single rolling-average cloud of fixed size N, maintained by
  replacing floor(beta_{k+1} N / B_{k+1}) uniformly chosen slots with uniformly
  chosen particles of the newest snapshot ("rolling" mode).  The general form
  that keeps every snapshot is available as "history" mode (O(k) per step, so
  it is capped by ``RunConfig.history_limit``).
* Anchored best response (``mfl-abr``): a double loop; the inner loop runs
  Langevin steps whose drift is frozen at the current outer clouds, then
  floor(mix_fraction * N) outer particles are replaced by inner ones.

Every update step for particle i at epoch k draws its noise from the stream
(seed, step-domain, k, player), row i, so update order, thread count, and
history length never change the trajectory.

Epoch labels: a run of E epochs produces states labeled 0 (initialization)
through E.  The anchored best-response loop counts one epoch per inner step,
so outer iterate k carries the label k * inner_iters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .core import (
    DOMAIN_INIT,
    DOMAIN_INNER_INIT,
    DOMAIN_INNER_STEP,
    DOMAIN_OUTPUT,
    DOMAIN_RESAMPLE,
    DOMAIN_STEP,
    PLAYER_MAX,
    PLAYER_MIN,
    BaseMeasure,
    PairBuffers,
    ParticleSet,
    Payoff,
    RunConfig,
    WeightingScheme,
    normal_block,
    stream,
)

__all__ = [
    "DaState",
    "AgState",
    "Trajectory",
    "mfl_da_step",
    "mfl_ag_step",
    "ag_output",
    "mfl_abr_run",
    "run_experiment",
    "init_da",
    "init_ag",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("mfl-da", "mfl-ag", "mfl-abr")

Bases = Tuple[BaseMeasure, BaseMeasure]
Hook = Callable[[int, ParticleSet, ParticleSet], None]


@dataclass(frozen=True)
class DaState:
    """Descent-ascent state: the two clouds and the 1-based state index."""

    x: ParticleSet
    y: ParticleSet
    epoch: int = 1


@dataclass(frozen=True)
class AgState:
    """Averaged-gradient state.

    Rolling mode keeps fixed-size average clouds ``avg_x``/``avg_y``; history
    mode keeps every past snapshot pair.  ``cum`` is the running cumulative
    weight B_k for the current index.
    """

    x: ParticleSet
    y: ParticleSet
    epoch: int
    scheme: WeightingScheme
    mode: str
    cum: float
    avg_x: Optional[ParticleSet] = None
    avg_y: Optional[ParticleSet] = None
    history: Optional[Tuple[Tuple[ParticleSet, ParticleSet], ...]] = None

    def __post_init__(self):
        if self.mode not in ("rolling", "history"):
            raise ValueError(f"unknown averaging mode {self.mode!r}")
        if self.mode == "rolling":
            if self.avg_x is None or self.avg_y is None:
                raise ValueError("rolling mode needs average clouds")
            if self.avg_x.n != self.x.n or self.avg_y.n != self.y.n:
                raise ValueError("average clouds must keep size N")
        else:
            if self.history is None or len(self.history) != self.epoch:
                raise ValueError("history length must equal the state index")


@dataclass(frozen=True)
class Trajectory:
    """Recorded run: labeled snapshots, the final output pair, and the total
    epoch count (label of the final state).

    ``snapshots`` hold the primary particle clouds; ``candidates`` hold, at the
    same labels, the algorithm's candidate solution at that point (the averaged
    clouds for mfl-ag, the same objects otherwise).
    """

    algorithm: str
    snapshots: Tuple[Tuple[int, ParticleSet, ParticleSet], ...]
    output: Tuple[ParticleSet, ParticleSet]
    epochs: int
    candidates: Tuple[Tuple[int, ParticleSet, ParticleSet], ...] = ()


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def _init_cloud(base: BaseMeasure, n: int, seed: int, domain: int, tag: int,
                player: int) -> ParticleSet:
    gen = stream(seed, domain, tag, player)
    pts = np.asarray(base.sampler(n, gen), dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return ParticleSet(pts)


def _noise(cfg: RunConfig, domain: int, epoch: int, player: int, shape) -> np.ndarray:
    scale = math.sqrt(2.0 * cfg.temperature * cfg.step_size)
    if scale == 0.0:
        return np.zeros(shape)
    return scale * normal_block(cfg.seed, domain, epoch, player, shape)


def _euler(pos: np.ndarray, payoff_drift: np.ndarray, base: BaseMeasure,
           cfg: RunConfig, noise: np.ndarray, sign: float) -> np.ndarray:
    """pos + eta * (sign * payoff drift - temperature * grad U) + noise."""
    grad_u = np.asarray(base.grad_potential(pos), dtype=np.float64)
    return pos + cfg.step_size * (sign * payoff_drift - cfg.temperature * grad_u) + noise


def _replace_slots(cloud: ParticleSet, donors: ParticleSet, count: int,
                   gen: np.random.Generator) -> ParticleSet:
    """Replace ``count`` uniformly chosen slots with uniformly chosen donor
    particles, both without replacement."""
    if count == 0:
        log.debug("replacement count is zero; cloud unchanged")
        return cloud
    slots = gen.permutation(cloud.n)[:count]
    picks = gen.permutation(donors.n)[:count]
    pos = cloud.positions.copy()
    pos[slots] = donors.positions[picks]
    return ParticleSet(pos)


# ---------------------------------------------------------------------------
# Descent ascent
# ---------------------------------------------------------------------------


def _initial_pair(bases: Bases, cfg: RunConfig,
                  init: Optional[Tuple[ParticleSet, ParticleSet]]):
    """Either the caller-provided clouds or fresh base samples.

    The bases are the default initialization; passing ``init`` supports
    starting away from them (the algorithms leave the start free).
    """
    if init is not None:
        x, y = init
        if x.n != cfg.particles or y.n != cfg.particles:
            raise ValueError("initial clouds must match cfg.particles")
        return x, y
    base_mu, base_nu = bases
    x = _init_cloud(base_mu, cfg.particles, cfg.seed, DOMAIN_INIT, 0, PLAYER_MIN)
    y = _init_cloud(base_nu, cfg.particles, cfg.seed, DOMAIN_INIT, 0, PLAYER_MAX)
    return x, y


def init_da(bases: Bases, cfg: RunConfig,
            init: Optional[Tuple[ParticleSet, ParticleSet]] = None) -> DaState:
    x, y = _initial_pair(bases, cfg, init)
    return DaState(x=x, y=y, epoch=1)


def mfl_da_step(state: DaState, payoff: Payoff, bases: Bases, cfg: RunConfig,
                ws: Optional[PairBuffers] = None) -> DaState:
    """One simultaneous descent-ascent step; both players react to the
    pre-step opponent cloud."""
    base_mu, base_nu = bases
    xp, yp = state.x.positions, state.y.positions
    dx = payoff.drift_x(xp, yp, ws=ws)
    dy = payoff.drift_y(xp, yp, ws=ws)
    nx = _noise(cfg, DOMAIN_STEP, state.epoch, PLAYER_MIN, xp.shape)
    ny = _noise(cfg, DOMAIN_STEP, state.epoch, PLAYER_MAX, yp.shape)
    new_x = _euler(xp, dx, base_mu, cfg, nx, sign=-1.0)
    new_y = _euler(yp, dy, base_nu, cfg, ny, sign=+1.0)
    return DaState(x=ParticleSet(new_x), y=ParticleSet(new_y), epoch=state.epoch + 1)


# ---------------------------------------------------------------------------
# Averaged gradient
# ---------------------------------------------------------------------------


def init_ag(bases: Bases, cfg: RunConfig, mode: str = "rolling",
            init: Optional[Tuple[ParticleSet, ParticleSet]] = None) -> AgState:
    x, y = _initial_pair(bases, cfg, init)
    scheme = cfg.scheme()
    cum = scheme.weight(1)
    if mode == "rolling":
        return AgState(x=x, y=y, epoch=1, scheme=scheme, mode=mode, cum=cum,
                       avg_x=x, avg_y=y)
    return AgState(x=x, y=y, epoch=1, scheme=scheme, mode=mode, cum=cum,
                   history=((x, y),))


def _history_drift(payoff: Payoff, state: AgState, ws: Optional[PairBuffers]):
    """Weighted average over all snapshots of the per-snapshot gradients."""
    total_x = None
    total_y = None
    for j, (sx, sy) in enumerate(state.history, start=1):
        w = state.scheme.weight(j)
        gx = payoff.snapshot_drift_x(state.x.positions, sx.positions, sy.positions, ws=ws)
        gy = payoff.snapshot_drift_y(state.y.positions, sx.positions, sy.positions, ws=ws)
        total_x = w * gx if total_x is None else total_x + w * gx
        total_y = w * gy if total_y is None else total_y + w * gy
    return total_x / state.cum, total_y / state.cum


def mfl_ag_step(state: AgState, payoff: Payoff, bases: Bases, cfg: RunConfig,
                ws: Optional[PairBuffers] = None) -> AgState:
    """One averaged-gradient step, then refresh the average representation.

    Rolling mode: the drift is the plain opponent-averaged gradient against the
    rolling cloud (exactly the weighted history average for bilinear payoffs),
    and floor(beta_{k+1} N / B_{k+1}) slots of each rolling cloud are replaced
    by particles of the new snapshot.  History mode: the drift is recomputed
    over all snapshots and the new pair is appended.
    """
    base_mu, base_nu = bases
    k = state.epoch
    xp, yp = state.x.positions, state.y.positions
    if state.mode == "rolling":
        dx = payoff.drift_x(xp, state.avg_y.positions, ws=ws)
        dy = payoff.drift_y(state.avg_x.positions, yp, ws=ws)
    else:
        dx, dy = _history_drift(payoff, state, ws)
    nx = _noise(cfg, DOMAIN_STEP, k, PLAYER_MIN, xp.shape)
    ny = _noise(cfg, DOMAIN_STEP, k, PLAYER_MAX, yp.shape)
    new_x = ParticleSet(_euler(xp, dx, base_mu, cfg, nx, sign=-1.0))
    new_y = ParticleSet(_euler(yp, dy, base_nu, cfg, ny, sign=+1.0))

    k2 = k + 1
    cum2 = state.cum + state.scheme.weight(k2)
    if state.mode == "rolling":
        count = int(state.scheme.weight(k2) * cfg.particles / cum2)
        avg_x = _replace_slots(state.avg_x, new_x, count,
                               stream(cfg.seed, DOMAIN_RESAMPLE, k2, PLAYER_MIN))
        avg_y = _replace_slots(state.avg_y, new_y, count,
                               stream(cfg.seed, DOMAIN_RESAMPLE, k2, PLAYER_MAX))
        return replace(state, x=new_x, y=new_y, epoch=k2, cum=cum2,
                       avg_x=avg_x, avg_y=avg_y)
    if k2 > cfg.history_limit:
        raise ValueError(
            f"history mode reached the snapshot cap ({cfg.history_limit}); raise "
            "RunConfig.history_limit or use rolling mode for bilinear payoffs"
        )
    return replace(state, x=new_x, y=new_y, epoch=k2, cum=cum2,
                   history=state.history + ((new_x, new_y),))


def ag_output(state: AgState, seed: Optional[int] = None) -> Tuple[ParticleSet, ParticleSet]:
    """The averaged output pair.

    Rolling mode returns the rolling clouds (size exactly N).  History mode
    draws floor(beta_k N / B_K) particles uniformly without replacement from
    each snapshot k and concatenates; flooring may leave the output slightly
    smaller than N, which is reported at debug level rather than corrected.
    """
    if state.mode == "rolling":
        return state.avg_x, state.avg_y
    if seed is None:
        raise ValueError("history-mode output needs a seed for the snapshot draws")
    n = state.x.n
    big_k = state.epoch
    counts = [int(state.scheme.weight(k) * n / state.cum) for k in range(1, big_k + 1)]
    total = sum(counts)
    if total == 0:
        raise ValueError(
            "every per-snapshot draw count floored to zero; increase the particle "
            "count or decrease the weight exponent"
        )
    if total < n:
        log.debug("averaged output holds %d particles (< N = %d) due to flooring", total, n)
    parts_x, parts_y = [], []
    for k, count in enumerate(counts, start=1):
        if count == 0:
            continue
        sx, sy = state.history[k - 1]
        gen_x = stream(seed, DOMAIN_OUTPUT, k, PLAYER_MIN)
        gen_y = stream(seed, DOMAIN_OUTPUT, k, PLAYER_MAX)
        parts_x.append(sx.positions[gen_x.permutation(n)[:count]])
        parts_y.append(sy.positions[gen_y.permutation(n)[:count]])
    return ParticleSet(np.concatenate(parts_x)), ParticleSet(np.concatenate(parts_y))


# ---------------------------------------------------------------------------
# Anchored best response
# ---------------------------------------------------------------------------


InnerHook = Callable[[int, int, ParticleSet, ParticleSet, ParticleSet, ParticleSet], None]


def mfl_abr_run(payoff: Payoff, bases: Bases, cfg: RunConfig,
                hook: Optional[Hook] = None,
                inner_hook: Optional[InnerHook] = None,
                snapshot_every: int = 0) -> Trajectory:
    """Run the anchored best-response loop.

    Each outer iteration freezes the outer clouds as the anchor, runs
    ``inner_iters`` Langevin steps on the inner clouds against that anchor,
    then replaces floor(mix_fraction * N) outer particles with inner ones.
    With ``warm_start`` the inner clouds are re-sampled from the bases only
    once, before the first outer iteration; noise streams are keyed by the
    global inner step index either way.
    """
    cfg.require_abr()
    base_mu, base_nu = bases
    n = cfg.particles
    outer_x = _init_cloud(base_mu, n, cfg.seed, DOMAIN_INIT, 0, PLAYER_MIN)
    outer_y = _init_cloud(base_nu, n, cfg.seed, DOMAIN_INIT, 0, PLAYER_MAX)
    ws = PairBuffers()
    count = int(cfg.mix_fraction * n)

    snaps = [(0, outer_x, outer_y)]
    if hook is not None:
        hook(0, outer_x, outer_y)
    inner_x = inner_y = None
    recorded = 0
    for k in range(cfg.outer_iters):  # the outer iterate is its own candidate
        if inner_x is None or not cfg.warm_start:
            inner_x = _init_cloud(base_mu, n, cfg.seed, DOMAIN_INNER_INIT, k, PLAYER_MIN)
            inner_y = _init_cloud(base_nu, n, cfg.seed, DOMAIN_INNER_INIT, k, PLAYER_MAX)
        anchor_x, anchor_y = outer_x, outer_y
        for ell in range(cfg.inner_iters):
            step_idx = k * cfg.inner_iters + ell
            dx = payoff.drift_x(inner_x.positions, anchor_y.positions, ws=ws)
            dy = payoff.drift_y(anchor_x.positions, inner_y.positions, ws=ws)
            nx = _noise(cfg, DOMAIN_INNER_STEP, step_idx, PLAYER_MIN, inner_x.positions.shape)
            ny = _noise(cfg, DOMAIN_INNER_STEP, step_idx, PLAYER_MAX, inner_y.positions.shape)
            inner_x = ParticleSet(_euler(inner_x.positions, dx, base_mu, cfg, nx, sign=-1.0))
            inner_y = ParticleSet(_euler(inner_y.positions, dy, base_nu, cfg, ny, sign=+1.0))
            if inner_hook is not None:
                inner_hook(k, ell, inner_x, inner_y, anchor_x, anchor_y)
        outer_x = _replace_slots(outer_x, inner_x, count,
                                 stream(cfg.seed, DOMAIN_RESAMPLE, k, PLAYER_MIN))
        outer_y = _replace_slots(outer_y, inner_y, count,
                                 stream(cfg.seed, DOMAIN_RESAMPLE, k, PLAYER_MAX))
        label = (k + 1) * cfg.inner_iters
        if hook is not None:
            hook(label, outer_x, outer_y)
        if snapshot_every > 0 and label // snapshot_every > recorded:
            recorded = label // snapshot_every
            snaps.append((label, outer_x, outer_y))
    final_label = cfg.outer_iters * cfg.inner_iters
    if not snaps or snaps[-1][0] != final_label:
        snaps.append((final_label, outer_x, outer_y))
    return Trajectory(algorithm="mfl-abr", snapshots=tuple(snaps),
                      output=(outer_x, outer_y), epochs=final_label,
                      candidates=tuple(snaps))


# ---------------------------------------------------------------------------
# Shared driver
# ---------------------------------------------------------------------------


def run_experiment(algorithm: str, payoff: Payoff, bases: Bases, cfg: RunConfig,
                   snapshot_every: int = 0, hook: Optional[Hook] = None,
                   ag_mode: str = "rolling",
                   init: Optional[Tuple[ParticleSet, ParticleSet]] = None) -> Trajectory:
    """Execute one algorithm and record labeled snapshots.

    Snapshots are taken at label 0 (initialization), every ``snapshot_every``
    epochs when positive, and at the final state.  The trajectory's ``output``
    is the algorithm's candidate solution: the averaged clouds for mfl-ag, the
    final state otherwise.  Runs are pure functions of (cfg, algorithm).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm == "mfl-abr":
        if init is not None:
            raise ValueError("the anchored best-response loop always starts from the bases")
        return mfl_abr_run(payoff, bases, cfg, hook=hook, snapshot_every=snapshot_every)

    ws = PairBuffers()
    if algorithm == "mfl-da":
        state = init_da(bases, cfg, init=init)
        step = lambda s: mfl_da_step(s, payoff, bases, cfg, ws=ws)
        candidate = lambda s: (s.x, s.y)
    else:
        state = init_ag(bases, cfg, mode=ag_mode, init=init)
        step = lambda s: mfl_ag_step(s, payoff, bases, cfg, ws=ws)
        candidate = lambda s: ag_output(s, seed=cfg.seed)

    snaps = [(0, state.x, state.y)]
    cands = [(0,) + candidate(state)]
    if hook is not None:
        hook(0, state.x, state.y)
    for k in range(1, cfg.epochs + 1):
        state = step(state)
        if hook is not None:
            hook(k, state.x, state.y)
        if snapshot_every > 0 and k % snapshot_every == 0:
            snaps.append((k, state.x, state.y))
            cands.append((k,) + candidate(state))
    if snaps[-1][0] != cfg.epochs:
        snaps.append((cfg.epochs, state.x, state.y))
        cands.append((cfg.epochs,) + candidate(state))
    output = cands[-1][1:] if algorithm == "mfl-ag" else (state.x, state.y)
    return Trajectory(algorithm=algorithm, snapshots=tuple(snaps),
                      output=output, epochs=cfg.epochs, candidates=tuple(cands))
