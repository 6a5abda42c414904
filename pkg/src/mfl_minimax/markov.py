"""Two-step solver for zero-sum discounted Markov games with continuous
actions and finitely many states.

Step 1 solves, for every state independently, the entropy-regularized
distributional minimax problem whose kernel is the current state-action value
Q(x, y | s); Step 2 sets V(s) to the regularized value of the returned policy
pair and rebuilds Q from the Bellman formula.  With exact updates the value
error contracts by the discount factor per round, up to the inner solver's NI
tolerance and any injected Bellman error.

Per-state runs draw their seeds from streams keyed by the state index, so
states may be solved in any order (or in parallel) with identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .core import (
    BaseMeasure,
    DivergenceError,
    ParticleSet,
    Payoff,
    RunConfig,
    derive_seed,
    standard_gaussian,
    uniform_block,
)
from .dynamics import run_experiment
from .metrics import QuadratureConfig, ni_quadrature
from .objective import regularized_value

__all__ = [
    "MarkovGame",
    "ValueIterate",
    "SchemeConfig",
    "Step1Result",
    "SchemeResult",
    "ConstantPayoff",
    "ShiftedPayoff",
    "StagePayoff",
    "initial_iterate",
    "state_run_seed",
    "step1_minimax",
    "step2_value_update",
    "run_scheme",
    "build_game",
]

_STATE_DOMAIN = 101
_ROUND_DOMAIN = 102
_INJECT_DOMAIN = 103


class ConstantPayoff(Payoff):
    """Q(x, y) = c: zero gradients, flat drift."""

    def __init__(self, value: float, dim: int = 1):
        self.value = float(value)
        self.dim_x = self.dim_y = dim
        self.bound_m_min = self.bound_m_max = 0.0
        self.sup_bound = abs(self.value)

    def pair_values(self, x, y):
        return np.full((x.shape[0], y.shape[0]), self.value)

    def pair_grad_x(self, x, y):
        return np.zeros((x.shape[0], y.shape[0], x.shape[1]))

    def pair_grad_y(self, x, y):
        return np.zeros((x.shape[0], y.shape[0], y.shape[1]))

    def drift_x(self, x, y, weights=None, ws=None):
        return np.zeros_like(x)

    def drift_y(self, x, y, weights=None, ws=None):
        return np.zeros_like(y)


class ShiftedPayoff(Payoff):
    """inner payoff plus a constant (gradients and drifts unchanged)."""

    def __init__(self, inner: Payoff, offset: float):
        self.inner = inner
        self.offset = float(offset)
        self.dim_x, self.dim_y = inner.dim_x, inner.dim_y
        self.bound_m_min, self.bound_m_max = inner.bound_m_min, inner.bound_m_max
        if inner.sup_bound is not None:
            self.sup_bound = inner.sup_bound + abs(self.offset)

    def pair_values(self, x, y):
        return self.inner.pair_values(x, y) + self.offset

    def pair_grad_x(self, x, y):
        return self.inner.pair_grad_x(x, y)

    def pair_grad_y(self, x, y):
        return self.inner.pair_grad_y(x, y)

    def drift_x(self, x, y, weights=None, ws=None):
        return self.inner.drift_x(x, y, weights=weights, ws=ws)

    def drift_y(self, x, y, weights=None, ws=None):
        return self.inner.drift_y(x, y, weights=weights, ws=ws)


class StagePayoff(Payoff):
    """Generic state-action value built from game callables and a value vector:

        Q(x, y) = reward(s, x, y) + discount * transition(s, x, y) . v + offset

    The callables follow the broadcast convention of ``CallablePayoff``; the
    transition returns (..., n_states).  Gradient callables may be None when
    the corresponding quantity does not depend on the actions.
    """

    def __init__(self, game: "MarkovGame", s: int, v: np.ndarray, offset: float = 0.0):
        self.game, self.s, self.v, self.offset = game, s, np.asarray(v, float), float(offset)
        self.dim_x = self.dim_y = game.dim

    def pair_values(self, x, y):
        g, s = self.game, self.s
        xb, yb = x[:, None, :], y[None, :, :]
        vals = np.asarray(g.reward(s, xb, yb), dtype=np.float64)
        if g.discount > 0.0:
            probs = np.asarray(g.transition(s, xb, yb), dtype=np.float64)
            vals = vals + g.discount * (probs @ self.v)
        return vals + self.offset

    def _pair_grad(self, x, y, reward_grad, transition_grad):
        xb, yb = x[:, None, :], y[None, :, :]
        shape = (x.shape[0], y.shape[0], self.game.dim)
        total = np.zeros(shape)
        if reward_grad is not None:
            total += np.broadcast_to(np.asarray(reward_grad(self.s, xb, yb), float), shape)
        if transition_grad is not None and self.game.discount > 0.0:
            gp = np.asarray(transition_grad(self.s, xb, yb), dtype=np.float64)
            total += self.game.discount * np.einsum("...sd,s->...d", gp, self.v)
        return total

    def pair_grad_x(self, x, y):
        return self._pair_grad(x, y, self.game.reward_grad_x, self.game.transition_grad_x)

    def pair_grad_y(self, x, y):
        return self._pair_grad(x, y, self.game.reward_grad_y, self.game.transition_grad_y)


@dataclass(frozen=True)
class MarkovGame:
    """Finite-state zero-sum Markov game with continuous action spaces.

    ``reward(s, x, y)`` and the optional gradient callables follow the
    broadcast convention; ``transition(s, x, y)`` returns a probability vector
    over states on the trailing axis.  ``stage_payoff(s, v, offset)`` builds
    the per-state kernel; the default uses :class:`StagePayoff`, and the
    built-in families install specialized fast versions.
    """

    n_states: int
    reward: Callable
    transition: Callable
    discount: float
    temperature: float
    bases: Tuple[BaseMeasure, BaseMeasure]
    reward_grad_x: Optional[Callable] = None
    reward_grad_y: Optional[Callable] = None
    transition_grad_x: Optional[Callable] = None
    transition_grad_y: Optional[Callable] = None
    dim: int = 1
    payoff_builder: Optional[Callable] = None
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("need at least one state")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(f"s{i}" for i in range(self.n_states)))
        self._check_transitions()

    def _check_transitions(self):
        # spot-check stochasticity on a small deterministic action grid
        pts = np.array([[-1.0], [0.0], [1.0]]) if self.dim == 1 else np.zeros((1, self.dim))
        for s in range(self.n_states):
            probs = np.asarray(self.transition(s, pts[:, None, :], pts[None, :, :]), float)
            if probs.shape[-1] != self.n_states:
                raise ValueError("transition must return a vector over states")
            if (probs < -1e-12).any() or np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-10:
                raise ValueError(f"transition rows at state {s} are not stochastic")

    def stage_payoff(self, s: int, v: np.ndarray, offset: float = 0.0) -> Payoff:
        if self.payoff_builder is not None:
            return self.payoff_builder(s, np.asarray(v, float), offset)
        return StagePayoff(self, s, v, offset)

    def expected_continuation(self, s: int, x, y, v: np.ndarray):
        """discount * E_{s'}[v(s')] on broadcast actions; exact from the kernel."""
        probs = np.asarray(self.transition(s, x, y), dtype=np.float64)
        return self.discount * (probs @ np.asarray(v, float))


@dataclass(frozen=True)
class ValueIterate:
    """One round's value vector, its induced per-state kernels, and policies."""

    v: np.ndarray
    payoffs: Tuple[Payoff, ...]
    policies: Optional[Tuple[Tuple[ParticleSet, ParticleSet], ...]] = None

    def audit_q_consistency(self, game: MarkovGame, prev_v: np.ndarray,
                            tol: float, n_points: int = 5) -> float:
        """Max |Q(x,y|s) - reward - discount E[prev_v]| over an action grid;
        raises if it exceeds tol."""
        pts = np.linspace(-2.0, 2.0, n_points)[:, None]
        worst = 0.0
        for s, payoff in enumerate(self.payoffs):
            q = payoff.pair_values(pts, pts)
            r = np.asarray(game.reward(s, pts[:, None, :], pts[None, :, :]), float)
            cont = game.expected_continuation(s, pts[:, None, :], pts[None, :, :], prev_v)
            worst = max(worst, float(np.abs(q - r - cont).max()))
        if worst > tol:
            raise AssertionError(f"Q-function inconsistent with Bellman formula: {worst:.3e} > {tol}")
        return worst


@dataclass(frozen=True)
class SchemeConfig:
    """Inner solver choice and budgets for the two-step scheme."""

    solver: str
    run: RunConfig
    ni_tolerance: float = 0.05
    rounds: int = 1
    epsilon_q: float = 0.0
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    snapshot_every: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.solver not in ("mfl-ag", "mfl-abr", "mfl-da"):
            raise ValueError(f"unknown inner solver {self.solver!r}")
        if self.ni_tolerance < 0.0:
            raise ValueError("ni_tolerance must be >= 0")
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.epsilon_q < 0.0:
            raise ValueError("epsilon_q must be >= 0")


@dataclass(frozen=True)
class Step1Result:
    policies: Tuple[Optional[Tuple[ParticleSet, ParticleSet]], ...]
    ni: Tuple[float, ...]
    flagged: Tuple[int, ...]
    failures: Tuple[Tuple[int, str], ...]


@dataclass(frozen=True)
class SchemeResult:
    iterates: Tuple[ValueIterate, ...]
    gaps: Tuple[float, ...]          # sup-norm of successive value differences
    step1_reports: Tuple[Step1Result, ...]


def initial_iterate(game: MarkovGame, v0: Optional[np.ndarray] = None) -> ValueIterate:
    v = np.zeros(game.n_states) if v0 is None else np.asarray(v0, dtype=np.float64)
    if v.shape != (game.n_states,):
        raise ValueError(f"value vector must have shape ({game.n_states},)")
    payoffs = tuple(game.stage_payoff(s, v) for s in range(game.n_states))
    return ValueIterate(v=v, payoffs=payoffs)


def state_run_seed(seed: int, s: int) -> int:
    """Seed of the state-s inner run; keyed by the state index only."""
    return derive_seed(seed, _STATE_DOMAIN, s)


def _solve_state(game: MarkovGame, payoff: Payoff, cfg: SchemeConfig, seed: int, s: int):
    run_cfg = replace(cfg.run, seed=state_run_seed(seed, s))
    traj = run_experiment(cfg.solver, payoff, game.bases, run_cfg,
                          snapshot_every=cfg.snapshot_every)
    x, y = traj.output
    ni = ni_quadrature(payoff, x, y, game.temperature, game.bases, cfg.quadrature)
    return (x, y), ni


def step1_minimax(game: MarkovGame, iterate: ValueIterate, cfg: SchemeConfig,
                  seed: int) -> Step1Result:
    """Solve the per-state minimax problems; states are independent.

    Returns the policy pair and quadrature NI estimate per state, the indices
    whose NI exceeded the tolerance, and per-state failure messages for runs
    that diverged (their policy slot is None).
    """
    results: list = [None] * game.n_states
    failures: list = []

    def solve(s):
        return _solve_state(game, iterate.payoffs[s], cfg, seed, s)

    if cfg.threads != 1:
        workers = cfg.threads if cfg.threads > 0 else None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {s: pool.submit(solve, s) for s in range(game.n_states)}
            for s, fut in futures.items():
                try:
                    results[s] = fut.result()
                except DivergenceError as exc:
                    failures.append((s, str(exc)))
    else:
        for s in range(game.n_states):
            try:
                results[s] = solve(s)
            except DivergenceError as exc:
                failures.append((s, str(exc)))

    policies = tuple(res[0] if res else None for res in results)
    ni = tuple(res[1] if res else math.inf for res in results)
    flagged = tuple(s for s, val in enumerate(ni) if val > cfg.ni_tolerance)
    return Step1Result(policies=policies, ni=ni, flagged=flagged,
                       failures=tuple(failures))


def step2_value_update(game: MarkovGame, iterate: ValueIterate,
                       policies: Sequence[Tuple[ParticleSet, ParticleSet]],
                       epsilon_q: float = 0.0,
                       inject_seed: Optional[int] = None) -> ValueIterate:
    """Evaluate the policies on the current kernels and rebuild the kernels
    from the Bellman formula.

    The default update is exact.  With ``epsilon_q`` > 0 each new kernel is
    shifted by a constant drawn uniformly from [-epsilon_q, epsilon_q] (seeded
    by ``inject_seed``), modeling a bounded Bellman estimation error.
    """
    if len(policies) != game.n_states or any(p is None for p in policies):
        raise ValueError("step 2 needs a policy pair for every state")
    v_new = np.empty(game.n_states)
    for s, (x, y) in enumerate(policies):
        v_new[s] = regularized_value(iterate.payoffs[s], x, y,
                                     game.temperature, game.bases)
    if not np.isfinite(v_new).all():
        bad = np.flatnonzero(~np.isfinite(v_new)).tolist()
        raise DivergenceError(f"non-finite value update at states {bad}: {v_new}")
    offsets = np.zeros(game.n_states)
    if epsilon_q > 0.0:
        if inject_seed is None:
            raise ValueError("epsilon_q > 0 needs an inject_seed")
        u = uniform_block(inject_seed, _INJECT_DOMAIN, 0, 0, (game.n_states,))
        offsets = epsilon_q * (2.0 * u - 1.0)
    payoffs = tuple(game.stage_payoff(s, v_new, offset=float(offsets[s]))
                    for s in range(game.n_states))
    return ValueIterate(v=v_new, payoffs=payoffs, policies=tuple(policies))


def run_scheme(game: MarkovGame, cfg: SchemeConfig, seed: int) -> SchemeResult:
    """Alternate Step 1 and Step 2 for the configured number of rounds.

    Logs the sup-norm gap between successive value vectors; deterministic for
    fixed (game, cfg, seed).  Raises DivergenceError if any state's inner
    solver diverged.
    """
    iterate = initial_iterate(game)
    iterates = [iterate]
    reports = []
    gaps = []
    for k in range(cfg.rounds):
        round_seed = derive_seed(seed, _ROUND_DOMAIN, k)
        report = step1_minimax(game, iterate, cfg, round_seed)
        reports.append(report)
        if report.failures:
            detail = "; ".join(f"state {s}: {msg}" for s, msg in report.failures)
            raise DivergenceError(f"inner solver diverged in round {k}: {detail}")
        nxt = step2_value_update(game, iterate, report.policies,
                                 epsilon_q=cfg.epsilon_q,
                                 inject_seed=derive_seed(round_seed, _INJECT_DOMAIN, k))
        gaps.append(float(np.max(np.abs(nxt.v - iterate.v))))
        iterates.append(nxt)
        iterate = nxt
    return SchemeResult(iterates=tuple(iterates), gaps=tuple(gaps),
                        step1_reports=tuple(reports))


# ---------------------------------------------------------------------------
# Built-in game families (loadable from run configs)
# ---------------------------------------------------------------------------


def _per_state(values, n_states: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 1:
        arr = np.full(n_states, arr[0])
    if arr.size != n_states:
        raise ValueError(f"need 1 or {n_states} values, got {arr.size}")
    return arr


def build_game(n_states: int, discount: float, temperature: float,
               reward_family: str, reward_scale,
               transition_family: str = "uniform",
               transition_matrix=None, reward_offset=0.0, dim: int = 1,
               bases: Optional[Tuple[BaseMeasure, BaseMeasure]] = None) -> MarkovGame:
    """Assemble a game from the named built-in reward/transition families.

    Reward families: ``constant`` (r = c_s), ``quadratic`` (r = c_s <x, y>),
    and ``affine`` (r = a_s + c_s <x, y> with offsets from ``reward_offset``).
    Transition families: ``uniform`` and ``matrix`` (explicit row-stochastic
    matrix); both are action-independent, so their action gradients vanish and
    the stage kernels reduce to shifted constant/quadratic payoffs.
    """
    scales = _per_state(reward_scale, n_states)
    offsets_r = _per_state(reward_offset, n_states)
    if bases is None:
        bases = (standard_gaussian(dim), standard_gaussian(dim))

    if transition_family == "uniform":
        matrix = np.full((n_states, n_states), 1.0 / n_states)
    elif transition_family == "matrix":
        matrix = np.asarray(transition_matrix, dtype=np.float64)
        if matrix.shape != (n_states, n_states):
            raise ValueError(f"transition matrix must be {(n_states, n_states)}")
        if (matrix < 0).any() or np.abs(matrix.sum(axis=1) - 1.0).max() > 1e-10:
            raise ValueError("transition matrix rows must be probability vectors")
    else:
        raise ValueError(f"unknown transition family {transition_family!r}")

    def transition(s, x, y):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return np.broadcast_to(matrix[s], shape + (n_states,))

    if reward_family == "constant":
        def reward(s, x, y):
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
            return np.full(shape, scales[s])

        def builder(s, v, offset):
            base_val = scales[s] + discount * float(matrix[s] @ v) + offset
            return ConstantPayoff(base_val, dim=dim)

        grads = dict()
    elif reward_family in ("quadratic", "affine"):
        adds = offsets_r if reward_family == "affine" else np.zeros(n_states)

        def reward(s, x, y):
            dots = np.sum(np.asarray(x, float) * np.asarray(y, float), axis=-1)
            return adds[s] + scales[s] * dots

        def reward_grad_x(s, x, y):
            return scales[s] * np.broadcast_to(
                np.asarray(y, float),
                np.broadcast_shapes(np.shape(x), np.shape(y)))

        def reward_grad_y(s, x, y):
            return scales[s] * np.broadcast_to(
                np.asarray(x, float),
                np.broadcast_shapes(np.shape(x), np.shape(y)))

        def builder(s, v, offset):
            from .core import QuadraticPayoff
            shift = adds[s] + discount * float(matrix[s] @ v) + offset
            return ShiftedPayoff(QuadraticPayoff(scale=float(scales[s]), dim=dim), shift)

        grads = dict(reward_grad_x=reward_grad_x, reward_grad_y=reward_grad_y)
    else:
        raise ValueError(f"unknown reward family {reward_family!r}")

    return MarkovGame(
        n_states=n_states,
        reward=reward,
        transition=transition,
        discount=discount,
        temperature=temperature,
        bases=bases,
        dim=dim,
        payoff_builder=builder,
        **grads,
    )
