"""Shared oracle helpers used by both the module tests and the acceptance
suite (which re-runs them at its own pinned budgets)."""

import itertools

import numpy as np

from mfl_minimax.core import ParticleSet, WeightingScheme, normal_block
from mfl_minimax.dynamics import AgState, _history_drift
from mfl_minimax.metrics import w1_empirical_1d


def w1_bruteforce(x: ParticleSet, y: ParticleSet) -> float:
    """Minimum mean |x_i - y_sigma(i)| over every pairing (n <= 6)."""
    xs, ys = x.as_1d(), y.as_1d()
    assert xs.shape[0] <= 6
    best = np.inf
    for perm in itertools.permutations(range(ys.shape[0])):
        best = min(best, float(np.mean(np.abs(xs - ys[list(perm)]))))
    return best


def check_w1_bruteforce_equivalence(seed: int, cases: int):
    for trial in range(cases):
        n = 1 + trial % 6
        x = ParticleSet(3.0 * normal_block(seed, 71, trial, 0, (n, 1)))
        y = ParticleSet(3.0 * normal_block(seed, 71, trial, 1, (n, 1)))
        fast = w1_empirical_1d(x, y)
        slow = w1_bruteforce(x, y)
        assert abs(fast - slow) < 1e-12, (trial, fast, slow)


def check_w1_metric_axioms(seed: int, triples: int):
    for trial in range(triples):
        n = 2 + trial % 7
        pts = [ParticleSet(2.0 * normal_block(seed, 72, trial, tag, (n, 1)))
               for tag in range(3)]
        a, b, c = pts
        dab, dba = w1_empirical_1d(a, b), w1_empirical_1d(b, a)
        assert dab == dba, "symmetry must be exact"
        dac, dcb = w1_empirical_1d(a, c), w1_empirical_1d(c, b)
        assert dab <= dac + dcb + 1e-12, "triangle inequality"
        assert w1_empirical_1d(a, a) == 0.0
        perm = np.argsort(normal_block(seed, 73, trial, 0, (n,)))
        shuffled = ParticleSet(a.positions[perm])
        assert w1_empirical_1d(a, shuffled) == 0.0, "identity of indiscernibles"


def random_history_state(seed: int, epochs: int, n: int, exponent: float = 1.0) -> AgState:
    scheme = WeightingScheme(exponent)
    history = []
    cum = 0.0
    for k in range(1, epochs + 1):
        history.append((ParticleSet(2.0 * normal_block(seed, 81, k, 0, (n, 1))),
                        ParticleSet(2.0 * normal_block(seed, 81, k, 1, (n, 1)))))
        cum += scheme.weight(k)
    x, y = history[-1]
    return AgState(x=x, y=y, epoch=epochs, scheme=scheme, mode="history",
                   cum=cum, history=tuple(history))


def weighted_concat_drift(payoff, state: AgState):
    """Oracle for the averaged drift: evaluate against the single weighted
    concatenation of every snapshot (the bilinear collapse)."""
    n = state.x.n
    snaps_y = np.concatenate([sy.positions for _, sy in state.history])
    snaps_x = np.concatenate([sx.positions for sx, _ in state.history])
    w = np.concatenate([
        np.full(n, state.scheme.weight(k) / (state.cum * n))
        for k in range(1, state.epoch + 1)
    ])
    dx = payoff.drift_x(state.x.positions, snaps_y, weights=w)
    dy = payoff.drift_y(snaps_x, state.y.positions, weights=w)
    return dx, dy


def check_history_concat_drift_identity(payoff, steps: int, seed: int, rtol=1e-12):
    """History-weighted drift equals the rolling/concatenated form to rtol on
    randomly drawn states (the exact-equality collapse for bilinear kernels)."""
    for trial in range(steps):
        exponent = (0.0, 1.0, 1.5, 2.0)[trial % 4]
        epochs = 2 + trial % 9
        state = random_history_state(seed + trial, epochs=epochs, n=8 + trial % 13,
                                     exponent=exponent)
        dx, dy = _history_drift(payoff, state, None)
        ox, oy = weighted_concat_drift(payoff, state)
        assert np.allclose(dx, ox, rtol=rtol, atol=1e-13), trial
        assert np.allclose(dy, oy, rtol=rtol, atol=1e-13), trial


def check_payoff_gradients_fd(payoff, seed: int, points: int = 100,
                              eps: float = 1e-5, rtol: float = 1e-5):
    x = 1.5 * normal_block(seed, 74, 0, 0, (points, 1))
    y = 1.5 * normal_block(seed, 74, 1, 0, (points, 1))
    gx = payoff.pair_grad_x(x, y)[:, :, 0]
    gy = payoff.pair_grad_y(x, y)[:, :, 0]
    fx = (payoff.pair_values(x + eps, y) - payoff.pair_values(x - eps, y)) / (2 * eps)
    fy = (payoff.pair_values(x, y + eps) - payoff.pair_values(x, y - eps)) / (2 * eps)
    for got, want in ((gx, fx), (gy, fy)):
        scale = np.maximum(np.abs(want), 1e-3)
        assert np.max(np.abs(got - want) / scale) < rtol


def check_base_gradient_fd(base, seed: int, points: int = 100,
                           eps: float = 1e-5, rtol: float = 1e-5):
    pts = 1.5 * normal_block(seed, 75, 0, 0, (points, 1))
    fd = (base.log_density(pts - eps) - base.log_density(pts + eps)) / (2 * eps)
    grad = base.grad_potential(pts)[:, 0]
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(grad - fd) / scale) < rtol
