import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfl_minimax.core import (
    CallablePayoff,
    DivergenceError,
    ParticleSet,
    QuadraticPayoff,
    RunConfig,
    SeparablePayoff,
    SigmoidPayoff,
    WeightingScheme,
    cum_weight,
    normal_block,
    sample_base,
    separable_linear,
    standard_gaussian,
    stream,
)


# ---------------------------------------------------------------------------
# ParticleSet
# ---------------------------------------------------------------------------


def test_particle_set_shapes():
    ps = ParticleSet([1.0, 2.0, 3.0])
    assert (ps.n, ps.d) == (3, 1)
    assert ps.positions.shape == (3, 1)
    ps2 = ParticleSet(np.zeros((4, 2)))
    assert (ps2.n, ps2.d) == (4, 2)


def test_particle_set_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((0, 1)))
    with pytest.raises(DivergenceError):
        ParticleSet([np.nan])
    with pytest.raises(DivergenceError):
        ParticleSet([np.inf, 1.0])


def test_particle_set_is_immutable():
    ps = ParticleSet([1.0, 2.0])
    with pytest.raises(ValueError):
        ps.positions[0, 0] = 5.0


# ---------------------------------------------------------------------------
# Base measures and sampling
# ---------------------------------------------------------------------------


def test_sample_base_deterministic(gauss):
    a = sample_base(gauss, 4, seed=7)
    b = sample_base(gauss, 4, seed=7)
    assert np.array_equal(a.positions, b.positions)
    c = sample_base(gauss, 4, seed=8)
    assert not np.array_equal(a.positions, c.positions)


def test_sample_base_moments(gauss):
    ps = sample_base(gauss, 100_000, seed=11)
    x = ps.as_1d()
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.02


def test_sample_base_rejects_nonpositive_n(gauss):
    with pytest.raises(ValueError):
        sample_base(gauss, 0, seed=1)
    with pytest.raises(ValueError):
        sample_base(gauss, -3, seed=1)


def test_base_invariants():
    from mfl_minimax.core import BaseMeasure

    with pytest.raises(ValueError):
        BaseMeasure(
            grad_potential=lambda x: 2.0 * x,
            log_density=lambda x: -((x**2).sum(axis=-1)),
            strong_convexity=2.0,
            grad_lipschitz=1.0,  # r > R is inconsistent
            sampler=lambda n, g: g.normal(size=(n, 1)),
        )
    with pytest.raises(ValueError):
        BaseMeasure(
            grad_potential=lambda x: x + 1.0,  # gradient does not vanish at 0
            log_density=lambda x: -(((x + 1.0) ** 2).sum(axis=-1)) / 2,
            strong_convexity=1.0,
            grad_lipschitz=1.0,
            sampler=lambda n, g: g.normal(size=(n, 1)),
        )


def test_base_gradient_matches_log_density(gauss):
    # grad U must agree with finite differences of -log rho
    pts = normal_block(3, 9, 0, 0, (100, 1)) * 1.5
    eps = 1e-5
    fd = (gauss.log_density(pts - eps) - gauss.log_density(pts + eps)) / (2 * eps)
    grad = gauss.grad_potential(pts)[:, 0]
    assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


def test_streams_are_independent_of_consumption():
    a1 = normal_block(5, 3, 1, 0, (4,))
    _ = normal_block(5, 3, 2, 0, (1000,))  # consuming another stream changes nothing
    a2 = normal_block(5, 3, 1, 0, (4,))
    assert np.array_equal(a1, a2)


def test_distinct_streams_differ():
    assert not np.array_equal(normal_block(5, 3, 1, 0, (8,)), normal_block(5, 3, 1, 1, (8,)))
    assert not np.array_equal(normal_block(5, 3, 1, 0, (8,)), normal_block(6, 3, 1, 0, (8,)))


def test_normal_block_moments():
    z = normal_block(123, 42, 0, 0, (200_000,))
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02


# ---------------------------------------------------------------------------
# Weighting schemes
# ---------------------------------------------------------------------------


def test_cum_weight_unit_and_linear():
    assert cum_weight(WeightingScheme(0.0), 5) == pytest.approx(5.0)
    assert cum_weight(WeightingScheme(1.0), 3) == pytest.approx(6.0)


def test_cum_weight_matches_direct_summation():
    scheme = WeightingScheme(1.5)
    direct = float(np.sum(np.arange(1, 101, dtype=float) ** 1.5))
    assert cum_weight(scheme, 100) == pytest.approx(direct, rel=1e-12)


def test_cum_weight_rejects_bad_k():
    with pytest.raises(ValueError):
        cum_weight(WeightingScheme(1.0), 0)


def test_weight_exponent_restricted_to_nonnegative():
    with pytest.raises(ValueError):
        WeightingScheme(-0.5)


@given(r=st.floats(min_value=0.0, max_value=4.0, allow_nan=False))
@settings(max_examples=25, deadline=None)
def test_cum_weight_strictly_increasing(r):
    scheme = WeightingScheme(r)
    vals = [cum_weight(scheme, k) for k in range(1, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # late relative increments shrink toward zero
    assert scheme.weight(29) / vals[-1] < scheme.weight(2) / vals[1]


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------


def _fd_grad_x(payoff, x, y, eps=1e-5):
    up = payoff.pair_values(x + eps, y)
    dn = payoff.pair_values(x - eps, y)
    return (up - dn) / (2 * eps)


def _fd_grad_y(payoff, x, y, eps=1e-5):
    up = payoff.pair_values(x, y + eps)
    dn = payoff.pair_values(x, y - eps)
    return (up - dn) / (2 * eps)


@pytest.mark.parametrize("payoff", [
    SigmoidPayoff(),
    QuadraticPayoff(scale=0.7),
    separable_linear(1.5, -0.8),
    SeparablePayoff(
        g=lambda x: np.sin(x).sum(axis=-1),
        g_grad=lambda x: np.cos(x),
        h=lambda y: (y**2).sum(axis=-1),
        h_grad=lambda y: 2.0 * y,
    ),
], ids=["sigmoid", "quadratic", "separable-linear", "separable-smooth"])
def test_payoff_gradients_match_finite_differences(payoff):
    x = normal_block(17, 11, 0, 0, (10, 1)) * 1.3
    y = normal_block(17, 11, 1, 0, (10, 1)) * 1.3
    gx = payoff.pair_grad_x(x, y)[:, :, 0]
    gy = payoff.pair_grad_y(x, y)[:, :, 0]
    fx = _fd_grad_x(payoff, x, y)
    fy = _fd_grad_y(payoff, x, y)
    scale = np.maximum(np.abs(fx), 1e-3)
    assert np.max(np.abs(gx - fx) / scale) < 1e-5
    scale = np.maximum(np.abs(fy), 1e-3)
    assert np.max(np.abs(gy - fy) / scale) < 1e-5


def test_sigmoid_payoff_range_and_symmetry():
    q = SigmoidPayoff()
    # |x - y| kept below ~6: beyond that 1/(1 + e^-s) rounds to 1.0 in float64
    x = np.linspace(-2.75, 2.75, 40)[:, None]
    y = np.linspace(-2.5, 2.5, 37)[:, None]
    vals = q.pair_values(x, y)
    assert ((vals > 0.0) & (vals < 1.0)).all()
    assert np.allclose(vals, q.pair_values(y, x).T, rtol=0, atol=0)


def test_even_profile_gradient_vanishes_on_diagonal():
    q = SigmoidPayoff()
    pts = np.array([[0.0], [1.3], [-2.2]])
    g = q.pair_grad_x(pts, pts)
    diag = np.array([g[i, i, 0] for i in range(3)])
    assert np.array_equal(diag, np.zeros(3))


def test_sigmoid_stored_gradient_bound_holds():
    q = SigmoidPayoff()
    u = np.linspace(-8.0, 8.0, 200_001)[:, None]
    g = q.pair_grad_x(u, np.zeros((1, 1)))
    assert np.abs(g).max() <= q.bound_m_min


def test_callable_payoff_broadcasts():
    q = CallablePayoff(
        fn=lambda x, y: np.sum(x * y, axis=-1),
        grad_x=lambda x, y: np.broadcast_to(y, np.broadcast_shapes(x.shape, y.shape)),
        grad_y=lambda x, y: np.broadcast_to(x, np.broadcast_shapes(x.shape, y.shape)),
    )
    x = np.array([[1.0], [2.0]])
    y = np.array([[3.0]])
    assert np.allclose(q.pair_values(x, y), [[3.0], [6.0]])
    assert np.allclose(q.drift_x(x, y), [[3.0], [3.0]])


def test_sigmoid_fast_drift_matches_generic():
    q = SigmoidPayoff()
    x = normal_block(9, 11, 0, 0, (23, 1))
    y = normal_block(9, 11, 1, 0, (31, 1))
    fast = q.drift_x(x, y)
    generic = q.pair_grad_x(x, y).mean(axis=1)
    assert np.allclose(fast, generic, rtol=1e-13, atol=1e-15)
    w = np.full(31, 1.0 / 31)
    assert np.allclose(q.drift_x(x, y, weights=w), generic, rtol=1e-12, atol=1e-14)
    fast_y = q.drift_y(x, y)
    generic_y = q.pair_grad_y(x, y).mean(axis=0)
    assert np.allclose(fast_y, generic_y, rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(temperature=-0.1, step_size=0.1, particles=10, epochs=1, seed=0)
    with pytest.raises(ValueError):
        RunConfig(temperature=0.1, step_size=0.0, particles=10, epochs=1, seed=0)
    with pytest.raises(ValueError):
        RunConfig(temperature=0.1, step_size=0.1, particles=0, epochs=1, seed=0)
    cfg = RunConfig(temperature=0.0, step_size=0.1, particles=10, epochs=0, seed=0)
    assert cfg.temperature == 0.0  # zero-temperature deterministic limit is legal


def test_run_config_abr_replacement_floor():
    cfg = RunConfig(temperature=0.1, step_size=0.1, particles=10, epochs=0, seed=0,
                    outer_iters=2, inner_iters=2, mix_fraction=0.05)
    with pytest.raises(ValueError):
        cfg.require_abr()  # 0.05 * 10 < 1: nothing would ever be replaced
    ok = RunConfig(temperature=0.1, step_size=0.1, particles=10, epochs=0, seed=0,
                   outer_iters=2, inner_iters=2, mix_fraction=1.0)
    ok.require_abr()
