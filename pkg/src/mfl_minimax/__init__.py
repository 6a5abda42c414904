"""Particle solvers for entropy-regularized distributional minimax problems.

Three interacting-particle dynamics (simultaneous descent-ascent, averaged
gradient, anchored best response) drive a pair of empirical measures toward
the mixed Nash equilibrium of min over mu, max over nu of

    L(mu, nu) + temperature * KL(mu || base_mu) - temperature * KL(nu || base_nu)

for bilinear L given by a kernel Q(x, y).  The package also provides
Wasserstein and Nikaido-Isoda diagnostics, a quadrature oracle for 1-D Gibbs
best responses, and a value-iteration loop for zero-sum Markov games whose
per-state subproblems are solved by these dynamics.
"""

__version__ = "0.1.0"

from .core import (
    BaseMeasure,
    CallablePayoff,
    DimensionError,
    DivergenceError,
    ParticleSet,
    Payoff,
    QuadraticPayoff,
    RunConfig,
    SeparablePayoff,
    SigmoidPayoff,
    WeightingScheme,
    cum_weight,
    sample_base,
    separable_linear,
    standard_gaussian,
)
from .dynamics import Trajectory, ag_output, mfl_abr_run, mfl_ag_step, mfl_da_step, run_experiment
from .metrics import (
    GibbsQuadrature,
    QuadratureConfig,
    lsi_lower_bound,
    ni_quadrature,
    ni_three_point,
    w1_empirical_1d,
    w1_to_quadrature,
)
from .objective import bilinear_value, drift_mu, drift_nu, kl_empirical_kde, regularized_value

__all__ = [name for name in dir() if not name.startswith("_")]
