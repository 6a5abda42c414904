"""Experiment runner.

Reads a preset name or an INI config file, executes the configured run, and
writes CSV artifacts plus a JSON manifest that is sufficient to reproduce the
run byte-for-byte.

Artifacts (single-algorithm runs, written to the output directory):
  snapshots.csv    epoch,player,index,x0[,x1...]   particle clouds at cadence
  convergence.csv  epoch,w1_mu,w1_nu               per-step W1 distances
  ni.csv           epoch,ni                        quadrature NI of candidates
  meta.json                                        resolved config + version

Three-algorithm comparisons write one subdirectory per algorithm (snapshots
and convergence as above) plus a top-level ni.csv with the 3-point NI per
shared checkpoint: epoch,ni_ag,ni_abr,ni_da.

Markov runs write values.csv (round,state,value,gap) and meta.json.

Floats are serialized with 17 significant digits so CSV round-trips are
lossless.  Exit codes: 0 success, 1 configuration error (nothing written),
2 numerical divergence (partial CSVs are flushed first).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .core import (
    BaseMeasure,
    DivergenceError,
    ParticleSet,
    Payoff,
    QuadraticPayoff,
    RunConfig,
    SigmoidPayoff,
    derive_seed,
    separable_linear,
    standard_gaussian,
)
from .dynamics import ALGORITHMS, run_experiment
from .markov import SchemeConfig, build_game, run_scheme
from .metrics import QuadratureConfig, ni_quadrature, ni_three_point, w1_empirical_1d

__all__ = ["ExperimentConfig", "ConfigError", "PRESETS", "run_cli", "main"]

ENV_OUT = "MFL_MINIMAX_OUT"
_FLOAT_FMT = "%.17g"
_CLI_DOMAIN = 201


class ConfigError(ValueError):
    """The configuration cannot be resolved into a runnable experiment."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (the manifest serializes this)."""

    mode: str                      # one of ALGORITHMS, or "compare" / "markov"
    seed: int = 0
    temperature: float = 0.01
    step_size: float = 0.3
    particles: int = 1000
    epochs: int = 1000
    weight_exponent: float = 1.0
    outer_iters: int = 50
    inner_iters: int = 20
    mix_fraction: float = 0.15
    warm_start: bool = True
    snapshot_every: int = 100
    payoff_name: str = "sigmoid"
    payoff_params: Dict[str, float] = field(default_factory=dict)
    base_name: str = "gaussian"
    dimension: int = 1
    metric_w1_step: bool = True
    metric_ni: bool = True
    quad_nodes: int = 4096
    out_dir: str = "out"
    threads: int = 1
    # markov section
    markov_states: int = 2
    markov_discount: float = 0.9
    markov_reward: str = "quadratic"
    markov_reward_scale: Tuple[float, ...] = (1.0,)
    markov_transition: str = "uniform"
    markov_transition_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    markov_rounds: int = 5
    markov_epsilon_q: float = 0.0
    markov_ni_tolerance: float = 0.1

    def __post_init__(self):
        if self.mode not in ALGORITHMS + ("compare", "markov"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.payoff_name not in ("sigmoid", "quadratic", "separable"):
            raise ConfigError(f"unknown payoff {self.payoff_name!r}")
        if self.base_name != "gaussian":
            raise ConfigError(f"unknown base measure {self.base_name!r}")
        try:
            self.run_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def run_config(self, seed: Optional[int] = None) -> RunConfig:
        return RunConfig(
            temperature=self.temperature,
            step_size=self.step_size,
            particles=self.particles,
            epochs=self.epochs,
            seed=self.seed if seed is None else seed,
            weight_exponent=self.weight_exponent,
            outer_iters=self.outer_iters,
            inner_iters=self.inner_iters,
            mix_fraction=self.mix_fraction,
            warm_start=self.warm_start,
        )

    def payoff(self) -> Payoff:
        p = self.payoff_params
        if self.payoff_name == "sigmoid":
            return SigmoidPayoff(dim=self.dimension)
        if self.payoff_name == "quadratic":
            return QuadraticPayoff(scale=p.get("scale", 1.0), dim=self.dimension)
        return separable_linear(p.get("slope_x", 1.0), p.get("slope_y", 1.0),
                                dim=self.dimension)

    def bases(self) -> Tuple[BaseMeasure, BaseMeasure]:
        base = standard_gaussian(self.dimension)
        return (base, base)

    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(nodes=self.quad_nodes)


PRESETS: Dict[str, Dict] = {
    # Three-algorithm comparison on the sigmoid game at low temperature.
    "figure1": dict(
        mode="compare", temperature=0.01, step_size=0.3, particles=1000,
        epochs=1000, weight_exponent=1.0, outer_iters=50, inner_iters=20,
        mix_fraction=0.15, warm_start=True, snapshot_every=100,
        payoff_name="sigmoid",
    ),
    # Averaged-gradient run on the quadratic kernel whose equilibrium is the
    # Gaussian base pair itself.
    "quadratic-oracle": dict(
        mode="mfl-ag", temperature=0.5, step_size=0.05, particles=2000,
        epochs=2000, weight_exponent=1.0, snapshot_every=100,
        payoff_name="quadratic", payoff_params={"scale": 1.0},
    ),
    # Anchored best response on a separable kernel with a quadrature-computable
    # equilibrium (Gaussian tilted by a linear potential).
    "separable-oracle": dict(
        mode="mfl-abr", temperature=0.5, step_size=0.1, particles=5000,
        epochs=0, outer_iters=32, inner_iters=100, mix_fraction=0.12,
        warm_start=False, snapshot_every=100,
        payoff_name="separable", payoff_params={"slope_x": 1.5, "slope_y": 1.5},
    ),
    # Two-state quadratic Markov game solved by the two-step scheme.
    "markov-demo": dict(
        mode="markov", temperature=0.5, step_size=0.05, particles=1000,
        epochs=300, snapshot_every=0, payoff_name="quadratic",
        markov_states=2, markov_discount=0.9, markov_reward="quadratic",
        markov_reward_scale=(1.0, 0.5), markov_rounds=5,
        markov_ni_tolerance=0.1,
    ),
}


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_RUN_FIELDS = {
    "algorithm": ("mode", str),
    "seed": ("seed", int),
    "temperature": ("temperature", float),
    "step_size": ("step_size", float),
    "particles": ("particles", int),
    "epochs": ("epochs", int),
    "weight_exponent": ("weight_exponent", float),
    "outer_iters": ("outer_iters", int),
    "inner_iters": ("inner_iters", int),
    "mix_fraction": ("mix_fraction", float),
    "warm_start": ("warm_start", None),  # bool, parsed specially
    "snapshot_every": ("snapshot_every", int),
    "threads": ("threads", int),
}

_MARKOV_FIELDS = {
    "states": ("markov_states", int),
    "discount": ("markov_discount", float),
    "reward": ("markov_reward", str),
    "transition": ("markov_transition", str),
    "rounds": ("markov_rounds", int),
    "epsilon_q": ("markov_epsilon_q", float),
    "ni_tolerance": ("markov_ni_tolerance", float),
}

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config(path: str) -> ExperimentConfig:
    """Parse an INI experiment file into a resolved ExperimentConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    kwargs: Dict = {}
    try:
        for section in parser.sections():
            if section == "run":
                for key, raw in parser.items(section):
                    if key not in _RUN_FIELDS:
                        raise ConfigError(f"unknown [run] key {key!r}")
                    name, conv = _RUN_FIELDS[key]
                    if key == "warm_start":
                        if raw.lower() not in _BOOL:
                            raise ConfigError(f"warm_start must be boolean, got {raw!r}")
                        kwargs[name] = _BOOL[raw.lower()]
                    else:
                        kwargs[name] = conv(raw)
            elif section == "payoff":
                params = {}
                for key, raw in parser.items(section):
                    if key == "name":
                        kwargs["payoff_name"] = raw
                    else:
                        params[key] = float(raw)
                if params:
                    kwargs["payoff_params"] = params
            elif section == "base":
                for key, raw in parser.items(section):
                    if key == "name":
                        kwargs["base_name"] = raw
                    elif key == "dimension":
                        kwargs["dimension"] = int(raw)
                    else:
                        raise ConfigError(f"unknown [base] key {key!r}")
            elif section == "metrics":
                for key, raw in parser.items(section):
                    if key == "w1_step":
                        kwargs["metric_w1_step"] = _BOOL[raw.lower()]
                    elif key == "ni":
                        kwargs["metric_ni"] = _BOOL[raw.lower()]
                    elif key == "quad_nodes":
                        kwargs["quad_nodes"] = int(raw)
                    else:
                        raise ConfigError(f"unknown [metrics] key {key!r}")
            elif section == "output":
                for key, raw in parser.items(section):
                    if key == "directory":
                        kwargs["out_dir"] = raw
                    else:
                        raise ConfigError(f"unknown [output] key {key!r}")
            elif section == "markov":
                for key, raw in parser.items(section):
                    if key in _MARKOV_FIELDS:
                        name, conv = _MARKOV_FIELDS[key]
                        kwargs[name] = conv(raw)
                    elif key == "reward_scale":
                        kwargs["markov_reward_scale"] = tuple(
                            float(v) for v in raw.replace(";", ",").split(",") if v.strip()
                        )
                    elif key == "transition_matrix":
                        rows = [r for r in raw.split(";") if r.strip()]
                        kwargs["markov_transition_matrix"] = tuple(
                            tuple(float(v) for v in r.split(",")) for r in rows
                        )
                    else:
                        raise ConfigError(f"unknown [markov] key {key!r}")
            else:
                raise ConfigError(f"unknown config section [{section}]")
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config {path!r}: {exc}") from exc
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


class CsvLog:
    """Row accumulator with fixed column order and lossless float formatting."""

    def __init__(self, path: Path, columns):
        self.path = path
        self.columns = tuple(columns)
        self.rows: List[tuple] = []

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"{self.path.name}: expected {len(self.columns)} fields")
        self.rows.append(row)

    def flush(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_format_field(v) for v in row) + "\n")


def _format_field(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _FLOAT_FMT % float(v)
    return str(v)


def _snapshot_columns(dim: int):
    return ("epoch", "player", "index") + tuple(f"x{i}" for i in range(dim))


def _log_snapshot(logch: CsvLog, epoch: int, x: ParticleSet, y: ParticleSet):
    for tag, cloud in (("mu", x), ("nu", y)):
        pos = cloud.positions
        for i in range(cloud.n):
            logch.add(epoch, tag, i, *pos[i])


class _StepDistanceHook:
    """Accumulates per-update W1 step distances and cadence snapshots."""

    def __init__(self, conv: Optional[CsvLog], snaps: Optional[CsvLog], every: int):
        self.conv = conv
        self.snaps = snaps
        self.every = every
        self.prev: Optional[Tuple[int, ParticleSet, ParticleSet]] = None

    def __call__(self, epoch: int, x: ParticleSet, y: ParticleSet):
        if self.conv is not None and self.prev is not None:
            _, px, py = self.prev
            self.conv.add(epoch, w1_empirical_1d(px, x), w1_empirical_1d(py, y))
        self.prev = (epoch, x, y)
        if self.snaps is not None and (epoch == 0 or (self.every > 0 and epoch % self.every == 0)):
            _log_snapshot(self.snaps, epoch, x, y)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _algorithm_logs(out: Path, cfg: ExperimentConfig):
    snaps = CsvLog(out / "snapshots.csv", _snapshot_columns(cfg.dimension))
    conv = None
    if cfg.metric_w1_step and cfg.dimension == 1:
        conv = CsvLog(out / "convergence.csv", ("epoch", "w1_mu", "w1_nu"))
    return snaps, conv


def _run_single(cfg: ExperimentConfig, out: Path, quiet: bool, logs: List[CsvLog]):
    payoff, bases = cfg.payoff(), cfg.bases()
    snaps, conv = _algorithm_logs(out, cfg)
    logs.append(snaps)
    if conv is not None:
        logs.append(conv)
    hook = _StepDistanceHook(conv, snaps, cfg.snapshot_every)
    traj = run_experiment(cfg.mode, payoff, bases, cfg.run_config(),
                          snapshot_every=cfg.snapshot_every, hook=hook)
    if cfg.metric_ni and cfg.dimension == 1:
        ni = CsvLog(out / "ni.csv", ("epoch", "ni"))
        logs.append(ni)
        for epoch, x, y in traj.candidates:
            ni.add(epoch, ni_quadrature(payoff, x, y, cfg.temperature, bases,
                                        cfg.quadrature()))
    if not quiet:
        print(f"{cfg.mode}: {traj.epochs} epochs, output sizes "
              f"({traj.output[0].n}, {traj.output[1].n})")


def _run_compare(cfg: ExperimentConfig, out: Path, quiet: bool, logs: List[CsvLog]):
    payoff, bases = cfg.payoff(), cfg.bases()
    trajectories = {}
    order = ("mfl-ag", "mfl-abr", "mfl-da")
    for idx, alg in enumerate(order):
        sub = out / alg
        snaps, conv = _algorithm_logs(sub, cfg)
        logs.append(snaps)
        if conv is not None:
            logs.append(conv)
        hook = _StepDistanceHook(conv, snaps, cfg.snapshot_every)
        run_cfg = cfg.run_config(seed=derive_seed(cfg.seed, _CLI_DOMAIN, idx))
        trajectories[alg] = run_experiment(alg, payoff, bases, run_cfg,
                                           snapshot_every=cfg.snapshot_every, hook=hook)
        if not quiet:
            print(f"{alg}: done ({trajectories[alg].epochs} epochs)")
    if cfg.metric_ni and cfg.dimension == 1:
        ni = CsvLog(out / "ni.csv", ("epoch", "ni_ag", "ni_abr", "ni_da"))
        logs.append(ni)
        by_label = {}
        for alg in order:
            for epoch, x, y in trajectories[alg].candidates:
                by_label.setdefault(epoch, {})[alg] = (x, y)
        for epoch in sorted(by_label):
            entry = by_label[epoch]
            if len(entry) != 3:
                continue
            triple = [entry[a] for a in order]
            vals = ni_three_point(payoff, triple, cfg.temperature, bases)
            ni.add(epoch, *vals)


def _run_markov(cfg: ExperimentConfig, out: Path, quiet: bool, logs: List[CsvLog]):
    game = build_game(
        n_states=cfg.markov_states,
        discount=cfg.markov_discount,
        temperature=cfg.temperature,
        reward_family=cfg.markov_reward,
        reward_scale=cfg.markov_reward_scale,
        transition_family=cfg.markov_transition,
        transition_matrix=cfg.markov_transition_matrix,
        dim=cfg.dimension,
    )
    scheme = SchemeConfig(
        solver="mfl-ag",
        run=cfg.run_config(),
        ni_tolerance=cfg.markov_ni_tolerance,
        rounds=cfg.markov_rounds,
        epsilon_q=cfg.markov_epsilon_q,
        quadrature=cfg.quadrature(),
        threads=cfg.threads,
    )
    values = CsvLog(out / "values.csv", ("round", "state", "value", "gap"))
    logs.append(values)
    result = run_scheme(game, scheme, cfg.seed)
    for k, it in enumerate(result.iterates):
        gap = 0.0 if k == 0 else result.gaps[k - 1]
        for s in range(game.n_states):
            values.add(k, s, float(it.v[s]), gap)
    if not quiet:
        final = ", ".join(f"{v:.4f}" for v in result.iterates[-1].v)
        print(f"markov: {cfg.markov_rounds} rounds, final values [{final}]")


def _write_manifest(out: Path, cfg: ExperimentConfig, preset: Optional[str], status: str):
    payload = {
        "library": "mfl-minimax",
        "version": __version__,
        "preset": preset,
        "seed": cfg.seed,
        "status": status,
        "config": asdict(cfg),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_config(args) -> Tuple[ExperimentConfig, Optional[str]]:
    if bool(args.preset) == bool(args.config):
        raise ConfigError("exactly one of --preset or --config is required")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(PRESETS))}")
        cfg = ExperimentConfig(**PRESETS[args.preset])
        preset = args.preset
    else:
        cfg = parse_config(args.config)
        preset = None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    out_dir = os.environ.get(ENV_OUT) or args.out or cfg.out_dir
    overrides["out_dir"] = out_dir
    if args.threads is not None:
        overrides["threads"] = args.threads
    return replace(cfg, **overrides), preset


def run_cli(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfl-minimax",
        description="Run particle minimax experiments and emit CSV artifacts.",
    )
    parser.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
    parser.add_argument("--config", help="path to an INI experiment file")
    parser.add_argument("--seed", type=int, default=None, help="64-bit run seed")
    parser.add_argument("--out", default=None, help="output directory "
                        f"(env {ENV_OUT} overrides)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for per-state Markov solves (0 = auto)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        cfg, preset = _build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out = Path(cfg.out_dir)
    logs: List[CsvLog] = []
    try:
        if cfg.mode == "compare":
            _run_compare(cfg, out, args.quiet, logs)
        elif cfg.mode == "markov":
            _run_markov(cfg, out, args.quiet, logs)
        else:
            _run_single(cfg, out, args.quiet, logs)
    except DivergenceError as exc:
        for logch in logs:
            logch.flush()
        _write_manifest(out, cfg, preset, status="diverged")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    for logch in logs:
        logch.flush()
    _write_manifest(out, cfg, preset, status="ok")
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
