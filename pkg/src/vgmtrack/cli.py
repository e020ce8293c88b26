"""Command-line entry point: simulate, train, track, eval, inspect-model."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics, sim
from .geometry import SensorMount
from .mot import BirthModel
from .particles import ParticleBudget
from .radar_model import RadarModel, balance_by_aspect, build_training_set
from .records import ensure_parent, read_scans, read_truths, write_jsonl, write_scans, write_truths
from .tracker import TrackerConfig, records_to_jsonl, run_tracker
from .vgm import Hyperparameters, condition, fit, marginalize, predictive, prune
from .vgm import io as vgm_io

TRAINING_CORPUS = "training"
MODEL_DIMS = ("zx", "zy", "zd", "aspect")
DEFAULT_MODEL = "default_model.json"


def _opt(default, help: str, method: bool = False):
    # ``method`` marks values taken from the published tracker set-up; the rest are declared defaults
    return field(default=default, metadata={"help": help, "method": method})


@dataclass
class RunConfig:
    """Every tunable of the pipeline; JSON config files use the same keys."""

    seed: int = _opt(0, "random seed for simulation, training initialization and the tracker")
    # measurement model
    lambda_t: float = _opt(5.0, "expected detections per visible vehicle and scan", method=True)
    lambda_c: float = _opt(30.0, "expected clutter detections per scan", method=True)
    p_d: float = _opt(0.8, "peak detection probability inside the field of view", method=True)
    # training
    components: int = _opt(70, "initial mixture components c", method=True)
    rho0: float = _opt(1e-3, "Dirichlet concentration of the weight prior (small values prune harder)")
    beta0: float = _opt(1.0, "scale of the component-mean prior precision", method=True)
    nu0: float | None = _opt(None, "Wishart degrees of freedom (null: dimension + 1)", method=True)
    max_iters: int = _opt(500, "variational iterations at most")
    elbo_tol: float = _opt(1e-8, "relative ELBO change that stops the fit")
    prune_threshold: float = _opt(1e-5, "components lighter than this are dropped after fitting", method=True)
    gate_margin: float = _opt(0.5, "m; inflation of the truth boxes that gate training detections")
    balance_bin_deg: float = _opt(5.0, "deg; aspect bin width for balancing the training set")
    # tracking
    birth_r: float = _opt(0.1, "existence probability of a new track", method=True)
    birth_particles: int = _opt(900, "particles of a new track", method=True)
    particle_step: int = _opt(100, "particles removed per resampling until the steady budget", method=True)
    steady_particles: int = _opt(300, "steady-state particles per track", method=True)
    track_prune: float = _opt(0.01, "tracks with lower existence probability are removed", method=True)
    k_best: int = _opt(10, "ranked associations per hypothesis and partition", method=True)
    hypothesis_cap: int = _opt(100, "GLMB hypotheses kept after each update")
    survival_inside: float = _opt(10.0, "s; mean track lifetime inside the sensors' field of view", method=True)
    survival_outside: float = _opt(0.1, "s; mean track lifetime outside the field of view", method=True)
    free_threshold: float = _opt(0.2, "detections associated less than this may start tracks")
    birth_doppler: float = _opt(1.0, "m/s; minimum |compensated Doppler| of birth detections")
    birth_min_log_ratio: float | None = _opt(0.0, "log Bayes factor a birth cluster must exceed (null: off)")
    extent_step: float = _opt(0.1, "m; width/length step of the extent variants")
    # evaluation
    match_gate: float = _opt(2.5, "m; estimate-to-truth matching gate")
    min_speed: float = _opt(1.0, "m/s; truths at or below this speed are not counted")
    mounts: list | None = _opt(None, "sensor mounts [[x, y, yaw_deg], ...] in the vehicle frame (null: four corner radars)")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**doc)

    def sensor_mounts(self) -> list[SensorMount]:
        if self.mounts is None:
            return sim.default_mounts()
        try:
            return [SensorMount(float(x), float(y), float(np.deg2rad(yaw))) for x, y, yaw in self.mounts]
        except (TypeError, ValueError) as exc:
            raise ValueError(f"malformed mounts: {exc}") from exc

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(c=self.components, rho0=self.rho0, beta0=self.beta0, nu0=self.nu0)

    def tracker_config(self) -> TrackerConfig:
        birth = BirthModel(
            r_b=self.birth_r,
            particles=self.birth_particles,
            free_threshold=self.free_threshold,
            doppler_threshold=self.birth_doppler,
            min_log_ratio=self.birth_min_log_ratio,
        )
        return TrackerConfig(
            lambda_c=self.lambda_c,
            p_d=self.p_d,
            budget=ParticleBudget(self.birth_particles, self.particle_step, self.steady_particles),
            birth=birth,
            extent_step=self.extent_step,
            k_best=self.k_best,
            hypothesis_cap=self.hypothesis_cap,
            prune=self.track_prune,
            survival_inside=self.survival_inside,
            survival_outside=self.survival_outside,
            seed=self.seed,
        )


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_value(f: dataclasses.Field, text: str):
    if text.lower() in ("null", "none") and f.default is None:
        return None
    if f.name == "mounts":
        return json.loads(text)
    kind = type(f.default) if f.default is not None else float
    if kind is bool:
        return text.lower() in ("1", "true", "yes")
    return kind(text)


def _add_config_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="JSON file with RunConfig keys")
    by_name = {f.name: f for f in fields(RunConfig)}
    for name in names:
        f = by_name[name]
        g.add_argument(
            _flag(name),
            dest=name,
            default=None,
            metavar="V",
            type=lambda text, f=f: _parse_value(f, text),
            help=f"{f.metadata['help']} (default: {json.dumps(f.default)}; {'method value' if f.metadata['method'] else 'declared default'})",
        )


def load_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(doc)
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    return dataclasses.replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    config = sim.SimConfig(seed=cfg.seed, lambda_t=cfg.lambda_t, lambda_c=cfg.lambda_c)
    if args.scenario == TRAINING_CORPUS:
        scenarios = sim.training_scenarios() if args.duration is None else sim.training_scenarios(args.duration)
        scans, truths = sim.generate_corpus(scenarios, config)
    else:
        if args.duration is not None and args.scenario in sim.BUILTIN:
            scenario = sim.BUILTIN[args.scenario](args.duration)
        else:
            scenario = sim.load_scenario(args.scenario)
        if cfg.mounts is not None:
            scenario = dataclasses.replace(scenario, mounts=cfg.sensor_mounts())
        scans, truths = sim.simulate(scenario, config)
    write_scans(args.out_scans, scans)
    write_truths(args.out_truth, truths)
    print(f"wrote {len(scans)} scans and {len(truths)} truth frames")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    scans = read_scans(args.scans)
    truths = read_truths(args.truth)
    points = build_training_set(scans, truths, cfg.sensor_mounts(), gate_margin=cfg.gate_margin)
    if len(points) == 0:
        raise ValueError("no detections fall inside any truth box")
    if args.corpus_out:
        from .radar_model import write_corpus

        ensure_parent(args.corpus_out)
        write_corpus(args.corpus_out, points)
    balanced = balance_by_aspect(points, np.deg2rad(cfg.balance_bin_deg), seed=cfg.seed)
    result = fit(balanced, cfg.hyperparameters(), max_iters=cfg.max_iters, elbo_tol=cfg.elbo_tol, seed=cfg.seed)
    model = prune(result.model, cfg.prune_threshold)
    ensure_parent(args.out_model)
    vgm_io.save(model, args.out_model)
    print(
        f"gated {len(points)} detections, balanced to {len(balanced)}; "
        f"{len(result.elbo_trace)} iterations (converged: {result.converged}); "
        f"effective components: {len(model)}"
    )
    return 0


def load_model(path: str | None):
    if path is None:
        return vgm_io.loads(resources.files("vgmtrack").joinpath("data", DEFAULT_MODEL).read_text())
    return vgm_io.load(path)


def cmd_track(args, cfg: RunConfig) -> int:
    model = RadarModel.from_vgm(load_model(args.model), lambda_t=cfg.lambda_t)
    scans = read_scans(args.scans)
    records = run_tracker(scans, model, cfg.sensor_mounts(), cfg.tracker_config())
    write_jsonl(args.out_tracks, records_to_jsonl(records))
    confirmed = {tuple(t["label"]) for r in records for t in r["tracks"] if t["r"] >= 0.5}
    print(f"tracked {len(records)} scans; {len(confirmed)} labels reached r >= 0.5")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    records = [json.loads(line) for line in Path(args.tracks).read_text().splitlines() if line.strip()]
    truths = read_truths(args.truth)
    report = metrics.evaluate(records, truths, cfg.sensor_mounts(), gate=cfg.match_gate, min_speed=cfg.min_speed)
    ensure_parent(args.out_report)
    Path(args.out_report).write_text(report.to_json() + "\n")
    r = report.rmse
    print(
        f"position RMSE {r['position']:.3f} m, heading {np.degrees(r['phi']):.2f} deg, "
        f"length {r['b']:.3f} m, speed {r['v']:.3f} m/s; "
        f"correct cardinality {100 * report.correct_cardinality:.1f}%, availability {100 * report.availability:.1f}%"
    )
    return 0


@dataclass(frozen=True)
class GridAxis:
    dim: int
    lo: float
    hi: float
    n: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


def parse_slice(spec: str) -> tuple[list[GridAxis], dict[int, float]]:
    """Parse "zx=-1:1:41,zy=-1:1:41,aspect@0.5": ranged axes lo:hi:n and fixed values.

    Dimensions not mentioned are marginalized.
    """
    axes: list[GridAxis] = []
    fixed: dict[int, float] = {}
    seen: set[int] = set()
    for part in filter(None, (p.strip() for p in spec.split(","))):
        if "=" in part:
            name, rng = part.split("=", 1)
            bits = rng.split(":")
            if len(bits) != 3:
                raise ValueError(f"range for {name!r} must be lo:hi:n")
            lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo and n >= 2):
                raise ValueError(f"degenerate range for {name!r}")
            dim = _dim_index(name)
            axes.append(GridAxis(dim, lo, hi, n))
        elif "@" in part:
            name, val = part.split("@", 1)
            dim = _dim_index(name)
            value = float(val)
            if not np.isfinite(value):
                raise ValueError(f"fixed value for {name!r} must be finite")
            fixed[dim] = value
        else:
            raise ValueError(f"cannot parse slice component {part!r}")
        if dim in seen:
            raise ValueError(f"dimension {MODEL_DIMS[dim]!r} given twice")
        seen.add(dim)
    if not axes:
        raise ValueError("slice needs at least one ranged dimension")
    if len(axes) > 2:
        raise ValueError("slice supports one or two ranged dimensions")
    return axes, fixed


def _dim_index(name: str) -> int:
    name = name.strip()
    if name not in MODEL_DIMS:
        raise ValueError(f"unknown dimension {name!r}; expected one of {', '.join(MODEL_DIMS)}")
    return MODEL_DIMS.index(name)


def density_grid(mixture, axes: list[GridAxis], fixed: dict[int, float]) -> tuple[list[np.ndarray], np.ndarray]:
    """Density over the ranged axes, conditioned on ``fixed`` and marginal over the rest."""
    keep = [a.dim for a in axes] + list(fixed)
    mix = marginalize(mixture, keep)
    if fixed:
        mix = condition(mix, list(range(len(axes), len(keep))), list(fixed.values()))
    grids = np.meshgrid(*[a.values() for a in axes], indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    return grids, mix.pdf(pts).reshape(grids[0].shape)


def cmd_inspect(args, cfg: RunConfig) -> int:
    axes, fixed = parse_slice(args.slice)
    mixture = predictive(load_model(args.model))
    grids, dens = density_grid(mixture, axes, fixed)
    ensure_parent(args.out_grid)
    with open(args.out_grid, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([MODEL_DIMS[a.dim] for a in axes] + ["density"])
        for idx in np.ndindex(dens.shape):
            w.writerow([repr(float(g[idx])) for g in grids] + [repr(float(dens[idx]))])
    cell = np.prod([(a.hi - a.lo) / (a.n - 1) for a in axes])
    print(f"wrote {dens.size} grid values; sum x cell area = {dens.sum() * cell:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

SIM_KEYS = ("seed", "lambda_t", "lambda_c", "mounts")
TRAIN_KEYS = (
    "seed", "components", "rho0", "beta0", "nu0", "max_iters", "elbo_tol",
    "prune_threshold", "gate_margin", "balance_bin_deg", "mounts",
)
TRACK_KEYS = (
    "seed", "lambda_t", "lambda_c", "p_d", "birth_r", "birth_particles", "particle_step",
    "steady_particles", "track_prune", "k_best", "hypothesis_cap", "survival_inside",
    "survival_outside", "free_threshold", "birth_doppler", "birth_min_log_ratio", "extent_step", "mounts",
)
EVAL_KEYS = ("match_gate", "min_speed", "mounts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgmtrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate scans and ground truth")
    p.add_argument(
        "--scenario",
        required=True,
        help=f"built-in name ({', '.join(sim.BUILTIN)}, {TRAINING_CORPUS}) or scenario JSON file",
    )
    p.add_argument("--duration", type=float, default=None, help="s; overrides a built-in scenario's duration")
    p.add_argument("--out-scans", required=True)
    p.add_argument("--out-truth", required=True)
    _add_config_flags(p, SIM_KEYS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the radar measurement model")
    p.add_argument("--scans", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--corpus-out", default=None, help="also write the gated training points (JSON Lines)")
    _add_config_flags(p, TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a scan file")
    p.add_argument("--scans", required=True)
    p.add_argument("--model", default=None, help="model JSON (default: the bundled model)")
    p.add_argument("--out-tracks", required=True)
    _add_config_flags(p, TRACK_KEYS)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracks against ground truth")
    p.add_argument("--tracks", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-report", required=True)
    _add_config_flags(p, EVAL_KEYS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-model", help="export a density grid of the model")
    p.add_argument("--model", default=None, help="model JSON (default: the bundled model)")
    p.add_argument(
        "--slice",
        required=True,
        help='ranged dims name=lo:hi:n and fixed dims name@value, comma separated, e.g. "zx=-1:1.5:51,zy=-1:1:41,aspect@0"',
    )
    p.add_argument("--out-grid", required=True)
    _add_config_flags(p, ())
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except (OSError, ValueError, KeyError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"vgmtrack {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
