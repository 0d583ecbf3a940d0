"""Command-line front end.

``npbo run --config experiment.toml`` runs one optimization per seed and
writes one CSV trace per run plus ``summary.csv``. ``npbo report`` averages
regret curves across run CSVs. ``npbo list-benchmarks`` prints the suite.

The config file is a flat TOML document; every key is listed in
:data:`SCHEMA` and anything else is rejected.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .acquisition import AcquisitionConfig
from .benchmarks import BENCHMARKS, as_maximization, get_benchmark, make_synthetic_calibration, vector_matching_objective
from .blackbox import ExternalBlackBox, ExternalSimulator
from .engine import SURROGATES, OptimizationAborted, RunConfig, RunRecord, run_optimization
from .metrics import TrialResult, parameter_mse
from .neural_process import NpConfig
from .surrogate import Bounds

logger = logging.getLogger("npbo")

CALIBRATION = "synthetic-calibration"
EXTERNAL = "external"

# key -> (type, required)
SCHEMA: dict[str, tuple[type, bool]] = {
    "problem": (str, True),
    "surrogate": (str, True),
    "budget": (int, True),
    "seeds": (list, True),
    "output_path": (str, True),
    "n_init": (int, False),
    "gp_search_budget": (int, False),
    "np_train_steps": (int, False),
    "np_learning_rate": (float, False),
    "np_latent_samples": (int, False),
    "acq_candidate_count": (int, False),
    "acq_refine_top_k": (int, False),
    "acq_refine_steps": (int, False),
    "acq_refine_radius": (float, False),
    "external_command": (list, False),
    "external_lower": (list, False),
    "external_upper": (list, False),
    "external_output_dim": (int, False),
    "external_timeout_ms": (int, False),
    "external_targets": (list, False),
    "external_f_opt": (float, False),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str
    surrogate: str
    budget: int
    seeds: list[int]
    output_path: Path
    n_init: int | None = None
    options: dict = field(default_factory=dict)

    def run_config(self, seed: int) -> RunConfig:
        o = self.options
        acq = AcquisitionConfig(
            candidate_count=o.get("acq_candidate_count", 4096),
            refine_top_k=o.get("acq_refine_top_k", 8),
            refine_steps=o.get("acq_refine_steps", 64),
            refine_radius=o.get("acq_refine_radius", 0.05),
        )
        np_cfg = NpConfig(
            train_steps_per_fit=o.get("np_train_steps", 200),
            learning_rate=o.get("np_learning_rate", 1e-3),
            latent_samples_inference=o.get("np_latent_samples", 16),
        )
        return RunConfig(self.surrogate, self.budget, self.n_init, seed, acq,
                         o.get("gp_search_budget", 64), np_cfg)


def _key_line(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return lineno
    return None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate an experiment file.

    Errors name the file, the line of the offending key (when it appears in
    the file) and the field.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    def fail(key, message):
        line = _key_line(text, key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {key}: {message}")

    for key, value in raw.items():
        if key not in SCHEMA:
            fail(key, "unknown key")
        kind, _ = SCHEMA[key]
        ok = isinstance(value, kind) and not (kind is int and isinstance(value, bool))
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            raw[key] = float(value)
            ok = True
        if not ok:
            fail(key, f"expected {kind.__name__}, got {type(value).__name__}")
    for key, (_, required) in SCHEMA.items():
        if required and key not in raw:
            fail(key, "missing required key")

    surrogate = raw["surrogate"]
    if surrogate not in SURROGATES:
        fail("surrogate", f"must be one of {', '.join(SURROGATES)}")
    problem = raw["problem"]
    if problem not in (CALIBRATION, EXTERNAL):
        try:
            get_benchmark(problem)
        except KeyError:
            fail("problem", f"unknown problem {problem!r}; use a benchmark name, {CALIBRATION!r} or {EXTERNAL!r}")
    seeds = raw["seeds"]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        fail("seeds", "must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        fail("seeds", "must not repeat")
    budget = raw["budget"]
    n_init = raw.get("n_init")
    if n_init is not None and n_init < 1:
        fail("n_init", "must be >= 1")
    if budget < 1:
        fail("budget", "must be >= 1")

    for key in ("gp_search_budget", "np_train_steps", "np_latent_samples", "acq_candidate_count",
                "acq_refine_top_k", "external_output_dim", "external_timeout_ms"):
        if key in raw and raw[key] < 1:
            fail(key, "must be >= 1")
    if raw.get("acq_refine_steps", 0) < 0:
        fail("acq_refine_steps", "must be >= 0")
    for key in ("np_learning_rate", "acq_refine_radius"):
        if key in raw and not raw[key] > 0:
            fail(key, "must be positive")
    if raw.get("acq_refine_top_k", 8) > raw.get("acq_candidate_count", 4096):
        fail("acq_refine_top_k", "cannot exceed acq_candidate_count")

    if problem == EXTERNAL:
        for key in ("external_command", "external_lower", "external_upper"):
            if key not in raw:
                fail(key, f"required when problem = {EXTERNAL!r}")
        if not raw["external_command"] or not all(isinstance(c, str) for c in raw["external_command"]):
            fail("external_command", "must be a non-empty list of strings")
        try:
            Bounds(raw["external_lower"], raw["external_upper"])
        except (ValueError, TypeError) as exc:
            fail("external_lower", f"invalid bounds: {exc}")
        out_dim = raw.get("external_output_dim", 1)
        targets = raw.get("external_targets")
        if targets is None and out_dim != 1:
            fail("external_targets", "required when external_output_dim > 1")
        if targets is not None and len(targets) != out_dim:
            fail("external_targets", f"needs external_output_dim = {out_dim} values, got {len(targets)}")
    else:
        for key in SCHEMA:
            if key.startswith("external_") and key in raw:
                fail(key, f"only valid when problem = {EXTERNAL!r}")

    dim = _problem_dim(problem, raw)
    resolved = RunConfig(n_init=n_init).resolved_n_init(dim)
    if budget < resolved:
        fail("budget", f"must be at least n_init ({resolved})")

    options = {k: v for k, v in raw.items() if k not in ("problem", "surrogate", "budget", "seeds",
                                                         "output_path", "n_init")}
    return ExperimentConfig(problem, surrogate, budget, list(seeds), Path(raw["output_path"]), n_init, options)


def _problem_dim(problem, raw) -> int:
    if problem == CALIBRATION:
        return 4
    if problem == EXTERNAL:
        return len(raw["external_lower"])
    return get_benchmark(problem).dimension


class _ExternalObjective:
    """Scalar objective (minimized) built from an external simulator."""

    def __init__(self, simulator: ExternalSimulator, targets):
        self.simulator = simulator
        self.bounds = simulator.bounds
        self.targets = None if targets is None else np.asarray(targets, dtype=np.float64)

    def __call__(self, x) -> float:
        out = self.simulator(x)
        if self.targets is None:
            return float(out[0])
        return vector_matching_objective(out, self.targets)


def _open_problem(cfg: ExperimentConfig, seed: int):
    """Returns ``(minimization problem, f_opt or None, closer)``."""
    if cfg.problem == CALIBRATION:
        prob = make_synthetic_calibration(seed)
        return prob, 0.0, None
    if cfg.problem == EXTERNAL:
        o = cfg.options
        box = ExternalBlackBox(tuple(o["external_command"]), Bounds(o["external_lower"], o["external_upper"]),
                               o.get("external_output_dim", 1), o.get("external_timeout_ms", 30_000))
        sim = ExternalSimulator(box)
        return _ExternalObjective(sim, o.get("external_targets")), o.get("external_f_opt"), sim.close
    prob = get_benchmark(cfg.problem)
    return prob, prob.known_optimum_value, None


def _fmt(v) -> str:
    return repr(float(v))


def run_csv_header(dim: int) -> list[str]:
    return ["iteration", *(f"x_{i}" for i in range(dim)), "y", "incumbent_y", "regret", "wall_time_ms"]


def record_row(rec: RunRecord, f_opt) -> list[str]:
    y, inc = -rec.y, -rec.incumbent_y
    regret = "" if f_opt is None else _fmt(abs(inc - f_opt))
    return [str(rec.iteration), *(_fmt(v) for v in rec.x), _fmt(y), _fmt(inc), regret, str(rec.wall_time_ms)]


def cmd_run(cfg: ExperimentConfig) -> int:
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    failed = False
    trials = []
    for seed in cfg.seeds:
        problem, f_opt, closer = _open_problem(cfg, seed)
        path = out / f"run_{cfg.problem}_{cfg.surrogate}_seed{seed}.csv"
        logger.info("seed %d -> %s", seed, path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(run_csv_header(problem.bounds.dim))

            def emit(rec):
                writer.writerow(record_row(rec, f_opt))
                fh.flush()

            try:
                records = run_optimization(as_maximization(problem), cfg.run_config(seed), callback=emit)
            except OptimizationAborted as exc:
                logger.error("seed %d: %s", seed, exc)
                failed = True
                continue
            finally:
                if closer is not None:
                    closer()
        best = -records[-1].incumbent_y
        summary.append((seed, best))
        if cfg.problem == CALIBRATION:
            trials.append(TrialResult(seed, records[-1].incumbent_x, problem.ground_truth_params, records))

    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "best_value"])
        for seed, best in summary:
            writer.writerow([seed, _fmt(best)])
        if summary:
            values = np.array([b for _, b in summary])
            writer.writerow(["mean", _fmt(values.mean())])
            writer.writerow(["std", _fmt(values.std())])
        if trials:
            writer.writerow(["param_mse_normalized", _fmt(parameter_mse(trials, problem.bounds))])
            writer.writerow(["param_mse_raw", _fmt(parameter_mse(trials))])
    return 1 if failed else 0


class ReportError(ValueError):
    pass


def read_regret_curve(path, f_opt: float | None = None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    regrets = []
    for row in rows:
        if row.get("regret"):
            regrets.append(float(row["regret"]))
        elif f_opt is not None:
            regrets.append(abs(float(row["incumbent_y"]) - f_opt))
        else:
            raise ReportError(f"{path}: regret column is empty; pass --f-opt")
    return np.array(regrets)


def aggregate_regret(paths, f_opt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-iteration mean and population std of regret across runs."""
    if not paths:
        raise ReportError("no run files given")
    curves = {str(p): read_regret_curve(p, f_opt) for p in paths}
    lengths = {k: len(v) for k, v in curves.items()}
    if len(set(lengths.values())) != 1:
        listing = ", ".join(f"{k} ({n} rows)" for k, n in lengths.items())
        raise ReportError(f"runs have different iteration counts: {listing}")
    stacked = np.vstack(list(curves.values()))
    return stacked.mean(axis=0), stacked.std(axis=0)


def cmd_report(paths, out, f_opt=None) -> int:
    mean, std = aggregate_regret(paths, f_opt)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "mean_regret", "std_regret", "n_runs"])
        for i, (m, s) in enumerate(zip(mean, std), start=1):
            writer.writerow([i, _fmt(m), _fmt(s), len(paths)])
    return 0


def cmd_list_benchmarks(stream=None) -> int:
    stream = stream or sys.stdout
    for name, p in BENCHMARKS.items():
        lo = ", ".join(f"{v:g}" for v in p.bounds.lower)
        hi = ", ".join(f"{v:g}" for v in p.bounds.upper)
        print(f"{name:15s} d={p.dimension}  lower=[{lo}]  upper=[{hi}]  f_opt={p.known_optimum_value:.6g}",
              file=stream)
    print(f"{CALIBRATION:15s} d=4  generator-parameter ranges  f_opt=0", file=stream)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npbo", description="Bayesian optimization with GP / neural-process surrogates")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output_path)")
    run.add_argument("--seeds", help="comma-separated seeds (overrides seeds)")
    run.add_argument("--surrogate", choices=SURROGATES)
    run.add_argument("--budget", type=int)

    rep = sub.add_parser("report", help="average regret curves over run CSVs")
    rep.add_argument("runs", nargs="+")
    rep.add_argument("--f-opt", type=float)
    rep.add_argument("--out", required=True)

    sub.add_parser("list-benchmarks", help="list available problems")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-benchmarks":
        return cmd_list_benchmarks()
    if args.command == "report":
        try:
            return cmd_report(args.runs, args.out, args.f_opt)
        except ReportError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    overrides = {"output_path": args.out, "surrogate": args.surrogate, "budget": args.budget}
    if args.seeds is not None:
        try:
            overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
        except ValueError:
            print(f"error: --seeds: expected comma-separated integers, got {args.seeds!r}", file=sys.stderr)
            return 2
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return cmd_run(cfg)


if __name__ == "__main__":
    sys.exit(main())
