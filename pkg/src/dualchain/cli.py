"""Command-line front end: ``run``, ``sweep``, ``check`` and ``baseline``.

Settings merge as defaults < ``--config`` JSON < flags.  The merged
settings are echoed into ``manifest.json`` in the output directory, and
``--config manifest.json`` replays a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleError, RunPlan, cell_id, derive_seed, run_ensemble
from .model import ChainConfig, ConfigError, build_effective_model
from .protocol import (
    MeasurementSchedule,
    baseline_expectation,
    greedy_schedule,
    run_projective_baseline,
    run_trajectory,
    write_trace_csv,
)
from .stats import (
    ArrivalSample,
    SweepRow,
    histogram_log,
    optimal_k,
    remaining_time_curve,
    summarize,
    write_histogram_csv,
    write_summary_csv,
    write_tbar_csv,
)

log = logging.getLogger("dualchain")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INTERRUPTED = 130

CENSORED_WARN = 0.01

# trajectory noise is keyed by k; the baseline uses a key no k can produce (a NaN pattern)
BASELINE_CELL = (1 << 64) - 1

# ChainConfig field -> flag, so validation errors name what the user typed
FLAG_OF = {
    "n_sites": "--n", "coupling": "--j", "field": "--b", "meas_strength": "--k",
    "efficiency": "--eta", "dt": "--dt", "fidelity_threshold": "--threshold",
    "t_max": "--t-max", "field_sites": "--field-sites",
}


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


@dataclass
class ExperimentConfig:
    """Merged settings for one invocation; field names mirror the flags."""

    command: str = "run"
    n: int = 10
    j: float = 1.0
    b: float = 0.0
    eta: float = 1.0
    dt: float = 1e-4
    t_max: float = 2000.0
    field_sites: str = "all"
    k: list = field(default_factory=lambda: [2.0])
    threshold: list = field(default_factory=lambda: [0.99])
    trajectories: int = 1024
    seed: int = 0
    workers: str = "1"
    trace_stride: int = 0
    tbar_step: float = 1.0
    bins: int = 50
    quick: bool = False
    greedy: bool = False
    floor: float = 0.1
    schedule: list | None = None

    def chain(self, k: float | None = None, threshold: float | None = None) -> ChainConfig:
        return ChainConfig(
            n_sites=self.n, coupling=self.j, field=self.b,
            meas_strength=self.k[0] if k is None else k,
            efficiency=self.eta, dt=self.dt,
            fidelity_threshold=self.threshold[0] if threshold is None else threshold,
            t_max=self.t_max, field_sites=self.field_sites,
        )

    def to_dict(self) -> dict:
        return asdict(self)


COMMAND_DEFAULTS = {
    "run": {},
    "sweep": {"k": [0.5, 1.0, 2.0, 4.0, 8.0], "threshold": [0.9, 0.99, 0.999], "trajectories": 512},
    "check": {},
    "baseline": {"trajectories": 4096},
}

# settings that locate files rather than define the experiment; never read from a config file
LOCATION_KEYS = {"out", "checkpoint", "config"}


# -- argument parsing --------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(x) for x in text.split(",") if x.strip()]


def _extend(values):
    out = []
    for v in values:
        out.extend(_float_list(v))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with flag-named settings")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    chain = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    chain.add_argument("--n", type=int, default=S, help="sites per chain (10)")
    chain.add_argument("--j", type=float, default=S, help="coupling J (1)")
    chain.add_argument("--b", type=float, default=S, help="field B (0)")
    chain.add_argument("--eta", type=float, default=S, help="detector efficiency (1)")
    chain.add_argument("--dt", type=float, default=S, help="time step (1e-4)")
    chain.add_argument("--t-max", dest="t_max", type=float, default=S, help="horizon (2000)")
    chain.add_argument("--field-sites", choices=["all", "truncated"], default=S)
    chain.add_argument("--trajectories", type=int, default=S)
    chain.add_argument("--seed", type=int, default=S, help="master seed (0)")

    ens = argparse.ArgumentParser(add_help=False)
    ens.add_argument("--k", action="append", default=S,
                     help="measurement strength; repeatable or comma separated")
    ens.add_argument("--threshold", action="append", default=S,
                     help="fidelity threshold; repeatable or comma separated")
    ens.add_argument("--workers", default=S, help="worker processes or 'auto' (1)")
    ens.add_argument("--trace-stride", dest="trace_stride", type=int, default=S,
                     help="write a record trace of trajectory 0 per k every this many steps")
    ens.add_argument("--tbar-step", dest="tbar_step", type=float, default=S)
    ens.add_argument("--bins", type=int, default=S)
    ens.add_argument("--checkpoint", type=Path, default=None,
                     help="JSONL file; completed trajectories are appended and reused")

    p = argparse.ArgumentParser(prog="dualchain",
                                description="Measurement-driven transfer across two spin chains.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common, chain, ens], help="ensemble for one or more cells")
    sub.add_parser("sweep", parents=[common, chain, ens], help="mean arrival over a k x threshold grid")
    c = sub.add_parser("check", parents=[common], help="oracle and invariant checks")
    c.add_argument("--quick", action="store_true", default=S)
    c.add_argument("--corrupt-offdiag", dest="corrupt_offdiag", type=float, default=0.0,
                   help=argparse.SUPPRESS)
    bl = sub.add_parser("baseline", parents=[common, chain], help="projective-measurement protocol")
    bl.add_argument("--greedy", action="store_true", default=S)
    bl.add_argument("--floor", type=float, default=S)
    bl.add_argument("--schedule", default=S, help="comma separated measurement times")
    return p


def _load_config_file(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError("--config", f"cannot read {path}: {exc}") from exc
    if isinstance(data, dict) and "settings" in data:   # a manifest
        data = data["settings"]
    if not isinstance(data, dict):
        raise UsageError("--config", "top level must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name in LOCATION_KEYS or name == "command":
            continue
        if name not in known:
            raise UsageError(f"--{key}", "unknown setting in config file")
        out[name] = value
    return out


def _normalize(settings: dict) -> dict:
    for name in ("k", "threshold"):
        v = settings.get(name)
        if isinstance(v, (int, float)):
            settings[name] = [float(v)]
        elif isinstance(v, str):
            settings[name] = _float_list(v)
        elif isinstance(v, list):
            settings[name] = _extend(str(x) for x in v)
    if isinstance(settings.get("schedule"), str):
        settings["schedule"] = _float_list(settings["schedule"])
    if "workers" in settings:
        settings["workers"] = str(settings["workers"])
    return settings


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, the optional config file and explicit flags."""
    settings = dict(COMMAND_DEFAULTS[args.command])
    if args.config is not None:
        settings.update(_normalize(_load_config_file(args.config)))
    known = {f.name for f in fields(ExperimentConfig)}
    flags = {k: v for k, v in vars(args).items() if k in known and k != "command"}
    try:
        settings.update(_normalize(flags))
    except ValueError as exc:
        raise UsageError("--k/--threshold/--schedule", f"not a number list ({exc})") from exc
    cfg = ExperimentConfig(command=args.command, **settings)
    try:
        _validate(cfg)
    except (TypeError, ValueError) as exc:   # wrongly typed values from a config file
        raise UsageError("--config", f"bad value ({exc})") from exc
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.command in ("run", "sweep"):
        if not cfg.k:
            raise UsageError("--k", "at least one value required")
        if not cfg.threshold:
            raise UsageError("--threshold", "at least one value required")
        if len(set(cfg.k)) != len(cfg.k):
            raise UsageError("--k", "duplicate values")
        if cfg.trace_stride < 0:
            raise UsageError("--trace-stride", "must be >= 0")
        if cfg.tbar_step <= 0:
            raise UsageError("--tbar-step", "must be > 0")
        if cfg.bins < 2:
            raise UsageError("--bins", "must be >= 2")
        if cfg.workers != "auto":
            try:
                if int(cfg.workers) < 1:
                    raise ValueError
            except ValueError:
                raise UsageError("--workers", f"must be a positive integer or 'auto', got {cfg.workers!r}")
    if cfg.trajectories < 1:
        raise UsageError("--trajectories", "must be >= 1")
    if not 0 <= cfg.seed < 1 << 64:
        raise UsageError("--seed", "must lie in [0, 2**64)")
    try:
        for k in cfg.k:
            for thr in cfg.threshold:
                cfg.chain(k, thr)
    except ConfigError as exc:
        raise UsageError(FLAG_OF.get(exc.field_name, exc.field_name), str(exc)) from exc


# -- output helpers ----------------------------------------------------------------

def _g(x) -> str:
    return f"{x:.9g}"


def _cell_suffix(k: float, thr: float, multi: bool) -> str:
    return f"_k{k:g}_thr{thr:g}" if multi else ""


def _write_manifest(out: Path, cfg: ExperimentConfig, status: str, files: list[str], extra=None):
    manifest = {
        "program": "dualchain",
        "version": __version__,
        "command": cfg.command,
        "status": status,
        "settings": {k: v for k, v in cfg.to_dict().items() if k != "command"},
        "outputs": sorted(files),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_trajectories(path: Path, result) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_k", "cell_threshold", "index", "arrival_time", "censored", "steps", "seed"])
        for (k, thr), outs in result.cells():
            for idx, o in zip(result.plan.indices(), outs):
                at = "" if o.arrival_time is None else _g(o.arrival_time)
                w.writerow([_g(k), _g(thr), idx, at, int(o.censored), o.steps_taken,
                            f"{o.seed[0]}:{o.seed[1]}"])


def _summaries(result, cfg: ExperimentConfig, out: Path, files: list[str]) -> list[SweepRow]:
    """Per-cell histogram/tbar files plus the summary rows."""
    multi = len(cfg.k) * len(cfg.threshold) > 1
    rows = []
    for (k, thr), outs in result.cells():
        sample = ArrivalSample.from_outcomes(outs, cfg.t_max)
        sfx = _cell_suffix(k, thr, multi)
        if sample.n < 2:
            log.warning("cell k=%g threshold=%g has %d arrivals; no statistics", k, thr, sample.n)
            continue
        rows.append(SweepRow(k, thr, summarize(sample, bins=cfg.bins)))
        write_histogram_csv(out / f"histogram{sfx}.csv", histogram_log(sample, cfg.bins))
        grid = np.arange(0.0, sample.times[-1] + cfg.tbar_step, cfg.tbar_step)
        write_tbar_csv(out / f"tbar{sfx}.csv", remaining_time_curve(sample, grid))
        files += [f"histogram{sfx}.csv", f"tbar{sfx}.csv"]
    write_summary_csv(out / "summary.csv", rows)
    files.append("summary.csv")
    return rows


def _write_sweep(path: Path, rows: list[SweepRow]):
    best = {thr: optimal_k(rows, thr) for thr in {r.threshold for r in rows}}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "k", "n", "mean", "std_error", "censored_fraction",
                    "restricted_mean", "optimal"])
        for r in rows:
            s = r.summary
            w.writerow([_g(r.threshold), _g(r.k), s.n, _g(s.mean), _g(s.std_error),
                        _g(s.censored_fraction), _g(s.restricted_mean), int(best[r.threshold] == r.k)])


# -- commands ----------------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, out: Path, checkpoint: Path | None = None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    plan = RunPlan(base=cfg.chain(), k_values=tuple(cfg.k), thresholds=tuple(cfg.threshold),
                   n_trajectories=cfg.trajectories, master_seed=cfg.seed,
                   worker_count=cfg.workers if cfg.workers == "auto" else int(cfg.workers))

    def progress(line):
        print(line, file=sys.stderr, flush=True)

    try:
        result = run_ensemble(plan, checkpoint=checkpoint, progress=progress)
    except EnsembleError as exc:
        _write_manifest(out, cfg, "failed", [], {"error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    files = ["trajectories.csv"]
    _write_trajectories(out / "trajectories.csv", result)
    rows = _summaries(result, cfg, out, files)
    if cfg.command == "sweep":
        _write_sweep(out / "sweep.csv", rows)
        files.append("sweep.csv")
    if cfg.trace_stride:
        for k in cfg.k:
            c = cfg.chain(k, max(cfg.threshold))
            seed = derive_seed(cfg.seed, cell_id(k), 0)
            _, trace = run_trajectory(c, build_effective_model(c), seed, trace_stride=cfg.trace_stride)
            name = f"trace_k{k:g}.csv"
            write_trace_csv(out / name, trace)
            files.append(name)
    status = "incomplete" if result.incomplete else "complete"
    flagged = [[r.k, r.threshold, r.summary.censored_fraction] for r in rows
               if r.summary.censored_fraction > CENSORED_WARN]
    for k, thr, frac in flagged:
        print(f"warning: k={k:g} threshold={thr:g} censored fraction {frac:.3g} exceeds "
              f"{CENSORED_WARN:.0%}; raise --t-max", file=sys.stderr)
    _write_manifest(out, cfg, status, files,
                    {"failed_trajectories": result.n_failed, "censored_above_limit": flagged})
    for r in rows:
        s = r.summary
        print(f"k={r.k:g} threshold={r.threshold:g}: n={s.n} mean={s.mean:.4g} "
              f"+/- {s.std_error:.2g} mode~{s.mode_bin_center:.3g} censored={s.censored_fraction:.3g}")
    print(f"wall clock {result.wall_clock:.1f} s", file=sys.stderr)
    return EXIT_INTERRUPTED if result.incomplete else EXIT_OK


def cmd_check(cfg: ExperimentConfig, out: Path, corrupt_offdiag: float = 0.0) -> int:
    from .checks import run_checks

    results = run_checks(quick=cfg.quick, corrupt_offdiag=corrupt_offdiag)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {'; '.join(failed)}")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_baseline(cfg: ExperimentConfig, out: Path) -> int:
    chain = cfg.chain(k=0.0)
    model = build_effective_model(chain)
    if cfg.greedy == bool(cfg.schedule):
        raise UsageError("--schedule", "give exactly one of --schedule or --greedy")
    try:
        if cfg.greedy:
            schedule = greedy_schedule(model, chain, cfg.floor)
        else:
            schedule = MeasurementSchedule(times=tuple(cfg.schedule))
    except ValueError as exc:
        raise UsageError("--floor" if cfg.greedy else "--schedule", str(exc)) from exc
    if not schedule.times:
        raise UsageError("--floor" if cfg.greedy else "--schedule",
                         schedule.warning or "schedule is empty")

    out.mkdir(parents=True, exist_ok=True)
    times, rounds = [], []
    with (out / "baseline.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "arrival_time", "rounds"])
        for i in range(cfg.trajectories):
            o = run_projective_baseline(chain, model, schedule, derive_seed(cfg.seed, BASELINE_CELL, i))
            w.writerow([i, "" if o.arrival_time is None else _g(o.arrival_time), o.rounds])
            if o.arrival_time is not None:
                times.append(o.arrival_time)
                rounds.append(o.rounds)
    _, exact_mean, exact_success = baseline_expectation(model, schedule)
    t = np.asarray(times)
    mean = float(t.mean()) if len(t) else math.nan
    se = float(t.std(ddof=1) / math.sqrt(len(t))) if len(t) > 1 else math.nan
    _write_manifest(out, cfg, "complete", ["baseline.csv"],
                    {"schedule": list(schedule.times), "schedule_rule": schedule.rule})
    print(f"baseline: {len(t)}/{cfg.trajectories} successful, mean arrival {mean:.4g} +/- {se:.2g}, "
          f"mean rounds {np.mean(rounds) if rounds else math.nan:.3g}; "
          f"exact mean {exact_mean:.4g}, success probability {exact_success:.6g}, "
          f"{len(schedule.times)} scheduled measurements")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "check":
            return cmd_check(cfg, args.out, args.corrupt_offdiag)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.out)
        return cmd_run(cfg, args.out, args.checkpoint)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
