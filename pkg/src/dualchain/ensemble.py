"""Reproducible Monte Carlo ensembles over (k, threshold) cells.

Every trajectory is keyed by ``derive_seed(master, cell_id(k), index)``;
nothing else feeds its noise.  Combined with the lane-independent kernel
this makes a run bit-identical for any worker count, task grain or
resume history.  Trajectories for the same k serve every threshold of the
plan at once (a trajectory simply runs until the highest threshold).
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .model import ChainConfig, build_effective_model
from .protocol import DEFAULT_LANES, ArrivalRecord, TrajectoryOutcome, simulate_arrivals

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
ERROR_TOLERANCE = 1e-3


class EnsembleError(RuntimeError):
    def __init__(self, message: str, result: "RunResult"):
        super().__init__(message)
        self.result = result


def mix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, cell: int, index: int) -> tuple[int, int]:
    """Per-trajectory seed pair, injective in ``(master, cell, index)``.

    ``master`` and ``cell`` are 64-bit, ``index`` 32-bit.  The pair is
    hashed again by ``SeedSequence`` when the noise stream is built.
    """
    if not 0 <= index < 1 << 32:
        raise ValueError(f"trajectory index out of range: {index}")
    return mix64(master), (mix64(cell) << 32) | index


def cell_id(k: float) -> int:
    """Cell key for a measurement strength: the IEEE-754 bit pattern of k.

    Keying on the value (not the position in a sweep) means adding or
    reordering k values never changes the trajectories of other cells.
    """
    return struct.unpack("<Q", struct.pack("<d", float(k)))[0]


@dataclass(frozen=True)
class RunPlan:
    base: ChainConfig
    k_values: tuple[float, ...]
    thresholds: tuple[float, ...]
    n_trajectories: int
    master_seed: int = 0
    worker_count: int | str = 1
    start_index: int = 0
    lanes: int = DEFAULT_LANES
    task_size: int = 256
    poisoned: frozenset = frozenset()   # {(k, index)} forced non-finite, for tests

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(float(k) for k in self.k_values))
        object.__setattr__(self, "thresholds", tuple(sorted(float(t) for t in self.thresholds)))
        if not self.k_values:
            raise ValueError("k_values must be nonempty")
        if not self.thresholds:
            raise ValueError("thresholds must be nonempty")
        if len(set(self.k_values)) != len(self.k_values):
            raise ValueError("duplicate k values")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        for k in self.k_values:
            self.base.replace(meas_strength=k)
        for t in self.thresholds:
            self.base.replace(fidelity_threshold=t)

    @property
    def workers(self) -> int:
        if self.worker_count == "auto":
            return os.cpu_count() or 1
        return int(self.worker_count)

    def indices(self) -> range:
        return range(self.start_index, self.start_index + self.n_trajectories)

    def cell_config(self, k: float, threshold: float | None = None) -> ChainConfig:
        changes = {"meas_strength": k}
        if threshold is not None:
            changes["fidelity_threshold"] = threshold
        return self.base.replace(**changes)


@dataclass
class RunResult:
    plan: RunPlan
    records: dict[float, list[ArrivalRecord]]
    wall_clock: float = 0.0
    incomplete: bool = False

    def outcomes(self, k: float, threshold: float) -> list[TrajectoryOutcome]:
        cfg = self.plan.cell_config(k, threshold)
        return [r.outcome(threshold, cfg) for r in self.records[k]]

    def cells(self):
        """``((k, threshold), outcomes)`` in canonical (threshold, k) order."""
        for thr in self.plan.thresholds:
            for k in sorted(self.plan.k_values):
                yield (k, thr), self.outcomes(k, thr)

    @property
    def n_failed(self) -> int:
        return sum(r.error is not None for recs in self.records.values() for r in recs)

    @property
    def n_total(self) -> int:
        return sum(len(v) for v in self.records.values())

    def canonical_lines(self) -> list[str]:
        lines = []
        for (k, thr), outs in self.cells():
            for idx, o in zip(self.plan.indices(), outs):
                lines.append(
                    f"{k!r},{thr!r},{idx},{o.arrival_time!r},{int(o.censored)},"
                    f"{o.steps_taken},{o.seed[0]}:{o.seed[1]},{o.peak_fidelity!r},{o.error}"
                )
        return lines

    def canonical_bytes(self) -> bytes:
        return ("\n".join(self.canonical_lines()) + "\n").encode()


# -- checkpointing -----------------------------------------------------------------

def _record_to_json(k: float, index: int, rec: ArrivalRecord) -> str:
    return json.dumps({"k": k, "index": index, **asdict(rec)})


def load_checkpoint(path, plan: RunPlan) -> dict[tuple[float, int], ArrivalRecord]:
    done: dict[tuple[float, int], ArrivalRecord] = {}
    path = Path(path)
    if not path.exists():
        return done
    want = tuple(plan.thresholds)
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError:
                log.warning("ignoring truncated checkpoint line")
                continue
            k, index = float(d.pop("k")), int(d.pop("index"))
            d["seed"] = tuple(d["seed"])
            d["thresholds"] = tuple(d["thresholds"])
            if d["thresholds"] != want or k not in plan.k_values:
                continue
            if tuple(d["seed"]) != derive_seed(plan.master_seed, cell_id(k), index):
                continue
            done[(k, index)] = ArrivalRecord(**d)
    return done


# -- execution ---------------------------------------------------------------------

def _run_task(base: ChainConfig, k: float, thresholds, master: int, indices: list[int],
              lanes: int, poisoned: list[int]):
    cfg = base.replace(meas_strength=k)
    model = build_effective_model(cfg)
    seeds = [derive_seed(master, cell_id(k), i) for i in indices]
    pos = [indices.index(i) for i in poisoned]
    return k, indices, simulate_arrivals(cfg, model, seeds, thresholds, lanes=lanes, poisoned=pos)


def run_ensemble(plan: RunPlan, *, checkpoint=None,
                 progress: Callable[[str], None] | None = None) -> RunResult:
    t0 = time.perf_counter()
    done = load_checkpoint(checkpoint, plan) if checkpoint else {}
    tasks = []
    for k in plan.k_values:
        todo = [i for i in plan.indices() if (k, i) not in done]
        for a in range(0, len(todo), plan.task_size):
            chunk = todo[a:a + plan.task_size]
            bad = [i for i in chunk if (k, i) in plan.poisoned]
            tasks.append((plan.base, k, plan.thresholds, plan.master_seed, chunk, plan.lanes, bad))

    ck = open(checkpoint, "a") if checkpoint else None
    if ck and ck.tell() > 0:
        with open(checkpoint, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            if fh.read(1) != b"\n":   # terminate a torn line so the next record stays parseable
                ck.write("\n")
    incomplete = False

    def absorb(k, indices, recs):
        for i, r in zip(indices, recs):
            done[(k, i)] = r
            if ck:
                ck.write(_record_to_json(k, i, r) + "\n")
        if ck:
            ck.flush()
        if progress:
            finished = sum(1 for key in done if key[0] == k)
            progress(f"k={k:g}: {finished}/{plan.n_trajectories} trajectories")

    try:
        if plan.workers <= 1 or len(tasks) <= 1:
            for t in tasks:
                absorb(*_run_task(*t))
        else:
            with ProcessPoolExecutor(max_workers=plan.workers) as pool:
                futures = [pool.submit(_run_task, *t) for t in tasks]
                try:
                    for fut in as_completed(futures):
                        absorb(*fut.result())
                except KeyboardInterrupt:
                    for fut in futures:
                        fut.cancel()
                    raise
    except KeyboardInterrupt:
        incomplete = True
        log.warning("run interrupted; returning partial results")
    finally:
        if ck:
            ck.close()

    records = {}
    for k in plan.k_values:
        recs = [done.get((k, i)) for i in plan.indices()]
        if any(r is None for r in recs):
            incomplete = True
            recs = [r for r in recs if r is not None]
        records[k] = recs
    result = RunResult(plan=plan, records=records, wall_clock=time.perf_counter() - t0,
                       incomplete=incomplete)
    if result.n_total and result.n_failed / result.n_total > ERROR_TOLERANCE:
        raise EnsembleError(
            f"{result.n_failed} of {result.n_total} trajectories failed "
            f"(> {ERROR_TOLERANCE:.1%}); reduce dt", result)
    return result


def run_cell(base: ChainConfig, k: float, thresholds: Iterable[float], n: int, master_seed: int,
             start_index: int = 0, worker_count: int | str = 1) -> RunResult:
    """Convenience wrapper for a single-k plan."""
    plan = RunPlan(base=base, k_values=(k,), thresholds=tuple(thresholds), n_trajectories=n,
                   master_seed=master_seed, worker_count=worker_count, start_index=start_index)
    return run_ensemble(plan)
