"""Single transmission attempts.

Continuous protocol: integrate the conditioned state from the sender's
node and report the first time the odd-subspace overlap ``rho_NN`` reaches
the fidelity threshold (checked after every step).  Trajectories that do
not arrive before ``t_max`` are censored.

Projective baseline: unitary evolution interrupted by instantaneous parity
measurements at scheduled times; the first "odd" outcome ends the attempt.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernel
from .model import ChainConfig, EffectiveModel
from .sme import IntegrationError, TrajectoryBatch

log = logging.getLogger(__name__)

DEFAULT_LANES = 64


@dataclass(frozen=True)
class TrajectoryOutcome:
    threshold: float
    arrival_time: float | None
    seed: tuple[int, int]
    steps_taken: int
    peak_fidelity: float
    error: str | None = None

    @property
    def censored(self) -> bool:
        return self.arrival_time is None and self.error is None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class ArrivalRecord:
    """Everything one trajectory yields for a set of thresholds."""

    seed: tuple[int, int]
    thresholds: tuple[float, ...]
    arrival_steps: list[int]          # -1 when censored
    arrival_fidelity: list[float]
    peak: float
    steps: int
    error: str | None = None

    def outcome(self, threshold: float, config: ChainConfig) -> TrajectoryOutcome:
        i = self.thresholds.index(threshold)
        if self.error is not None:
            return TrajectoryOutcome(threshold, None, self.seed, self.steps, self.peak, self.error)
        s = self.arrival_steps[i]
        if s < 0:
            return TrajectoryOutcome(threshold, None, self.seed, config.max_steps, self.peak)
        return TrajectoryOutcome(threshold, s * config.dt, self.seed, s, self.arrival_fidelity[i])


def simulate_arrivals(config: ChainConfig, model: EffectiveModel, seeds: Sequence,
                      thresholds: Iterable[float] | None = None, *, lanes: int = DEFAULT_LANES,
                      poisoned: Iterable[int] = (), debug: bool = False) -> list[ArrivalRecord]:
    """Run one trajectory per seed and record first-passage steps for every threshold.

    A trajectory stops once the highest threshold is crossed or ``t_max`` is
    reached, so the crossing of each lower threshold is exactly what a
    single-threshold run with the same seed would report.  ``poisoned``
    lists seed positions whose initial state is forced non-finite (fault
    injection for tests).
    """
    thr = tuple(sorted(set(thresholds if thresholds is not None else [config.fidelity_threshold])))
    poisoned = set(poisoned)
    seeds = list(seeds)
    out: list[ArrivalRecord | None] = [None] * len(seeds)
    if not seeds:
        return []
    width = max(1, min(lanes, len(seeds)))
    batch = TrajectoryBatch(model, config, width, thresholds=thr, debug=debug)
    owner = [-1] * width
    pending = iter(range(len(seeds)))
    exhausted = False

    def feed(lane):
        nonlocal exhausted
        if exhausted:
            return
        j = next(pending, None)
        if j is None:
            exhausted = True
            return
        rho0 = None
        if j in poisoned:
            rho0 = np.full((model.n, model.n), np.nan)
        batch.start(lane, seeds[j], rho0)
        owner[lane] = j
        if batch.status[lane] == _kernel.RUNNING and batch.next_thr[lane] == len(thr):
            batch.status[lane] = _kernel.FINISHED

    for lane in range(width):
        feed(lane)
    while True:
        for lane in np.flatnonzero((batch.status == _kernel.FINISHED) | (batch.status == _kernel.FAILED)):
            j = owner[lane]
            err = None
            if batch.status[lane] == _kernel.FAILED:
                err = f"non-finite state at step {int(batch.steps[lane])}, seed {tuple(seeds[j])}"
                log.warning(err)
            out[j] = ArrivalRecord(
                seed=tuple(int(s) for s in seeds[j]), thresholds=thr,
                arrival_steps=[int(s) for s in batch.arr_step[lane]],
                arrival_fidelity=[float(f) for f in batch.arr_fid[lane]],
                peak=float(batch.peak[lane]), steps=int(batch.steps[lane]), error=err,
            )
            batch.retire(lane)
            owner[lane] = -1
            feed(lane)
        for lane in np.flatnonzero(batch.status == _kernel.NEED_NOISE):
            batch._refill(lane)
        running = np.flatnonzero(batch.status == _kernel.RUNNING)
        if len(running) == 0:
            break
        if exhausted and batch.lanes > 1 and len(running) <= batch.lanes // 4:
            batch, owner = _shrink(batch, running, owner)
        batch.advance(config.max_steps)
    return out


def _shrink(batch: TrajectoryBatch, keep: np.ndarray, owner: list[int]):
    """Repack surviving lanes into a narrower batch (bit-preserving copy)."""
    width = 1 << int(math.ceil(math.log2(len(keep))))
    new = TrajectoryBatch(batch.model, batch.config, width, thresholds=batch.thresholds,
                          debug=batch.debug)
    m = len(keep)
    for name in ("R", "I"):
        getattr(new, name)[:, :m] = getattr(batch, name)[:, keep]
    for name in ("noise", "ptr", "steps", "status", "next_thr", "arr_step", "arr_fid", "peak"):
        getattr(new, name)[:m] = getattr(batch, name)[keep]
    new.streams[:m] = [batch.streams[i] for i in keep]
    new_owner = [owner[i] for i in keep] + [-1] * (width - m)
    return new, new_owner


def run_trajectory(config: ChainConfig, model: EffectiveModel, seed: tuple[int, int],
                   *, trace_stride: int = 0, debug: bool = False):
    """One continuous-measurement attempt at ``config.fidelity_threshold``.

    With ``trace_stride > 0`` also returns an array of rows
    ``(t, rho_NN, <X>, dr)`` sampled every ``trace_stride`` steps, where
    ``dr`` is the record integrated over the stride.
    """
    thr = (config.fidelity_threshold,)
    batch = TrajectoryBatch(model, config, 1, thresholds=thr, debug=debug)
    if trace_stride:
        batch.enable_trace(trace_stride, config.max_steps // trace_stride + 1)
    batch.start(0, seed)
    while batch.status[0] in (_kernel.RUNNING, _kernel.NEED_NOISE):
        if batch.status[0] == _kernel.NEED_NOISE:
            batch._refill(0)
        batch.advance(config.max_steps)
    if batch.status[0] == _kernel.FAILED:
        raise IntegrationError(f"non-finite state at step {int(batch.steps[0])}, seed {seed}",
                               step=int(batch.steps[0]), seed=seed)
    rec = ArrivalRecord(seed=tuple(seed), thresholds=thr,
                        arrival_steps=[int(batch.arr_step[0, 0])],
                        arrival_fidelity=[float(batch.arr_fid[0, 0])],
                        peak=float(batch.peak[0]), steps=int(batch.steps[0]))
    outcome = rec.outcome(thr[0], config)
    if not trace_stride:
        return outcome
    rows = batch.trace[: batch.trace_count[0]].copy()
    rows[:, 0] *= config.dt
    first = np.array([[0.0, 0.0, float(model.parity[0]), 0.0]])
    return outcome, np.vstack([first, rows])


def write_trace_csv(path, rows: np.ndarray):
    with open(path, "w") as fh:
        fh.write("t,rho_NN,expect_X,dr\n")
        for r in rows:
            fh.write(",".join(f"{v:.9g}" for v in r) + "\n")


# -- projective baseline ---------------------------------------------------------

@dataclass(frozen=True)
class MeasurementSchedule:
    times: tuple[float, ...]
    rule: str = "explicit"
    floor: float | None = None
    warning: str | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) and (np.any(np.diff(t) <= 0) or t[0] < 0):
            raise ValueError("measurement times must be nonnegative and strictly increasing")


@dataclass(frozen=True)
class BaselineOutcome:
    arrival_time: float | None
    rounds: int
    success_probabilities: tuple[float, ...]

    @property
    def censored(self) -> bool:
        return self.arrival_time is None


class _Propagator:
    def __init__(self, model: EffectiveModel):
        self.w, self.V = np.linalg.eigh(model.hamiltonian)

    def vector(self, psi: np.ndarray, t) -> np.ndarray:
        c = self.V.T @ psi
        t = np.atleast_1d(t)
        return (np.exp(-1j * np.outer(t, self.w)) * c) @ self.V.T

    def density(self, rho: np.ndarray, t: float) -> np.ndarray:
        U = (self.V * np.exp(-1j * self.w * t)) @ self.V.T
        return U @ rho @ U.conj().T


def greedy_schedule(model: EffectiveModel, config: ChainConfig, floor: float, *,
                    resolution: float = 0.01, window: float = 50.0,
                    min_survival: float = 1e-15) -> MeasurementSchedule:
    """Measure at every local maximum of the end-node population that exceeds ``floor``.

    The population is followed along the failure-conditioned evolution
    (each "even" outcome projects the end node out).  The scan stops at
    ``t_max`` or once the probability of still not having succeeded drops
    below ``min_survival``.
    """
    if not 0 < floor < 1:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")
    prop = _Propagator(model)
    psi = np.zeros(model.n, dtype=complex)
    psi[0] = 1.0
    t0, survival = 0.0, 1.0
    times: list[float] = []
    N = model.n - 1

    def pop(t, state):
        return float(np.abs(prop.vector(state, t)[0, N]) ** 2)

    start = 0.0
    while t0 + start < config.t_max and survival >= min_survival:
        grid = np.arange(start, start + window + 2 * resolution, resolution)
        grid = grid[t0 + grid <= config.t_max]
        if len(grid) < 3:
            break
        F = np.abs(prop.vector(psi, grid)[:, N]) ** 2
        peaks = np.flatnonzero((F[1:-1] > F[:-2]) & (F[1:-1] >= F[2:]) & (F[1:-1] > floor)) + 1
        if len(peaks) == 0:
            start = grid[-2]
            continue
        i = peaks[0]
        res = minimize_scalar(lambda s: -pop(s, psi), bounds=(grid[i - 1], grid[i + 1]),
                              method="bounded", options={"xatol": 1e-10})
        s = float(res.x)
        p = pop(s, psi)
        if t0 + s > config.t_max:
            break
        t0 += s
        times.append(t0)
        survival *= 1 - p
        psi = prop.vector(psi, s)[0]
        psi[N] = 0
        psi /= np.linalg.norm(psi)
        start = 0.0
    warning = None
    if not times:
        warning = f"no local maximum above floor {floor} before t_max"
        log.warning(warning)
    return MeasurementSchedule(times=tuple(times), rule="greedy", floor=floor, warning=warning)


def _baseline_rng(seed):
    master, key = seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master), spawn_key=(int(key), 1))))


def run_projective_baseline(config: ChainConfig, model: EffectiveModel,
                            schedule: MeasurementSchedule, seed) -> BaselineOutcome:
    if not schedule.times:
        raise ValueError("schedule is empty")
    rng = _baseline_rng(seed)
    prop = _Propagator(model)
    rho = np.zeros((model.n, model.n), dtype=complex)
    rho[0, 0] = 1.0
    t_prev = 0.0
    probs: list[float] = []
    for t in schedule.times:
        rho = prop.density(rho, t - t_prev)
        t_prev = t
        p = min(1.0, max(0.0, float(rho[-1, -1].real)))
        probs.append(p)
        if rng.random() < p:
            return BaselineOutcome(arrival_time=t, rounds=len(probs), success_probabilities=tuple(probs))
        rho[-1, :] = 0
        rho[:, -1] = 0
        tr = rho.trace().real
        if tr > 0:
            rho = rho / tr
    return BaselineOutcome(arrival_time=None, rounds=len(probs), success_probabilities=tuple(probs))


def baseline_expectation(model: EffectiveModel, schedule: MeasurementSchedule):
    """Exact success probabilities along the failure path and the resulting mean arrival.

    Returns ``(probabilities, mean_arrival_given_success, total_success)``.
    """
    prop = _Propagator(model)
    rho = np.zeros((model.n, model.n), dtype=complex)
    rho[0, 0] = 1.0
    t_prev, survival, acc = 0.0, 1.0, 0.0
    probs = []
    for t in schedule.times:
        rho = prop.density(rho, t - t_prev)
        t_prev = t
        p = min(1.0, max(0.0, float(rho[-1, -1].real)))
        probs.append(p)
        acc += survival * p * t
        survival *= 1 - p
        rho[-1, :] = 0
        rho[:, -1] = 0
        tr = rho.trace().real
        if tr > 0:
            rho = rho / tr
    success = 1 - survival
    return probs, (acc / success if success > 0 else math.nan), success
