"""Stochastic master equation for the continuously monitored end node.

    d rho = -i[H, rho] dt - k [X, [X, rho]] dt
            + sqrt(2 eta k) (X rho + rho X - 2 <X> rho) dW
    dr    = <X> dt + dW / sqrt(8 eta k)

:func:`sme_step` is a plain numpy reference implementation of one
Euler-Maruyama step.  Production runs go through :class:`TrajectoryBatch`,
which drives the compiled kernel in :mod:`dualchain._kernel` for many
trajectories at once; the two agree to rounding (see the tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernel
from .model import ChainConfig, EffectiveModel

NOISE_CHUNK = 1 << 16
DEBUG_CHECK_EVERY = 10_000
POSITIVITY_FLOOR = -1e-4


class IntegrationError(RuntimeError):
    """Non-finite state produced by the integrator."""

    def __init__(self, message: str, step: int | None = None, seed=None):
        super().__init__(message)
        self.step = step
        self.seed = seed


class PositivityError(IntegrationError):
    pass


@dataclass(frozen=True)
class StepOutput:
    state: np.ndarray
    record_increment: float
    expectation: float


class NoiseStream:
    """Deterministic Wiener increments for one trajectory.

    The stream is keyed by an integer pair ``(master, key)``; the pair goes
    through numpy's ``SeedSequence`` hashing so neighbouring keys give
    unrelated PCG64 streams.  Increments are drawn in fixed chunks, and a
    chunked draw equals the same number of single draws, so consumers may
    pull at any granularity.
    """

    def __init__(self, seed: tuple[int, int], dt: float):
        master, key = seed
        self.seed = (int(master), int(key))
        self.dt = dt
        self._scale = math.sqrt(dt)
        self._rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed[0], spawn_key=(self.seed[1],)))
        )
        self._buf = np.empty(0)
        self._pos = 0

    def chunk(self, size: int = NOISE_CHUNK) -> np.ndarray:
        if self._pos < len(self._buf):
            head = self._buf[self._pos:]
            self._buf, self._pos = np.empty(0), 0
            if len(head) >= size:
                self._buf, self._pos = head, size
                return head[:size].copy()
            return np.concatenate([head, self._rng.standard_normal(size - len(head)) * self._scale])
        return self._rng.standard_normal(size) * self._scale

    def draw(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.standard_normal(NOISE_CHUNK) * self._scale
            self._pos = 0
        self._pos += 1
        return float(self._buf[self._pos - 1])


def draw_increment(noise: NoiseStream) -> float:
    return noise.draw()


def _check_finite(rho: np.ndarray, step: int | None = None):
    if not np.all(np.isfinite(rho)):
        raise IntegrationError(f"non-finite density matrix at step {step}", step=step)


def sme_step(state: np.ndarray, model: EffectiveModel, config: ChainConfig, dW: float,
             step: int | None = None) -> StepOutput:
    """One Euler-Maruyama step, then Hermitian symmetrization and trace renormalization."""
    if not math.isfinite(dW):
        raise IntegrationError(f"non-finite noise increment at step {step}", step=step)
    rho = np.asarray(state, dtype=complex)
    H = model.hamiltonian
    x = model.parity
    k, eta, dt = config.meas_strength, config.efficiency, config.dt
    ex = float(np.real(np.dot(x, np.diag(rho))))
    comm = H @ rho - rho @ H
    # [X,[X,rho]]_ij = (x_i - x_j)^2 rho_ij for diagonal X
    dbl = (x[:, None] - x[None, :]) ** 2 * rho
    innovation = (x[:, None] + x[None, :] - 2 * ex) * rho
    new = rho + (-1j * comm - k * dbl) * dt + math.sqrt(2 * eta * k) * innovation * dW
    new = 0.5 * (new + new.conj().T)
    new = new / np.real(np.trace(new))
    _check_finite(new, step)
    if k > 0:
        dr = ex * dt + dW / math.sqrt(8 * eta * k)
    else:
        dr = math.nan
    return StepOutput(state=new, record_increment=dr, expectation=ex)


def liouvillian(model: EffectiveModel, config: ChainConfig) -> np.ndarray:
    """Superoperator of the averaged dynamics acting on row-major vec(rho)."""
    n = model.n
    H = model.hamiltonian.astype(complex)
    X = np.diag(model.parity).astype(complex)
    eye = np.eye(n)
    k = config.meas_strength
    # vec(A rho B) = (A kron B^T) vec(rho) for row-major vec
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    X2 = X @ X
    L += -k * (np.kron(X2, eye) - 2 * np.kron(X, X.T) + np.kron(eye, X2.T))
    return L


def lindblad_evolve(state: np.ndarray, model: EffectiveModel, config: ChainConfig,
                    t: float) -> np.ndarray:
    """Ensemble-averaged state at time ``t``, via the exact propagator exp(L t)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rho = np.asarray(state, dtype=complex)
    n = model.n
    out = scipy.linalg.expm(liouvillian(model, config) * t) @ rho.reshape(-1)
    out = out.reshape(n, n)
    _check_finite(out)
    return out


def lindblad_series(state: np.ndarray, model: EffectiveModel, config: ChainConfig,
                    times) -> np.ndarray:
    L = liouvillian(model, config)
    v = np.asarray(state, dtype=complex).reshape(-1)
    n = model.n
    return np.array([(scipy.linalg.expm(L * t) @ v).reshape(n, n) for t in times])


class TrajectoryBatch:
    """A fixed set of lanes integrated in lock-step by the compiled kernel.

    Each lane owns a :class:`NoiseStream`.  Lanes can be (re)started,
    snapshotted and retired independently; the arithmetic of one lane never
    depends on the others.
    """

    def __init__(self, model: EffectiveModel, config: ChainConfig, lanes: int,
                 thresholds=(), debug: bool = False):
        self.model = model
        self.config = config
        self.lanes = lanes
        self.n = model.n
        self.debug = debug
        self.chunk = DEBUG_CHECK_EVERY if debug else NOISE_CHUNK
        size, self._tab, self._dtab = _kernel.layout(self.n)
        self._ftab = _kernel.coefficient_table(
            self.n, np.diag(model.hamiltonian), model.parity, config.meas_strength, config.dt
        )
        self._hdt = config.dt * float(model.hamiltonian[0, 1])
        k, eta = config.meas_strength, config.efficiency
        self._amp = math.sqrt(2 * eta * k)
        self._rec_scale = 1 / math.sqrt(8 * eta * k) if k > 0 else math.nan
        self._par = np.ascontiguousarray(model.parity, dtype=np.float64)
        self.R = np.zeros((size, lanes))
        self.I = np.zeros((size, lanes))
        self.R[self._dtab[0, 0]] = 1.0  # idle lanes hold a valid state
        self._NR = np.zeros((size, lanes))
        self._NI = np.zeros((size, lanes))
        self.thresholds = np.asarray(sorted(thresholds), dtype=np.float64)
        T = len(self.thresholds)
        self.noise = np.zeros((lanes, self.chunk))
        self.ptr = np.full(lanes, self.chunk, dtype=np.int64)
        self.steps = np.zeros(lanes, dtype=np.int64)
        self.status = np.full(lanes, _kernel.IDLE, dtype=np.int64)
        self.next_thr = np.zeros(lanes, dtype=np.int64)
        self.arr_step = np.full((lanes, T), -1, dtype=np.int64)
        self.arr_fid = np.full((lanes, T), np.nan)
        self.peak = np.zeros(lanes)
        self.streams: list[NoiseStream | None] = [None] * lanes
        self.max_steps = config.max_steps
        self.trace = np.zeros((0, 4))
        self.trace_stride = 0
        self.trace_count = np.zeros(1, dtype=np.int64)
        self.dr_acc = np.zeros(1)

    # -- lane management ---------------------------------------------------
    def start(self, lane: int, seed, rho0: np.ndarray | None = None):
        if rho0 is None:
            rho0 = np.zeros((self.n, self.n))
            rho0[0, 0] = 1.0
        self.set_state(lane, rho0)
        self.streams[lane] = NoiseStream(seed, self.config.dt)
        self.ptr[lane] = self.chunk
        self.steps[lane] = 0
        self.next_thr[lane] = 0
        self.arr_step[lane] = -1
        self.arr_fid[lane] = np.nan
        self.peak[lane] = float(np.real(rho0[-1, -1]))
        self.status[lane] = _kernel.RUNNING
        self._refill(lane)
        # a trajectory may start at or above a threshold
        fid = self.peak[lane]
        while self.next_thr[lane] < len(self.thresholds) and fid >= self.thresholds[self.next_thr[lane]]:
            self.arr_step[lane, self.next_thr[lane]] = 0
            self.arr_fid[lane, self.next_thr[lane]] = fid
            self.next_thr[lane] += 1

    def retire(self, lane: int):
        self.status[lane] = _kernel.IDLE
        self.streams[lane] = None
        self.set_state(lane, np.diag(np.r_[1.0, np.zeros(self.n - 1)]))

    def set_state(self, lane: int, rho: np.ndarray):
        rho = np.asarray(rho, dtype=complex)
        iu = np.triu_indices(self.n)
        grid = self._grid_index()
        self.R[:, lane] = 0.0
        self.I[:, lane] = 0.0
        self.R[grid[iu], lane] = rho[iu].real
        self.I[grid[iu], lane] = rho[iu].imag
        self.I[self._dtab[:, 0], lane] = 0.0

    def state(self, lane: int) -> np.ndarray:
        iu = np.triu_indices(self.n)
        grid = self._grid_index()
        upper = np.zeros((self.n, self.n), dtype=complex)
        upper[iu] = self.R[grid[iu], lane] + 1j * self.I[grid[iu], lane]
        return upper + np.triu(upper, 1).conj().T

    def fidelity(self) -> np.ndarray:
        return self.R[self._dtab[-1, 0]].copy()

    def _grid_index(self) -> np.ndarray:
        w = self.n + 2
        i, j = np.indices((self.n, self.n))
        return (i + 1) * w + (j + 1)

    def _refill(self, lane: int):
        if self.debug and self.steps[lane] > 0:
            lam = np.linalg.eigvalsh(self.state(lane))[0]
            if lam < POSITIVITY_FLOOR:
                raise PositivityError(
                    f"density matrix lost positivity (min eigenvalue {lam:.3g}) at step "
                    f"{self.steps[lane]}; reduce dt",
                    step=int(self.steps[lane]), seed=self.streams[lane].seed,
                )
        self.noise[lane] = self.streams[lane].chunk(self.chunk)
        self.ptr[lane] = 0
        self.status[lane] = _kernel.RUNNING

    def enable_trace(self, stride: int, capacity: int):
        self.trace_stride = stride
        self.trace = np.zeros((capacity, 4))
        self.trace_count[0] = 0
        self.dr_acc[0] = 0.0

    # -- stepping ----------------------------------------------------------
    def advance(self, nsteps: int) -> int:
        """Run the kernel until ``nsteps`` pass or some lane changes status."""
        return _kernel.advance(
            self.R, self.I, self._NR, self._NI, self._tab, self._ftab, self._dtab, self._par,
            self._hdt, self._amp, self.config.dt, self._rec_scale, self.noise, self.ptr,
            self.steps, self.max_steps, self.status, self.thresholds, self.next_thr,
            self.arr_step, self.arr_fid, self.peak, nsteps, self.trace, self.trace_stride,
            self.trace_count, self.dr_acc,
        )

    def run_for(self, nsteps: int):
        """Advance every running lane by exactly ``nsteps`` (fixed-time ensembles)."""
        target = self.steps.copy()
        target[self.status == _kernel.RUNNING] += nsteps
        while True:
            running = self.status == _kernel.RUNNING
            remaining = int((target - self.steps)[running].max()) if running.any() else 0
            if remaining <= 0:
                break
            self.advance(remaining)
            for lane in np.flatnonzero(self.status == _kernel.NEED_NOISE):
                self._refill(lane)
            failed = np.flatnonzero(self.status == _kernel.FAILED)
            if len(failed):
                lane = failed[0]
                raise IntegrationError(
                    f"non-finite state at step {self.steps[lane]}",
                    step=int(self.steps[lane]), seed=self.streams[lane].seed,
                )
