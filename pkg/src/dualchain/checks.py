"""Oracle suite: brute-force and statistical cross-checks of the reductions.

Each check returns a :class:`CheckResult`; ``run_checks`` runs them all and
is what ``dualchain check`` prints.  Statistical bands are expressed in
standard errors of the sample actually drawn, so reduced (``quick``)
trajectory counts widen them automatically as 1/sqrt(M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernel
from .ensemble import RunPlan, run_ensemble
from .model import (ChainConfig, CodedQubit, EffectiveModel, block_residual, build_effective_model,
                    build_full_model, initial_state, restrict)
from .protocol import run_trajectory
from .sme import NoiseStream, TrajectoryBatch, liouvillian, lindblad_series, sme_step


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_qubits(count: int, seed: int = 0) -> list[CodedQubit]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        v /= np.linalg.norm(v)
        out.append(CodedQubit(complex(v[0]), complex(v[1])))
    return out


def restriction_error(n: int, qubit: CodedQubit, field: float = 0.0,
                      corrupt_offdiag: float = 0.0) -> tuple[float, float]:
    """Max deviation of the restricted full Hamiltonian from ``h + c I``, and c."""
    cfg = ChainConfig(n_sites=n, field=field)
    h = build_effective_model(cfg).hamiltonian.copy()
    if corrupt_offdiag:
        h[0, 1] += corrupt_offdiag
        h[1, 0] += corrupt_offdiag
    full = build_full_model(cfg, qubit)
    d = restrict(full) - h
    c = float(np.real(np.trace(d))) / n
    return float(np.abs(d - c * np.eye(n)).max()), c


def check_restriction(corrupt_offdiag: float = 0.0) -> CheckResult:
    worst = 0.0
    for n in range(2, 6):
        for q in random_qubits(3, seed=n):
            err, _ = restriction_error(n, q, field=0.3, corrupt_offdiag=corrupt_offdiag)
            worst = max(worst, err)
    return CheckResult("full-space restriction N=2..5", worst <= 1e-12, f"max deviation {worst:.2e}")


def check_block_closure() -> CheckResult:
    worst = 0.0
    for n in range(2, 6):
        for q in random_qubits(2, seed=10 + n):
            full = build_full_model(ChainConfig(n_sites=n, field=0.3), q)
            worst = max(worst, block_residual(full, full.hamiltonian),
                        block_residual(full, full.parity_op))
    return CheckResult("coded span closed under H and X", worst <= 1e-12, f"max leak {worst:.2e}")


def check_field_invariance() -> CheckResult:
    worst = 0.0
    for n in range(2, 5):
        q = random_qubits(1, seed=20 + n)[0]
        full = build_full_model(ChainConfig(n_sites=n, field=1.0), q)
        v = full.coded_basis
        # commutator of the Zeeman term with the projector onto the coded span
        bv = full.field_term @ v
        comm = bv @ v.conj().T - v @ (bv.conj().T)
        worst = max(worst, float(np.abs(comm).max()))
    same = all(
        np.array_equal(build_effective_model(ChainConfig(n_sites=n, field=b)).hamiltonian,
                       build_effective_model(ChainConfig(n_sites=n)).hamiltonian)
        for n in (2, 5, 10) for b in (-1.3, 0.7)
    )
    ok = worst <= 1e-12 and same
    return CheckResult("field invariance of sector dynamics", ok,
                       f"commutator {worst:.2e}, effective model unchanged: {same}")


def _sse_fidelity(H, X, psi0, target, noise, k, dt):
    """Pure-state Euler-Maruyama unraveling; returns |<target|psi>|^2 after every step.

    Uses c = sqrt(2k) X, the pure-state counterpart of the density-matrix update.
    """
    psi = np.asarray(psi0, dtype=complex)
    amp = math.sqrt(2 * k)
    out = np.empty(len(noise))
    for i, dW in enumerate(noise):
        xp = X @ psi
        ex = float(np.real(np.vdot(psi, xp)))
        d = xp - ex * psi
        psi = psi + (-1j * (H @ psi) - k * (X @ d - ex * d)) * dt + amp * d * dW
        psi = psi / np.linalg.norm(psi)
        out[i] = abs(np.vdot(target, psi)) ** 2
    return out


def qubit_independence(n: int = 4, steps: int = 3000, dt: float = 1e-3, k: float = 2.0,
                       seed=(41, 0), field: float = 0.4):
    """Coded-subspace fidelity traces of full-space trajectories for three encoded qubits.

    All runs share one noise path.  Returns ``(traces, effective_trace)``.
    """
    cfg = ChainConfig(n_sites=n, meas_strength=k, dt=dt, field=field)
    noise = NoiseStream(seed, dt).chunk(steps)
    r = 1 / math.sqrt(2)
    traces = []
    for q in (CodedQubit(1.0, 0.0), CodedQubit(0.0, 1.0), CodedQubit(r, r)):
        full = build_full_model(cfg, q)
        v = full.coded_basis
        traces.append(_sse_fidelity(full.hamiltonian, full.parity_op, v[:, 0], v[:, -1], noise, k, dt))
    m = build_effective_model(cfg)
    # the uniform offset is a global phase of the exact flow but not of an Euler step
    offset = float(np.real(np.trace(restrict(full) - m.hamiltonian))) / n
    e0 = np.zeros(n)
    e0[0] = 1.0
    eff = _sse_fidelity(m.hamiltonian + offset * np.eye(n), np.diag(m.parity), e0, np.eye(n)[-1],
                        noise, k, dt)
    return traces, eff


def check_qubit_independence() -> CheckResult:
    traces, eff = qubit_independence()
    spread = max(float(np.abs(t - traces[0]).max()) for t in traces)
    vs_eff = float(np.abs(traces[0] - eff).max())
    ok = spread <= 1e-6 and vs_eff <= 1e-6
    return CheckResult("encoded-state independence (full space, N=4)", ok,
                       f"max spread across (alpha, beta) {spread:.1e}, vs effective model {vs_eff:.1e}, "
                       f"peak fidelity {traces[0].max():.3f}")


def check_trace_hermiticity(steps: int = 2000) -> CheckResult:
    cfg = ChainConfig(n_sites=10, meas_strength=2.0, dt=1e-3)
    model = build_effective_model(cfg)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    noise = NoiseStream((3, 0), cfg.dt)
    tr_err = herm_err = 0.0
    for s in range(steps):
        rho = sme_step(rho, model, cfg, noise.draw(), step=s).state
        tr_err = max(tr_err, abs(np.trace(rho).real - 1))
        herm_err = max(herm_err, float(np.abs(rho - rho.conj().T).max()))
    batch = TrajectoryBatch(model, cfg, 4)
    for lane in range(4):
        batch.start(lane, (3, lane + 1), rho)
    batch.run_for(steps)
    for lane in range(4):
        r = batch.state(lane)
        tr_err = max(tr_err, abs(np.trace(r).real - 1))
        herm_err = max(herm_err, float(np.abs(r - r.conj().T).max()))
    ok = tr_err <= 1e-12 and herm_err <= 1e-12
    return CheckResult("trace and Hermiticity enforcement", ok,
                       f"|tr-1| {tr_err:.1e}, Hermiticity defect {herm_err:.1e}")


def _fixed_time_ensemble(cfg: ChainConfig, rho0: np.ndarray, sample_steps, m: int, master: int,
                         lanes: int = 64):
    """States of ``m`` trajectories at each sample step (shape: samples x m x N x N)."""
    model = build_effective_model(cfg)
    out = np.zeros((len(sample_steps), m, model.n, model.n), dtype=complex)
    for a in range(0, m, lanes):
        width = min(lanes, m - a)
        batch = TrajectoryBatch(model, cfg, width)
        for lane in range(width):
            batch.start(lane, (master, a + lane), rho0)
        done = 0
        for si, s in enumerate(sample_steps):
            batch.run_for(s - done)
            done = s
            for lane in range(width):
                out[si, a + lane] = batch.state(lane)
    return out


def check_martingale(m: int = 1000) -> CheckResult:
    cfg = ChainConfig(n_sites=4, coupling=0.0, meas_strength=1.0, dt=1e-3, t_max=1e3)
    psi = np.zeros(4, dtype=complex)
    psi[0], psi[-1] = math.sqrt(0.7), math.sqrt(0.3)
    rho0 = np.outer(psi, psi.conj())
    par = build_effective_model(cfg).parity
    x0 = float(np.real(par @ np.diag(rho0)))
    steps = [100, 300, 1000, 3000]
    states = _fixed_time_ensemble(cfg, rho0, steps, m, master=101)
    worst = 0.0
    for si in range(len(steps)):
        x = np.real(np.einsum("i,mii->m", par, states[si]))
        se = x.std(ddof=1) / math.sqrt(m)
        worst = max(worst, abs(x.mean() - x0) / se if se > 0 else 0.0)
    return CheckResult("martingale of <X> with H=0", worst <= 4,
                       f"max deviation {worst:.2f} SE over {m} trajectories")


def check_born_rule(m: int = 1000, p: float = 0.3) -> CheckResult:
    worst = 0.0
    details = []
    for n in (2, 4):
        cfg = ChainConfig(n_sites=n, coupling=0.0, meas_strength=1.0, dt=1e-3, t_max=1e3)
        rho0 = np.diag(np.r_[np.full(n - 1, p / (n - 1)), 1 - p]).astype(complex)
        states = _fixed_time_ensemble(cfg, rho0, [8000], m, master=202 + n)
        frac = float(np.mean(np.real(states[0, :, -1, -1]) > 0.99))
        se = math.sqrt(p * (1 - p) / m)
        z = abs(frac - (1 - p)) / se
        worst = max(worst, z)
        details.append(f"N={n}: {frac:.3f} vs {1 - p:.3f}")
    return CheckResult("Born-rule collapse with H=0", worst <= 4,
                       f"{'; '.join(details)} (max {worst:.2f} binomial SE)")


# per-sample-time steps: the trajectory mean follows the Euler map (I + L dt)^n exactly,
# so dt must push that deterministic bias below the statistical band at each time
UNRAVEL_TIMES = (1.0, 5.0, 10.0)
UNRAVEL_STEPS = (5e-6, 1e-4, 1e-4)


def euler_bias(rho0: np.ndarray, model: EffectiveModel, cfg: ChainConfig, t: float,
               dt: float) -> float:
    """Frobenius gap between the Euler-discretized and exact averaged dynamics at ``t``."""
    L = liouvillian(model, cfg)
    n = int(round(t / dt))
    step = np.linalg.matrix_power(np.eye(len(L)) + L * dt, n)
    v = rho0.reshape(-1)
    return float(np.linalg.norm(step @ v - scipy.linalg.expm(L * t) @ v))


def unraveling_distance(m: int = 1000, times=UNRAVEL_TIMES, dts=UNRAVEL_STEPS,
                        k: float = 2.0, n: int = 10, master: int = 303, reference: str = "exact"):
    """Frobenius distance of the trajectory mean from the averaged dynamics, with its band.

    Returns rows ``(t, dt, distance, band, euler_bias)``.  ``reference="euler"``
    compares against the discrete map (I + L dt)^n instead of exp(L t).
    """
    if np.isscalar(dts):
        dts = (float(dts),) * len(times)
    rows = []
    for dt in sorted(set(dts)):
        ts = [t for t, d in zip(times, dts) if d == dt]
        cfg = ChainConfig(n_sites=n, meas_strength=k, dt=dt, t_max=max(ts) + 1)
        model = build_effective_model(cfg)
        rho0 = initial_state(model)
        steps = [int(round(t / dt)) for t in ts]
        states = _fixed_time_ensemble(cfg, rho0, steps, m, master=master)
        exact = lindblad_series(rho0, model, cfg, ts)
        L = liouvillian(model, cfg)
        for si, t in enumerate(ts):
            bias = euler_bias(rho0, model, cfg, t, dt)
            ref = exact[si]
            if reference == "euler":
                ref = (np.linalg.matrix_power(np.eye(len(L)) + L * dt, steps[si])
                       @ rho0.reshape(-1)).reshape(n, n)
            mean = states[si].mean(axis=0)
            dist = float(np.linalg.norm(mean - ref))
            spread = math.sqrt(float(np.mean(np.sum(np.abs(states[si] - mean) ** 2, axis=(1, 2)))))
            rows.append((t, dt, dist, 4 * spread / math.sqrt(m), bias))
    rows.sort()
    return rows


def check_unraveling(m: int = 1000) -> CheckResult:
    rows = unraveling_distance(m=m)
    ok = all(d <= band for _, _, d, band, _ in rows)
    detail = ", ".join(f"t={t:g} (dt={dt:g}): {d:.3g} <= {band:.3g} [Euler bias {b:.2g}]"
                       for t, dt, d, band, b in rows)
    return CheckResult("trajectory average matches averaged dynamics", ok, detail)


def strong_error_ratios(paths: int = 64, halvings: int = 3, dt0: float = 2e-3, t_end: float = 0.5,
                        k: float = 0.5, n: int = 10, seed: int = 404):
    """Mean terminal strong errors at dt0 / 2**j (j = 0..halvings) against a dt0/64 reference.

    All resolutions share one fine Brownian path per sample.
    """
    fine = dt0 / 64
    # uniform superposition over nodes: the measurement noise acts from t = 0
    psi = np.full(n, 1 / math.sqrt(n))
    rho0 = np.outer(psi, psi).astype(complex)
    n_fine = int(round(t_end / fine))
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((paths, n_fine)) * math.sqrt(fine)

    def terminal(level_dt):
        agg = int(round(level_dt / fine))
        incr = dW.reshape(paths, n_fine // agg, agg).sum(axis=2)
        cfg = ChainConfig(n_sites=n, meas_strength=k, dt=level_dt, t_max=t_end * 2)
        model = build_effective_model(cfg)
        batch = TrajectoryBatch(model, cfg, paths)
        for lane in range(paths):
            batch.start(lane, (seed, lane), rho0)
        batch.noise = np.ascontiguousarray(incr)
        batch.ptr[:] = 0
        batch.advance(incr.shape[1])
        if np.any(batch.status != _kernel.RUNNING) or np.any(batch.steps != incr.shape[1]):
            raise RuntimeError(f"convergence run did not complete: {batch.status} {batch.steps}")
        return np.array([batch.state(lane) for lane in range(paths)])

    ref = terminal(fine)
    errs = []
    for j in range(halvings + 1):
        s = terminal(dt0 / 2 ** j)
        errs.append(float(np.mean(np.linalg.norm(s - ref, axis=(1, 2)))))
    ratios = [errs[j] / errs[j + 1] for j in range(halvings)]
    return errs, ratios


def check_convergence(paths: int = 64) -> CheckResult:
    errs, ratios = strong_error_ratios(paths=paths)
    avg = float(np.mean(ratios))
    return CheckResult("strong convergence order 1/2", 1.2 <= avg <= 1.7,
                       f"error ratios {', '.join(f'{r:.3f}' for r in ratios)} (mean {avg:.3f})")


def sign_traces(seed=(5, 5), t_max: float = 2.0, k: float = 2.0):
    out = []
    for J in (1.0, -1.0):
        cfg = ChainConfig(coupling=J, meas_strength=k, t_max=t_max, fidelity_threshold=0.999999)
        _, rows = run_trajectory(cfg, build_effective_model(cfg), seed, trace_stride=1)
        out.append(rows[:, 1])
    return out


def check_sign_symmetry() -> CheckResult:
    a, b = sign_traces()
    same = len(a) == len(b) and np.array_equal(a, b)
    return CheckResult("J -> -J bit-equality of rho_NN traces", bool(same),
                       f"{len(a)} samples, identical: {same}")


def check_scheduling(n: int = 48) -> CheckResult:
    base = ChainConfig(t_max=20.0)
    common = dict(base=base, k_values=(2.0, 4.0), thresholds=(0.9, 0.99), n_trajectories=n,
                  master_seed=77)
    a = run_ensemble(RunPlan(**common, worker_count=1, lanes=64, task_size=256)).canonical_bytes()
    b = run_ensemble(RunPlan(**common, worker_count=2, lanes=8, task_size=7)).canonical_bytes()
    return CheckResult("scheduling-invariant ensembles", a == b,
                       f"{len(a)} bytes, identical: {a == b}")


def run_checks(quick: bool = False, corrupt_offdiag: float = 0.0) -> list[CheckResult]:
    m = 250 if quick else 1000
    return [
        check_restriction(corrupt_offdiag),
        check_block_closure(),
        check_field_invariance(),
        check_qubit_independence(),
        check_trace_hermiticity(500 if quick else 2000),
        check_martingale(m),
        check_born_rule(m),
        check_unraveling(m=m),
        check_convergence(paths=64),
        check_sign_symmetry(),
        check_scheduling(24 if quick else 48),
    ]
