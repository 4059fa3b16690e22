import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from dualchain import _kernel
from dualchain.model import ChainConfig, build_effective_model, initial_state
from dualchain.sme import (
    DEBUG_CHECK_EVERY,
    IntegrationError,
    NoiseStream,
    PositivityError,
    TrajectoryBatch,
    lindblad_evolve,
    lindblad_series,
    sme_step,
)


def random_density(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@st.composite
def densities(draw, max_n=8):
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_density(n, np.random.default_rng(seed))


@given(densities(), st.floats(-0.05, 0.05), st.floats(0, 8), st.floats(0.1, 1.0))
def test_step_keeps_trace_and_hermiticity(rho, dW, k, eta):
    n = rho.shape[0]
    cfg = ChainConfig(n_sites=n, meas_strength=k, efficiency=eta, dt=1e-3)
    out = sme_step(rho, build_effective_model(cfg), cfg, dW)
    assert abs(np.trace(out.state) - 1) <= 1e-12
    assert np.abs(out.state - out.state.conj().T).max() == 0


@given(densities(), st.floats(0.1, 5))
def test_noiseless_dephasing_step_closed_form(rho, k):
    # H = 0 and dW = 0: each coherence shrinks by 1 - k dt (x_i - x_j)^2
    n = rho.shape[0]
    cfg = ChainConfig(n_sites=n, coupling=0.0, meas_strength=k, dt=1e-3)
    m = build_effective_model(cfg)
    out = sme_step(rho, m, cfg, 0.0).state
    x = m.parity
    expect = rho * (1 - k * cfg.dt * (x[:, None] - x[None, :]) ** 2)
    np.testing.assert_allclose(out, expect, atol=1e-14)


@given(densities(), st.floats(-0.03, 0.03), st.floats(0.1, 5))
def test_innovation_step_on_populations(rho, dW, k):
    n = rho.shape[0]
    cfg = ChainConfig(n_sites=n, coupling=0.0, meas_strength=k, dt=1e-3)
    m = build_effective_model(cfg)
    out = sme_step(rho, m, cfg, dW)
    p = np.diag(rho).real
    x = m.parity
    ex = float(x @ p)
    assert out.expectation == pytest.approx(ex, abs=1e-14)
    expect = p * (1 + math.sqrt(2 * k) * (2 * x - 2 * ex) * dW)
    np.testing.assert_allclose(np.diag(out.state).real, expect, atol=1e-13)
    assert out.record_increment == pytest.approx(ex * cfg.dt + dW / math.sqrt(8 * k), abs=1e-15)


def test_record_undefined_without_measurement():
    cfg = ChainConfig(n_sites=3, meas_strength=0.0)
    m = build_effective_model(cfg)
    assert math.isnan(sme_step(initial_state(m), m, cfg, 0.01).record_increment)


def test_nonfinite_increment_raises():
    cfg = ChainConfig(n_sites=3)
    m = build_effective_model(cfg)
    with pytest.raises(IntegrationError):
        sme_step(initial_state(m), m, cfg, float("nan"), step=5)


def test_unitary_limit_matches_exponential():
    cfg = ChainConfig(n_sites=5, meas_strength=0.0, dt=1e-4)
    m = build_effective_model(cfg)
    rho = initial_state(m)
    for _ in range(5000):
        rho = sme_step(rho, m, cfg, 0.0).state
    U = scipy.linalg.expm(-1j * m.hamiltonian * 0.5)
    exact = U @ initial_state(m) @ U.conj().T
    assert np.abs(rho - exact).max() < 5e-3   # first-order drift error


@pytest.mark.parametrize("n,k,eta", [(4, 1.5, 1.0), (6, 3.0, 0.4), (10, 2.0, 1.0)])
def test_kernel_matches_reference_step(n, k, eta):
    cfg = ChainConfig(n_sites=n, meas_strength=k, efficiency=eta, dt=1e-3, t_max=10)
    m = build_effective_model(cfg)
    rng = np.random.default_rng(n)
    rho0 = random_density(n, rng)
    steps = 400
    dW = rng.normal(size=(3, steps)) * math.sqrt(cfg.dt)
    batch = TrajectoryBatch(m, cfg, 3)
    for lane in range(3):
        batch.start(lane, (0, lane), rho0)
    batch.noise = np.ascontiguousarray(dW)
    batch.ptr[:] = 0
    assert batch.advance(steps) == steps
    for lane in range(3):
        rho = rho0
        for s in range(steps):
            rho = sme_step(rho, m, cfg, dW[lane, s]).state
        np.testing.assert_allclose(batch.state(lane), rho, atol=1e-12)


def test_kernel_lanes_are_independent():
    cfg = ChainConfig(n_sites=6, dt=1e-3, t_max=100)
    m = build_effective_model(cfg)
    one = TrajectoryBatch(m, cfg, 1)
    one.start(0, (3, 3))
    one.run_for(3000)
    wide = TrajectoryBatch(m, cfg, 7)
    for lane in range(7):
        wide.start(lane, (3, lane))
    wide.run_for(3000)
    assert np.array_equal(wide.state(3), one.state(0))


def test_noise_stream_chunking_is_transparent():
    a = NoiseStream((11, 4), 1e-4)
    b = NoiseStream((11, 4), 1e-4)
    singles = np.array([a.draw() for _ in range(1000)])
    parts = np.concatenate([b.chunk(1), b.chunk(250), b.chunk(749)])
    np.testing.assert_array_equal(singles, parts)
    c = NoiseStream((11, 4), 1e-4)
    c.draw()
    np.testing.assert_array_equal(np.r_[singles[0], c.chunk(999)], singles)


def test_noise_stream_statistics_and_keys():
    dt = 1e-3
    x = NoiseStream((1, 2), dt).chunk(200_000)
    assert abs(x.mean()) < 5 * math.sqrt(dt / len(x))
    assert x.var() / dt == pytest.approx(1.0, abs=0.02)
    assert not np.array_equal(NoiseStream((1, 3), dt).chunk(10), x[:10])
    assert not np.array_equal(NoiseStream((2, 2), dt).chunk(10), x[:10])


def test_debug_mode_flags_lost_positivity():
    cfg = ChainConfig(n_sites=3, coupling=0.0, meas_strength=0.0, t_max=10)
    m = build_effective_model(cfg)
    batch = TrajectoryBatch(m, cfg, 1, debug=True)
    batch.start(0, (0, 0), np.diag([1.2, -0.2, 0.0]))
    with pytest.raises(PositivityError):
        batch.run_for(DEBUG_CHECK_EVERY + 10)


def test_lindblad_pure_dephasing_closed_form():
    cfg = ChainConfig(n_sites=4, coupling=0.0, meas_strength=0.8)
    m = build_effective_model(cfg)
    rho0 = np.full((4, 4), 0.25, dtype=complex)
    t = 0.9
    out = lindblad_evolve(rho0, m, cfg, t)
    decay = np.exp(-cfg.meas_strength * (m.parity[:, None] - m.parity[None, :]) ** 2 * t)
    np.testing.assert_allclose(out, rho0 * decay, atol=1e-13)


def test_lindblad_matches_ode_solver():
    cfg = ChainConfig(n_sites=5, meas_strength=1.3)
    m = build_effective_model(cfg)
    H, x, k = m.hamiltonian, m.parity, cfg.meas_strength
    D = (x[:, None] - x[None, :]) ** 2

    def rhs(_, v):
        rho = v.reshape(5, 5)
        return (-1j * (H @ rho - rho @ H) - k * D * rho).reshape(-1)

    rho0 = initial_state(m)
    sol = solve_ivp(rhs, (0, 3.0), rho0.reshape(-1).astype(complex), t_eval=[1.0, 3.0],
                    rtol=1e-11, atol=1e-13, method="DOP853")
    series = lindblad_series(rho0, m, cfg, [1.0, 3.0])
    for i in range(2):
        np.testing.assert_allclose(series[i], sol.y[:, i].reshape(5, 5), atol=1e-9)
    np.testing.assert_allclose(lindblad_evolve(rho0, m, cfg, 3.0), series[1], atol=1e-12)
    with pytest.raises(ValueError):
        lindblad_evolve(rho0, m, cfg, -1.0)


def test_kernel_status_codes_distinct():
    codes = {_kernel.RUNNING, _kernel.FINISHED, _kernel.FAILED, _kernel.NEED_NOISE, _kernel.IDLE}
    assert len(codes) == 5
