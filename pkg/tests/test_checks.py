import numpy as np
import pytest

from dualchain.checks import (
    CheckResult,
    check_block_closure,
    check_field_invariance,
    check_qubit_independence,
    check_restriction,
    euler_bias,
    qubit_independence,
    unraveling_distance,
)
from dualchain.model import ChainConfig, build_effective_model, initial_state


def test_check_result_line():
    assert CheckResult("x", True, "d").line().startswith("PASS")
    assert CheckResult("x", False, "d").line().startswith("FAIL")


def test_cheap_oracle_checks_pass():
    for check in (check_restriction, check_block_closure, check_field_invariance,
                  check_qubit_independence):
        r = check()
        assert r.passed, r.line()


def test_restriction_check_catches_corruption():
    assert not check_restriction(corrupt_offdiag=1e-9).passed


def test_encoded_traces_agree_and_move():
    traces, eff = qubit_independence(n=3, steps=1500)
    assert traces[0].max() > 0.05
    for t in traces:
        assert np.abs(t - eff).max() <= 1e-6


def test_euler_bias_is_first_order():
    cfg = ChainConfig(n_sites=6, meas_strength=2.0)
    m = build_effective_model(cfg)
    rho0 = initial_state(m)
    a = euler_bias(rho0, m, cfg, 1.0, 1e-3)
    b = euler_bias(rho0, m, cfg, 1.0, 5e-4)
    assert a / b == pytest.approx(2.0, rel=0.02)


def test_ensemble_mean_follows_the_euler_map_at_default_step():
    # at dt = 1e-4 the trajectory mean sits on (I + L dt)^n within sampling error,
    # even where it is resolvably off exp(L t)
    rows = unraveling_distance(m=200, times=(1.0,), dts=1e-4, reference="euler", master=9)
    (t, dt, dist, band, bias), = rows
    assert dist <= band < bias
