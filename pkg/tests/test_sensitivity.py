import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sicmag.sensitivity import (SensitivityInputs, eta_cw, eta_hahn_ac, eta_pulsed, eta_ramsey, golden_section,
                                h_over_gmu, hbar_over_gmu, optimal_tau, report, simulate_pulsed_eta)

H_GMU = 3.567e-11  # T s, hand-arithmetic value of h/(g mu_B)
HBAR_GMU = H_GMU / (2 * np.pi)
pos = st.floats(1e-3, 1e3)


def test_field_per_frequency():
    assert h_over_gmu() == pytest.approx(H_GMU, rel=1e-3)
    assert hbar_over_gmu() == pytest.approx(h_over_gmu() / (2 * np.pi), rel=1e-12)


def test_cw_oracle():
    hand = 4 / (3 * np.sqrt(3)) * H_GMU * 10e6 / (0.006 * np.sqrt(1e12))
    assert hand == pytest.approx(45.77e-9, rel=1e-3)
    assert eta_cw(10e6, 0.006, 1e12) == pytest.approx(hand, rel=1e-3)


def test_pulsed_oracle():
    hand = 8 / (3 * np.sqrt(3)) * HBAR_GMU / (0.006 * np.sqrt(1.08e6)) * np.sqrt(24.23e-6) / 230e-9
    assert hand == pytest.approx(30.0e-9, rel=2e-3)
    assert eta_pulsed(0.006, 1.08e6, 230e-9, 12e-6, 12e-6) == pytest.approx(hand, rel=1e-3)


def test_ramsey_oracle():
    hand = HBAR_GMU / (0.006 * np.exp(-1) * np.sqrt(1.21e6)) * np.sqrt(24.23e-6) / 230e-9
    assert hand == pytest.approx(50.05e-9, rel=2e-3)
    assert eta_ramsey(0.006, 1.21e6, 230e-9, 230e-9) == pytest.approx(hand, rel=1e-3)


def test_hahn_oracle():
    eta, f = eta_hahn_ac(0.006, 2.3e5, 2.8e-6)
    hand = HBAR_GMU / (0.006 * np.exp(-1) * np.sqrt(2.3e5)) * np.sqrt(26.8e-6) / 2.8e-6
    assert hand == pytest.approx(9.9165e-9, rel=2e-3)
    assert eta == pytest.approx(hand, rel=1e-3)
    assert f == pytest.approx(357.14e3, rel=1e-4)
    assert eta_hahn_ac(0.006, 2.3e5, 2.8e-6, half_period=True)[1] == pytest.approx(f / 2)


def test_simple_scalings():
    assert eta_cw(1e7, 0.01, 4e12) == pytest.approx(eta_cw(1e7, 0.01, 1e12) / 2)
    assert eta_pulsed(0.01, 2e6, 2e-7, 1e-5, 1e-5) == pytest.approx(eta_pulsed(0.01, 1e6, 2e-7, 1e-5, 1e-5) / np.sqrt(2))
    assert eta_ramsey(0.01, 1e6, 1e-7, 2e-7, delta_ms=2) == pytest.approx(eta_ramsey(0.01, 1e6, 1e-7, 2e-7) / 2)


@given(pos, pos, pos, st.floats(1e-2, 1e2))
def test_cw_contrast_rate_invariance(dnu, c, r, k):
    assert eta_cw(dnu, k * c, r / k ** 2) == pytest.approx(eta_cw(dnu, c, r), rel=1e-12)


@given(st.floats(0.5, 4.0))
def test_inverse_in_g(k):
    g = 2.0028
    args_p = (0.006, 1e6, 230e-9, 12e-6, 12e-6)
    assert eta_cw(1e7, 0.006, 1e12, g_e=k * g) == pytest.approx(eta_cw(1e7, 0.006, 1e12, g_e=g) / k, rel=1e-12)
    assert eta_pulsed(*args_p, g_e=k * g) == pytest.approx(eta_pulsed(*args_p, g_e=g) / k, rel=1e-12)
    assert eta_ramsey(0.006, 1e6, 2e-7, 2e-7, g_e=k * g) == pytest.approx(
        eta_ramsey(0.006, 1e6, 2e-7, 2e-7, g_e=g) / k, rel=1e-12)
    assert eta_hahn_ac(0.006, 1e6, 3e-6, g_e=k * g)[0] == pytest.approx(
        eta_hahn_ac(0.006, 1e6, 3e-6, g_e=g)[0] / k, rel=1e-12)


def test_ramsey_small_tau_diverges():
    a = eta_ramsey(0.006, 1e6, 1e-12, 230e-9)
    b = eta_ramsey(0.006, 1e6, 2e-12, 230e-9)
    assert a / b == pytest.approx(2.0, rel=1e-4)


@given(st.floats(230e-9 * 1.0001, 50e-6))
def test_hahn_better_than_ramsey(t2):
    assert eta_hahn_ac(0.006, 1e6, t2)[0] < eta_ramsey(0.006, 1e6, 230e-9, 230e-9)


def test_optimal_tau_dead_time_regime():
    tau, eta = optimal_tau(SensitivityInputs())  # t_I + t_R = 24 us
    assert tau == pytest.approx(230e-9, rel=0.01)


def test_optimal_tau_zero_dead_time():
    # dead time set far below T2*, the zero limit of the expression
    tau, _ = optimal_tau(SensitivityInputs(t_i=1e-18, t_r=1e-18))
    assert tau == pytest.approx(115e-9, rel=0.01)


def test_optimal_tau_is_minimum():
    inp = SensitivityInputs(n=1.21e6)
    tau, eta = optimal_tau(inp)
    rng = np.random.default_rng(0)
    for t in rng.uniform(inp.t2_star / 100, 10 * inp.t2_star, 100):
        assert eta <= eta_ramsey(inp.c, inp.n, t, inp.t2_star) * (1 + 1e-12)


def test_golden_section():
    assert golden_section(lambda x: (x - 3.0) ** 2, 1.0, 10.0, 1e-8) == pytest.approx(3.0, rel=1e-6)
    assert golden_section(np.cosh, -1.0, 2.0, 1e-6) == pytest.approx(0.0, abs=1e-5)


def test_report_and_overrides():
    rep = report(SensitivityInputs(n_ramsey=1.21e6, n_hahn=2.3e5))
    assert rep["eta_cw_t_per_rthz"] == pytest.approx(eta_cw(10e6, 0.006, 1e12))
    assert rep["eta_ramsey_t_per_rthz"] == pytest.approx(optimal_tau(SensitivityInputs(n_ramsey=1.21e6))[1])
    assert rep["eta_hahn_t_per_rthz"] == pytest.approx(eta_hahn_ac(0.006, 2.3e5, 2.8e-6)[0])
    fixed = report(SensitivityInputs(tau=100e-9))
    assert fixed["tau_ramsey_s"] == 100e-9
    assert fixed["eta_ramsey_t_per_rthz"] == pytest.approx(eta_ramsey(0.006, 1.08e6, 100e-9, 230e-9))


@pytest.mark.parametrize("call", [
    lambda: eta_cw(0.0, 0.006, 1e12),
    lambda: eta_cw(1e7, -0.006, 1e12),
    lambda: eta_pulsed(0.006, 1e6, 0.5e-9, 12e-6, 12e-6),
    lambda: eta_pulsed(0.006, 1e6, 230e-9, 0.0, 12e-6),
    lambda: eta_ramsey(0.006, 1e6, 1e-7, 2e-7, p=0.5),
    lambda: eta_ramsey(0.006, 1e6, 1e-7, 2e-7, delta_ms=3),
    lambda: eta_ramsey(0.006, 1e6, 0.0, 2e-7),
    lambda: eta_hahn_ac(0.006, np.nan, 2.8e-6),
    lambda: SensitivityInputs(p=0.9),
    lambda: SensitivityInputs(delta_ms=0),
    lambda: SensitivityInputs(n_hahn=-1.0),
    lambda: SensitivityInputs(tau=0.0),
])
def test_errors(call):
    with pytest.raises(ValueError):
        call()


def test_t2_star_guard_message():
    with pytest.raises(ValueError, match="diverges"):
        eta_pulsed(0.006, 1e6, 0.5e-9, 12e-6, 12e-6)


def test_monte_carlo_pulsed_within_factor_two():
    sim = simulate_pulsed_eta(0.006, 1.08e6, 230e-9, 12e-6, 12e-6, seed=1)
    ref = eta_pulsed(0.006, 1.08e6, 230e-9, 12e-6, 12e-6)
    assert 0.5 < sim / ref < 2.0
    assert simulate_pulsed_eta(0.006, 1.08e6, 230e-9, 12e-6, 12e-6, seed=1) == sim
