import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfluct.constants import BOLTZMANN_K, PLANCK_H
from qfluct.physics import (
    ConvergenceError,
    TransmonRegimeWarning,
    TransmonSpec,
    calibrate_ec_ej,
    charge_dispersion_analytic,
    charge_dispersion_numerical,
    charge_jump_statistics,
    diagonalize_transmon,
    extract_charge_offset,
    forward_tls_model,
    invert_tls_model,
    tls_energy_from_rates,
    tls_parameter_ranges,
    transition_frequencies,
)

GHZ = 1e9
Q0 = (5.030 * GHZ, -0.336 * GHZ)
Q2 = (5.247 * GHZ, -0.334 * GHZ)
Q4 = (5.092 * GHZ, -0.334 * GHZ)


@pytest.fixture(scope="module")
def q0():
    return TransmonSpec.calibrated(*Q0)


class TestDiagonalize:
    def test_no_josephson_term(self):
        e, _ = diagonalize_transmon(1.0, 1e-300, 0.3, cutoff=20, n_levels=4, check=False)
        n = np.arange(-20, 21)
        assert e == pytest.approx(np.sort(4.0 * (n - 0.3) ** 2)[:4], abs=1e-12)

    def test_transmon_limit(self):
        ec = 0.3 * GHZ
        ej = 50 * ec
        f01, _ = transition_frequencies(ec, ej)
        assert f01 == pytest.approx(np.sqrt(8 * ej * ec) - ec, rel=0.02)

    def test_matrix_element_harmonic(self):
        _, n01 = diagonalize_transmon(1.0, 43.0)
        assert n01 == pytest.approx((43.0 / 8) ** 0.25 / np.sqrt(2), rel=0.03)

    def test_small_cutoff(self):
        with pytest.raises(ValueError):
            diagonalize_transmon(1.0, 40.0, cutoff=10)

    def test_convergence_check(self):
        # Far outside the transmon regime a 15-state basis is not converged.
        with pytest.raises(ConvergenceError):
            diagonalize_transmon(1e6, 1e12, cutoff=15)

    def test_periodic_in_offset(self):
        a, _ = diagonalize_transmon(0.3 * GHZ, 10 * GHZ, 0.2)
        b, _ = diagonalize_transmon(0.3 * GHZ, 10 * GHZ, 1.2)
        assert a == pytest.approx(b, abs=1e-3)


class TestCalibration:
    @pytest.mark.parametrize("q", [Q0, Q2, Q4])
    def test_round_trip(self, q):
        ec, ej, _ = calibrate_ec_ej(*q)
        f01, alpha = transition_frequencies(ec, ej)
        assert abs(f01 - q[0]) <= 1.0 and abs(alpha - q[1]) <= 1.0

    def test_charging_energy(self, q0):
        assert q0.E_C == pytest.approx(0.288 * GHZ, rel=0.01)

    def test_rejects_positive_anharmonicity(self):
        with pytest.raises(ValueError):
            calibrate_ec_ej(5 * GHZ, 0.3 * GHZ)

    def test_regime_warning(self):
        with pytest.warns(TransmonRegimeWarning):
            TransmonSpec(E_C=1.0, E_J=5.0)

    def test_from_energies(self):
        spec = TransmonSpec.from_energies(0.3 * GHZ, 15 * GHZ)
        f01, alpha = transition_frequencies(0.3 * GHZ, 15 * GHZ)
        assert spec.f0 == pytest.approx(f01) and spec.alpha == pytest.approx(alpha)
        assert spec.to_dict()["xi"] == pytest.approx(50.0)


class TestDispersion:
    def test_monotone_in_xi(self):
        assert charge_dispersion_analytic(1.0, 80.0) < charge_dispersion_analytic(1.0, 40.0)

    def test_numerical_without_josephson(self):
        # Bare parabolas: f01(0) = 4 E_C, f01(1/2) = 8 E_C.
        ec = 1e6
        assert charge_dispersion_numerical(ec, 1e-6) == pytest.approx(4 * ec, rel=1e-6)

    @pytest.mark.parametrize("q", [Q0, Q2, Q4])
    def test_numerical_close_to_analytic(self, q):
        ec, ej, xi = calibrate_ec_ej(*q)
        num = charge_dispersion_numerical(ec, ej)
        assert num == pytest.approx(charge_dispersion_analytic(ec, xi), rel=0.25)

    def test_asymptotic_agreement(self):
        ec = 0.3 * GHZ
        ratios = [charge_dispersion_numerical(ec, xi * ec) / charge_dispersion_analytic(ec, xi)
                  for xi in (30.0, 60.0, 90.0)]
        assert abs(1 - ratios[2]) < abs(1 - ratios[0])


class TestChargeOffset:
    def test_special_values(self):
        ng, clipped = extract_charge_offset([40e3, 0.0, 40e3 / np.sqrt(2), 50e3, -1.0], 40e3)
        assert ng[:3] == pytest.approx([0.0, 0.25, 0.125])
        assert clipped.tolist() == [False, False, False, True, True]

    def test_invalid_max(self):
        with pytest.raises(ValueError):
            extract_charge_offset([1.0], 0.0)

    def test_jump_statistics_zero(self):
        st_ = charge_jump_statistics(np.full(100, 0.1), np.arange(1, 100, 7))
        assert st_.estimate == 0.0 and not st_.low_statistics

    def test_jump_statistics_injected(self, rng):
        n = 4000
        level = np.where((np.arange(n) // 100) % 2, 0.01, 0.0)
        ng = 0.1 + level + rng.normal(0, 0.002, n)
        idx = np.arange(100, n, 100)
        st_ = charge_jump_statistics(ng, idx)
        assert abs(st_.estimate - 0.01) <= st_.uncertainty

    def test_low_statistics(self):
        assert charge_jump_statistics(np.arange(10.0), [3, 5]).low_statistics


class TestTls:
    def test_equal_rates(self):
        assert tls_energy_from_rates(1.0, 1.0, 0.05) == 0.0

    @pytest.mark.parametrize("temp, expect", [(0.1, 3.8e9), (0.01, 0.38e9)])
    def test_detailed_balance(self, temp, expect):
        f = tls_energy_from_rates(0.028, 0.0044, temp)
        assert f == pytest.approx(BOLTZMANN_K * temp * np.log(0.028 / 0.0044) / PLANCK_H)
        assert f == pytest.approx(expect, rel=0.03)

    def test_swapped_rates_warn(self):
        with pytest.warns(UserWarning, match="swapping"):
            f = tls_energy_from_rates(0.0044, 0.028, 0.1)
        assert f > 0

    @settings(max_examples=100, deadline=None)
    @given(
        eps=st.floats(0.05e9, 5e9),
        delta=st.floats(0.05e9, 5e9),
        d=st.floats(0.01, 1.0),
        x=st.floats(1e-9, 3e-9),
    )
    def test_forward_inverse(self, eps, delta, d, x):
        f0, alpha, ec, n01 = 5.03e9, -0.336e9, 0.288e9, 1.65
        dng, fd = forward_tls_model(eps, delta, d, x, f0, alpha, ec, n01)
        if abs(f0 + alpha - np.hypot(eps, delta)) < 1e6 or fd == 0:
            return
        p = invert_tls_model(dng, fd, np.hypot(eps, delta), x, f0, alpha, ec, n01)
        assert p.epsilon == pytest.approx(eps, rel=1e-6)
        assert p.Delta == pytest.approx(delta, rel=1e-6)
        assert p.d_parallel == pytest.approx(d, rel=1e-6)
        assert p.f_tls**2 == pytest.approx(p.epsilon**2 + p.Delta**2, rel=1e-9)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            invert_tls_model(0.0, 1e4, 1e9, 1e-9, 5e9, -0.3e9, 0.3e9, 1.6)
        with pytest.raises(ValueError, match="resonant"):
            invert_tls_model(1e-3, 1e4, 4.7e9, 1e-9, 5e9, -0.3e9, 0.3e9, 1.6)

    def test_ranges_cover_grid(self, q0):
        r = tls_parameter_ranges(0.0014, 10.7e3, 0.028, 0.0044, q0, n_grid=5)
        for lo, hi in r.values():
            assert 0 <= lo < hi
        assert r["f_tls"][1] / r["f_tls"][0] == pytest.approx(10.0, rel=1e-9)


def test_no_warnings_for_device_qubits():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for q in (Q0, Q2, Q4):
            TransmonSpec.calibrated(*q)
