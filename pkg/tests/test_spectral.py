import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import convolve1d

from qfluct.averaging import gaussian_kernel
from qfluct.spectral import (
    PsdModel,
    fit_psd_model,
    gaussian_transfer,
    shaped_noise,
    welch_psd,
)

DT = 0.0046


def smooth(x, width):
    k = gaussian_kernel(width)
    return convolve1d(x, k / k.sum(), mode="reflect")


class TestWelch:
    def test_white_noise_level(self, rng):
        e = welch_psd(rng.normal(size=2**18), DT, segment_length=2**12)
        assert np.mean(e.power) == pytest.approx(2 * DT, rel=0.02)
        assert np.std(e.power / (2 * DT)) < 0.1
        assert e.parseval_ratio == pytest.approx(1.0, abs=0.05)

    def test_frequencies_positive_ascending(self, rng):
        e = welch_psd(rng.normal(size=4096), 1.0, segment_length=512)
        assert e.frequencies[0] > 0 and np.all(np.diff(e.frequencies) > 0)
        assert np.all(e.power >= 0)
        assert e.n_segments == 15

    def test_sinusoid_peak(self):
        t = np.arange(2**14) * DT
        f0 = 25.0
        e = welch_psd(np.sin(2 * np.pi * f0 * t), DT, segment_length=2**11)
        assert abs(e.frequencies[np.argmax(e.power)] - f0) <= 1.0 / (2**11 * DT)

    def test_too_short(self):
        with pytest.raises(ValueError, match="segment_length"):
            welch_psd(np.zeros(100), 1.0, segment_length=256)

    def test_needs_dt_or_times(self):
        with pytest.raises(ValueError):
            welch_psd(np.zeros(1000))

    def test_gap_split(self, rng):
        t = np.r_[np.arange(3000), 10_000 + np.arange(3000)] * DT
        x = rng.normal(size=t.size)
        e = welch_psd(x, times=t, segment_length=1024)
        assert e.n_segments == 2 * (1 + (3000 - 1024) // 512)
        assert e.dt == pytest.approx(DT)

    def test_frame(self, rng):
        df = welch_psd(rng.normal(size=2048), DT, segment_length=256).to_frame()
        assert list(df.columns) == ["f_hz", "psd"]

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e5))
    def test_parseval(self, seed, scale):
        x = scale * np.random.default_rng(seed).normal(size=2**13)
        assert welch_psd(x, DT, segment_length=2**10).parseval_ratio == pytest.approx(1.0, abs=0.05)


class TestShapedNoise:
    def test_slope(self):
        e = welch_psd(shaped_noise(2**18, 1.0, DT, seed=3), DT, segment_length=2**14)
        f, p = e.frequencies, e.power
        sel = (f > 100 * f[0]) & (f < 10_000 * f[0])
        slope = np.polyfit(np.log10(f[sel]), np.log10(p[sel]), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.1)

    def test_amplitude(self):
        e = welch_psd(shaped_noise(2**18, 0.0, DT, amplitude=3.0, seed=4), DT, segment_length=2**12)
        assert np.median(e.power) == pytest.approx(3.0, rel=0.05)


class TestTransfer:
    def test_identity(self):
        assert np.all(gaussian_transfer([0.1, 10.0, 100.0], DT, 0.0) == 1.0)

    def test_dc_unity_and_decay(self):
        f = np.linspace(0, 0.5 / DT, 200)
        h = gaussian_transfer(f, DT, 2.0)
        assert h[0] == pytest.approx(1.0) and np.all(h <= 1 + 1e-12)
        assert h[-1] < 1e-6

    def test_matches_filtered_white_noise(self, rng):
        x = rng.normal(size=2**18)
        e = welch_psd(smooth(x, 2.0), DT, segment_length=2**12)
        expect = 2 * DT * gaussian_transfer(e.frequencies, DT, 2.0)
        sel = e.frequencies < 0.1 / DT
        assert np.median(e.power[sel] / expect[sel]) == pytest.approx(1.0, rel=0.05)


class TestFit:
    def test_recovers_model(self):
        n = 2**18
        y = shaped_noise(n, 1.0, DT, amplitude=1e4, seed=1) + np.random.default_rng(2).normal(0, 300, n)
        e = welch_psd(smooth(y, 2.0), DT, segment_length=2**14)
        m = fit_psd_model(e, 2.0)
        assert m.converged
        assert m.alpha == pytest.approx(1.0, abs=0.1)
        assert m.A == pytest.approx(1e4, rel=0.3)
        assert m.C == pytest.approx(2 * DT * 300**2, rel=0.2)

    def test_evaluate(self):
        m = PsdModel(2.0, 1.0, 0.5, 0.0)
        assert m.evaluate([1.0, 4.0], DT) == pytest.approx([2.5, 1.0])

    def test_needs_two_decades(self, rng):
        e = welch_psd(rng.normal(size=4096), DT, segment_length=64)
        with pytest.raises(ValueError, match="decades"):
            fit_psd_model(e, 0.0)

    def test_alpha_bounds(self, rng):
        e = welch_psd(shaped_noise(2**16, 2.9, DT, seed=5), DT, segment_length=2**12)
        m = fit_psd_model(e, 0.0)
        assert 0.0 <= m.alpha <= 3.0 and m.A >= 0 and m.C >= 0
