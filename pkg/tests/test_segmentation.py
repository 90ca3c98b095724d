import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfluct.emulator import RtnProcessSpec, generate_rtn_states
from qfluct.hdfa.segmentation import (
    PlateauWarning,
    change_point_count,
    elbow_index,
    reconstruct,
    segment_series,
    select_l_min,
    select_lambda_ll,
    sigma_floor,
)
from qfluct.hdfa.summary import block_means, summarize_segment, weighted_std


def rtn(n, amp=20e3, noise=1e3, seed=0, centre=0.0, p=0.05):
    s = generate_rtn_states(RtnProcessSpec(switch_probability=p, seed=seed), n)
    x = centre + 0.5 * amp * s + np.random.default_rng(seed + 7).normal(0, noise, n)
    return s, x


class TestSegmentSeries:
    def test_partition(self):
        _, x = rtn(3000, seed=1)
        segs = segment_series(x, 1e3, -3.5, 4)
        assert segs[0].start == 0 and segs[-1].stop == x.size
        assert all(a.stop == b.start for a, b in zip(segs[:-1], segs[1:]))
        assert all(sg.length >= 4 for sg in segs[:-1])

    def test_l_min_below_two(self):
        with pytest.raises(ValueError):
            segment_series(np.zeros(10), 1.0, -3.0, 1)

    def test_shorter_than_l_min(self):
        segs = segment_series(np.array([0.0, 5e4, -5e4]), 1e3, 0.0, 5)
        assert len(segs) == 1 and segs[0].length == 3

    def test_very_strict_threshold_cuts_at_l_min(self):
        _, x = rtn(100, seed=2)
        segs = segment_series(x, 1e3, 10.0, 5)
        assert all(sg.length == 5 for sg in segs)

    def test_permissive_threshold_single_segment(self):
        _, x = rtn(500, seed=2)
        assert len(segment_series(x, 1e3, -50.0, 2)) == 1

    def test_change_point_count_agrees(self):
        _, x = rtn(2000, seed=3)
        n = change_point_count(x, -3.7, 2, sigma_floor(1e3))
        assert n == len(segment_series(x, 1e3, -3.7, 2)) - 1

    def test_reconstruction_identity(self):
        _, x = rtn(2000, seed=3)
        segs = segment_series(x, 1e3, -3.7, 2)
        ft, fc, fd, _, _, s = reconstruct(segs, x.size)
        assert np.array_equal(ft, fc + s * fd / 2.0)
        assert set(np.unique(s)) <= {-1, 1}

    def test_shift_between_two_stationary_rtns(self):
        # Centre shift of 5 emission sigmas at the midpoint.
        _, a = rtn(2000, seed=2)
        _, b = rtn(2000, seed=3, centre=5e3)
        x = np.r_[a, b]
        lam = select_lambda_ll(x, 1e3).lam
        segs = segment_series(x, 1e3, lam, 2)
        assert len(segs) == 2
        assert abs(segs[1].start - 2000) <= 2

    @pytest.mark.parametrize("seed", range(1, 7))
    def test_stationary_rtn_single_segment(self, seed):
        _, x = rtn(10_000, seed=seed)
        lam = select_lambda_ll(x, 1e3).lam
        assert len(segment_series(x, 1e3, lam, 2)) == 1

    @settings(max_examples=10, deadline=None)
    @given(c=st.floats(-1e6, 1e6), seed=st.integers(0, 100))
    def test_offset_equivariance(self, c, seed):
        _, x = rtn(600, seed=seed)
        a = segment_series(x, 1e3, -3.7, 3)
        b = segment_series(x + c, 1e3, -3.7, 3)
        assert [(g.start, g.stop) for g in a] == [(g.start, g.stop) for g in b]
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.states, gb.states)
            assert gb.summary.f_c == pytest.approx(ga.summary.f_c + c, abs=1e-6 * (1 + abs(c)))
            assert gb.summary.f_delta == pytest.approx(ga.summary.f_delta, abs=1e-6 * (1 + abs(c)))


class TestElbow:
    def test_kink(self):
        n = np.r_[np.zeros(10), np.arange(1, 31) * 50.0]
        assert elbow_index(n) == 9

    def test_flat_curve(self):
        assert elbow_index(np.full(20, 3)) is None

    def test_straight_line_has_no_knee(self):
        assert elbow_index(np.expm1(np.linspace(0, 5, 20))) is None

    def test_grid_spacing_used(self):
        n = np.r_[np.zeros(10), np.arange(1, 31) * 50.0]
        assert elbow_index(n, np.linspace(-6, -2, 40)) == 9

    def test_plateau_warning(self):
        with pytest.warns(PlateauWarning):
            sel = select_lambda_ll(np.zeros(200), 1e3, grid=np.linspace(-10, -5, 5))
        assert sel.plateau and sel.lam == -10

    def test_selection_exposes_curve(self):
        _, x = rtn(2000, seed=5)
        sel = select_lambda_ll(x, 1e3, n_candidates=12)
        assert sel.grid.size == sel.n_change_points.size == 12
        assert np.all(np.diff(sel.grid) > 0)
        assert sel.lam in sel.grid


class TestLmin:
    def test_single_candidate(self):
        _, x = rtn(500, seed=1)
        assert select_l_min(x, 1e3, -3.7, [7]).l_min == 7

    def test_ties_pick_smallest(self):
        x = np.r_[np.zeros(50), np.ones(50)] * 1e4
        sel = select_l_min(x, 10.0, -50.0, [8, 3, 5])
        assert sel.l_min == 3 and sel.candidates.tolist() == [3, 5, 8]

    def test_noisy_rtn_picks_short_lmin(self):
        # Dwell about 20 steps, noise a quarter of the magnitude.
        _, x = rtn(3000, amp=20e3, noise=5e3, seed=4)
        lam = select_lambda_ll(x, 5e3).lam
        assert select_l_min(x, 5e3, lam).l_min <= 20

    def test_empty(self):
        with pytest.raises(ValueError):
            select_l_min(np.zeros(10), 1.0, -3.0, [])


class TestSummary:
    def test_alternating_blocks(self):
        x = np.repeat([10e3, 20e3, 10e3, 20e3], 5)
        s = np.repeat([-1, 1, -1, 1], 5)
        sm = summarize_segment(x, 1e3, s)
        assert sm.f_c == pytest.approx(15e3) and sm.f_delta == pytest.approx(10e3)
        assert sm.n_blocks == 4

    def test_two_blocks_oracle(self):
        x = np.r_[np.full(4, 1.0), np.full(9, 7.0)]
        s = np.r_[-np.ones(4), np.ones(9)]
        sm = summarize_segment(x, 2.0, s)
        se_a, se_b = 2.0 / 2, 2.0 / 3
        assert sm.f_c == pytest.approx(4.0) and sm.f_delta == pytest.approx(6.0)
        # A single pair has zero spread; only the propagated errors remain.
        assert sm.sigma_f_c == pytest.approx(0.5 * (se_a + se_b))
        assert sm.sigma_f_delta == pytest.approx(se_a + se_b)

    def test_single_state(self):
        sm = summarize_segment(np.full(9, 3.0), 3.0, np.ones(9))
        assert sm.single_state and sm.f_delta == 0.0 and sm.sigma_f_delta == pytest.approx(1.0)

    def test_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            summarize_segment([1.0, 2.0], [1.0, 0.0], [-1, 1])

    def test_block_means_weighted(self):
        m, se = block_means([1.0, 3.0, 10.0], [1.0, 1.0, 2.0], [1, 1, -1])
        assert m.tolist() == [2.0, 10.0]
        assert se == pytest.approx([1 / np.sqrt(2), 2.0])

    def test_weighted_std_equal_weights(self):
        x = np.array([1.0, 2.0, 4.0])
        assert weighted_std(x, np.ones(3)) == pytest.approx(x.std())

    @settings(max_examples=50, deadline=None)
    @given(
        vals=st.lists(st.floats(-1e5, 1e5), min_size=2, max_size=12),
        c=st.floats(-1e5, 1e5),
        k=st.floats(0.01, 100.0),
    )
    def test_affine_equivariance(self, vals, c, k):
        x = np.array(vals)
        s = np.where(np.arange(x.size) % 2, 1, -1)
        sig = np.linspace(1.0, 3.0, x.size)
        a = summarize_segment(x, sig, s)
        b = summarize_segment(k * x + c, k * sig, s)
        tol = 1e-7 * (abs(c) + k * 1e5)
        assert b.f_c == pytest.approx(k * a.f_c + c, abs=tol)
        assert b.f_delta == pytest.approx(k * a.f_delta, abs=tol)
        assert b.sigma_f_c == pytest.approx(k * a.sigma_f_c, rel=1e-6, abs=tol)
        assert b.sigma_f_delta == pytest.approx(k * a.sigma_f_delta, rel=1e-6, abs=tol)


def test_sigma_floor():
    assert sigma_floor([1.0, 2.0]) == 10.0
    assert sigma_floor([400.0, 600.0, np.nan]) == 500.0


def test_no_warnings_on_regular_data():
    _, x = rtn(1500, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        select_lambda_ll(x, 1e3, n_candidates=10)
