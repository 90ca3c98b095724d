import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qfluct.emulator import (
    ExperimentPlan,
    NoiseParams,
    NoiseSchedule,
    RtnProcessSpec,
    ScheduleGapError,
    TimestampFallbackWarning,
    closed_form_probability,
    emulate_experiment,
    generate_rtn_states,
    reconstruct_timestamps,
    rtn_hierarchy_detuning,
    rtn_switch_times,
)


class TestClosedForm:
    def test_y_at_zero_idle_time(self):
        assert closed_form_probability(12345.0, 0.0, 0.0, 0.0, "Y") == pytest.approx(0.0, abs=1e-15)

    def test_z_half_life(self):
        assert closed_form_probability(0.0, math.log(2.0), 0.0, 1.0, "Z") == pytest.approx(0.75)

    def test_x_quarter_period(self):
        assert closed_form_probability(1e4, 0.0, 0.0, 25e-6, "X") == pytest.approx(0.0, abs=1e-12)

    def test_unknown_basis(self):
        with pytest.raises(ValueError):
            closed_form_probability(0, 0, 0, 1e-6, "W")

    @given(
        df=st.floats(-2e5, 2e5),
        g1=st.floats(0, 1e6),
        gp=st.floats(0, 1e6),
        tau=st.floats(0, 1e-3),
        basis=st.sampled_from(["X", "Y", "Z"]),
    )
    def test_bounded(self, df, g1, gp, tau, basis):
        p = closed_form_probability(df, g1, gp, tau, basis)
        assert -1e-15 <= p <= 1 + 1e-15

    @given(g1=st.floats(1.0, 1e6), t1=st.floats(0, 1e-3), t2=st.floats(0, 1e-3))
    def test_z_monotone(self, g1, t1, t2):
        lo, hi = sorted((t1, t2))
        assert closed_form_probability(0, g1, 0, lo, "Z") <= closed_form_probability(0, g1, 0, hi, "Z")


class TestRtn:
    def test_q0_constant(self):
        s = generate_rtn_states(RtnProcessSpec(switch_probability=0.0, seed=3), 500)
        assert np.all(s == s[0])

    def test_q1_alternating(self):
        s = generate_rtn_states(RtnProcessSpec(switch_probability=1.0, seed=3), 500)
        assert np.all(s[1:] == -s[:-1])

    def test_flip_fraction_binomial(self):
        n = 10**6
        s = generate_rtn_states(RtnProcessSpec(switch_probability=1 / 20, seed=11), n)
        flips = np.count_nonzero(s[1:] != s[:-1])
        q = 1 / 20
        sd = math.sqrt((n - 1) * q * (1 - q))
        assert abs(flips - (n - 1) * q) < 3 * sd

    def test_dwell_times_exponential_ks(self):
        spec = RtnProcessSpec(mode="rate", rate_01=3.0, rate_10=7.0, seed=1)
        s0, sw = rtn_switch_times(spec, 6000.0)
        dwells = np.diff(sw)
        # Dwells alternate state; the first full dwell is in state -s0.
        in_minus = dwells[0::2] if s0 == 1 else dwells[1::2]
        in_plus = dwells[1::2] if s0 == 1 else dwells[0::2]
        assert in_minus.size >= 10**4 and in_plus.size >= 10**4
        assert stats.kstest(in_minus, "expon", args=(0, 1 / 3.0)).pvalue > 0.01
        assert stats.kstest(in_plus, "expon", args=(0, 1 / 7.0)).pvalue > 0.01

    def test_rate_mode_sampling_matches_occupation(self):
        spec = RtnProcessSpec(mode="rate", rate_01=1.0, rate_10=3.0, seed=2)
        t = np.arange(200_000) * 0.01
        s = generate_rtn_states(spec, t.size, t)
        assert np.mean(s == 1) == pytest.approx(0.25, abs=0.03)

    def test_deterministic(self):
        spec = RtnProcessSpec(mode="rate", rate_01=2.0, rate_10=2.0, seed=9)
        t = np.linspace(0, 50, 1000)
        assert np.array_equal(generate_rtn_states(spec, 1000, t), generate_rtn_states(spec, 1000, t))

    @pytest.mark.parametrize("kw", [{"switch_probability": 1.5}, {"rate_01": -1.0}, {"mode": "x"}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            RtnProcessSpec(**kw)

    def test_composite_detuning(self):
        a = RtnProcessSpec(switch_probability=0.3, amplitude=20e3, seed=1)
        b = RtnProcessSpec(switch_probability=0.1, amplitude=14e3, seed=2)
        det, (sa, sb) = rtn_hierarchy_detuning([a, b], 1000, centre=-5e3)
        assert np.allclose(det, -5e3 + sa * 10e3 + sb * 7e3)

    def test_piecewise_amplitude(self):
        spec = RtnProcessSpec(amplitude=[(0, 10.0), (5, 20.0)])
        assert spec.amplitude_at(8).tolist() == [10.0] * 5 + [20.0] * 3


class TestTimestamps:
    def test_single_script(self):
        plan = ExperimentPlan(n_repetitions=4, script_start_times=[100.0], script_durations=[8.0])
        t, fb = reconstruct_timestamps(plan)
        assert not fb
        assert t.tolist() == [0.0, 2.0, 4.0, 6.0]

    def test_two_scripts_gap(self):
        plan = ExperimentPlan(
            n_repetitions=4, n_scripts=2, script_start_times=[10.0, 25.0], script_durations=[4.0, 4.0]
        )
        t, _ = reconstruct_timestamps(plan)
        assert t[4] == pytest.approx(15.0)

    def test_full_scale_count(self):
        starts = np.arange(100) * 200.0
        plan = ExperimentPlan(
            n_repetitions=20_000, n_scripts=100, script_start_times=starts, script_durations=np.full(100, 92.0)
        )
        t, _ = reconstruct_timestamps(plan)
        assert t.size == 2_000_000
        assert np.all(np.diff(t.reshape(100, -1), axis=1) > 0)

    def test_fallback_warns(self):
        plan = ExperimentPlan(n_repetitions=3)
        with pytest.warns(TimestampFallbackWarning):
            t, fb = reconstruct_timestamps(plan)
        assert fb
        assert np.allclose(np.diff(t), plan.sequence_duration)


class TestPlan:
    def test_sequence_layout(self, idle_times):
        plan = ExperimentPlan(idle_times=idle_times)
        assert plan.n_circuits == 99
        assert plan.sequence_duration == pytest.approx(3 * (idle_times.sum() + 33 * 12.3e-6))

    @pytest.mark.parametrize("tau", [[1e-6, 1e-6], [-1e-6, 2e-6], []])
    def test_invalid_idle_times(self, tau):
        with pytest.raises(ValueError):
            ExperimentPlan(idle_times=tau)

    def test_round_trip(self):
        plan = ExperimentPlan(idle_times=[0, 1e-6, 2e-6], n_repetitions=7, n_scripts=2,
                              script_start_times=[0, 5], script_durations=[1, 1])
        back = ExperimentPlan.from_dict(plan.to_dict())
        assert back.to_dict() == plan.to_dict()


class TestEmulate:
    def test_z_mean_half_without_decay(self, idle_times):
        plan = ExperimentPlan(idle_times=idle_times, n_repetitions=4000)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 0, 0), 4000), seed=1)
        z = rt.outcomes[:, :, 2]
        n = z.size
        assert abs(z.mean() - 0.5) < 5 * math.sqrt(0.25 / n)

    def test_means_converge_to_model(self, idle_times):
        n = 20_000
        plan = ExperimentPlan(idle_times=idle_times, n_repetitions=n)
        prm = NoiseParams(15e3, 8e3, 8e3)
        rt = emulate_experiment(plan, NoiseSchedule.constant(prm, n), seed=2)
        for k, b in enumerate("XYZ"):
            p = closed_form_probability(prm.delta_f, prm.gamma_1, prm.gamma_phi, idle_times, b)
            assert np.all(np.abs(rt.outcomes[:, :, k].mean(axis=0) - p) < 5 / math.sqrt(n))

    def test_identical_seeds_identical_streams(self, idle_times):
        plan = ExperimentPlan(idle_times=idle_times, n_repetitions=50, n_scripts=3)
        sch = NoiseSchedule.constant(NoiseParams(1e4, 1e4, 1e4), 150)
        a = emulate_experiment(plan, sch, seed=7).outcomes
        b = emulate_experiment(plan, sch, seed=7).outcomes
        c = emulate_experiment(plan, sch, seed=8).outcomes
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_schedule_gap(self, idle_times):
        plan = ExperimentPlan(idle_times=idle_times, n_repetitions=10, n_scripts=2)
        with pytest.raises(ScheduleGapError, match="10..19"):
            emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 0, 0), 10))

    def test_record_order(self):
        plan = ExperimentPlan(idle_times=[0, 1e-6], n_repetitions=2)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 0, 0), 2))
        recs = list(rt.iter_records())
        assert [(r.tau_index, r.basis) for r in recs[:6]] == [
            (0, "X"), (0, "Y"), (0, "Z"), (1, "X"), (1, "Y"), (1, "Z")
        ]
        assert all(0 <= r.outcome <= 1 for r in recs)
        assert np.all(np.diff([r.t_s for r in recs]) >= 0)
        df = rt.to_frame()
        assert list(df.columns) == ["script", "repetition", "tau_index", "tau_s", "basis", "outcome", "t_s"]
