"""Track a telegraph-switching qubit frequency from single-shot records.

The emulator produces one shot per (idle time, basis) per repetition. The
probabilities are Gaussian-averaged over neighbouring repetitions, the
noise model is fitted at every repetition, and the fitted detuning trace is
split into RTN levels.

Run with ``python demos/track_telegraph_noise.py``; it takes about a minute.
"""
import numpy as np

from qfluct.averaging import gaussian_average, tracking_metrics
from qfluct.emulator import ExperimentPlan, NoiseSchedule, RtnProcessSpec, emulate_experiment, generate_rtn_states
from qfluct.hdfa import run_hierarchy
from qfluct.noisefit import FitConfig, fit_series

n = 4000

# Detuning jumps between +2 and -28 kHz, switching with probability 1/20 per repetition.
s = generate_rtn_states(RtnProcessSpec(switch_probability=1 / 20, seed=1), n)
true_df = np.where(s > 0, 2e3, -28e3)
records = emulate_experiment(ExperimentPlan(n_repetitions=n), NoiseSchedule(true_df, 8e3, 8e3), seed=1)
print(f"{len(records.outcomes)} repetitions of {records.outcomes.shape[1:]} single shots")

series = gaussian_average(records, 2.0)
print(f"effective shots per estimate: {np.median(series.n_eff):.2f}")

trace = fit_series(series, FitConfig(seed=1, n_bootstrap=50))
print(f"median bootstrap error on delta_f: {np.median(trace.sigma_delta_f):.0f} Hz")

# The last level sees no switching left, so a PlateauWarning from its
# threshold selection is expected.
levels = run_hierarchy(trace.delta_f, trace.sigma_delta_f, trace.times)
for lv in levels:
    if not lv.active:
        print(f"level {lv.level}: no further switching")
        continue
    print(f"level {lv.level}: lambda={lv.lam:.3f} L_min={lv.l_min} "
          f"f_c={np.median(lv.f_c) / 1e3:.2f} kHz f_delta={np.median(lv.f_delta) / 1e3:.2f} kHz "
          f"nu01={lv.rates.nu01.corrected:.1f}/s nu10={lv.rates.nu10.corrected:.1f}/s")

m = tracking_metrics(s, levels[0].states, true_df, trace.delta_f)
print(f"state inaccuracy {m['inaccuracy']:.3f}, median error when correct {m['epsilon_correct']:.0f} Hz")
