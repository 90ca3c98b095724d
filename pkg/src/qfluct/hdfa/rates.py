"""Raw and censoring-corrected RTN switching rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw
from scipy.stats import chi2

GAP_FACTOR = 100.0


def correct_rate(raw, tau_min):
    """Invert ``raw = nu * exp(-tau_min * nu)`` on the branch ``nu * tau_min < 1``.

    Parameters
    ----------
    raw : float or ndarray
        Observed rate(s) in s^-1.
    tau_min : float
        Shortest detectable dwell in seconds.

    Returns
    -------
    nu : float or ndarray
        NaN where ``raw * tau_min * e > 1`` (no real solution).
    """
    raw = np.asarray(raw, dtype=float)
    if tau_min < 0:
        raise ValueError("tau_min must be >= 0")
    if tau_min == 0:
        out = raw.copy()
    else:
        z = -raw * tau_min
        # Rounding may put the branch point itself just outside the domain.
        ok = np.isfinite(z) & (z >= -np.exp(-1.0) * (1 + 1e-12))
        out = np.full(raw.shape, np.nan)
        w = np.real(lambertw(z[ok], 0))
        w[z[ok] <= -np.exp(-1.0)] = -1.0
        out[ok] = -w / tau_min
    return out[()] if out.ndim == 0 else out


def censor_rate(nu, tau_min):
    """Forward map ``nu * exp(-tau_min * nu)``."""
    nu = np.asarray(nu, dtype=float)
    return nu * np.exp(-tau_min * nu)


def garwood_interval(count, exposure, level: float = 0.95):
    """Exact Poisson confidence interval for a rate ``count / exposure``."""
    count = np.asarray(count, dtype=float)
    a = 1.0 - level
    lo = np.where(count > 0, chi2.ppf(a / 2, 2 * count) / 2, 0.0)
    hi = chi2.ppf(1 - a / 2, 2 * count + 2) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return lo / exposure, hi / exposure


@dataclass
class RateEstimate:
    """Switching rate for one direction, s=-1 to s=+1 is ``01``."""

    n_transitions: int
    dwell_time: float
    raw: float
    raw_ci: tuple
    corrected: float
    corrected_ci: tuple
    uncorrectable: bool


@dataclass
class SwitchingRates:
    nu01: RateEstimate
    nu10: RateEstimate
    tau_min: float
    running_times: np.ndarray | None = None
    running_raw01: np.ndarray | None = None
    running_raw10: np.ndarray | None = None
    running_nu01: np.ndarray | None = None
    running_nu10: np.ndarray | None = None
    running_ci01: tuple | None = None
    running_ci10: tuple | None = None

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "t_s": self.running_times,
                "raw_nu01": self.running_raw01,
                "raw_nu10": self.running_raw10,
                "nu01": self.running_nu01,
                "nu10": self.running_nu10,
                "nu01_lo": self.running_ci01[0],
                "nu01_hi": self.running_ci01[1],
                "nu10_lo": self.running_ci10[0],
                "nu10_hi": self.running_ci10[1],
            }
        )


def _valid_steps(times, mask=None, breaks=None):
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise ValueError("timestamps must be strictly increasing")
    med = np.median(dt) if dt.size else 0.0
    ok = dt <= GAP_FACTOR * med
    if breaks is not None:
        b = np.asarray(breaks, dtype=int)
        b = b[(b > 0) & (b < times.size)]
        ok[b - 1] = False
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        ok &= m[:-1] & m[1:]
    return dt, ok


def _direction(count, dwell, tau_min, level):
    raw = count / dwell if dwell > 0 else np.nan
    lo, hi = garwood_interval(count, dwell, level) if dwell > 0 else (np.nan, np.nan)
    nu = float(correct_rate(raw, tau_min)) if np.isfinite(raw) else np.nan
    bad = bool(np.isfinite(raw) and not np.isfinite(nu))
    if bad:
        nu = raw
    clo = float(correct_rate(lo, tau_min)) if np.isfinite(lo) else np.nan
    chi = float(correct_rate(hi, tau_min)) if np.isfinite(hi) else np.nan
    return RateEstimate(int(count), float(dwell), float(raw), (float(lo), float(hi)),
                        float(nu), (clo, chi), bad)


def switching_rates(states, times, tau_min: float, window: float | None = None,
                    mask=None, level: float = 0.95, breaks=None) -> SwitchingRates:
    """Transition rates between s=-1 and s=+1.

    The raw rate ``i -> j`` is the number of ``i -> j`` steps divided by the
    time spent in ``i``. Steps longer than 100 times the median step are
    gaps: they contribute neither transitions nor dwell time.

    Parameters
    ----------
    states : array_like of {-1, +1}
    times : array_like
        Strictly increasing timestamps in seconds.
    tau_min : float
        Dwell duration below which switches go unseen.
    window : float, optional
        Length in seconds of a centred running window for time-resolved
        rates.
    mask : array_like of bool, optional
        False marks points excluded from all estimates, e.g. where the level
        has no significant magnitude. Steps touching such a point count
        neither as transitions nor as dwell time.
    level : float
        Confidence level of the Poisson intervals.
    breaks : array_like of int, optional
        Indices that start a new segment. The step into such an index joins
        independently labelled state paths and is not counted.
    """
    s = np.asarray(states)
    t = np.asarray(times, dtype=float)
    if s.shape != t.shape:
        raise ValueError("states and times must be aligned")
    dt, ok = _valid_steps(t, mask, breaks)
    a, b = s[:-1], s[1:]
    up = ((a == -1) & (b == 1) & ok).astype(float)
    dn = ((a == 1) & (b == -1) & ok).astype(float)
    dw_m = np.where((a == -1) & ok, dt, 0.0)
    dw_p = np.where((a == 1) & ok, dt, 0.0)
    nu01 = _direction(up.sum(), dw_m.sum(), tau_min, level)
    nu10 = _direction(dn.sum(), dw_p.sum(), tau_min, level)
    out = SwitchingRates(nu01, nu10, float(tau_min))
    if window is not None and t.size > 1:
        c = lambda v: np.r_[0.0, np.cumsum(v)]  # noqa: E731
        cu, cd, cm, cp = c(up), c(dn), c(dw_m), c(dw_p)
        ts = t[:-1]
        lo = np.searchsorted(ts, ts - window / 2, side="left")
        hi = np.searchsorted(ts, ts + window / 2, side="right")
        n01, e01 = cu[hi] - cu[lo], cm[hi] - cm[lo]
        n10, e10 = cd[hi] - cd[lo], cp[hi] - cp[lo]
        with np.errstate(divide="ignore", invalid="ignore"):
            r01 = n01 / e01
            r10 = n10 / e10
            out.running_times = ts
            out.running_raw01 = r01
            out.running_raw10 = r10
            out.running_nu01 = correct_rate(r01, tau_min)
            out.running_nu10 = correct_rate(r10, tau_min)
            out.running_ci01 = tuple(correct_rate(v, tau_min) for v in garwood_interval(n01, e01, level))
            out.running_ci10 = tuple(correct_rate(v, tau_min) for v in garwood_interval(n10, e10, level))
    return out
