"""Moving averages turning binary outcomes into probability estimates.

Averages never cross script boundaries: each script is a separate hardware
job and its repetitions are contiguous only within the job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .emulator import RecordTable


@dataclass
class ProbabilitySeries:
    """Time-resolved outcome probabilities.

    Attributes
    ----------
    p : ndarray, shape (n_rep, n_tau, n_bases)
    n_eff : ndarray, shape (n_rep,)
        Sum of kernel weights at every repetition.
    times : ndarray, shape (n_rep,)
    edge : ndarray of bool, shape (n_rep,)
        True where the kernel was cut by a script boundary.
    kind : {"gaussian", "fixed"}
    width : float
        W_G or W_F.
    idle_times : ndarray
    bases : tuple of str
    """

    p: np.ndarray
    n_eff: np.ndarray
    times: np.ndarray
    edge: np.ndarray
    kind: str
    width: float
    idle_times: np.ndarray
    bases: tuple

    def to_frame(self):
        """Long-format table (t_s, tau_index, basis, p, n_eff, edge)."""
        import pandas as pd

        n_rep, n_tau, n_b = self.p.shape
        r = np.repeat(np.arange(n_rep), n_tau * n_b)
        i = np.tile(np.repeat(np.arange(n_tau), n_b), n_rep)
        k = np.tile(np.arange(n_b), n_rep * n_tau)
        return pd.DataFrame(
            {
                "repetition": r,
                "t_s": self.times[r],
                "tau_index": i,
                "basis": np.asarray(self.bases)[k],
                "p": self.p.reshape(-1),
                "n_eff": self.n_eff[r],
                "edge": self.edge[r],
            }
        )


def gaussian_kernel(width: float) -> np.ndarray:
    """Truncated kernel ``exp(-k^2 / (2 W^2))`` for ``|k| <= ceil(4 W)``."""
    half = int(math.ceil(4.0 * width))
    k = np.arange(-half, half + 1, dtype=float)
    return np.exp(-(k**2) / (2.0 * width**2))


def _script_slices(n_rep: int, n_per_script: int):
    for start in range(0, n_rep, n_per_script):
        yield slice(start, min(start + n_per_script, n_rep))


def _check_nonempty(outcomes: np.ndarray, bases):
    if outcomes.shape[0] == 0:
        raise ValueError(f"no records for (tau_index=0, basis={bases[0]!r})")


def gaussian_average(table: RecordTable, width: float) -> ProbabilitySeries:
    """Gaussian moving average over repetitions.

    Parameters
    ----------
    table : RecordTable
    width : float
        Kernel width W_G in repetitions, may be non-integer.

    Returns
    -------
    ProbabilitySeries
        Weights are renormalised by their realised sum, so points close to a
        script boundary average over a one-sided kernel. Those points are
        flagged in ``edge``.
    """
    if not width > 0:
        raise ValueError("W_G must be positive")
    b = table.outcomes
    _check_nonempty(b, table.plan.bases)
    kern = gaussian_kernel(width)
    half = kern.size // 2
    n_rep = b.shape[0]
    p = np.empty(b.shape, dtype=float)
    n_eff = np.empty(n_rep)
    edge = np.zeros(n_rep, dtype=bool)
    for sl in _script_slices(n_rep, table.plan.n_repetitions):
        seg = b[sl].astype(float)
        num = convolve1d(seg, kern, axis=0, mode="constant", cval=0.0)
        den = convolve1d(np.ones(seg.shape[0]), kern, mode="constant", cval=0.0)
        p[sl] = num / den[:, None, None]
        n_eff[sl] = den
        m = seg.shape[0]
        e = np.zeros(m, dtype=bool)
        e[: min(half, m)] = True
        e[max(m - half, 0):] = True
        edge[sl] = e
    np.clip(p, 0.0, 1.0, out=p)
    return ProbabilitySeries(
        p, n_eff, table.times.copy(), edge, "gaussian", float(width),
        table.plan.idle_times.copy(), table.plan.bases,
    )


def fixed_window_average(table: RecordTable, width: int) -> ProbabilitySeries:
    """Boxcar average over ``[r - W_F, r + W_F]``.

    Windows near a script boundary shrink symmetrically, so every estimate is
    centred on its own repetition.
    """
    width = int(width)
    if width < 0:
        raise ValueError("W_F must be >= 0")
    b = table.outcomes
    _check_nonempty(b, table.plan.bases)
    n_rep = b.shape[0]
    p = np.empty(b.shape, dtype=float)
    n_eff = np.empty(n_rep)
    edge = np.zeros(n_rep, dtype=bool)
    for sl in _script_slices(n_rep, table.plan.n_repetitions):
        seg = b[sl].astype(float)
        m = seg.shape[0]
        csum = np.concatenate([np.zeros((1,) + seg.shape[1:]), np.cumsum(seg, axis=0)])
        r = np.arange(m)
        h = np.minimum(width, np.minimum(r, m - 1 - r))
        lo, hi = r - h, r + h + 1
        cnt = (hi - lo).astype(float)
        p[sl] = (csum[hi] - csum[lo]) / cnt[:, None, None]
        n_eff[sl] = cnt
        edge[sl] = h < width
    return ProbabilitySeries(
        p, n_eff, table.times.copy(), edge, "fixed", float(width),
        table.plan.idle_times.copy(), table.plan.bases,
    )


def tracking_metrics(true_states, pred_states, true_df, fit_df) -> dict:
    """Classification inaccuracy and median detuning error.

    Returns
    -------
    dict
        ``inaccuracy`` is the fraction of steps with a wrong state.
        ``epsilon_correct`` is the median ``|fit_df - true_df|`` over steps
        whose state was classified correctly (NaN if there are none).
    """
    s = np.asarray(true_states)
    sp = np.asarray(pred_states)
    tdf = np.asarray(true_df, dtype=float)
    fdf = np.asarray(fit_df, dtype=float)
    if not (s.shape == sp.shape == tdf.shape == fdf.shape):
        raise ValueError("all series must have equal length")
    ok = s == sp
    eps = float(np.median(np.abs(fdf[ok] - tdf[ok]))) if ok.any() else float("nan")
    return {"inaccuracy": float(1.0 - ok.mean()), "epsilon_correct": eps}
