"""Centre and magnitude of the RTN inside one segment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SegmentSummary:
    f_c: float
    f_delta: float
    sigma_f_c: float
    sigma_f_delta: float
    n_blocks: int
    single_state: bool = False


def weighted_std(x, sigma) -> float:
    """Weighted standard deviation with weights ``1 / sigma**2``."""
    x = np.asarray(x, dtype=float)
    w = 1.0 / np.asarray(sigma, dtype=float) ** 2
    m = np.sum(w * x) / w.sum()
    return float(np.sqrt(np.sum(w * (x - m) ** 2) / w.sum()))


def block_means(values, sigma, states):
    """Inverse-variance weighted mean and standard error of every block."""
    x = np.asarray(values, dtype=float)
    w = 1.0 / np.asarray(sigma, dtype=float) ** 2
    s = np.asarray(states)
    cuts = np.flatnonzero(np.diff(s)) + 1
    edges = np.r_[0, cuts, s.size]
    sw = np.add.reduceat(w, edges[:-1])
    swx = np.add.reduceat(w * x, edges[:-1])
    return swx / sw, 1.0 / np.sqrt(sw)


def summarize_segment(values, sigma, states) -> SegmentSummary:
    """Estimate (f_c, f_Delta) and their fit uncertainties for one segment.

    Consecutive blocks of constant state give pair midpoints and absolute
    differences. ``f_c`` and ``f_Delta`` are their weighted means with
    weights from the block standard errors. Each uncertainty combines the
    weighted standard deviation of the pair values with the propagated
    standard error of the weighted mean.

    A segment with a single block has ``f_Delta = 0`` and is flagged
    ``single_state``; its ``sigma_f_delta`` is the block standard error.
    """
    x = np.asarray(values, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    if np.any(~(sig > 0)):
        raise ValueError("sigma must be positive")
    fm, sm = block_means(x, sig, states)
    if fm.size == 1:
        return SegmentSummary(float(fm[0]), 0.0, float(sm[0]), float(sm[0]), 1, True)
    mid = 0.5 * (fm[:-1] + fm[1:])
    s_mid = 0.5 * (sm[:-1] + sm[1:])
    dif = np.abs(fm[:-1] - fm[1:])
    s_dif = sm[:-1] + sm[1:]
    w_mid = 1.0 / s_mid**2
    w_dif = 1.0 / s_dif**2
    f_c = float(np.sum(w_mid * mid) / w_mid.sum())
    f_d = float(np.sum(w_dif * dif) / w_dif.sum())
    sfc = float(np.hypot(weighted_std(mid, s_mid), 1.0 / np.sqrt(w_mid.sum())))
    sfd = float(np.hypot(weighted_std(dif, s_dif), 1.0 / np.sqrt(w_dif.sum())))
    return SegmentSummary(f_c, f_d, sfc, sfd, int(fm.size))
