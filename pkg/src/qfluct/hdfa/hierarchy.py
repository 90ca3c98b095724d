"""Recursive decomposition of a series into nested RTN levels."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .rates import SwitchingRates, switching_rates
from .segmentation import (
    LambdaSelection,
    LminSelection,
    reconstruct,
    segment_series,
    select_l_min,
    select_lambda_ll,
    sigma_floor,
)

SPREAD_FACTORS = np.round(np.linspace(0.9, 1.1, 11), 10)


@dataclass
class HierarchyConfig:
    """Settings for :func:`run_hierarchy`.

    ``lam`` and ``l_min`` may be fixed per level by passing sequences; None
    entries (or None overall) mean automatic selection.
    """

    lam: list | None = None
    l_min: list | None = None
    l_min_candidates: tuple = (2, 3, 4, 5, 6, 8, 10, 12, 16, 20)
    n_lambda_candidates: int = 40
    tol_rmse: float = 0.02
    spread_factors: tuple = tuple(SPREAD_FACTORS)
    min_transitions: int = 10
    zero_fraction: float = 0.9
    rate_windows: tuple = (200.0, 2000.0)
    max_levels: int = 6

    def pick(self, name: str, level: int):
        v = getattr(self, name)
        if v is None or level >= len(v):
            return None
        return v[level]

    def window(self, level: int) -> float:
        w = self.rate_windows
        if level < len(w):
            return float(w[level])
        return float(w[-1]) * 10.0 ** (level - len(w) + 1)


@dataclass
class RtnLevel:
    """One level of the hierarchy.

    Series attributes are aligned with ``times``. ``sigma_f_c`` and
    ``sigma_f_delta`` are totals combining segment-fit (``*_fit``) and
    hyperparameter-spread (``*_spread``) uncertainties in quadrature.
    """

    level: int
    values: np.ndarray
    sigma: np.ndarray
    times: np.ndarray
    lam: float
    l_min: int
    segments: list
    states: np.ndarray
    f_c: np.ndarray
    f_delta: np.ndarray
    sigma_f_c_fit: np.ndarray
    sigma_f_delta_fit: np.ndarray
    sigma_f_c_spread: np.ndarray
    sigma_f_delta_spread: np.ndarray
    rates: SwitchingRates
    n_transitions: int
    active: bool
    lambda_selection: LambdaSelection | None = None
    l_min_selection: LminSelection | None = None
    notes: list = field(default_factory=list)

    @property
    def sigma_f_c(self) -> np.ndarray:
        return np.hypot(self.sigma_f_c_fit, self.sigma_f_c_spread)

    @property
    def sigma_f_delta(self) -> np.ndarray:
        return np.hypot(self.sigma_f_delta_fit, self.sigma_f_delta_spread)

    @property
    def reconstruction(self) -> np.ndarray:
        """HMM-predicted series ``f_c + s * f_Delta / 2``."""
        return self.f_c + self.states * self.f_delta / 2.0

    @property
    def zero_magnitude(self) -> np.ndarray:
        """True where ``f_Delta`` is below twice its uncertainty."""
        return self.f_delta < 2.0 * self.sigma_f_delta

    def segments_frame(self):
        import pandas as pd

        rows = []
        for sg in self.segments:
            sm = sg.summary
            rows.append(
                {
                    "start_t": self.times[sg.start],
                    "end_t": self.times[sg.stop - 1],
                    "start_index": sg.start,
                    "stop_index": sg.stop,
                    "f_c": sm.f_c,
                    "f_Delta": sm.f_delta,
                    "sigma_f_c": sm.sigma_f_c,
                    "sigma_f_Delta": sm.sigma_f_delta,
                    "n_blocks": sm.n_blocks,
                    "mean_log_likelihood": sg.mean_log_likelihood,
                }
            )
        return pd.DataFrame(rows)

    def states_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "t_s": self.times,
                "s": self.states,
                "f_c": self.f_c,
                "f_Delta": self.f_delta,
                "sigma_f_c": self.sigma_f_c,
                "sigma_f_Delta": self.sigma_f_delta,
            }
        )


def hyperparameter_spread_uncertainty(values, sigma, lam: float, l_min: int,
                                      factors=SPREAD_FACTORS, floor: float | None = None):
    """Per-point spread of (f_c, f_Delta) over perturbed hyperparameters.

    Segmentation is repeated for every combination of factors ``a, b`` in
    ``factors``: the per-point likelihood ``10**lam`` is scaled by ``a``
    (threshold ``lam + log10(a)``) and ``L_min`` becomes
    ``round(b * l_min)``. Scaling the likelihood rather than its logarithm
    keeps the perturbation independent of the units of ``values``.
    Combinations that coincide after rounding are computed once and counted
    with their multiplicity.

    Returns
    -------
    sigma_f_c, sigma_f_delta : ndarray
        Population standard deviation over all combinations.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    combos = Counter(
        (float(lam + np.log10(a)), max(2, int(round(b * l_min))))
        for a in factors
        for b in factors
    )
    total = sum(combos.values())
    s1c = np.zeros(n)
    s2c = np.zeros(n)
    s1d = np.zeros(n)
    s2d = np.zeros(n)
    ref_c = ref_d = None
    for (lm, lmin), mult in sorted(combos.items()):
        segs = segment_series(x, sigma, lm, lmin, floor)
        _, fc, fd, _, _, _ = reconstruct(segs, n)
        if ref_c is None:
            # Shift by a reference run to keep the variance sums well conditioned.
            ref_c, ref_d = fc.copy(), fd.copy()
        dc, dd = fc - ref_c, fd - ref_d
        s1c += mult * dc
        s2c += mult * dc * dc
        s1d += mult * dd
        s2d += mult * dd * dd
    var_c = np.maximum(s2c / total - (s1c / total) ** 2, 0.0)
    var_d = np.maximum(s2d / total - (s1d / total) ** 2, 0.0)
    return np.sqrt(var_c), np.sqrt(var_d)


def _segment_starts(segments) -> np.ndarray:
    return np.array([sg.start for sg in segments[1:]], dtype=int)


def analyse_level(values, sigma, times, level: int = 0, config: HierarchyConfig | None = None,
                  floor: float | None = None) -> RtnLevel:
    """Select hyperparameters, segment, summarise and compute rates for one level."""
    config = HierarchyConfig() if config is None else config
    x = np.ascontiguousarray(values, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape).copy()
    t = np.asarray(times, dtype=float)
    fl = sigma_floor(sig) if floor is None else float(floor)
    lam = config.pick("lam", level)
    lsel = msel = None
    if lam is None:
        lsel = select_lambda_ll(x, sig, floor=fl, n_candidates=config.n_lambda_candidates)
        lam = lsel.lam
    l_min = config.pick("l_min", level)
    if l_min is None:
        cands = [c for c in config.l_min_candidates if c <= max(2, x.size)]
        msel = select_l_min(x, sig, lam, cands or [2], config.tol_rmse, fl)
        l_min = msel.l_min
    l_min = int(l_min)
    segs = segment_series(x, sig, lam, l_min, fl)
    _, fc, fd, sfc, sfd, s = reconstruct(segs, x.size)
    if len(config.spread_factors) > 1:
        s2c, s2d = hyperparameter_spread_uncertainty(x, sig, lam, l_min, config.spread_factors, fl)
    else:
        s2c = s2d = np.zeros(x.size)
    dt = np.diff(t)
    step = float(np.median(dt)) if dt.size else 0.0
    zero = fd < 2.0 * np.hypot(sfd, s2d)
    rates = switching_rates(s, t, step * l_min, window=config.window(level), mask=~zero,
                            breaks=_segment_starts(segs))
    n_tr = rates.nu01.n_transitions + rates.nu10.n_transitions
    active = n_tr >= config.min_transitions and zero.mean() <= config.zero_fraction
    return RtnLevel(
        level=level + 1, values=x, sigma=sig, times=t, lam=float(lam), l_min=l_min,
        segments=segs, states=s, f_c=fc, f_delta=fd, sigma_f_c_fit=sfc,
        sigma_f_delta_fit=sfd, sigma_f_c_spread=s2c, sigma_f_delta_spread=s2d,
        rates=rates, n_transitions=n_tr, active=bool(active),
        lambda_selection=lsel, l_min_selection=msel,
    )


def run_hierarchy(values, sigma, times, config: HierarchyConfig | None = None) -> list[RtnLevel]:
    """Peel RTN levels off a series until no significant switching remains.

    The input of level n+1 is the centre series ``f_c`` of level n with its
    total uncertainty. The returned list ends with the first inactive level,
    which documents why the recursion stopped.
    """
    config = HierarchyConfig() if config is None else config
    x = np.asarray(values, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    levels = []
    for k in range(config.max_levels):
        lvl = analyse_level(x, sig, times, k, config)
        levels.append(lvl)
        if not lvl.active:
            break
        x = lvl.f_c
        sig = lvl.sigma_f_c
    return levels


def active_levels(levels: list[RtnLevel]) -> list[RtnLevel]:
    return [lv for lv in levels if lv.active]
