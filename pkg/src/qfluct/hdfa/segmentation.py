"""Likelihood-threshold segmentation and its hyperparameter selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _hmmkernels as _k
from .hmm import DEFAULT_MAX_ITER, DEFAULT_TOL, GaussianHmm2, fit_hmm2, viterbi_states
from .summary import SegmentSummary, summarize_segment

MIN_SIGMA_FLOOR = 10.0  # Hz


class PlateauWarning(UserWarning):
    """The change-point curve has no elbow."""


def sigma_floor(sigma) -> float:
    """Emission sigma floor ``max(10 Hz, median input sigma)``."""
    s = np.asarray(sigma, dtype=float)
    s = s[np.isfinite(s)]
    med = float(np.median(s)) if s.size else 0.0
    return max(MIN_SIGMA_FLOOR, med)


@dataclass
class Segment:
    """One segment of a series with its HMM and state path."""

    start: int
    stop: int
    model: GaussianHmm2
    mean_log_likelihood: float
    states: np.ndarray
    summary: SegmentSummary | None = None

    @property
    def length(self) -> int:
        return self.stop - self.start

    def blocks(self):
        """Half-open ``(start, stop)`` index pairs of constant-state runs."""
        s = self.states
        cuts = np.flatnonzero(np.diff(s)) + 1
        edges = np.r_[0, cuts, s.size] + self.start
        return list(zip(edges[:-1], edges[1:]))


def _models_from_rows(rows):
    out = []
    for r in rows:
        out.append(GaussianHmm2(r[0:2], r[2:4], r[4:8].reshape(2, 2), r[8:10]))
    return out


def change_point_count(values, lam: float, l_min: int, floor: float,
                       max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> int:
    """Number of segment boundaries found at ``(lam, l_min)``."""
    x = np.ascontiguousarray(values, dtype=float)
    starts, _, _ = _k.segment_scan(x, float(floor), float(lam), int(l_min), max_iter, tol, False)
    return int(starts.size - 1)


def segment_series(values, sigma, lam: float, l_min: int, floor: float | None = None,
                   summarize: bool = True, max_iter: int = DEFAULT_MAX_ITER,
                   tol: float = DEFAULT_TOL) -> list[Segment]:
    """Split a series into segments that a two-state HMM describes well.

    Parameters
    ----------
    values : array_like
        Series f(t_r).
    sigma : array_like or float
        Standard errors of ``values``. Used for the emission floor and for
        the segment summaries.
    lam : float
        Threshold on the per-point base-10 log-likelihood.
    l_min : int
        Minimum segment length before a segment may be closed, >= 2.
    floor : float, optional
        Emission sigma floor; defaults to :func:`sigma_floor`.

    Returns
    -------
    list of Segment
        Contiguous segments covering the series.
    """
    if int(l_min) < 2:
        raise ValueError("L_min must be >= 2")
    x = np.ascontiguousarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    fl = sigma_floor(sig) if floor is None else float(floor)
    starts, rows, mll = _k.segment_scan(x, fl, float(lam), int(l_min), max_iter, tol, True)
    stops = np.r_[starts[1:], x.size]
    out = []
    for a, b, model, m in zip(starts, stops, _models_from_rows(rows), mll):
        st = viterbi_states(model, x[a:b])
        seg = Segment(int(a), int(b), model, float(m), st)
        if summarize:
            seg.summary = summarize_segment(x[a:b], sig[a:b], st)
        out.append(seg)
    return out


def reconstruct(segments: list[Segment], n: int):
    """Piecewise series ``f_c + s * f_Delta / 2`` and its parts.

    Returns
    -------
    f_tilde, f_c, f_delta, sigma_f_c, sigma_f_delta, states : ndarray
    """
    fc = np.empty(n)
    fd = np.empty(n)
    sfc = np.empty(n)
    sfd = np.empty(n)
    s = np.empty(n, dtype=np.int8)
    for seg in segments:
        sl = slice(seg.start, seg.stop)
        sm = seg.summary
        fc[sl] = sm.f_c
        fd[sl] = sm.f_delta
        sfc[sl] = sm.sigma_f_c
        sfd[sl] = sm.sigma_f_delta
        s[sl] = seg.states
    return fc + s * fd / 2.0, fc, fd, sfc, sfd, s


@dataclass
class LambdaSelection:
    lam: float
    grid: np.ndarray
    n_change_points: np.ndarray
    plateau: bool = False


@dataclass
class LminSelection:
    l_min: int
    candidates: np.ndarray
    rmse: np.ndarray


def lambda_grid(values, sigma, n_candidates: int = 40, window: int = 100,
                floor: float | None = None, margin: float = 0.25) -> np.ndarray:
    """Candidate thresholds spanning observed per-segment likelihoods.

    A pilot pass fits the HMM to consecutive windows of ``window`` points and
    to the whole series. The grid spans the range of their per-point
    log10-likelihoods widened by ``margin`` of the range on both sides.
    """
    x = np.asarray(values, dtype=float)
    fl = sigma_floor(sigma) if floor is None else float(floor)
    vals = []
    w = max(2, min(window, x.size))
    n_win = max(1, x.size // w)
    # At most 200 evenly spaced pilot windows keep the pilot pass cheap.
    for k in np.unique(np.linspace(0, n_win - 1, min(n_win, 200)).astype(int)):
        seg = x[k * w : (k + 1) * w]
        if seg.size >= 2:
            vals.append(fit_hmm2(seg, sigma_floor=fl)[1])
    if x.size >= 2:
        vals.append(fit_hmm2(x, sigma_floor=fl)[1])
    vals = np.asarray(vals)
    lo, hi = float(vals.min()), float(vals.max())
    span = max(hi - lo, 0.05)
    return np.linspace(lo - margin * span, hi + margin * span, n_candidates)


def elbow_index(n_cp, grid=None, min_depth: float = 0.05) -> int | None:
    """Knee of an increasing, convex change-point curve.

    ``log1p(n_cp)`` and the grid are both rescaled to [0, 1]; the knee is the
    point lying furthest below the chord joining the end points, which is
    where the discrete curvature concentrates. Returns None when no point
    lies more than ``min_depth`` below the chord (flat or straight curve).

    Leading candidates without change points and trailing candidates at the
    saturated maximum are dropped first (keeping one of each), so the knee
    does not depend on how far the grid extends past the informative range.
    If the rise after a zero plateau has no convex bend, the end of the
    plateau is the knee.
    """
    c = np.asarray(n_cp, dtype=float)
    x = np.arange(c.size, dtype=float) if grid is None else np.asarray(grid, dtype=float)
    if c.size == 0:
        return None
    nz = np.flatnonzero(c > c[0])
    a = max(0, int(nz[0]) - 1) if nz.size else 0
    b = int(np.flatnonzero(c == c.max())[0]) + 1
    y = np.log1p(c[a:b])
    if y.size < 3 or y[-1] <= y[0]:
        return None
    xs = x[a:b]
    xn = (xs - xs[0]) / (xs[-1] - xs[0])
    yn = (y - y[0]) / (y[-1] - y[0])
    d = xn - yn
    k = int(np.argmax(d))
    if not d[k] > min_depth:
        return a if a > 0 else None
    return a + k


def select_lambda_ll(values, sigma, grid=None, floor: float | None = None,
                     n_candidates: int = 40) -> LambdaSelection:
    """Choose the likelihood threshold at the elbow of N_CP(lambda).

    Segmentation runs with ``L_min = 2`` for every candidate. The elbow is
    located by :func:`elbow_index` and marks the onset of the rapid rise of
    N_CP, where segments start to be cut at individual switches.
    """
    x = np.ascontiguousarray(values, dtype=float)
    fl = sigma_floor(sigma) if floor is None else float(floor)
    g = lambda_grid(x, sigma, n_candidates, floor=fl) if grid is None else np.sort(np.asarray(grid, float))
    ncp = np.array([change_point_count(x, lam, 2, fl) for lam in g])
    k = elbow_index(ncp, g)
    if k is None:
        warnings.warn("N_CP(lambda) has no elbow; using the most permissive threshold",
                      PlateauWarning, stacklevel=2)
        return LambdaSelection(float(g[0]), g, ncp, True)
    return LambdaSelection(float(g[k]), g, ncp, False)


def select_l_min(values, sigma, lam: float, candidates=(2, 3, 4, 5, 6, 8, 10, 12, 16, 20),
                 tol_rmse: float = 0.02, floor: float | None = None) -> LminSelection:
    """Smallest L_min whose reconstruction RMSE is within ``tol_rmse`` of the best."""
    x = np.ascontiguousarray(values, dtype=float)
    cands = np.asarray(sorted(int(c) for c in candidates))
    if cands.size == 0:
        raise ValueError("no L_min candidates")
    rmse = np.empty(cands.size)
    for i, c in enumerate(cands):
        segs = segment_series(x, sigma, lam, c, floor)
        ft = reconstruct(segs, x.size)[0]
        rmse[i] = np.sqrt(np.mean((x - ft) ** 2))
    best = rmse.min()
    ok = rmse <= best * (1 + tol_rmse) + 1e-300
    return LminSelection(int(cands[np.argmax(ok)]), cands, rmse)
