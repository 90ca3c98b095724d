"""Welch power spectra of noise traces and a filtered 1/f^alpha + white model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import welch

from .averaging import gaussian_kernel

GAP_FACTOR = 100.0
ALPHA_BOUNDS = (0.0, 3.0)


@dataclass
class PsdEstimate:
    """One-sided power spectral density.

    Attributes
    ----------
    frequencies : ndarray
        Positive bin frequencies in Hz, DC excluded.
    power : ndarray
        Density in units**2 / Hz.
    segment_length : int
    window : str
    dt : float
        Sampling interval in seconds.
    variance : float
        Mean variance of the detrended segments; the reference for the
        Parseval check.
    n_segments : int
    """

    frequencies: np.ndarray
    power: np.ndarray
    segment_length: int
    window: str
    dt: float
    variance: float
    n_segments: int

    @property
    def parseval_ratio(self) -> float:
        """Integrated PSD (DC bin restored as zero) over segment variance."""
        df = 1.0 / (self.segment_length * self.dt)
        return float(np.sum(self.power) * df / self.variance)

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame({"f_hz": self.frequencies, "psd": self.power})


@dataclass
class PsdModel:
    """``|H_G(f)|^2 (A / f^alpha + C)`` with H_G the averaging kernel response."""

    A: float
    alpha: float
    C: float
    width: float
    converged: bool = True
    cost: float = float("nan")

    def evaluate(self, f, dt: float):
        f = np.asarray(f, dtype=float)
        return gaussian_transfer(f, dt, self.width) * (self.A / f**self.alpha + self.C)

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_transfer(f, dt: float, width: float) -> np.ndarray:
    """Squared magnitude response of the normalised discrete averaging kernel.

    ``width <= 0`` is the identity filter.
    """
    f = np.asarray(f, dtype=float)
    if width <= 0:
        return np.ones_like(f)
    k = gaussian_kernel(width)
    k = k / k.sum()
    half = k.size // 2
    j = np.arange(1, half + 1, dtype=float)
    # Symmetric kernel: the response is real.
    h = k[half] + 2.0 * np.cos(2.0 * np.pi * np.outer(f * dt, j)) @ k[half + 1 :]
    return h * h


def _split_uniform(trace, times):
    """Resample to the median step by nearest neighbour, splitting at gaps."""
    t = np.asarray(times, dtype=float)
    dt_all = np.diff(t)
    if np.any(dt_all <= 0):
        raise ValueError("timestamps must be strictly increasing")
    dt = float(np.median(dt_all))
    cuts = np.flatnonzero(dt_all > GAP_FACTOR * dt) + 1
    pieces = []
    for a, b in zip(np.r_[0, cuts], np.r_[cuts, t.size]):
        tt = t[a:b]
        grid = tt[0] + dt * np.arange(int(np.floor((tt[-1] - tt[0]) / dt)) + 1)
        idx = np.clip(np.searchsorted(tt, grid), 1, tt.size - 1) if tt.size > 1 else np.zeros(1, int)
        if tt.size > 1:
            left = idx - 1
            idx = np.where(grid - tt[left] <= tt[idx] - grid, left, idx)
        pieces.append(np.asarray(trace, dtype=float)[a:b][idx])
    return pieces, dt


def welch_psd(trace, dt: float | None = None, segment_length: int = 2**16,
              overlap: float = 0.5, window: str = "hann", times=None) -> PsdEstimate:
    """Welch estimate with mean-removed segments.

    Parameters
    ----------
    trace : array_like
    dt : float, optional
        Sampling interval in seconds; required unless ``times`` is given.
    segment_length : int
        Points per Welch segment.
    overlap : float
        Fractional overlap of consecutive segments.
    window : str
        Taper passed to :func:`scipy.signal.welch`.
    times : array_like, optional
        Timestamps. Non-uniform sampling is resampled to the median step and
        gaps longer than 100 median steps split the trace; the pieces are
        averaged by their number of segments.
    """
    x = np.asarray(trace, dtype=float)
    if times is not None:
        pieces, dt = _split_uniform(x, times)
    elif dt is None:
        raise ValueError("dt or times is required")
    else:
        pieces = [x]
    nseg = int(segment_length)
    step = nseg - int(round(overlap * nseg))
    usable = [p for p in pieces if p.size >= nseg]
    if not usable:
        raise ValueError(
            f"trace of {max(p.size for p in pieces)} points is shorter than segment_length={nseg}; "
            f"use segment_length <= {2 ** int(np.log2(max(2, max(p.size for p in pieces))))}"
        )
    acc = None
    var = 0.0
    count = 0
    for p in usable:
        f, pxx = welch(p, fs=1.0 / dt, window=window, nperseg=nseg, noverlap=nseg - step,
                       detrend="constant", scaling="density")
        m = 1 + (p.size - nseg) // step
        acc = pxx * m if acc is None else acc + pxx * m
        for s in range(m):
            var += np.var(p[s * step : s * step + nseg])
        count += m
    keep = f > 0
    return PsdEstimate(f[keep], acc[keep] / count, nseg, window, float(dt), var / count, count)


def fit_psd_model(psd: PsdEstimate, width: float, skip_low: int = 2,
                  max_fraction: float = 0.8) -> PsdModel:
    """Fit ``|H_G|^2 (A / f^alpha + C)`` by least squares on log power.

    The lowest ``skip_low`` bins and bins above ``max_fraction`` of Nyquist
    are excluded.
    """
    f = psd.frequencies
    p = psd.power
    nyq = 0.5 / psd.dt
    sel = np.zeros(f.size, dtype=bool)
    sel[skip_low:] = True
    sel &= (f <= max_fraction * nyq) & (p > 0)
    f, p = f[sel], p[sel]
    if f.size < 4:
        raise ValueError("too few frequency bins to fit")
    if f[-1] / f[0] < 100:
        raise ValueError("fit needs at least two decades of frequency coverage")
    h2 = gaussian_transfer(f, psd.dt, width)
    h2 = np.maximum(h2, np.finfo(float).tiny)
    lp = np.log(p)
    lf = np.log(f)

    def resid(theta):
        la, alpha, lc = theta
        return np.log(h2) + np.logaddexp(la - alpha * lf, lc) - lp

    flat = p / h2
    n = f.size
    lc0 = float(np.log(np.median(flat[-max(1, n // 10):])))
    la0 = float(np.log(np.median(flat[: max(1, n // 100)])) + lf[0])
    scale = max(abs(la0), abs(lc0), 1.0)
    res = least_squares(resid, [la0, 1.0, lc0], bounds=([-np.inf, ALPHA_BOUNDS[0], -np.inf],
                                                       [np.inf, ALPHA_BOUNDS[1], np.inf]),
                        x_scale=[scale, 1.0, scale], method="trf")
    la, alpha, lc = res.x
    return PsdModel(float(np.exp(la)), float(alpha), float(np.exp(lc)), float(width),
                    bool(res.success), float(res.cost))


def shaped_noise(n: int, alpha: float, dt: float = 1.0, amplitude: float = 1.0, seed=None):
    """Gaussian noise with one-sided density ``amplitude / f^alpha``.

    White Gaussian noise is shaped in the Fourier domain; the DC component
    is set to zero.
    """
    rng = np.random.default_rng(seed)
    f = np.fft.rfftfreq(n, dt)
    spec = rng.normal(size=f.size) + 1j * rng.normal(size=f.size)
    gain = np.zeros(f.size)
    gain[1:] = np.sqrt(amplitude * f[1:] ** (-alpha) * n / (4.0 * dt))
    if n % 2 == 0:
        # Nyquist bin is real.
        spec[-1] = spec[-1].real * np.sqrt(2.0)
    return np.fft.irfft(spec * gain, n)
