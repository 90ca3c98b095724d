"""Per-slice regression of the Markovian noise model with bootstrap errors.

Every repetition ``t_r`` of a :class:`~qfluct.averaging.ProbabilitySeries`
is fitted independently by differential evolution followed by a bounded
Levenberg-Marquardt polish. Consecutive slices are warm-started from the
previous solution, which keeps the sweep over millions of slices tractable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _fitkernels as _k
from .averaging import ProbabilitySeries
from .emulator import BASES

DEGRADED = _k.DEGRADED
LOW_SENSITIVITY = _k.LOW_SENSITIVITY
EDGE = _k.EDGE


@dataclass
class FitConfig:
    """Optimiser settings for the per-slice fit.

    Bounds are ``(low, high)`` pairs in Hz for ``delta_f`` and in s^-1 for
    the rates.
    """

    delta_f_bounds: tuple = (-200e3, 200e3)
    gamma_1_bounds: tuple = (0.0, 1e6)
    gamma_phi_bounds: tuple = (0.0, 1e6)
    popsize: int = 30
    mutation: float = 0.7
    recombination: float = 0.9
    maxiter: int = 500
    tol: float = 1e-8
    atol: float = 1e-14
    seed: int = 0
    warm_start: bool = True
    polish: bool = True
    weighting: str = "unweighted"
    n_bootstrap: int = 100
    bootstrap_refit: str = "local"
    low_sensitivity_threshold: float = 1e-2

    def __post_init__(self):
        for name in ("delta_f_bounds", "gamma_1_bounds", "gamma_phi_bounds"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be finite with low < high")
            setattr(self, name, (lo, hi))
        if self.gamma_1_bounds[0] < 0 or self.gamma_phi_bounds[0] < 0:
            raise ValueError("rate bounds must be non-negative")
        if self.popsize < 4:
            raise ValueError("popsize must be >= 4")
        if self.weighting not in ("unweighted", "binomial"):
            raise ValueError("weighting must be 'unweighted' or 'binomial'")
        if self.bootstrap_refit not in ("local", "de"):
            raise ValueError("bootstrap_refit must be 'local' or 'de'")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.delta_f_bounds[0], self.gamma_1_bounds[0], self.gamma_phi_bounds[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.delta_f_bounds[1], self.gamma_1_bounds[1], self.gamma_phi_bounds[1]])

    def check_aliasing(self, idle_times) -> None:
        """Reject detuning bounds beyond the Nyquist limit of the idle grid."""
        tau = np.asarray(idle_times, dtype=float)
        if tau.size < 2:
            return
        limit = 1.0 / (2.0 * np.min(np.diff(tau)))
        if max(abs(self.delta_f_bounds[0]), abs(self.delta_f_bounds[1])) > limit * (1 + 1e-12):
            raise ValueError(
                f"delta_f bounds exceed the aliasing limit {limit:.6g} Hz of the idle grid"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("delta_f_bounds", "gamma_1_bounds", "gamma_phi_bounds"):
            d[name] = list(d[name])
        return d


@dataclass
class SliceFit:
    params: np.ndarray
    residuals: np.ndarray
    sse: float
    flags: int
    generations: int


@dataclass
class NoiseTrace:
    """Fitted noise parameters at every repetition."""

    times: np.ndarray
    delta_f: np.ndarray
    gamma_1: np.ndarray
    gamma_phi: np.ndarray
    sigma_delta_f: np.ndarray
    sigma_gamma_1: np.ndarray
    sigma_gamma_phi: np.ndarray
    residual_norm: np.ndarray
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flags is None:
            self.flags = np.zeros(self.times.size, dtype=np.int64)

    def __len__(self):
        return self.times.size

    COLUMNS = (
        "t_s", "delta_f_hz", "sigma_delta_f_hz", "gamma_1", "sigma_gamma_1",
        "gamma_phi", "sigma_gamma_phi", "residual_norm", "flags",
    )

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "t_s": self.times,
                "delta_f_hz": self.delta_f,
                "sigma_delta_f_hz": self.sigma_delta_f,
                "gamma_1": self.gamma_1,
                "sigma_gamma_1": self.sigma_gamma_1,
                "gamma_phi": self.gamma_phi,
                "sigma_gamma_phi": self.sigma_gamma_phi,
                "residual_norm": self.residual_norm,
                "flags": self.flags,
            }
        )

    @classmethod
    def from_frame(cls, df) -> "NoiseTrace":
        g = lambda c: df[c].to_numpy(dtype=float)  # noqa: E731
        return cls(
            g("t_s"), g("delta_f_hz"), g("gamma_1"), g("gamma_phi"),
            g("sigma_delta_f_hz"), g("sigma_gamma_1"), g("sigma_gamma_phi"),
            g("residual_norm"), df["flags"].to_numpy(dtype=np.int64),
        )


def _codes(bases) -> np.ndarray:
    return np.array([BASES.index(b) for b in bases], dtype=np.int64)


def _is_uniform(tau: np.ndarray) -> bool:
    if tau.size < 3:
        return True
    d = np.diff(tau)
    return bool(np.allclose(d, d[0], rtol=1e-9, atol=0))


def _weights(p: np.ndarray, n_eff, config: FitConfig) -> np.ndarray:
    if config.weighting == "unweighted":
        return np.ones_like(p)
    n = np.broadcast_to(np.asarray(n_eff, dtype=float).reshape((-1,) + (1,) * (p.ndim - 1)), p.shape)
    # Binomial variance with a one-count floor to avoid infinite weights.
    return n / (p * (1.0 - p) * n + 1.0)


def _hyper(config: FitConfig):
    return (
        int(config.popsize), float(config.mutation), float(config.recombination),
        int(config.maxiter), float(config.tol), float(config.atol),
    )


def fit_slice(p, idle_times, bases=BASES, n_eff=None, config: FitConfig | None = None,
              previous=None, seed: int | None = None) -> SliceFit:
    """Fit (delta_f, gamma_1, gamma_phi) to one time slice.

    Parameters
    ----------
    p : array_like, shape (n_tau, n_bases)
        Observed probabilities.
    idle_times : array_like
    bases : sequence of str
    n_eff : float, optional
        Effective sample count, used only by binomial weighting.
    config : FitConfig, optional
    previous : array_like, optional
        Solution of the preceding slice, inserted into the initial population.
    seed : int, optional
        Overrides ``config.seed``.

    Returns
    -------
    SliceFit
        ``residuals`` are ``p - p_fit`` with the shape of ``p``.
    """
    config = FitConfig() if config is None else config
    pobs = np.ascontiguousarray(p, dtype=float)
    tau = np.ascontiguousarray(idle_times, dtype=float)
    if pobs.shape != (tau.size, len(bases)):
        raise ValueError("p must have shape (n_tau, n_bases)")
    if tau.size < 3:
        raise ValueError("at least 3 idle times per basis are required")
    if n_eff is not None and not n_eff > 0:
        raise ValueError("n_eff must be positive")
    codes = _codes(bases)
    w = _weights(pobs, 1.0 if n_eff is None else n_eff, config)
    prev = np.zeros(3) if previous is None else np.asarray(previous, dtype=float)
    s = config.seed if seed is None else seed
    x, e, fl, gen = _k.fit_one(
        pobs, w, tau, codes, _is_uniform(tau), config.lower, config.upper, prev,
        previous is not None, int(s) % 2**32, *_hyper(config), bool(config.polish),
        float(config.low_sensitivity_threshold),
    )
    resid = pobs - _k.model(x, tau, codes, False)
    return SliceFit(x, resid, float(e), int(fl), int(gen))


def bootstrap_uncertainty(p, params, residuals, n_eff, idle_times, bases=BASES,
                          config: FitConfig | None = None, seed: int | None = None,
                          return_replicas: bool = False):
    """Bootstrap standard errors of one slice.

    Each replica redraws every probability from a binomial with
    ``N = max(1, round(n_eff))`` trials, adds a residual drawn with
    replacement from the slice's residual pool, clips to [0, 1] and refits.

    Returns
    -------
    sigma : ndarray, shape (3,)
        Sample standard deviation (ddof=1) over replicas.
    replicas : ndarray, shape (n_bootstrap, 3)
        Only if ``return_replicas``.
    """
    config = FitConfig() if config is None else config
    if not n_eff >= 1:
        raise ValueError("n_eff must be >= 1 for the binomial redraw")
    pobs = np.ascontiguousarray(p, dtype=float)
    tau = np.ascontiguousarray(idle_times, dtype=float)
    res = np.ascontiguousarray(residuals, dtype=float)
    if res.size == 0:
        raise ValueError("residual pool is empty")
    codes = _codes(bases)
    w = _weights(pobs, n_eff, config)
    s = config.seed if seed is None else seed
    reps = _k.bootstrap_one(
        pobs, w, np.asarray(params, dtype=float), res, max(1, int(round(n_eff))), tau, codes,
        _is_uniform(tau), config.lower, config.upper, int(config.n_bootstrap),
        int(s) % 2**32, config.bootstrap_refit == "de", *_hyper(config),
    )
    sig = reps.std(axis=0, ddof=1) if reps.shape[0] > 1 else np.zeros(3)
    return (sig, reps) if return_replicas else sig


def fit_series(series: ProbabilitySeries, config: FitConfig | None = None,
               bootstrap: bool = True) -> NoiseTrace:
    """Fit every slice of a probability series.

    Parameters
    ----------
    series : ProbabilitySeries
    config : FitConfig, optional
    bootstrap : bool
        Attach bootstrap standard errors. Costs ``n_bootstrap`` local refits
        per slice.

    Returns
    -------
    NoiseTrace
    """
    config = FitConfig() if config is None else config
    config.check_aliasing(series.idle_times)
    P = np.ascontiguousarray(series.p, dtype=float)
    tau = np.ascontiguousarray(series.idle_times, dtype=float)
    codes = _codes(series.bases)
    uniform = _is_uniform(tau)
    W = np.ascontiguousarray(_weights(P, series.n_eff, config))
    hyper = _hyper(config)
    X, E, flags, _ = _k.fit_sweep(
        P, W, tau, codes, uniform, config.lower, config.upper, bool(config.warm_start),
        int(config.seed) % 2**32, *hyper, bool(config.polish),
        float(config.low_sensitivity_threshold),
    )
    model = np.stack([_k.model(x, tau, codes, False) for x in X]) if len(X) else P * 0
    R = np.ascontiguousarray(P - model)
    flags = flags | np.where(series.edge, EDGE, 0)
    if bootstrap and config.n_bootstrap > 1:
        if np.any(series.n_eff < 1):
            raise ValueError("n_eff must be >= 1 for the binomial redraw")
        n_trials = np.maximum(1, np.rint(series.n_eff)).astype(np.int64)
        sig = _k.bootstrap_sweep(
            P, W, np.ascontiguousarray(X), R, n_trials, tau, codes, uniform,
            config.lower, config.upper, int(config.n_bootstrap), int(config.seed) % 2**32,
            config.bootstrap_refit == "de", *hyper,
        )
    else:
        sig = np.zeros_like(X)
    return NoiseTrace(
        series.times.copy(), X[:, 0].copy(), X[:, 1].copy(), X[:, 2].copy(),
        sig[:, 0].copy(), sig[:, 1].copy(), sig[:, 2].copy(), np.sqrt(E), flags.astype(np.int64),
    )


def weighted_mean_trace(values, sigmas):
    """Inverse-variance weighted mean and its standard error.

    Points with zero or non-finite sigma are ignored unless every sigma is
    zero, in which case the unweighted mean and its standard error are
    returned.
    """
    v = np.asarray(values, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if v.shape != s.shape or v.size == 0:
        raise ValueError("values and sigmas must be non-empty and aligned")
    ok = np.isfinite(s) & (s > 0) & np.isfinite(v)
    if not ok.any():
        se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
        return float(v.mean()), float(se)
    w = 1.0 / s[ok] ** 2
    return float(np.sum(w * v[ok]) / w.sum()), float(1.0 / np.sqrt(w.sum()))
