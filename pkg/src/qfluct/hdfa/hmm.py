"""Two-state Gaussian hidden Markov model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _hmmkernels as _k

LN10 = np.log(10.0)
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6


@dataclass
class GaussianHmm2:
    """Two-state HMM with Gaussian emissions.

    State 0 has the smaller mean and maps to s = -1; state 1 maps to s = +1.
    """

    means: np.ndarray
    sigmas: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    sigma_floored: bool = False

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.start = np.asarray(self.start, dtype=float)
        if np.any(self.sigmas <= 0):
            raise ValueError("emission sigmas must be positive")

    def shifted(self, c: float) -> "GaussianHmm2":
        return GaussianHmm2(self.means + c, self.sigmas, self.transitions, self.start, self.sigma_floored)

    def log_likelihood(self, values) -> float:
        """Natural-log likelihood of ``values``."""
        x = np.ascontiguousarray(values, dtype=float)
        alpha = np.empty(2)
        return float(_k.forward_loglik(x, self.means, self.sigmas, self.transitions, self.start, alpha))

    def mean_log10_likelihood(self, values) -> float:
        x = np.asarray(values, dtype=float)
        return self.log_likelihood(x) / (x.size * LN10)


def fit_hmm2(values, init: GaussianHmm2 | None = None, sigma_floor: float = 10.0,
             max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL):
    """Baum-Welch fit of a two-state Gaussian HMM.

    Parameters
    ----------
    values : array_like
        At least two observations.
    init : GaussianHmm2, optional
        Starting point. Defaults to means at the 25th and 75th percentiles,
        sigmas at half the interquartile range, 0.9 stay probability.
    sigma_floor : float
        Lower bound on the emission sigmas.

    Returns
    -------
    model : GaussianHmm2
    mean_log_likelihood : float
        Per-point base-10 log-likelihood of ``values`` under ``model``.
    """
    x = np.ascontiguousarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("fit_hmm2 needs at least 2 points")
    if not sigma_floor > 0:
        raise ValueError("sigma_floor must be positive")
    if init is None:
        mu, sig, A, pi = _k.fresh_init(x, sigma_floor)
    else:
        mu, sig, A, pi = init.means, init.sigmas, init.transitions, init.start
    mu, sig, A, pi, ll, _, _ = _k.baum_welch(x, mu, sig, A, pi, sigma_floor, max_iter, tol)
    floored = bool(np.any(sig <= sigma_floor * (1 + 1e-12)))
    model = GaussianHmm2(mu, sig, A, pi, floored)
    return model, float(ll / (x.size * LN10))


def viterbi_states(model: GaussianHmm2, values) -> np.ndarray:
    """Most likely state path as s in {-1, +1}.

    When the two means coincide (relative to the emission sigmas) the state
    order is undefined, so the path is reported as s = -1 throughout.
    """
    x = np.ascontiguousarray(values, dtype=float)
    if abs(model.means[1] - model.means[0]) <= 1e-9 * float(np.max(model.sigmas)):
        return np.full(x.size, -1, dtype=np.int8)
    k = _k.viterbi(x, model.means, model.sigmas, model.transitions, model.start)
    return (2 * k.astype(np.int8) - 1).astype(np.int8)
