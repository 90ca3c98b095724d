"""Transmon charge dispersion, charge-offset jumps and the charge-dipole TLS model.

Energies are handled as frequencies (E / h, in Hz) throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import fsolve

from .constants import ANGSTROM, BOLTZMANN_K, PLANCK_H

DEFAULT_CUTOFF = 40
MIN_CUTOFF = 15
CONVERGENCE_HZ = 1.0
ANALYTIC_PREFACTOR = 32.0


class TransmonRegimeWarning(UserWarning):
    """E_J / E_C is below the transmon regime."""


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TransmonSpec:
    """Transmon parameters in Hz.

    Either (f0, alpha) or (E_C, E_J) may be left as None and filled by
    :meth:`calibrated` or :meth:`from_energies`.
    """

    f0: float | None = None
    alpha: float | None = None
    E_C: float | None = None
    E_J: float | None = None
    n_g: float = 0.0

    def __post_init__(self):
        if self.E_C is not None and self.E_J is not None:
            if self.E_C <= 0 or self.E_J <= 0:
                raise ValueError("E_C and E_J must be positive")
            if self.xi < 20:
                warnings.warn(f"E_J/E_C = {self.xi:.1f} < 20 is outside the transmon regime",
                              TransmonRegimeWarning, stacklevel=2)

    @property
    def xi(self) -> float:
        return self.E_J / self.E_C

    @classmethod
    def calibrated(cls, f0: float, alpha: float, n_g: float = 0.0,
                   cutoff: int = DEFAULT_CUTOFF) -> "TransmonSpec":
        ec, ej, _ = calibrate_ec_ej(f0, alpha, n_g, cutoff)
        return cls(f0, alpha, ec, ej, n_g)

    @classmethod
    def from_energies(cls, E_C: float, E_J: float, n_g: float = 0.0,
                      cutoff: int = DEFAULT_CUTOFF) -> "TransmonSpec":
        e, _ = diagonalize_transmon(E_C, E_J, n_g, cutoff)
        return cls(e[1] - e[0], (e[2] - e[1]) - (e[1] - e[0]), E_C, E_J, n_g)

    def matrix_element(self, cutoff: int = DEFAULT_CUTOFF) -> float:
        return diagonalize_transmon(self.E_C, self.E_J, self.n_g, cutoff)[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["xi"] = self.xi if self.E_C and self.E_J else None
        return d


@dataclass
class TlsParams:
    """Charge-dipole TLS parameters; energies in Hz, dipole in e*Angstrom."""

    epsilon: float
    Delta: float
    f_tls: float
    d_parallel: float
    x: float
    temperature: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _eigen(E_C, E_J, n_g, cutoff, k):
    n = np.arange(-cutoff, cutoff + 1, dtype=float)
    diag = 4.0 * E_C * (n - n_g) ** 2
    off = np.full(2 * cutoff, -0.5 * E_J)
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    return w, v, n


def diagonalize_transmon(E_C: float, E_J: float, n_g: float = 0.0,
                         cutoff: int = DEFAULT_CUTOFF, n_levels: int = 3, check: bool = True):
    """Lowest eigenvalues of ``4 E_C (n - n_g)^2 - E_J cos(phi)`` in the charge basis.

    Parameters
    ----------
    E_C, E_J : float
        Energies in Hz.
    n_g : float
        Offset charge in units of 2e.
    cutoff : int
        Charge states ``-cutoff..cutoff`` are kept, >= 15.
    n_levels : int
        Number of eigenvalues returned, >= 2.
    check : bool
        Compare against ``cutoff + 5`` and raise if the lowest three levels
        move by more than 1 Hz.

    Returns
    -------
    energies : ndarray
        Eigenvalues in Hz, ascending.
    n01 : float
        ``|<0|n|1>|``.
    """
    if cutoff < MIN_CUTOFF:
        raise ValueError(f"cutoff must be >= {MIN_CUTOFF}")
    k = max(3, int(n_levels))
    w, v, n = _eigen(E_C, E_J, n_g, cutoff, k)
    if check:
        w2, _, _ = _eigen(E_C, E_J, n_g, cutoff + 5, k)
        shift = np.max(np.abs(w2[:3] - w[:3]))
        if shift > CONVERGENCE_HZ:
            raise ConvergenceError(
                f"levels moved by {shift:.3g} Hz from cutoff {cutoff} to {cutoff + 5}; "
                f"try cutoff >= {2 * cutoff}"
            )
    n01 = float(abs(v[:, 0] @ (n * v[:, 1])))
    return w[: max(2, int(n_levels))], n01


def transition_frequencies(E_C: float, E_J: float, n_g: float = 0.0,
                           cutoff: int = DEFAULT_CUTOFF, check: bool = False):
    """Return ``(f01, f12 - f01)`` in Hz."""
    e, _ = diagonalize_transmon(E_C, E_J, n_g, cutoff, 3, check)
    f01 = e[1] - e[0]
    return f01, (e[2] - e[1]) - f01


def calibrate_ec_ej(f0: float, alpha: float, n_g: float = 0.0, cutoff: int = DEFAULT_CUTOFF):
    """Find (E_C, E_J) whose spectrum has ``f01 = f0`` and ``f12 - f01 = alpha``.

    Returns
    -------
    E_C, E_J : float
        Energies in Hz.
    xi : float
        ``E_J / E_C``.
    """
    if not f0 > 0:
        raise ValueError("f0 must be positive")
    if not alpha < 0:
        raise ValueError("alpha must be negative")
    # Asymptotic transmon relations give the starting point.
    ec0 = -alpha
    ej0 = (f0 - alpha) ** 2 / (8.0 * ec0)

    def resid(p):
        ec, ej = p[0] * ec0, p[1] * ej0
        if ec <= 0 or ej <= 0:
            return np.array([1e3, 1e3])
        a, b = transition_frequencies(ec, ej, n_g, cutoff)
        return np.array([(a - f0) / abs(alpha), (b - alpha) / abs(alpha)])

    sol, info, ier, msg = fsolve(resid, [1.0, 1.0], full_output=True, xtol=1e-13)
    ec, ej = sol[0] * ec0, sol[1] * ej0
    a, b = transition_frequencies(ec, ej, n_g, cutoff, check=True) if ec > 0 and ej > 0 else (np.inf, np.inf)
    if not (abs(a - f0) <= CONVERGENCE_HZ and abs(b - alpha) <= CONVERGENCE_HZ):
        raise ConvergenceError(
            f"no (E_C, E_J) reproduces f0={f0:.6g} Hz, alpha={alpha:.6g} Hz "
            f"(searched from E_C={ec0:.4g} Hz, E_J={ej0:.4g} Hz): {msg}"
        )
    return float(ec), float(ej), float(ej / ec)


def charge_dispersion_analytic(E_C: float, xi: float, prefactor: float = ANALYTIC_PREFACTOR) -> float:
    """Asymptotic peak-to-peak charge dispersion of the 0-1 transition in Hz.

    ``prefactor * sqrt(2/pi) * E_C * (xi/2)^(3/4) * exp(-sqrt(8 xi)) * (16 sqrt(xi/2) + 1)``.
    The default prefactor 32 is the sum of the ground and first excited
    level dispersions, the quantity compared with the numerical value.
    """
    if not xi > 0:
        raise ValueError("xi must be positive")
    return float(prefactor * np.sqrt(2.0 / np.pi) * E_C * (xi / 2.0) ** 0.75
                 * np.exp(-np.sqrt(8.0 * xi)) * (16.0 * np.sqrt(xi / 2.0) + 1.0))


def charge_dispersion_numerical(E_C: float, E_J: float, cutoff: int = DEFAULT_CUTOFF) -> float:
    """``|f01(n_g = 0) - f01(n_g = 1/2)|`` in Hz."""
    a = transition_frequencies(E_C, E_J, 0.0, cutoff, check=True)[0]
    b = transition_frequencies(E_C, E_J, 0.5, cutoff, check=True)[0]
    return float(abs(a - b))


def extract_charge_offset(f_delta, f_delta_max: float):
    """Offset charge ``|n_g|`` folded into [0, 1/4] from the parity splitting.

    Returns
    -------
    n_g : ndarray
        ``arccos(f_delta / f_delta_max) / (2 pi)``.
    clipped : ndarray of bool
        Where ``f_delta`` was outside ``[0, f_delta_max]``.
    """
    if not f_delta_max > 0:
        raise ValueError("f_delta_max must be positive")
    r = np.asarray(f_delta, dtype=float) / f_delta_max
    clipped = (r < 0) | (r > 1)
    return np.arccos(np.clip(r, 0.0, 1.0)) / (2.0 * np.pi), clipped


@dataclass
class ChargeJumpStats:
    estimate: float
    uncertainty: float
    jumps: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    low_statistics: bool

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "uncertainty": self.uncertainty,
            "n_jumps": int(self.jumps.size),
            "bin_width": self.uncertainty,
            "low_statistics": self.low_statistics,
        }


def charge_jump_statistics(n_g, transition_indices, min_transitions: int = 5) -> ChargeJumpStats:
    """Typical offset-charge jump across level-2 transitions.

    For every transition index ``i`` the jump is ``|n_g[i] - n_g[i - 1]|``.
    Jumps are binned by the Freedman-Diaconis rule; the estimate is the
    centre of the most populated bin and the uncertainty its width.
    """
    x = np.asarray(n_g, dtype=float)
    idx = np.asarray(transition_indices, dtype=int)
    idx = idx[(idx > 0) & (idx < x.size)]
    jumps = np.abs(x[idx] - x[idx - 1])
    jumps = jumps[np.isfinite(jumps)]
    low = jumps.size < min_transitions
    if jumps.size == 0:
        return ChargeJumpStats(np.nan, np.nan, jumps, np.array([]), np.array([]), True)
    if np.ptp(jumps) == 0:
        v = float(jumps[0])
        return ChargeJumpStats(v, 0.0, jumps, np.array([v, v]), np.array([jumps.size]), low)
    edges = np.histogram_bin_edges(jumps, bins="fd")
    counts, edges = np.histogram(jumps, bins=edges)
    k = int(np.argmax(counts))
    return ChargeJumpStats(float(0.5 * (edges[k] + edges[k + 1])), float(edges[k + 1] - edges[k]),
                           jumps, edges, counts, low)


def tls_energy_from_rates(nu_10, nu_01, temperature):
    """TLS frequency in Hz from detailed balance, ``h f = k_B T ln(nu_10 / nu_01)``.

    Rates are swapped with a warning when ``nu_10 < nu_01``.
    """
    nu_10 = float(nu_10)
    nu_01 = float(nu_01)
    if not (nu_10 > 0 and nu_01 > 0):
        raise ValueError("rates must be positive")
    if nu_10 < nu_01:
        warnings.warn("nu_10 < nu_01; swapping so that the excited state relaxes faster",
                      stacklevel=2)
        nu_10, nu_01 = nu_01, nu_10
    return BOLTZMANN_K * np.asarray(temperature, dtype=float) * np.log(nu_10 / nu_01) / PLANCK_H


def forward_tls_model(epsilon: float, Delta: float, d_parallel: float, x: float,
                      f0: float, alpha: float, E_C: float, n01: float):
    """Offset-charge jump and dispersive shift caused by a TLS.

    Parameters
    ----------
    epsilon, Delta : float
        TLS asymmetry and tunnelling energies in Hz.
    d_parallel : float
        Dipole component along the junction field in e*Angstrom.
    x : float
        Junction barrier thickness in m.
    f0, alpha, E_C : float
        Qubit frequency, anharmonicity and charging energy in Hz.
    n01 : float
        ``|<0|n|1>|``.

    Returns
    -------
    delta_ng, f_delta : float
        ``|delta n_g|`` and the magnitude of the qubit frequency shift in Hz.
    """
    f_tls = np.hypot(epsilon, Delta)
    a = d_parallel * ANGSTROM / x
    dng = a / 8.0 * np.sqrt(f0 / E_C) * epsilon / f_tls
    fd = (a * n01 * Delta / f_tls) ** 2 * E_C * f0 / (2.0 * abs(f0 + alpha - f_tls))
    return float(dng), float(fd)


def invert_tls_model(delta_ng: float, f_delta: float, f_tls: float, x: float,
                     f0: float, alpha: float, E_C: float, n01: float,
                     temperature: float | None = None) -> TlsParams:
    """Solve the forward TLS model for (epsilon, Delta, d_parallel).

    With ``a = d / (e x)`` and ``cos(theta) = epsilon / (h f_TLS)`` the two
    observables give ``a cos(theta) = P`` and ``a^2 sin(theta)^2 = Q``, so
    ``a^2 = P^2 + Q`` has a single non-negative root.
    """
    if not delta_ng > 0:
        raise ValueError("|delta n_g| must be positive")
    if not f_delta > 0:
        raise ValueError("f_Delta must be positive")
    if not f_tls > 0:
        raise ValueError("f_TLS must be positive")
    detune = abs(f0 + alpha - f_tls)
    if detune == 0:
        raise ValueError("TLS is resonant with the 1-2 transition (f0 + alpha - f_TLS = 0)")
    p = 8.0 * delta_ng * np.sqrt(E_C / f0)
    q = 2.0 * f_delta * detune / (n01**2 * E_C * f0)
    a = np.sqrt(p * p + q)
    c = p / a
    s = np.sqrt(q) / a
    return TlsParams(float(c * f_tls), float(s * f_tls), float(f_tls),
                     float(a * x / ANGSTROM), float(x), temperature)


def tls_parameter_ranges(delta_ng: float, f_delta: float, nu_10: float, nu_01: float,
                         transmon: TransmonSpec, x_range=(1e-9, 2e-9),
                         t_range=(0.01, 0.1), n_grid: int = 11) -> dict:
    """Min and max of the TLS parameters over a grid of thickness and temperature."""
    n01 = transmon.matrix_element()
    rows = []
    for x in np.linspace(*x_range, n_grid):
        for temp in np.linspace(*t_range, n_grid):
            f_tls = float(tls_energy_from_rates(nu_10, nu_01, temp))
            rows.append(invert_tls_model(delta_ng, f_delta, f_tls, x, transmon.f0,
                                         transmon.alpha, transmon.E_C, n01, temp))
    out = {}
    for key in ("f_tls", "Delta", "epsilon", "d_parallel"):
        v = np.array([getattr(r, key) for r in rows])
        out[key] = (float(v.min()), float(v.max()))
    return out
