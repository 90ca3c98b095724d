"""Synthetic binary measurement streams with known noise parameters.

A sequence repetition executes one circuit per (idle time, basis) pair in the
order ``tau_1 X, tau_1 Y, tau_1 Z, tau_2 X, ...``. Every circuit outcome is a
Bernoulli draw whose success probability is the closed-form Markovian model
evaluated with the noise parameters active at that repetition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .constants import DEFAULT_IDLE_TIMES, T_OTHER_DEFAULT

BASES = ("X", "Y", "Z")


class ScheduleGapError(ValueError):
    """Raised when a noise schedule does not cover every repetition."""


class TimestampFallbackWarning(UserWarning):
    """Script metadata was missing and uniform spacing was used instead."""


@dataclass(frozen=True)
class ExperimentPlan:
    """Layout of a cyclic noise-characterisation experiment.

    Parameters
    ----------
    idle_times : array_like
        Strictly increasing idle durations in seconds, first value >= 0.
    bases : tuple of str
        Measurement bases in execution order.
    n_repetitions : int
        Sequence repetitions per script.
    n_scripts : int
        Number of scripts (jobs) executed back to back.
    t_other : float
        Gate, readout and reset overhead per circuit in seconds.
    script_start_times, script_durations : array_like, optional
        Reported wall-clock start time and duration of every script.
    """

    idle_times: np.ndarray = field(default_factory=lambda: DEFAULT_IDLE_TIMES.copy())
    bases: tuple = BASES
    n_repetitions: int = 20_000
    n_scripts: int = 1
    t_other: float = T_OTHER_DEFAULT
    script_start_times: np.ndarray | None = None
    script_durations: np.ndarray | None = None

    def __post_init__(self):
        tau = np.asarray(self.idle_times, dtype=float)
        object.__setattr__(self, "idle_times", tau)
        object.__setattr__(self, "bases", tuple(self.bases))
        if tau.ndim != 1 or tau.size == 0:
            raise ValueError("idle_times must be a non-empty 1-d sequence")
        if tau[0] < 0 or np.any(np.diff(tau) <= 0):
            raise ValueError("idle_times must be strictly increasing and start at >= 0")
        if not set(self.bases) <= set(BASES) or len(set(self.bases)) != len(self.bases):
            raise ValueError(f"bases must be distinct members of {BASES}")
        if self.n_repetitions < 1 or self.n_scripts < 1:
            raise ValueError("n_repetitions and n_scripts must be >= 1")
        if self.t_other < 0:
            raise ValueError("t_other must be >= 0")
        for name in ("script_start_times", "script_durations"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != (self.n_scripts,):
                    raise ValueError(f"{name} must have one entry per script")
                object.__setattr__(self, name, val)
        if self.sequence_duration <= 0:
            raise ValueError("sequence duration must be positive")

    @property
    def n_tau(self) -> int:
        return self.idle_times.size

    @property
    def n_circuits(self) -> int:
        """Circuits per sequence repetition, ``len(bases) * n_tau``."""
        return len(self.bases) * self.n_tau

    @property
    def sequence_duration(self) -> float:
        """Duration of one sequence repetition in seconds."""
        return float(len(self.bases) * np.sum(self.idle_times + self.t_other))

    @property
    def total_repetitions(self) -> int:
        return self.n_repetitions * self.n_scripts

    def to_dict(self) -> dict:
        d = {
            "idle_times": self.idle_times.tolist(),
            "bases": list(self.bases),
            "n_repetitions": int(self.n_repetitions),
            "n_scripts": int(self.n_scripts),
            "t_other": float(self.t_other),
            "script_start_times": None,
            "script_durations": None,
        }
        if self.script_start_times is not None:
            d["script_start_times"] = self.script_start_times.tolist()
        if self.script_durations is not None:
            d["script_durations"] = self.script_durations.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        return cls(**d)


@dataclass(frozen=True)
class NoiseParams:
    """Markovian noise parameters at one repetition.

    Rates are inverse times in s^-1 without a factor of 2 pi.
    """

    delta_f: float
    gamma_1: float
    gamma_phi: float

    def __post_init__(self):
        if self.gamma_1 < 0 or self.gamma_phi < 0:
            raise ValueError("gamma_1 and gamma_phi must be >= 0")


class MeasurementRecord(NamedTuple):
    script: int
    repetition: int
    tau_index: int
    tau_s: float
    basis: str
    outcome: int
    t_s: float


def closed_form_probability(delta_f, gamma_1, gamma_phi, tau, basis):
    """Probability of measuring the initial state after an idle time.

    Parameters
    ----------
    delta_f, gamma_1, gamma_phi : float or ndarray
        Detuning in Hz and rates in s^-1. Arrays broadcast against ``tau``.
    tau : float or ndarray
        Idle time in seconds.
    basis : {"X", "Y", "Z"}

    Returns
    -------
    p : float or ndarray
        Values in [0, 1].
    """
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}")
    tau = np.asarray(tau, dtype=float)
    if basis == "Z":
        p = 1.0 - 0.5 * np.exp(-np.asarray(gamma_1) * tau)
    else:
        decay = np.exp(-(0.5 * np.asarray(gamma_1) + np.asarray(gamma_phi)) * tau)
        phase = 2.0 * np.pi * np.asarray(delta_f) * tau
        osc = np.sin(phase) if basis == "X" else np.cos(phase)
        p = 0.5 * (1.0 - decay * osc)
    return p[()] if isinstance(p, np.ndarray) else p


def probability_table(delta_f, gamma_1, gamma_phi, idle_times, bases=BASES):
    """Evaluate the model for arrays of parameters.

    Returns an array of shape ``(n, n_tau, n_bases)`` for parameter arrays of
    length ``n``.
    """
    df = np.atleast_1d(np.asarray(delta_f, dtype=float))[:, None]
    g1 = np.atleast_1d(np.asarray(gamma_1, dtype=float))[:, None]
    gp = np.atleast_1d(np.asarray(gamma_phi, dtype=float))[:, None]
    n = max(df.shape[0], g1.shape[0], gp.shape[0])
    tau = np.asarray(idle_times, dtype=float)[None, :]
    out = np.empty((n, tau.shape[1], len(bases)))
    for k, b in enumerate(bases):
        out[:, :, k] = closed_form_probability(df, g1, gp, tau, b)
    return out


@dataclass(frozen=True)
class RtnProcessSpec:
    """Two-state random telegraph process.

    Parameters
    ----------
    mode : {"probability", "rate"}
        ``"probability"`` flips with probability ``switch_probability`` at
        every step. ``"rate"`` uses exponential dwell times in continuous time
        with rates ``rate_01`` (from s=-1 to s=+1) and ``rate_10``.
    amplitude : float or sequence of (start_step, value)
        Fluctuation magnitude f_Delta in Hz, optionally piecewise constant.
    centre : float
        Offset contribution in Hz.
    seed : int
    """

    mode: str = "probability"
    switch_probability: float = 0.05
    rate_01: float = 1.0
    rate_10: float = 1.0
    amplitude: float | Sequence = 0.0
    centre: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("probability", "rate"):
            raise ValueError("mode must be 'probability' or 'rate'")
        if not 0.0 <= self.switch_probability <= 1.0:
            raise ValueError("switch_probability must lie in [0, 1]")
        if self.rate_01 < 0 or self.rate_10 < 0:
            raise ValueError("rates must be >= 0")

    def amplitude_at(self, n_steps: int) -> np.ndarray:
        """Per-step amplitude array."""
        if np.isscalar(self.amplitude):
            return np.full(n_steps, float(self.amplitude))
        out = np.empty(n_steps)
        pieces = sorted((int(s), float(v)) for s, v in self.amplitude)
        if not pieces or pieces[0][0] > 0:
            raise ValueError("piecewise amplitude must start at step 0")
        for k, (start, val) in enumerate(pieces):
            stop = pieces[k + 1][0] if k + 1 < len(pieces) else n_steps
            out[start:stop] = val
        return out


def _initial_state(spec: RtnProcessSpec, rng: np.random.Generator) -> int:
    if spec.mode == "rate" and spec.rate_01 + spec.rate_10 > 0:
        p_up = spec.rate_01 / (spec.rate_01 + spec.rate_10)
    else:
        p_up = 0.5
    return 1 if rng.random() < p_up else -1


def rtn_switch_times(spec: RtnProcessSpec, t_end: float, rng=None):
    """Continuous-time switch instants of a rate-mode process on [0, t_end].

    Returns
    -------
    s0 : int
        State at t = 0.
    switches : ndarray
        Sorted switch times. The dwell in state -1 is exponential with rate
        ``rate_01``; the dwell in +1 with rate ``rate_10``.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    s0 = _initial_state(spec, rng)
    rates = {-1: spec.rate_01, 1: spec.rate_10}
    times = []
    t, s = 0.0, s0
    chunk = max(16, int(2 * t_end * max(spec.rate_01, spec.rate_10)) + 16)
    while True:
        e = rng.standard_exponential(chunk)
        for x in e:
            r = rates[s]
            if r <= 0:
                return s0, np.asarray(times)
            t += x / r
            if t > t_end:
                return s0, np.asarray(times)
            times.append(t)
            s = -s


def generate_rtn_states(spec: RtnProcessSpec, n_steps: int, times=None) -> np.ndarray:
    """Sample a state sequence s in {-1, +1}.

    Parameters
    ----------
    spec : RtnProcessSpec
    n_steps : int
    times : array_like, optional
        Step times in seconds for rate mode. Defaults to ``arange(n_steps)``.

    Returns
    -------
    s : ndarray of int8
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "probability":
        s0 = _initial_state(spec, rng)
        flips = rng.random(n_steps - 1) < spec.switch_probability
        parity = np.concatenate(([0], np.cumsum(flips) % 2))
        return (s0 * (1 - 2 * parity)).astype(np.int8)
    t = np.arange(n_steps, dtype=float) if times is None else np.asarray(times, float)
    if t.shape != (n_steps,):
        raise ValueError("times must have length n_steps")
    s0, sw = rtn_switch_times(spec, float(t[-1] - t[0]), rng)
    n_sw = np.searchsorted(sw, t - t[0], side="right")
    return (s0 * (1 - 2 * (n_sw % 2))).astype(np.int8)


def rtn_hierarchy_detuning(specs, n_steps, times=None, centre=0.0):
    """Composite detuning ``centre + sum_n s_n * f_Delta_n / 2``.

    Returns
    -------
    detuning : ndarray
    states : list of ndarray
        State sequence of every level.
    """
    total = np.full(n_steps, float(centre))
    states = []
    for spec in specs:
        s = generate_rtn_states(spec, n_steps, times)
        total += spec.centre + 0.5 * s * spec.amplitude_at(n_steps)
        states.append(s)
    return total, states


@dataclass
class NoiseSchedule:
    """Piecewise-constant noise parameters indexed by global repetition."""

    delta_f: np.ndarray
    gamma_1: np.ndarray
    gamma_phi: np.ndarray

    def __post_init__(self):
        n = max(np.size(self.delta_f), np.size(self.gamma_1), np.size(self.gamma_phi))
        self.delta_f, self.gamma_1, self.gamma_phi = (
            np.broadcast_to(np.asarray(a, dtype=float), (n,)).copy()
            for a in (self.delta_f, self.gamma_1, self.gamma_phi)
        )
        if np.any(self.gamma_1 < 0) or np.any(self.gamma_phi < 0):
            raise ValueError("rates must be >= 0")

    def __len__(self):
        return self.delta_f.size

    @classmethod
    def constant(cls, params: NoiseParams, n: int) -> "NoiseSchedule":
        return cls(
            np.full(n, params.delta_f), np.full(n, params.gamma_1), np.full(n, params.gamma_phi)
        )

    def to_dict(self) -> dict:
        return {
            "delta_f": self.delta_f.tolist(),
            "gamma_1": self.gamma_1.tolist(),
            "gamma_phi": self.gamma_phi.tolist(),
        }


@dataclass
class RecordTable:
    """Dense store of emulated or ingested outcomes.

    ``outcomes[r, i, k]`` is the bit for repetition ``r``, idle-time index
    ``i`` and basis ``plan.bases[k]``.
    """

    plan: ExperimentPlan
    outcomes: np.ndarray
    times: np.ndarray
    timestamp_fallback: bool = False
    truth: NoiseSchedule | None = None

    @property
    def script(self) -> np.ndarray:
        return np.arange(self.outcomes.shape[0]) // self.plan.n_repetitions

    def iter_records(self) -> Iterator[MeasurementRecord]:
        """Yield records in execution order."""
        tau = self.plan.idle_times
        nrep = self.plan.n_repetitions
        for r in range(self.outcomes.shape[0]):
            for i in range(self.plan.n_tau):
                for k, b in enumerate(self.plan.bases):
                    yield MeasurementRecord(
                        r // nrep, r, i, float(tau[i]), b, int(self.outcomes[r, i, k]), float(self.times[r])
                    )

    def to_frame(self):
        """Long-format table with one row per circuit execution."""
        import pandas as pd

        n_rep, n_tau, n_b = self.outcomes.shape
        r = np.repeat(np.arange(n_rep), n_tau * n_b)
        i = np.tile(np.repeat(np.arange(n_tau), n_b), n_rep)
        k = np.tile(np.arange(n_b), n_rep * n_tau)
        return pd.DataFrame(
            {
                "script": r // self.plan.n_repetitions,
                "repetition": r,
                "tau_index": i,
                "tau_s": self.plan.idle_times[i],
                "basis": np.asarray(self.plan.bases)[k],
                "outcome": self.outcomes.reshape(-1).astype(np.int8),
                "t_s": self.times[r],
            }
        )


def reconstruct_timestamps(plan: ExperimentPlan, start_times=None, durations=None):
    """Wall-clock time of every sequence repetition.

    Within script ``j`` repetition ``k`` (0-based) occurs at
    ``T_j - T_0 + k * D_j / N_s``. Without script metadata the repetitions are
    spaced uniformly by the sequence duration and a warning is issued.

    Returns
    -------
    t : ndarray
        Shape ``(n_scripts * n_repetitions,)``.
    fallback : bool
        True when uniform spacing was used.
    """
    start = plan.script_start_times if start_times is None else np.asarray(start_times, float)
    dur = plan.script_durations if durations is None else np.asarray(durations, float)
    ns = plan.n_repetitions
    k = np.arange(ns, dtype=float)
    missing = (
        start is None
        or dur is None
        or np.size(start) != plan.n_scripts
        or np.size(dur) != plan.n_scripts
        or not np.all(np.isfinite(start))
        or not np.all(np.isfinite(dur))
    )
    if missing:
        warnings.warn(
            "script start times or durations missing; using uniform spacing",
            TimestampFallbackWarning,
            stacklevel=2,
        )
        return np.arange(plan.total_repetitions) * plan.sequence_duration, True
    start = np.asarray(start, float)
    dur = np.asarray(dur, float)
    if np.any(dur <= 0):
        raise ValueError("script durations must be positive")
    t = (start - start[0])[:, None] + k[None, :] * (dur / ns)[:, None]
    return t.reshape(-1), False


def emulate_experiment(plan: ExperimentPlan, schedule: NoiseSchedule, seed: int = 0) -> RecordTable:
    """Draw one Bernoulli outcome per circuit execution.

    Parameters
    ----------
    plan : ExperimentPlan
    schedule : NoiseSchedule
        Must cover all ``plan.total_repetitions`` repetitions.
    seed : int
        Root seed. Each script gets an independent Philox stream spawned from
        it, so scripts can be generated in any order.

    Returns
    -------
    RecordTable
    """
    n_total = plan.total_repetitions
    if len(schedule) < n_total:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TimestampFallbackWarning)
            t, _ = reconstruct_timestamps(plan)
        lo = len(schedule)
        raise ScheduleGapError(
            f"schedule covers repetitions [0, {lo}) but the plan has {n_total}; "
            f"uncovered span is repetitions {lo}..{n_total - 1} "
            f"(t = {t[lo]:.6g} s to {t[-1]:.6g} s)"
        )
    # Synthetic plans usually lack script metadata; the fallback is recorded
    # on the table instead of warned about.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TimestampFallbackWarning)
        times, fallback = reconstruct_timestamps(plan)
    children = np.random.SeedSequence(seed).spawn(plan.n_scripts)
    ns = plan.n_repetitions
    out = np.empty((n_total, plan.n_tau, len(plan.bases)), dtype=np.uint8)
    for j, child in enumerate(children):
        sl = slice(j * ns, (j + 1) * ns)
        p = probability_table(
            schedule.delta_f[sl], schedule.gamma_1[sl], schedule.gamma_phi[sl],
            plan.idle_times, plan.bases,
        )
        rng = np.random.Generator(np.random.Philox(child))
        out[sl] = rng.random(p.shape) < p
    truth = NoiseSchedule(
        schedule.delta_f[:n_total], schedule.gamma_1[:n_total], schedule.gamma_phi[:n_total]
    )
    return RecordTable(plan, out, times, fallback, truth)
