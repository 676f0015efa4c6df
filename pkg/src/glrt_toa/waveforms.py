"""Synchronization/interference waveforms and their DFT-domain delay templates.

All delays and periods are in seconds.  The DFT is the unitary one
(``norm="ortho"``) throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "PulseShape",
    "SyncWaveform",
    "DelayTemplate",
    "zadoff_chu",
    "rrc_eval",
    "shaped_eval",
    "sample_delayed",
    "dft_indices",
    "phase_ramp",
    "freq_template",
    "udft",
    "iudft",
]

# |x| below this (in units of T_sym) is treated as a singular point of the RRC
_SINGULAR_TOL = 1e-9


def zadoff_chu(K: int, u: int) -> np.ndarray:
    """Odd-length Zadoff-Chu root sequence ``exp(-j*pi*u*k*(k+1)/K)``.

    Raises
    ------
    ValueError
        If ``K`` is not a positive odd integer or ``u`` is not coprime with ``K``.
    """
    if K < 1 or K % 2 == 0:
        raise ValueError(f"Zadoff-Chu length must be odd and positive, got {K}")
    if math.gcd(u, K) != 1:
        raise ValueError(f"root index {u} is not coprime with {K}")
    k = np.arange(K)
    # reduce the exponent modulo 2K before scaling to keep the phase exact
    phase = (u * k * (k + 1)) % (2 * K)
    return np.exp(-1j * np.pi * phase / K)


def rrc_eval(t, beta: float, T_sym: float):
    """Unit-energy root-raised-cosine impulse response centred at ``t = 0``.

    The removable singularities at ``t = 0`` and ``t = +-T_sym/(4*beta)`` are
    replaced by their analytic limits.  No truncation is applied here.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"rolloff must lie in (0, 1], got {beta}")
    scalar = np.ndim(t) == 0
    x = np.atleast_1d(np.asarray(t, dtype=float)) / T_sym
    out = np.empty_like(x)

    at_zero = np.abs(x) < _SINGULAR_TOL
    at_edge = np.abs(np.abs(4.0 * beta * x) - 1.0) < _SINGULAR_TOL
    regular = ~(at_zero | at_edge)

    xr = x[regular]
    num = np.sin(np.pi * xr * (1.0 - beta)) + 4.0 * beta * xr * np.cos(np.pi * xr * (1.0 + beta))
    den = np.pi * xr * (1.0 - (4.0 * beta * xr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    out[at_edge] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    out /= np.sqrt(T_sym)
    return float(out[0]) if scalar else out


_WINDOWS = ("hann", "rect")


@dataclass(frozen=True)
class PulseShape:
    """RRC pulse truncated to ``span`` symbols, support ``[0, span*T_sym]``.

    ``window="hann"`` tapers the truncated response to zero at both ends.  A
    hard (``"rect"``) truncation leaves a jump of about 1% of the peak at every
    symbol edge; the resulting out-of-band energy makes DFT-domain fractional
    delays disagree with the true delayed waveform at the 1e-2 level.
    """

    rolloff: float = 0.3
    span: int = 9
    symbol_period: float = 1e-8
    window: str = "hann"

    def __post_init__(self):
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError(f"rolloff must lie in (0, 1], got {self.rolloff}")
        if self.span < 1:
            raise ValueError("span must be at least one symbol")
        if self.window not in _WINDOWS:
            raise ValueError(f"window must be one of {_WINDOWS}, got {self.window!r}")

    @property
    def support(self) -> tuple[float, float]:
        return 0.0, self.span * self.symbol_period

    def eval_symbols(self, x):
        """Pulse value at ``x`` symbol periods after its start."""
        x = np.asarray(x, dtype=float)
        R = self.span
        vals = rrc_eval(x - 0.5 * R, self.rolloff, 1.0) / np.sqrt(self.symbol_period)
        if self.window == "hann":
            vals = vals * np.sin(np.pi * x / R) ** 2
        return np.where((x >= 0.0) & (x <= R), vals, 0.0)

    def __call__(self, t):
        return self.eval_symbols(np.asarray(t, dtype=float) / self.symbol_period)


def _shaped_symbols(seq: np.ndarray, pulse: PulseShape, x: np.ndarray, periodic: bool) -> np.ndarray:
    # every instant sums over the same R+1 candidate symbols, so a sample's
    # value does not depend on which other instants share the call
    K = seq.size
    base = np.floor(x).astype(np.int64)
    k = base[:, None] - np.arange(pulse.span + 1)[None, :]
    g = pulse.eval_symbols(x[:, None] - k)
    if periodic:
        coef = seq[np.mod(k, K)]
    else:
        coef = np.where((k >= 0) & (k < K), seq[np.clip(k, 0, K - 1)], 0.0)
    return (coef * g).sum(axis=1)


def shaped_eval(seq: np.ndarray, pulse: PulseShape, t, periodic: bool = False):
    """Continuous-time pulse-shaped signal ``sum_k seq[k] g(t - k*T_sym)``.

    With ``periodic=True`` the sequence repeats forever in both directions.
    """
    seq = np.asarray(seq, dtype=complex)
    scalar = np.ndim(t) == 0
    x = np.atleast_1d(np.asarray(t, dtype=float)) / pulse.symbol_period
    out = _shaped_symbols(seq, pulse, x, periodic)
    return complex(out[0]) if scalar else out


def sample_delayed(waveform: "SyncWaveform", tau: float, N: int, T_s: float | None = None,
                   start: int = 0) -> np.ndarray:
    """Samples ``x(l*T_s - tau)`` for ``l = start, ..., start+N-1``.

    Time is formed in sample units, so delays that are whole multiples of
    ``T_s`` shift the sample grid exactly.
    """
    if N < 1:
        raise ValueError("N must be positive")
    T_s = waveform.sample_period if T_s is None else T_s
    steps = np.arange(start, start + N, dtype=np.int64) - tau / T_s
    x = steps * (T_s / waveform.symbol_period)
    return _shaped_symbols(waveform.sequence, waveform.pulse, x, waveform.periodic)


def dft_indices(N: int) -> np.ndarray:
    """Signed frequency index of each DFT bin (FFT ordering)."""
    if N < 1:
        raise ValueError("N must be positive")
    m = np.arange(N)
    return np.where(m <= (N - 1) // 2, m, m - N)


def phase_ramp(tau: float, N: int, T_s: float) -> np.ndarray:
    """Per-bin phase rotation implementing a delay of ``tau`` seconds."""
    return np.exp(-2j * np.pi * dft_indices(N) * (tau / (N * T_s)))


def udft(x, axis: int = -1):
    return np.fft.fft(x, axis=axis, norm="ortho")


def iudft(x, axis: int = -1):
    return np.fft.ifft(x, axis=axis, norm="ortho")


@dataclass(frozen=True)
class DelayTemplate:
    """Frequency-domain synchronization template at a window offset ``tau``.

    ``unit_freq_vector`` is the normalised *conjugate* template, so that
    ``Y @ unit_freq_vector`` correlates the window rows with the delayed signal
    and ``u u^H`` projects onto the span of the signal row.
    """

    tau: float
    freq_vector: np.ndarray
    unit_freq_vector: np.ndarray

    @property
    def time_vector(self) -> np.ndarray:
        return iudft(self.freq_vector)


def freq_template(base_dft: np.ndarray, tau: float, T_s: float,
                  max_delay: float | None = None) -> DelayTemplate:
    """Delay ``base_dft`` (the DFT of the undelayed samples) by ``tau``.

    ``max_delay`` bounds the no-wrap range ``[0, max_delay]``; delays outside
    it would wrap the signal around the window and are rejected.
    """
    N = base_dft.size
    if max_delay is not None:
        slack = 1e-9 * T_s
        if not (-slack <= tau <= max_delay + slack):
            raise ValueError(
                f"delay {tau / T_s:.4g} samples outside the no-wrap range [0, {max_delay / T_s:.4g}]"
            )
    xf = base_dft * phase_ramp(tau, N, T_s)
    u = np.conj(xf) / np.linalg.norm(xf)
    return DelayTemplate(tau=tau, freq_vector=xf, unit_freq_vector=u)


@dataclass(frozen=True)
class SyncWaveform:
    """A known pulse-shaped sequence together with the receiver's sampling setup.

    ``periodic=True`` turns it into an endlessly repeating signal, which is how
    the interferer is modelled.
    """

    sequence: np.ndarray
    pulse: PulseShape = field(default_factory=PulseShape)
    oversampling: int = 2
    pad: int = 8
    periodic: bool = False

    def __post_init__(self):
        if self.oversampling < 1:
            raise ValueError("oversampling must be a positive integer")
        if self.pad < 0:
            raise ValueError("pad must be nonnegative")
        seq = np.asarray(self.sequence, dtype=complex)
        seq.setflags(write=False)
        object.__setattr__(self, "sequence", seq)

    @classmethod
    def zadoff_chu(cls, K: int = 63, root: int = 25, rolloff: float = 0.3, span: int = 9,
                   oversampling: int = 2, pad: int = 8, symbol_period: float = 1e-8,
                   periodic: bool = False, window: str = "hann") -> "SyncWaveform":
        pulse = PulseShape(rolloff=rolloff, span=span, symbol_period=symbol_period, window=window)
        return cls(zadoff_chu(K, root), pulse, oversampling, pad, periodic)

    @property
    def K(self) -> int:
        return self.sequence.size

    @property
    def symbol_period(self) -> float:
        return self.pulse.symbol_period

    @property
    def sample_period(self) -> float:
        return self.pulse.symbol_period / self.oversampling

    @property
    def window_length(self) -> int:
        return self.oversampling * (self.K + self.pulse.span - 1) + self.pad

    @property
    def max_delay(self) -> float:
        """Largest in-window offset for which the DFT shift is a true delay."""
        return self.pad * self.sample_period

    def __call__(self, t):
        return shaped_eval(self.sequence, self.pulse, t, periodic=self.periodic)

    def sample(self, tau: float = 0.0, N: int | None = None, start: int = 0) -> np.ndarray:
        N = self.window_length if N is None else N
        return sample_delayed(self, tau, N, self.sample_period, start=start)

    @cached_property
    def base_samples(self) -> np.ndarray:
        x = self.sample(0.0)
        x.setflags(write=False)
        return x

    @cached_property
    def base_dft(self) -> np.ndarray:
        xf = udft(self.base_samples)
        xf.setflags(write=False)
        return xf

    @cached_property
    def energy(self) -> float:
        """``||x_{S,0}||^2`` over one window."""
        return float(np.vdot(self.base_samples, self.base_samples).real)

    @cached_property
    def freq_bins(self) -> np.ndarray:
        """Angular rate of each bin's phase per second of delay: ``2*pi*k_m/(N*T_s)``."""
        N = self.window_length
        w = 2.0 * np.pi * dft_indices(N) / (N * self.sample_period)
        w.setflags(write=False)
        return w

    def template(self, tau: float) -> DelayTemplate:
        return freq_template(self.base_dft, tau, self.sample_period, self.max_delay)

    def unit_templates(self, taus) -> np.ndarray:
        """Stacked conjugate unit templates for many delays, shape ``(len(taus), N)``."""
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        slack = 1e-9 * self.sample_period
        if np.any(taus < -slack) or np.any(taus > self.max_delay + slack):
            raise ValueError("delay outside the no-wrap range of the window")
        ramp = np.exp(-1j * np.outer(taus, self.freq_bins))
        xf = self.base_dft[None, :] * ramp
        return np.conj(xf) / np.sqrt(self.energy)
