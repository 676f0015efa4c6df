"""Normalized-correlation baselines: TDNC for detection, FDNC for refinement."""

from __future__ import annotations

import enum

import numpy as np

from .glrt import DEGENERATE_DENOMINATOR, DegenerateInputError, EstimatorConfig, FineResult, fine_estimate
from .waveforms import SyncWaveform

__all__ = ["BaselineKind", "tdnc_score", "fdnc_score", "FdncScorer", "fdnc_fine_estimate"]


class BaselineKind(enum.Enum):
    TDNC = "tdnc"
    FDNC = "fdnc"


def _energy(Y: np.ndarray) -> float:
    e = float(np.vdot(Y, Y).real)
    if not e > DEGENERATE_DENOMINATOR:
        raise DegenerateInputError("window carries no energy")
    return e


def tdnc_score(Y: np.ndarray, waveform: SyncWaveform, squared: bool = True) -> float:
    """``||Y x0*||^2 / ||Y||_F^2`` on a time-domain window.

    ``squared=False`` gives the unsquared-numerator variant
    ``||Y x0*|| / ||Y||_F^2``; it is not scale invariant.
    """
    c = Y @ np.conj(waveform.base_samples)
    num = float(np.vdot(c, c).real)
    if not squared:
        num = np.sqrt(num)
    return num / _energy(Y)


def fdnc_score(Yf: np.ndarray, tau: float, waveform: SyncWaveform) -> float:
    """``||Yf conj(x~(tau))||^2 / ||Yf||_F^2`` on a frequency-domain window."""
    c = Yf @ np.conj(waveform.template(tau).freq_vector)
    return float(np.vdot(c, c).real) / _energy(Yf)


class FdncScorer:
    """Batched FDNC objective with the same interface as :class:`GlrtScorer`."""

    def __init__(self, Yf: np.ndarray, waveform: SyncWaveform):
        self.Yf = Yf
        self.waveform = waveform
        self.energy = _energy(Yf)
        self.scale = waveform.energy / self.energy
        self.evaluations = 0
        # noise only: each antenna contributes N0 to the numerator and N*N0 to the energy
        self.noise_level = waveform.energy / Yf.shape[1]

    def _corr(self, taus):
        u = self.waveform.unit_templates(taus)
        self.evaluations += len(u)
        return u, u @ self.Yf.T

    def score(self, taus) -> np.ndarray:
        _, z = self._corr(taus)
        return self.scale * np.sum(np.abs(z) ** 2, axis=1)

    def score_and_derivative(self, taus):
        u, z = self._corr(taus)
        dz = (u * (1j * self.waveform.freq_bins)[None, :]) @ self.Yf.T
        s = self.scale * np.sum(np.abs(z) ** 2, axis=1)
        ds = 2.0 * self.scale * np.sum(np.real(z.conj() * dz), axis=1)
        return s, ds


def fdnc_fine_estimate(Yf: np.ndarray, config: EstimatorConfig, waveform: SyncWaveform) -> FineResult:
    """Fine stage with the FDNC objective and the unchanged bracket + GSS search."""
    return fine_estimate(Yf, config, waveform, method="fdnc")
