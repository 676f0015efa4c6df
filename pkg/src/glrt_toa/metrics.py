"""Evaluation metrics: coarse-stage ROC/AUC, fine-stage error CDFs, delay resolvability."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ArrayGeometry, Mpc, MultipathScenario, calibrate_powers, synth_window
from .glrt import GlrtScorer, sign_change_brackets
from .parallel import ordered_map, trial_noise_seed, trial_rng
from .waveforms import SyncWaveform

__all__ = [
    "CoarseClass",
    "CoarseTrialOutcome",
    "RocCurve",
    "FineErrorSample",
    "ErrorCdf",
    "ResolvabilityTable",
    "classify_coarse",
    "roc_curve",
    "auc",
    "auc_sigma",
    "error_cdf",
    "paired_bootstrap_median_diff",
    "two_path_scenario",
    "count_maxima",
    "resolvability_sweep",
    "separation_at",
    "j_max",
    "RESOLVABILITY_ANGLES",
]


class CoarseClass(enum.Enum):
    CORRECT = "correct"
    FALSE_ALARM = "false_alarm"
    MISS = "miss"


@dataclass
class CoarseTrialOutcome:
    """Coarse scores of consecutive windows ``first_index, first_index+1, ...``.

    ``true_index`` is the window in which the first sync path starts.
    """

    true_index: int
    trace: np.ndarray
    first_index: int = 0

    def __post_init__(self):
        self.trace = np.asarray(self.trace, dtype=float)

    def detected(self, threshold: float) -> Optional[int]:
        hit = np.flatnonzero(self.trace > threshold)
        return None if hit.size == 0 else self.first_index + int(hit[0])

    def _split(self) -> tuple[float, float]:
        # best score before the tolerance band, best score inside it
        idx = self.first_index + np.arange(self.trace.size)
        pre = self.trace[idx < self.true_index - 1]
        band = self.trace[np.abs(idx - self.true_index) <= 1]
        return (pre.max() if pre.size else -math.inf, band.max() if band.size else -math.inf)


def classify_coarse(outcome: CoarseTrialOutcome, threshold: float) -> CoarseClass:
    """Correct if the first exceedance is within one window of the truth."""
    hit = outcome.detected(threshold)
    if hit is None or hit > outcome.true_index + 1:
        return CoarseClass.MISS
    if hit < outcome.true_index - 1:
        return CoarseClass.FALSE_ALARM
    return CoarseClass.CORRECT


@dataclass
class RocCurve:
    """Operating points ordered by increasing threshold."""

    false_alarm: np.ndarray
    missed: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.false_alarm.tolist(), self.missed.tolist()))


def roc_curve(outcomes: Sequence[CoarseTrialOutcome], thresholds=None) -> RocCurve:
    """Empirical ROC of (false-alarm rate, missed-detection rate).

    Without an explicit grid every observed score is used as a threshold,
    plus ``-inf`` so the curve starts where every window fires.
    """
    if not outcomes:
        raise ValueError("need at least one trial")
    split = np.array([o._split() for o in outcomes])
    pre, band = split[:, 0], split[:, 1]
    if thresholds is None:
        every = np.concatenate([o.trace for o in outcomes])
        thresholds = np.concatenate([[-math.inf], np.unique(every)])
    thresholds = np.sort(np.asarray(thresholds, dtype=float))
    n = len(outcomes)
    # a trial false-alarms iff some pre-band window fires; it misses iff nothing
    # up to the end of the band fires
    pre_s = np.sort(pre)
    top_s = np.sort(np.maximum(pre, band))
    fa = (n - np.searchsorted(pre_s, thresholds, side="right")) / n
    md = np.searchsorted(top_s, thresholds, side="right") / n
    return RocCurve(fa, md, thresholds)


def auc(curve: RocCurve) -> float:
    """Area under missed-detection vs false-alarm (0 is perfect, 0.5 is chance).

    The curve is closed with the corner points (0, 1) and (1, 0).
    """
    if curve.false_alarm.size == 0:
        raise ValueError("empty ROC curve")
    # decreasing threshold order walks FA upwards
    fa = np.concatenate([[0.0], curve.false_alarm[::-1], [1.0]])
    md = np.concatenate([[1.0], curve.missed[::-1], [0.0]])
    order = np.lexsort((-md, fa))
    fa, md = fa[order], md[order]
    return float(np.sum(np.diff(fa) * (md[1:] + md[:-1]) * 0.5))


def auc_sigma(value: float, n: int) -> float:
    """Binomial standard error used when comparing AUCs from ``n`` trials."""
    return math.sqrt(max(value * (1.0 - value), 0.0) / n)


@dataclass
class FineErrorSample:
    abs_error: float  # samples
    method: str = ""
    snr_db: float = math.nan
    sir_db: float = math.nan

    def __post_init__(self):
        if not self.abs_error >= 0:
            raise ValueError("absolute error must be nonnegative")


@dataclass
class ErrorCdf:
    errors: np.ndarray
    fractions: np.ndarray
    mean: float
    median: float

    def __call__(self, x: float) -> float:
        """Right-continuous empirical CDF value at ``x``."""
        return float(np.searchsorted(self.errors, x, side="right") / self.errors.size)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.errors.tolist(), self.fractions.tolist()))


def error_cdf(samples) -> ErrorCdf:
    """Empirical CDF of absolute errors with mean and median markers.

    ``samples`` may hold :class:`FineErrorSample` objects or plain numbers.
    """
    vals = np.array([s.abs_error if isinstance(s, FineErrorSample) else float(s) for s in samples])
    if vals.size == 0:
        raise ValueError("need at least one sample")
    e = np.sort(vals)
    frac = np.arange(1, e.size + 1) / e.size
    return ErrorCdf(e, frac, float(np.mean(e)), float(np.median(e)))


def paired_bootstrap_median_diff(a, b, rng: np.random.Generator, resamples: int = 2000,
                                 level: float = 0.95) -> tuple[float, float, float]:
    """``median(a) - median(b)`` with a percentile CI from paired resampling.

    ``a[i]`` and ``b[i]`` must come from the same trial.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("paired samples must be equal-length vectors")
    idx = rng.integers(0, a.size, size=(resamples, a.size))
    diffs = np.median(a[idx], axis=1) - np.median(b[idx], axis=1)
    lo, hi = np.quantile(diffs, [(1 - level) / 2, (1 + level) / 2])
    return float(np.median(a) - np.median(b)), float(lo), float(hi)


# ---------------------------------------------------------------------------
# Delay resolvability
# ---------------------------------------------------------------------------

# two arrival directions 90 degrees apart in both azimuth and elevation; on the
# default 8x4 half-wavelength array their responses are exactly orthogonal
RESOLVABILITY_ANGLES = ((-math.pi / 4, -math.pi / 4), (math.pi / 4, math.pi / 4))


def two_path_scenario(separation: float, snr_db: float, waveform: SyncWaveform,
                      rng: np.random.Generator, noise_seed: int,
                      geometry: Optional[ArrayGeometry] = None,
                      centre: tuple = (0.75, 1.25), angles=RESOLVABILITY_ANGLES) -> MultipathScenario:
    """Two unit-gain paths ``separation`` samples apart inside ``[0, 2*T_s]``.

    The pair's midpoint is uniform over ``centre`` (samples), narrowed where
    needed to keep both delays in range.  Path phases are uniform.
    """
    geometry = ArrayGeometry() if geometry is None else geometry
    if not 0.0 <= separation <= 2.0:
        raise ValueError("separation must lie in [0, 2] samples")
    Ts = waveform.sample_period
    lo = max(centre[0], separation / 2)
    hi = min(centre[1], 2.0 - separation / 2)
    c = rng.uniform(lo, hi) if hi > lo else 1.0
    phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
    d1 = max(c - separation / 2, 0.0) * Ts
    d2 = min(c + separation / 2, 2.0) * Ts
    paths = (Mpc(d1, np.exp(1j * phases[0]), *angles[0]),
             Mpc(d2, np.exp(1j * phases[1]), *angles[1]))
    sc = MultipathScenario(paths, (), geometry, 1.0, noise_seed)
    return calibrate_powers(sc, waveform, snr_db, math.inf)


def count_maxima(Yf: np.ndarray, waveform: SyncWaveform, rank: int, dense: int = 64) -> int:
    """Number of + to - derivative changes of the score over ``[0, 2*T_s]``."""
    ends = np.linspace(0.0, 2.0 * waveform.sample_period, dense + 1)
    _, d = GlrtScorer(Yf, waveform, rank).score_and_derivative(ends)
    return int(sign_change_brackets(d).size)


@dataclass
class ResolvabilityTable:
    snr_db: float
    separations: np.ndarray
    success: np.ndarray
    trials: int
    counts: Optional[np.ndarray] = field(default=None, repr=False)

    def at(self, rate: float) -> float:
        return separation_at(self.separations, self.success, rate)


def resolvability_sweep(snr_db: float, rank: int, trials: int, separations, waveform: SyncWaveform,
                        seed: int = 0, dense: int = 64, workers: int = 1,
                        geometry: Optional[ArrayGeometry] = None) -> ResolvabilityTable:
    """Fraction of trials in which exactly two score maxima are found, per separation.

    Trial ``t`` uses the same phases, midpoint draw and noise at every
    separation (and every SNR), so the curve is a paired comparison.
    """
    seps = np.asarray(separations, dtype=float)
    if np.any(seps < 0) or np.any(seps > 2.0):
        raise ValueError("separations must lie in [0, 2] samples")
    if trials < 1:
        raise ValueError("trials must be positive")

    def run(job):
        k, t = job
        rng = trial_rng(seed, t)
        sc = two_path_scenario(float(seps[k]), snr_db, waveform, rng, trial_noise_seed(seed, t), geometry)
        W = synth_window(sc, waveform, None, 0)
        return count_maxima(W.freq_samples, waveform, rank, dense)

    jobs = [(k, t) for k in range(seps.size) for t in range(trials)]
    counts = np.array(ordered_map(run, jobs, workers), dtype=int).reshape(seps.size, trials)
    success = np.mean(counts == 2, axis=1)
    return ResolvabilityTable(snr_db, seps, success, trials, counts)


def separation_at(separations, success, rate: float) -> float:
    """Separation at which the success curve first reaches ``rate`` (linear interpolation).

    Returns ``nan`` if the curve never gets there.
    """
    s = np.asarray(separations, dtype=float)
    r = np.asarray(success, dtype=float)
    order = np.argsort(s)
    s, r = s[order], r[order]
    hit = np.flatnonzero(r >= rate)
    if hit.size == 0:
        return math.nan
    i = int(hit[0])
    if i == 0:
        return float(s[0])
    r0, r1 = r[i - 1], r[i]
    return float(s[i - 1] + (rate - r0) / (r1 - r0) * (s[i] - s[i - 1]))


def j_max(min_separation: float) -> int:
    """Sub-interval count ``ceil(2 / min_separation)`` for a resolvable separation in samples."""
    if not min_separation > 0:
        raise ValueError("separation must be positive")
    return int(math.ceil(2.0 / min_separation - 1e-12))
