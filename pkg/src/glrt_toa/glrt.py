"""GLRT score with adaptive spatial filtering and the two-stage ToA search.

Notation follows the window model ``Y = sum_n a_n beta_n x_n^T + ... + Z``
(M antennas x N samples).  ``Yf`` is the row-wise unitary DFT of ``Y``.
Delays inside a window (``tau``) are in seconds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .waveforms import SyncWaveform

__all__ = [
    "DegenerateInputError",
    "EstimatorConfig",
    "ScoreBreakdown",
    "Bracket",
    "FineResult",
    "CoarseDetection",
    "ToaEstimate",
    "GlrtScorer",
    "apply_sync_complement",
    "interference_basis",
    "glrt_score",
    "coarse_score",
    "coarse_scores",
    "calibrate_threshold",
    "coarse_detect",
    "central_difference",
    "score_derivative",
    "bracket_first_max",
    "bracket_endpoints",
    "sign_change_brackets",
    "golden_section",
    "fine_estimate",
    "estimate_toa",
    "default_sub_intervals",
]

# below this the residual energy is treated as an exactly explained window
DEGENERATE_DENOMINATOR = 1e-300
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# fine-stage results scoring below this multiple of the noise-only mean are flagged
LOW_SCORE_FACTOR = 4.0


class DegenerateInputError(ValueError):
    """The window is (numerically) fully explained by the model: no noise left."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the two-stage estimator.

    Tolerances and steps are given in samples (multiples of ``T_s``).
    ``derivative`` selects the closed-form score derivative (``"analytic"``)
    or central finite differences (``"fd"``).
    """

    rank_coarse: int = 1
    rank_fine: int = 16
    coarse_threshold: float = 60.0
    sub_intervals: int = 13
    gss_tolerance: float = 1e-4
    derivative_step: float = 1e-4
    max_windows: int = 64
    derivative: str = "analytic"

    def __post_init__(self):
        if self.rank_coarse < 1 or self.rank_fine < self.rank_coarse:
            raise ValueError("need 1 <= rank_coarse <= rank_fine")
        if self.sub_intervals < 2:
            raise ValueError("sub_intervals must be at least 2")
        if self.gss_tolerance <= 0 or self.derivative_step <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_windows < 1:
            raise ValueError("max_windows must be positive")
        if self.derivative not in ("analytic", "fd"):
            raise ValueError(f"unknown derivative method {self.derivative!r}")

    def check_antennas(self, M: int) -> None:
        if self.rank_fine > M - 2:
            raise ValueError(f"rank_fine={self.rank_fine} exceeds M-2={M - 2}")


def default_sub_intervals(snr_db: float) -> int:
    """Bracketing density used at a given SNR (5 / 8 / 13 for 10 / 20 / 30 dB)."""
    if snr_db < 15.0:
        return 5
    if snr_db < 25.0:
        return 8
    return 13


@dataclass(frozen=True)
class ScoreBreakdown:
    score: float
    numerator: float
    denominator: float
    dof: int
    noise_var_estimate: float


# ---------------------------------------------------------------------------
# Reference pipeline: one evaluation, every intermediate formed explicitly.
# ---------------------------------------------------------------------------

def apply_sync_complement(Y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``Y (I - u u^H)`` as a rank-one update."""
    u = np.asarray(u)
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError("template must have unit norm")
    return Y - np.outer(Y @ u, u.conj())


def interference_basis(Y_perp: np.ndarray, rank: int) -> np.ndarray:
    """Leading ``rank`` left singular vectors of ``Y_perp`` (M x rank).

    Obtained from the M x M Gram matrix, which is cheaper than an SVD of the
    wide M x N matrix and gives the same left singular subspace.
    """
    M = Y_perp.shape[0]
    if not 1 <= rank <= M - 1:
        raise ValueError(f"rank must lie in [1, {M - 1}], got {rank}")
    _, V = np.linalg.eigh(Y_perp @ Y_perp.conj().T)
    return V[:, ::-1][:, :rank]


def _breakdown(num: float, den: float, M: int, N: int, rank: int) -> ScoreBreakdown:
    if not den > DEGENERATE_DENOMINATOR:
        raise DegenerateInputError("residual energy vanished; window is noise-free")
    dof = (M - rank) * (N - 1)
    return ScoreBreakdown(score=num / den * dof, numerator=num, denominator=den, dof=dof,
                          noise_var_estimate=den / dof)


def _score_with_template(Y: np.ndarray, u: np.ndarray, rank: int) -> ScoreBreakdown:
    M, N = Y.shape
    if rank > M - 2:
        raise ValueError(f"rank {rank} exceeds M-2={M - 2}")
    Y_perp = apply_sync_complement(Y, u)
    U = interference_basis(Y_perp, rank)
    z = Y @ u
    Pz = z - U @ (U.conj().T @ z)
    PY = Y_perp - U @ (U.conj().T @ Y_perp)
    num = float(np.vdot(Pz, Pz).real)
    den = float(np.vdot(PY, PY).real)
    return _breakdown(num, den, M, N, rank)


def glrt_score(Yf: np.ndarray, tau: float, rank: int, waveform: SyncWaveform) -> ScoreBreakdown:
    """GLRT score of a frequency-domain window at in-window delay ``tau``."""
    return _score_with_template(Yf, waveform.template(tau).unit_freq_vector, rank)


def coarse_score(Y: np.ndarray, rank: int, waveform: SyncWaveform) -> ScoreBreakdown:
    """Time-domain score at zero offset (no DFT needed for a fixed template)."""
    x = waveform.base_samples
    u = np.conj(x) / np.linalg.norm(x)
    return _score_with_template(Y, u, rank)


def coarse_scores(Y: np.ndarray, ranks, waveform: SyncWaveform) -> dict:
    """Coarse scores for several ranks from one eigendecomposition.

    Agrees with :func:`coarse_score` rank by rank up to rounding.
    """
    M, N = Y.shape
    x = waveform.base_samples
    u = np.conj(x) / np.linalg.norm(x)
    z = Y @ u
    lam, V = np.linalg.eigh(Y @ Y.conj().T - np.outer(z, z.conj()))
    a2 = np.abs(V.conj().T @ z) ** 2
    out = {}
    for r in ranks:
        if not 1 <= r <= M - 2:
            raise ValueError(f"rank must lie in [1, {M - 2}], got {r}")
        trail = M - r
        out[r] = _breakdown(float(a2[:trail].sum()), float(lam[:trail].sum()), M, N, r).score
    return out


def calibrate_threshold(scores, quantile: float = 0.999) -> float:
    """Detection threshold as the ``quantile`` of scores from signal-free windows."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no calibration scores")
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    return float(np.quantile(scores, quantile))


# ---------------------------------------------------------------------------
# Batched scorer used by the search loops.
# ---------------------------------------------------------------------------

class GlrtScorer:
    """Score and its delay derivative for one window, many delays at once.

    Uses ``Yperp Yperp^H = G - z z^H`` with ``G = Yf Yf^H`` fixed per window,
    so each delay costs one M x N matrix-vector product and one M x M
    Hermitian eigendecomposition.
    """

    def __init__(self, Yf: np.ndarray, waveform: SyncWaveform, rank: int):
        M, N = Yf.shape
        if N != waveform.window_length:
            raise ValueError(f"window has {N} samples, waveform expects {waveform.window_length}")
        if not 1 <= rank <= M - 2:
            raise ValueError(f"rank must lie in [1, {M - 2}], got {rank}")
        self.Yf = Yf
        self.waveform = waveform
        self.rank = rank
        self.M, self.N = M, N
        self.dof = (M - rank) * (N - 1)
        self.gram = Yf @ Yf.conj().T
        self.evaluations = 0
        # mean score of a noise-only window: M - rank residual dimensions over
        # their own noise floor
        self.noise_level = float(M - rank)

    def _decompose(self, taus):
        u = self.waveform.unit_templates(taus)
        z = u @ self.Yf.T  # (T, M): row t is Yf @ u_t
        G = self.gram[None, :, :] - z[:, :, None] * z.conj()[:, None, :]
        lam, V = np.linalg.eigh(G)
        a = np.einsum("tmk,tm->tk", V.conj(), z)
        self.evaluations += len(u)
        return u, lam, V, a

    def _terms(self, lam, a):
        trail = self.M - self.rank
        num = np.sum(np.abs(a[:, :trail]) ** 2, axis=1)
        den = np.sum(lam[:, :trail], axis=1)
        if np.any(~(den > DEGENERATE_DENOMINATOR)):
            raise DegenerateInputError("residual energy vanished; window is noise-free")
        return num, den

    def score(self, taus) -> np.ndarray:
        _, lam, _, a = self._decompose(taus)
        num, den = self._terms(lam, a)
        return self.dof * num / den

    def score_and_derivative(self, taus) -> tuple[np.ndarray, np.ndarray]:
        """Score and exact d(score)/d(tau) (per second) at each delay."""
        u, lam, V, a = self._decompose(taus)
        num, den = self._terms(lam, a)
        dz = (u * (1j * self.waveform.freq_bins)[None, :]) @ self.Yf.T
        b = np.einsum("tmk,tm->tk", V.conj(), dz)
        trail = self.M - self.rank
        at, bt = a[:, :trail], b[:, :trail]
        al, bl = a[:, trail:], b[:, trail:]
        cross_t = np.real(at.conj() * bt)
        d_den = -2.0 * np.sum(cross_t, axis=1)
        gap = lam[:, :trail, None] - lam[:, None, trail:]  # (T, trail, lead), negative
        coupling = (np.real(al.conj() * bl)[:, None, :] * (np.abs(at) ** 2)[:, :, None]
                    + (np.abs(al) ** 2)[:, None, :] * cross_t[:, :, None])
        d_num = 2.0 * np.sum(cross_t, axis=1) - 2.0 * np.sum(coupling / gap, axis=(1, 2))
        score = self.dof * num / den
        deriv = self.dof * (d_num * den - num * d_den) / den**2
        return score, deriv

    def breakdown(self, tau: float) -> ScoreBreakdown:
        _, lam, _, a = self._decompose([tau])
        num, den = self._terms(lam, a)
        return _breakdown(float(num[0]), float(den[0]), self.M, self.N, self.rank)


def central_difference(f: Callable[[float], float], x: float, step: float,
                       lo: float = -math.inf, hi: float = math.inf) -> float:
    """Central difference of ``f`` at ``x``; one-sided where ``x +- step`` leaves ``[lo, hi]``."""
    left, right = x - step, x + step
    if left < lo:
        return (f(right) - f(x)) / step
    if right > hi:
        return (f(x) - f(left)) / step
    return (f(right) - f(left)) / (2.0 * step)


def score_derivative(Yf: np.ndarray, tau: float, rank: int, waveform: SyncWaveform,
                     step: float) -> float:
    """Finite-difference derivative of the GLRT score (per second)."""
    scorer = GlrtScorer(Yf, waveform, rank)
    return central_difference(lambda t: float(scorer.score([t])[0]), tau, step,
                              0.0, waveform.max_delay)


def _derivatives(scorer, taus, config: EstimatorConfig) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    if config.derivative == "analytic":
        return scorer.score_and_derivative(taus)[1]
    Ts = scorer.waveform.sample_period
    h = config.derivative_step * Ts
    lo, hi = 0.0, scorer.waveform.max_delay
    left = np.maximum(taus - h, lo)
    right = np.minimum(taus + h, hi)
    s = scorer.score(np.concatenate([left, right]))
    return (s[len(taus):] - s[: len(taus)]) / (right - left)


# ---------------------------------------------------------------------------
# Search machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bracket:
    index: int
    lower: float
    upper: float


def bracket_endpoints(waveform: SyncWaveform, sub_intervals: int) -> np.ndarray:
    """``J + 1`` equally spaced endpoints covering ``[0, 2*T_s]``."""
    return np.linspace(0.0, 2.0 * waveform.sample_period, sub_intervals + 1)


def sign_change_brackets(derivs: np.ndarray) -> np.ndarray:
    """Indices ``j`` with ``d[j] > 0`` and ``d[j+1] < 0``."""
    d = np.asarray(derivs)
    return np.flatnonzero((d[:-1] > 0) & (d[1:] < 0))


def bracket_first_max(scorer, config: EstimatorConfig) -> Optional[Bracket]:
    """Earliest sub-interval of ``[0, 2*T_s]`` over which the derivative turns + to -."""
    ends = bracket_endpoints(scorer.waveform, config.sub_intervals)
    hits = sign_change_brackets(_derivatives(scorer, ends, config))
    if hits.size == 0:
        return None
    j = int(hits[0])
    return Bracket(j, float(ends[j]), float(ends[j + 1]))


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float,
                   max_iter: int = 100) -> tuple[float, int]:
    """Maximise a unimodal ``f`` on ``[a, b]``.

    Stops once the bracket is narrower than ``tol`` or after ``max_iter``
    contractions, and returns ``(midpoint, iterations)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while (b - a) >= tol and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        it += 1
    return 0.5 * (a + b), it


@dataclass
class FineResult:
    offset: float
    failed: bool
    bracket: Optional[Bracket]
    score: float
    iterations: int = 0
    evaluations: int = 0
    low_score: bool = False


def _make_scorer(method: str, Yf, waveform, rank):
    if method == "glrt":
        return GlrtScorer(Yf, waveform, rank)
    if method == "fdnc":
        from .baselines import FdncScorer
        return FdncScorer(Yf, waveform)
    raise ValueError(f"unknown refiner {method!r}")


def fine_estimate(Yf: np.ndarray, config: EstimatorConfig, waveform: SyncWaveform,
                  method: str = "glrt", rank: Optional[int] = None) -> FineResult:
    """First local maximum of the score over ``[0, 2*T_s]`` on one window.

    When no positive-to-negative derivative change is found the stage fails
    and the offset falls back to ``T_s`` (the coarse-aligned guess).
    ``low_score`` is set when the final score is below ``LOW_SCORE_FACTOR``
    times what a noise-only window would give on average.
    """
    rank = config.rank_fine if rank is None else rank
    scorer = _make_scorer(method, Yf, waveform, rank)
    Ts = waveform.sample_period
    br = bracket_first_max(scorer, config)
    if br is None:
        s = float(scorer.score([Ts])[0])
        return FineResult(Ts, True, None, s, 0, scorer.evaluations,
                          low_score=s < LOW_SCORE_FACTOR * scorer.noise_level)
    f = lambda t: float(scorer.score([t])[0])  # noqa: E731
    tau, it = golden_section(f, br.lower, br.upper, config.gss_tolerance * Ts)
    s = f(tau)
    return FineResult(tau, False, br, s, it, scorer.evaluations,
                      low_score=s < LOW_SCORE_FACTOR * scorer.noise_level)


@dataclass
class CoarseDetection:
    index: Optional[int]
    scores: list = field(default_factory=list)
    indices: list = field(default_factory=list)


def _coarse_fn(method: str, rank: int, waveform: SyncWaveform):
    if method == "glrt":
        return lambda Y: coarse_score(Y, rank, waveform).score
    if method == "tdnc":
        from .baselines import tdnc_score
        return lambda Y: tdnc_score(Y, waveform)
    raise ValueError(f"unknown detector {method!r}")


def coarse_detect(windows: Iterable, config: EstimatorConfig, waveform: SyncWaveform,
                  method: str = "glrt", threshold: Optional[float] = None) -> CoarseDetection:
    """Smallest window index whose coarse score exceeds the threshold.

    ``windows`` yields objects with ``index`` and ``samples`` (time domain).
    At most ``config.max_windows`` windows are examined.
    """
    gamma = config.coarse_threshold if threshold is None else threshold
    fn = _coarse_fn(method, config.rank_coarse, waveform)
    out = CoarseDetection(None)
    for n, w in enumerate(windows):
        if n >= config.max_windows:
            break
        s = fn(w.samples)
        out.scores.append(s)
        out.indices.append(w.index)
        if s > gamma:
            out.index = w.index
            break
    return out


@dataclass
class ToaEstimate:
    """Outcome of the two-stage estimator.

    ``absolute_toa`` is ``(coarse_index - 1) * T_s + fine_offset`` in seconds,
    measured from the start of the sample stream; ``None`` without detection.
    """

    detected: bool
    coarse_index: Optional[int] = None
    fine_offset: Optional[float] = None
    absolute_toa: Optional[float] = None
    fine_failed: bool = False
    diagnostics: dict = field(default_factory=dict)


def estimate_toa(windows: Iterable, config: EstimatorConfig, waveform: SyncWaveform,
                 detector: str = "glrt", refiner: str = "glrt") -> ToaEstimate:
    """Coarse window detection followed by subsample refinement on the previous window."""
    t0 = time.perf_counter_ns()
    gamma = config.coarse_threshold
    fn = _coarse_fn(detector, config.rank_coarse, waveform)
    previous = None
    hit = None
    scores = []
    for n, w in enumerate(windows):
        if n >= config.max_windows:
            break
        s = fn(w.samples)
        scores.append(s)
        if s > gamma:
            hit = w
            break
        previous = w
    t1 = time.perf_counter_ns()
    diag = {"coarse_scores": scores, "coarse_ns": t1 - t0}
    if hit is None:
        return ToaEstimate(False, diagnostics=diag)

    Ts = waveform.sample_period
    if previous is None or previous.index != hit.index - 1:
        # the window before the detection is unavailable; keep the coarse guess
        diag.update(fine_ns=0, bracket=None, fine_score=None)
        return ToaEstimate(True, hit.index, Ts, hit.index * Ts, True, diag)

    fine = fine_estimate(previous.freq_samples, config, waveform, method=refiner)
    t2 = time.perf_counter_ns()
    diag.update(
        fine_ns=t2 - t1,
        bracket=None if fine.bracket is None else (fine.bracket.index, fine.bracket.lower, fine.bracket.upper),
        fine_score=fine.score,
        gss_iterations=fine.iterations,
        score_evaluations=fine.evaluations,
        low_score=fine.low_score,
    )
    return ToaEstimate(True, hit.index, fine.offset, (hit.index - 1) * Ts + fine.offset,
                       fine.failed, diag)
