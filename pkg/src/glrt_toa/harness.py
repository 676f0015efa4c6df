"""Experiment configuration, seeded Monte-Carlo runners and result persistence.

Every runner derives each trial's randomness from ``(seed, stream, trial)``
only, so a trial draws the same channel and noise at every SNR/SIR/rank grid
point and for every method (paired comparisons), and results do not depend
on how trials are spread over worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__
from .baselines import tdnc_score
from .channel import (ArrayGeometry, MultipathScenario, calibrate_powers, load_cir,
                      random_scenario, synth_window, window_stream)
from .glrt import (EstimatorConfig, calibrate_threshold, coarse_scores, default_sub_intervals,
                   estimate_toa, fine_estimate)
from .metrics import (CoarseTrialOutcome, auc, auc_sigma, error_cdf, j_max,
                      paired_bootstrap_median_diff, resolvability_sweep, roc_curve)
from .parallel import ordered_map, stream_key, trial_noise_seed, trial_rng
from .waveforms import SyncWaveform

__all__ = [
    "ConfigError",
    "OutputError",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_hash",
    "Setup",
    "CheckResult",
    "run_coarse_benchmark",
    "run_fine_benchmark",
    "run_resolvability",
    "run_timing",
    "replay",
    "synth_cir",
    "check_coarse",
    "check_fine",
    "check_resolvability",
    "check_timing",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class OutputError(OSError):
    """Output location cannot be written (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class WaveformParams:
    K: int = 63
    u_sync: int = 25
    u_intf: int = 29
    rolloff: float = 0.3
    span: int = 9
    oversampling: int = 2
    pad: int = 8
    symbol_period: float = 1e-8
    window: str = "hann"


@dataclass
class ArrayParams:
    rows: int = 8
    cols: int = 4
    carrier_hz: float = 15e9
    spacing_m: Optional[float] = None


@dataclass
class ScenarioParams:
    """``source`` is ``synthetic`` (random factory-like channels) or ``cir`` (one file)."""

    source: str = "synthetic"
    cir_path: Optional[str] = None
    n_sync: list = field(default_factory=lambda: [2, 6])
    n_intf: list = field(default_factory=lambda: [2, 6])
    mean_gap: float = 1.5
    decay: float = 3.0
    spread_db: float = 2.0
    true_index: int = 8


@dataclass
class EstimatorParams:
    """``sub_intervals: null`` picks 5/8/13 from the SNR; ``coarse_threshold: null`` calibrates."""

    rank_coarse: int = 1
    rank_fine: int = 16
    coarse_threshold: Optional[float] = None
    sub_intervals: Optional[int] = None
    gss_tolerance: float = 1e-4
    derivative_step: float = 1e-4
    max_windows: int = 64
    derivative: str = "analytic"


@dataclass
class CoarseParams:
    ranks: list = field(default_factory=lambda: [1, 2, 4])
    tdnc_squared: bool = True


@dataclass
class FineParams:
    """``mode`` is ``aligned`` (fine stage fed window true_index-1) or ``end-to-end``."""

    ranks: list = field(default_factory=lambda: [4, 8, 16])
    mode: str = "aligned"


@dataclass
class ResolvabilityParams:
    """``separations`` is one grid for every SNR or a mapping SNR -> grid (samples)."""

    rank: int = 16
    dense: int = 64
    separations: Any = field(default_factory=lambda: [round(0.02 * k, 2) for k in range(0, 36)])


@dataclass
class TimingParams:
    invocations: int = 100
    snr_db: float = 30.0
    sir_db: float = -20.0


@dataclass
class CalibrationParams:
    quantile: float = 0.999
    windows: int = 1000


@dataclass
class CheckParams:
    sir_db: float = -20.0
    resolvability_d90: dict = field(default_factory=lambda: {
        10.0: [0.22, 0.42], 20.0: [0.10, 0.26], 30.0: [0.05, 0.15]})


@dataclass
class ExperimentConfig:
    seed: int = 0
    trials: int = 200
    workers: int = 1
    out: str = "results"
    snr_db: list = field(default_factory=lambda: [30.0])
    sir_db: list = field(default_factory=lambda: [-20.0, -10.0, 0.0, 10.0, 20.0, math.inf])
    detector: str = "glrt"
    refiner: str = "glrt"
    waveform: WaveformParams = field(default_factory=WaveformParams)
    array: ArrayParams = field(default_factory=ArrayParams)
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    coarse: CoarseParams = field(default_factory=CoarseParams)
    fine: FineParams = field(default_factory=FineParams)
    resolvability: ResolvabilityParams = field(default_factory=ResolvabilityParams)
    timing: TimingParams = field(default_factory=TimingParams)
    calibration: CalibrationParams = field(default_factory=CalibrationParams)
    check: CheckParams = field(default_factory=CheckParams)

    def __post_init__(self):
        self._normalise()
        self.validate()

    def _normalise(self) -> None:
        # accept "inf"-style strings and integer keys from YAML / JSON round trips
        try:
            self.snr_db = [_parse_float(x, "snr_db") for x in self.snr_db]
            self.sir_db = [_parse_float(x, "sir_db") for x in self.sir_db]
            self.coarse.ranks = [_coerce(int, r, "coarse.ranks") for r in self.coarse.ranks]
            self.fine.ranks = [_coerce(int, r, "fine.ranks") for r in self.fine.ranks]
            self.scenario.n_sync = [_coerce(int, r, "scenario.n_sync") for r in self.scenario.n_sync]
            self.scenario.n_intf = [_coerce(int, r, "scenario.n_intf") for r in self.scenario.n_intf]
            seps = self.resolvability.separations
            where = "resolvability.separations"
            if isinstance(seps, dict):
                self.resolvability.separations = {
                    _parse_float(k, where): [_parse_float(x, where) for x in v] for k, v in seps.items()}
            elif isinstance(seps, (list, tuple)):
                self.resolvability.separations = [_parse_float(x, where) for x in seps]
            else:
                raise ConfigError(f"{where} must be a list or a mapping")
            where = "check.resolvability_d90"
            self.check.resolvability_d90 = {
                _parse_float(k, where): [_parse_float(x, where) for x in v]
                for k, v in self.check.resolvability_d90.items()}
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.trials >= 1, "trials must be at least 1")
        need(self.workers >= 1, "workers must be at least 1")
        need(0 <= self.seed < 2**63, "seed must be a nonnegative 63-bit integer")
        need(len(self.snr_db) > 0, "snr_db must be a nonempty list")
        need(len(self.sir_db) > 0, "sir_db must be a nonempty list")
        need(all(math.isfinite(s) for s in self.snr_db), "snr_db entries must be finite")
        need(all(s > -math.inf and not math.isnan(s) for s in self.sir_db),
             "sir_db entries must be finite or +inf")
        need(self.detector in ("glrt", "tdnc"), f"detector must be glrt or tdnc, got {self.detector!r}")
        need(self.refiner in ("glrt", "fdnc"), f"refiner must be glrt or fdnc, got {self.refiner!r}")
        need(self.scenario.source in ("synthetic", "cir"), "scenario.source must be synthetic or cir")
        need(self.scenario.source != "cir" or self.scenario.cir_path,
             "scenario.cir_path is required when scenario.source is cir")
        need(self.scenario.true_index >= 2, "scenario.true_index must be at least 2")
        for name in ("n_sync", "n_intf"):
            rng = getattr(self.scenario, name)
            need(len(rng) == 2 and 0 <= rng[0] <= rng[1], f"scenario.{name} must be [lo, hi] with lo <= hi")
        need(self.scenario.n_sync[0] >= 1, "scenario.n_sync lower bound must be at least 1")
        need(self.fine.mode in ("aligned", "end-to-end"), "fine.mode must be aligned or end-to-end")
        M = self.array.rows * self.array.cols
        ranks = list(self.coarse.ranks) + list(self.fine.ranks) + [
            self.estimator.rank_coarse, self.estimator.rank_fine, self.resolvability.rank]
        need(all(1 <= r <= M - 2 for r in ranks), f"every rank must lie in [1, M-2] = [1, {M - 2}]")
        need(len(self.coarse.ranks) > 0 and len(self.fine.ranks) > 0, "rank lists must be nonempty")
        need(self.estimator.rank_coarse <= self.estimator.rank_fine,
             "estimator.rank_coarse must not exceed estimator.rank_fine")
        need(self.resolvability.dense >= 2, "resolvability.dense must be at least 2")
        need(0.0 < self.calibration.quantile < 1.0, "calibration.quantile must lie in (0, 1)")
        need(self.calibration.windows >= 1, "calibration.windows must be positive")
        need(self.timing.invocations >= 1, "timing.invocations must be positive")
        need(self.waveform.pad >= 3, "waveform.pad must cover the [0, 2*T_s] sweep plus margin (pad >= 3)")
        for s in self.snr_db:
            self.separations_for(s)

    def separations_for(self, snr_db: float) -> list:
        seps = self.resolvability.separations
        if isinstance(seps, dict):
            for k, v in seps.items():
                if float(k) == float(snr_db):
                    seps = v
                    break
            else:
                raise ConfigError(f"resolvability.separations has no grid for SNR {snr_db}")
        if not isinstance(seps, list) or not seps:
            raise ConfigError("resolvability.separations must be a nonempty list")
        out = [float(x) for x in seps]
        if any(not 0.0 <= x <= 2.0 for x in out):
            raise ConfigError("resolvability separations must lie in [0, 2] samples")
        return out

    def estimator_config(self, snr_db: Optional[float] = None, rank_fine: Optional[int] = None,
                         coarse_threshold: Optional[float] = None) -> EstimatorConfig:
        e = self.estimator
        J = e.sub_intervals
        if J is None:
            J = default_sub_intervals(30.0 if snr_db is None else snr_db)
        gamma = coarse_threshold if coarse_threshold is not None else e.coarse_threshold
        rf = e.rank_fine if rank_fine is None else rank_fine
        return EstimatorConfig(
            rank_coarse=min(e.rank_coarse, rf), rank_fine=rf,
            coarse_threshold=60.0 if gamma is None else gamma,
            sub_intervals=J, gss_tolerance=e.gss_tolerance, derivative_step=e.derivative_step,
            max_windows=e.max_windows, derivative=e.derivative,
        )


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_float(v, where: str) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
        return math.inf
    if isinstance(v, str) and v.strip().lower() in ("-inf", "-.inf"):
        return -math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {v!r}") from None


def _coerce(tp, v, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, v, where)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if v is None:
            return None
        return _coerce(args[0], v, where)
    if tp is Any:
        return v
    if tp is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected true/false, got {v!r}")
        return v
    if tp is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return v
    if tp is float:
        return _parse_float(v, where)
    if tp is str:
        if not isinstance(v, str):
            raise ConfigError(f"{where}: expected a string, got {v!r}")
        return v
    if tp is list or origin is list:
        if not isinstance(v, list):
            raise ConfigError(f"{where}: expected a list, got {v!r}")
        return list(v)
    if tp is dict or origin is dict:
        if not isinstance(v, dict):
            raise ConfigError(f"{where}: expected a mapping, got {v!r}")
        return dict(v)
    return v


def _build(cls, data, where: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names, key=str)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown field(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = _coerce(hints[k], v, f"{where}.{k}" if where else k)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return _build(ExperimentConfig, data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML experiment config; ``overrides`` replaces top-level fields.

    Raises
    ------
    ConfigError
        Syntax errors (with line numbers), unknown fields, bad values.
    OSError
        The file cannot be read.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = "" if mark is None else f"line {mark.line + 1}: "
        raise ConfigError(f"{path}: {line}{exc.problem}") from None
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return config_from_dict(data)


def _jsonable(x):
    if isinstance(x, float):
        return repr(x) if not math.isfinite(x) else x
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# fields that change where or how fast a run happens, never what it computes
_HASH_EXCLUDED = ("out", "workers")


def config_dict(cfg: ExperimentConfig) -> dict:
    return _jsonable(dataclasses.asdict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    d = {k: v for k, v in config_dict(cfg).items() if k not in _HASH_EXCLUDED}
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else str(k)
        if isinstance(v, dict):
            out.update(_flatten(v, key))
        else:
            out[key] = v
    return out


def config_diff(a: dict, b: dict) -> list[str]:
    fa, fb = _flatten(a), _flatten(b)
    lines = []
    for k in sorted(set(fa) | set(fb)):
        if k.split(".")[0] in _HASH_EXCLUDED:
            continue
        if fa.get(k, "<absent>") != fb.get(k, "<absent>"):
            lines.append(f"{k}: recorded {fa.get(k, '<absent>')!r}, given {fb.get(k, '<absent>')!r}")
    return lines


# ---------------------------------------------------------------------------
# Shared trial machinery
# ---------------------------------------------------------------------------

@dataclass
class Setup:
    """Objects derived once from a config and shared read-only by all trials."""

    cfg: ExperimentConfig
    sync: SyncWaveform
    intf: SyncWaveform
    geometry: ArrayGeometry
    cir: Optional[MultipathScenario] = None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Setup":
        w = cfg.waveform
        try:
            sync = SyncWaveform.zadoff_chu(w.K, w.u_sync, w.rolloff, w.span, w.oversampling, w.pad,
                                           w.symbol_period, periodic=False, window=w.window)
            intf = SyncWaveform.zadoff_chu(w.K, w.u_intf, w.rolloff, w.span, w.oversampling, w.pad,
                                           w.symbol_period, periodic=True, window=w.window)
            geom = ArrayGeometry(cfg.array.rows, cfg.array.cols, cfg.array.carrier_hz, cfg.array.spacing_m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cir = None
        if cfg.scenario.source == "cir":
            cir = load_cir(cfg.scenario.cir_path)
            geom = cir.geometry
            if cir.toa < 2 * sync.sample_period:
                raise ConfigError("CIR first path arrives too early to leave a window before it")
        return cls(cfg, sync, intf, geom, cir)

    @property
    def Ts(self) -> float:
        return self.sync.sample_period

    def base_scenario(self, stream: str, trial: int) -> MultipathScenario:
        """Uncalibrated channel of one trial; identical at every grid point."""
        cfg = self.cfg
        noise_seed = trial_noise_seed(cfg.seed, stream_key(stream), trial)
        if self.cir is not None:
            return dataclasses.replace(self.cir, rng_seed=noise_seed)
        rng = trial_rng(cfg.seed, stream_key(stream), trial)
        first = (cfg.scenario.true_index + rng.uniform()) * self.Ts
        s = cfg.scenario
        return random_scenario(rng, first, self.sync, self.geometry, tuple(s.n_sync), tuple(s.n_intf),
                               s.mean_gap, s.decay, s.spread_db, noise_seed=noise_seed)

    def calibrated(self, base: MultipathScenario, snr_db: float, sir_db: float) -> MultipathScenario:
        try:
            return calibrate_powers(base, self.sync, snr_db, sir_db)
        except ValueError as exc:
            raise ConfigError(f"cannot calibrate scenario to SNR {snr_db} / SIR {sir_db}: {exc}") from None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class ResultWriter:
    """Writes CSV tables into one directory and tracks them for the manifest."""

    def __init__(self, out_dir, cfg: ExperimentConfig, command: str):
        self.dir = Path(out_dir)
        self.cfg = cfg
        self.command = command
        self.hash = config_hash(cfg)
        self.files: list[str] = []
        self.ensure_writable()

    def ensure_writable(self) -> None:
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OutputError(f"cannot write to {self.dir}: {exc}") from None

    def table(self, name: str, header: list, rows, provenance: bool = True) -> Path:
        """Write ``name`` with a header row; each row also gets the config hash and seed."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(header) + (["config_hash", "seed"] if provenance else []))
        for r in rows:
            w.writerow([_fmt(x) for x in r] + ([self.hash, self.cfg.seed] if provenance else []))
        path = self.dir / name
        try:
            path.write_text(buf.getvalue(), encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from None
        self.files.append(name)
        return path

    def manifest(self, extra: Optional[dict] = None) -> Path:
        sums = {}
        for name in self.files:
            sums[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        doc = {
            "command": self.command,
            "tool": "glrt_toa",
            "version": __version__,
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "config": config_dict(self.cfg),
            "files": sums,
        }
        if extra:
            doc.update(extra)
        path = self.dir / "manifest.json"
        try:
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from None
        return path


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _sir_label(s: float) -> str:
    return "inf" if math.isinf(s) else repr(float(s))


# ---------------------------------------------------------------------------
# Coarse benchmark
# ---------------------------------------------------------------------------

COARSE_STREAM = "coarse"
CALIBRATION_STREAM = "calibration"


def _coarse_methods(ranks) -> list[tuple[str, int]]:
    return [("glrt", r) for r in ranks] + [("tdnc", 0)]


def _coarse_traces(setup: Setup, windows, squared: bool, ranks) -> dict:
    traces = {m: [] for m in _coarse_methods(ranks)}
    for W in windows:
        s = coarse_scores(W.samples, ranks, setup.sync)
        for r in ranks:
            traces[("glrt", r)].append(s[r])
        traces[("tdnc", 0)].append(tdnc_score(W.samples, setup.sync, squared=squared))
    return traces


def coarse_trial(setup: Setup, trial: int) -> list[dict]:
    """All grid points of one coarse trial: score traces over windows 0..true+1."""
    cfg = setup.cfg
    base = setup.base_scenario(COARSE_STREAM, trial)
    true_index = int(math.floor(base.toa / setup.Ts))
    out = []
    for sir in cfg.sir_db:
        for snr in cfg.snr_db:
            sc = setup.calibrated(base, snr, sir)
            windows = window_stream(sc, (setup.sync, setup.intf), 0, true_index + 2)
            traces = _coarse_traces(setup, windows, cfg.coarse.tdnc_squared, cfg.coarse.ranks)
            for (method, rank), tr in traces.items():
                out.append(dict(snr=snr, sir=sir, trial=trial, noise_seed=sc.rng_seed,
                                true_index=true_index, toa=base.toa / setup.Ts,
                                method=method, rank=rank, trace=tr))
    return out


def _calibration_scores(setup: Setup, snr: float, sir: float, ranks) -> dict:
    """Coarse scores of signal-free windows (noise plus interference) per method."""
    cfg = setup.cfg

    def one(k):
        base = setup.base_scenario(CALIBRATION_STREAM, k)
        sc = setup.calibrated(base, snr, sir)
        sc = dataclasses.replace(sc, sync_paths=tuple(dataclasses.replace(p, gain=0j) for p in sc.sync_paths))
        W = synth_window(sc, setup.sync, setup.intf, 0)
        return _coarse_traces(setup, [W], cfg.coarse.tdnc_squared, ranks)

    res = ordered_map(one, range(cfg.calibration.windows), cfg.workers)
    return {m: np.array([r[m][0] for r in res]) for m in _coarse_methods(ranks)}


def run_coarse_benchmark(cfg: ExperimentConfig, out_dir=None, calibrate: bool = True) -> dict:
    """ROC/AUC of the coarse stage for GLRT at every rank and for TDNC.

    Writes ``coarse_auc.csv``, ``coarse_roc.csv``, ``coarse_trials.csv`` and
    a manifest.  Returns the AUC rows keyed by ``(snr, sir, method, rank)``.
    """
    writer = ResultWriter(out_dir or cfg.out, cfg, "coarse-bench")
    setup = Setup.from_config(cfg)
    t0 = time.perf_counter()
    per_trial = ordered_map(lambda t: coarse_trial(setup, t), range(cfg.trials), cfg.workers)
    records = [r for block in per_trial for r in block]

    groups: dict = {}
    for r in records:
        groups.setdefault((r["snr"], r["sir"], r["method"], r["rank"]), []).append(r)

    auc_rows, roc_rows, results = [], [], {}
    for snr in cfg.snr_db:
        for sir in cfg.sir_db:
            gammas = {}
            if calibrate:
                cal = _calibration_scores(setup, snr, sir, cfg.coarse.ranks)
                gammas = {m: calibrate_threshold(v, cfg.calibration.quantile) for m, v in cal.items()}
            for method, rank in _coarse_methods(cfg.coarse.ranks):
                recs = groups[(snr, sir, method, rank)]
                outs = [CoarseTrialOutcome(r["true_index"], r["trace"]) for r in recs]
                curve = roc_curve(outs)
                a = auc(curve)
                sig = auc_sigma(a, len(outs))
                g = gammas.get((method, rank))
                fa = md = None
                if g is not None:
                    op = roc_curve(outs, [g])
                    fa, md = float(op.false_alarm[0]), float(op.missed[0])
                auc_rows.append([snr, _sir_label(sir), method, rank, len(outs), a, sig, g, fa, md])
                results[(snr, sir, method, rank)] = (a, sig)
                for th, f, m in zip(curve.thresholds, curve.false_alarm, curve.missed):
                    roc_rows.append([snr, _sir_label(sir), method, rank, th, f, m])

    writer.table("coarse_auc.csv", ["snr_db", "sir_db", "method", "rank", "trials", "auc", "auc_sigma",
                                    "threshold", "false_alarm_at_threshold", "missed_at_threshold"], auc_rows)
    writer.table("coarse_roc.csv", ["snr_db", "sir_db", "method", "rank", "threshold",
                                    "false_alarm", "missed"], roc_rows)
    writer.table("coarse_trials.csv", ["snr_db", "sir_db", "trial", "noise_seed", "true_index",
                                       "true_toa_samples", "method", "rank", "scores"],
                 ([r["snr"], _sir_label(r["sir"]), r["trial"], r["noise_seed"], r["true_index"], r["toa"],
                   r["method"], r["rank"], " ".join(repr(float(x)) for x in r["trace"])] for r in records))
    writer.manifest({"elapsed_s": round(time.perf_counter() - t0, 3)})
    return results


def check_coarse(cfg: ExperimentConfig, results: dict) -> list[CheckResult]:
    """GLRT at the largest rank beats TDNC by more than 2 sigma, and AUC does not grow with rank."""
    out = []
    sir = cfg.check.sir_db
    ranks = sorted(cfg.coarse.ranks)
    for snr in cfg.snr_db:
        if (snr, sir, "tdnc", 0) not in results:
            continue
        ag, sg = results[(snr, sir, "glrt", ranks[-1])]
        at, st = results[(snr, sir, "tdnc", 0)]
        gap = at - ag
        lim = 2.0 * math.hypot(sg, st)
        out.append(CheckResult(f"coarse AUC GLRT(I={ranks[-1]}) < TDNC at SNR {snr:g}, SIR {sir:g}",
                               gap > lim, f"GLRT {ag:.4f}, TDNC {at:.4f}, gap {gap:.4f} vs 2 sigma {lim:.4f}"))
        prev = None
        for r in ranks:
            a, s = results[(snr, sir, "glrt", r)]
            if prev is not None:
                pa, ps = prev
                ok = a <= pa + 2.0 * math.hypot(s, ps)
                out.append(CheckResult(f"coarse AUC non-increasing in rank at I={r}, SNR {snr:g}",
                                       ok, f"AUC {pa:.4f} -> {a:.4f}"))
            prev = (a, s)
    return out


# ---------------------------------------------------------------------------
# Fine benchmark
# ---------------------------------------------------------------------------

FINE_STREAM = "fine"


def _fine_methods(cfg) -> list[tuple[str, int]]:
    return [("glrt", r) for r in cfg.fine.ranks] + [("fdnc", 0)]


def fine_trial(setup: Setup, trial: int, thresholds: Optional[dict] = None) -> list[dict]:
    """Fine-stage estimates of one trial at every grid point and for every method."""
    cfg = setup.cfg
    Ts = setup.Ts
    base = setup.base_scenario(FINE_STREAM, trial)
    true_index = int(math.floor(base.toa / Ts))
    out = []
    for sir in cfg.sir_db:
        for snr in cfg.snr_db:
            sc = setup.calibrated(base, snr, sir)
            if cfg.fine.mode == "aligned":
                W = synth_window(sc, setup.sync, setup.intf, true_index - 1)
                truth = base.toa / Ts - (true_index - 1)
            for method, rank in _fine_methods(cfg):
                ec = cfg.estimator_config(snr, rank_fine=rank if rank else None)
                t0 = time.perf_counter_ns()
                if cfg.fine.mode == "aligned":
                    res = fine_estimate(W.freq_samples, ec, setup.sync, method=method, rank=rank or None)
                    est = res.offset / Ts
                    rec = dict(estimate=est, error=abs(est - truth), failed=res.failed,
                               bracket=-1 if res.bracket is None else res.bracket.index,
                               iterations=res.iterations, evaluations=res.evaluations, detected=True)
                else:
                    gamma = (thresholds or {}).get((snr, sir))
                    ec = dataclasses.replace(ec, coarse_threshold=ec.coarse_threshold if gamma is None else gamma)
                    ws = window_stream(sc, (setup.sync, setup.intf), 0, ec.max_windows)
                    r = estimate_toa(ws, ec, setup.sync, detector=cfg.detector, refiner=method)
                    est = r.absolute_toa / Ts if r.detected else math.nan
                    truth = base.toa / Ts
                    rec = dict(estimate=est, error=abs(est - truth) if r.detected else math.inf,
                               failed=r.fine_failed, bracket=-1 if not r.diagnostics.get("bracket")
                               else r.diagnostics["bracket"][0],
                               iterations=r.diagnostics.get("gss_iterations", 0),
                               evaluations=r.diagnostics.get("score_evaluations", 0), detected=r.detected)
                ns = time.perf_counter_ns() - t0
                out.append(dict(snr=snr, sir=sir, trial=trial, noise_seed=sc.rng_seed, truth=truth,
                                method=method, rank=rank, wall_ns=ns, **rec))
    return out


def _e2e_thresholds(setup: Setup) -> dict:
    cfg = setup.cfg
    if cfg.estimator.coarse_threshold is not None:
        return {}
    out = {}
    rank = cfg.estimator.rank_coarse
    key = ("glrt", rank) if cfg.detector == "glrt" else ("tdnc", 0)
    for snr in cfg.snr_db:
        for sir in cfg.sir_db:
            cal = _calibration_scores(setup, snr, sir, [rank])
            out[(snr, sir)] = calibrate_threshold(cal[key], cfg.calibration.quantile)
    return out


def run_fine_benchmark(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Absolute timing errors of the fine stage for GLRT at every rank and for FDNC.

    Writes ``fine_median.csv``, ``fine_cdf.csv``, ``fine_trials.csv``,
    ``fine_walltime.csv`` and a manifest.  Returns the per-grid-point error
    vectors keyed by ``(snr, sir, method, rank)`` (trial order).
    """
    writer = ResultWriter(out_dir or cfg.out, cfg, "fine-bench")
    setup = Setup.from_config(cfg)
    t0 = time.perf_counter()
    thresholds = _e2e_thresholds(setup) if cfg.fine.mode == "end-to-end" else None
    per_trial = ordered_map(lambda t: fine_trial(setup, t, thresholds), range(cfg.trials), cfg.workers)
    records = [r for block in per_trial for r in block]

    errors: dict = {}
    for r in records:
        errors.setdefault((r["snr"], r["sir"], r["method"], r["rank"]), []).append(r)
    med_rows, cdf_rows, results = [], [], {}
    for snr in cfg.snr_db:
        for sir in cfg.sir_db:
            for method, rank in _fine_methods(cfg):
                recs = errors[(snr, sir, method, rank)]
                e = np.array([r["error"] for r in recs])
                cdf = error_cdf(e)
                fail = float(np.mean([r["failed"] for r in recs]))
                med_rows.append([snr, _sir_label(sir), method, rank, len(e), cdf.median, cdf.mean, fail])
                for x, f in cdf.points:
                    cdf_rows.append([snr, _sir_label(sir), method, rank, x, f])
                results[(snr, sir, method, rank)] = e
    writer.table("fine_median.csv", ["snr_db", "sir_db", "method", "rank", "trials", "median_abs_error",
                                     "mean_abs_error", "failed_rate"], med_rows)
    writer.table("fine_cdf.csv", ["snr_db", "sir_db", "method", "rank", "abs_error", "cdf"], cdf_rows)
    writer.table("fine_trials.csv", ["snr_db", "sir_db", "trial", "noise_seed", "true_offset_samples",
                                     "method", "rank", "estimate_samples", "abs_error", "failed",
                                     "detected", "bracket", "gss_iterations", "score_evaluations"],
                 ([r["snr"], _sir_label(r["sir"]), r["trial"], r["noise_seed"], r["truth"], r["method"],
                   r["rank"], r["estimate"], r["error"], r["failed"], r["detected"], r["bracket"],
                   r["iterations"], r["evaluations"]] for r in records))
    # wall-clock times differ run to run; kept apart from the reproducible tables
    writer.table("fine_walltime.csv", ["snr_db", "sir_db", "trial", "method", "rank", "wall_ns"],
                 ([r["snr"], _sir_label(r["sir"]), r["trial"], r["method"], r["rank"], r["wall_ns"]]
                  for r in records), provenance=False)
    writer.manifest({"elapsed_s": round(time.perf_counter() - t0, 3),
                     "nondeterministic_files": ["fine_walltime.csv"]})
    return results


def _not_worse(a, b, rng) -> tuple[bool, str]:
    """``median(a) <= median(b)`` unless the paired 95% CI of the difference sits above 0."""
    d, lo, hi = paired_bootstrap_median_diff(a, b, rng)
    return lo <= 0.0, f"median diff {d:+.4f} (95% CI [{lo:+.4f}, {hi:+.4f}])"


def check_fine(cfg: ExperimentConfig, results: dict) -> list[CheckResult]:
    """GLRT beats FDNC at the highest SNR and rank; medians do not grow with rank or SNR."""
    out = []
    rng = np.random.default_rng(cfg.seed)
    snr_hi = max(cfg.snr_db)
    ranks = sorted(cfg.fine.ranks)
    r_hi = ranks[-1]
    for sir in cfg.sir_db:
        g = results[(snr_hi, sir, "glrt", r_hi)]
        f = results[(snr_hi, sir, "fdnc", 0)]
        mg, mf = float(np.median(g)), float(np.median(f))
        out.append(CheckResult(f"fine median GLRT(I={r_hi}) < FDNC at SNR {snr_hi:g}, SIR {sir:g}",
                               mg < mf, f"GLRT {mg:.4f}, FDNC {mf:.4f} samples"))
    sir = cfg.check.sir_db if cfg.check.sir_db in cfg.sir_db else cfg.sir_db[0]
    for lo_r, hi_r in zip(ranks, ranks[1:]):
        ok, msg = _not_worse(results[(snr_hi, sir, "glrt", hi_r)], results[(snr_hi, sir, "glrt", lo_r)], rng)
        out.append(CheckResult(f"fine median non-increasing I={lo_r}->{hi_r} at SIR {sir:g}", ok, msg))
    snrs = sorted(cfg.snr_db)
    for lo_s, hi_s in zip(snrs, snrs[1:]):
        ok, msg = _not_worse(results[(hi_s, sir, "glrt", r_hi)], results[(lo_s, sir, "glrt", r_hi)], rng)
        out.append(CheckResult(f"fine median non-increasing SNR {lo_s:g}->{hi_s:g} dB at SIR {sir:g}", ok, msg))
    return out


# ---------------------------------------------------------------------------
# Delay resolvability
# ---------------------------------------------------------------------------

RATES = (0.9, 0.5, 0.1)


def run_resolvability(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Success-vs-separation curves and the (d90, d50, d10, J_max) table per SNR."""
    writer = ResultWriter(out_dir or cfg.out, cfg, "resolvability")
    setup = Setup.from_config(cfg)
    t0 = time.perf_counter()
    rows, curve_rows, trial_rows = [], [], []
    for snr in cfg.snr_db:
        seps = cfg.separations_for(snr)
        tab = resolvability_sweep(snr, cfg.resolvability.rank, cfg.trials, seps, setup.sync,
                                  seed=cfg.seed, dense=cfg.resolvability.dense, workers=cfg.workers,
                                  geometry=setup.geometry)
        d = [tab.at(r) for r in RATES]
        jm = j_max(d[2]) if d[2] > 0 else None
        rows.append(dict(snr=snr, d90=d[0], d50=d[1], d10=d[2], j_max=jm, table=tab))
        for s, p in zip(tab.separations, tab.success):
            curve_rows.append([snr, s, tab.trials, p])
        for k, s in enumerate(tab.separations):
            for t in range(tab.trials):
                trial_rows.append([snr, s, t, tab.counts[k, t]])
    writer.table("resolvability_table.csv", ["snr_db", "d90_samples", "d50_samples", "d10_samples", "j_max"],
                 [[r["snr"], r["d90"], r["d50"], r["d10"], r["j_max"]] for r in rows])
    writer.table("resolvability_curve.csv", ["snr_db", "separation_samples", "trials", "success_rate"],
                 curve_rows)
    writer.table("resolvability_trials.csv", ["snr_db", "separation_samples", "trial", "maxima"], trial_rows)
    writer.manifest({"elapsed_s": round(time.perf_counter() - t0, 3)})
    return rows


def check_resolvability(cfg: ExperimentConfig, rows: list[dict]) -> list[CheckResult]:
    out = []
    for r in rows:
        rng = None
        for k, v in cfg.check.resolvability_d90.items():
            if float(k) == float(r["snr"]):
                rng = v
        if rng is None:
            continue
        ok = rng[0] <= r["d90"] <= rng[1]
        out.append(CheckResult(f"resolvability d90 at SNR {r['snr']:g} dB in [{rng[0]}, {rng[1]}]",
                               ok, f"d90 = {r['d90']:.4f} samples"))
    by = sorted(rows, key=lambda r: r["snr"])
    for col in ("d90", "d50", "d10"):
        vals = [r[col] for r in by]
        ok = all(b <= a for a, b in zip(vals, vals[1:]))
        out.append(CheckResult(f"resolvability {col} non-increasing in SNR", ok,
                               ", ".join(f"{v:.4f}" for v in vals)))
    return out


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

TIMING_STREAM = "timing"


def run_timing(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Wall time of the fine stage (GLRT at ``estimator.rank_fine`` and FDNC).

    Window synthesis is excluded.  Runs single-threaded regardless of
    ``workers`` so the measurements do not compete for the CPU.
    """
    writer = ResultWriter(out_dir or cfg.out, cfg, "timing")
    setup = Setup.from_config(cfg)
    tp = cfg.timing
    ec = cfg.estimator_config(tp.snr_db)
    windows = []
    for k in range(tp.invocations):
        base = setup.base_scenario(TIMING_STREAM, k)
        sc = setup.calibrated(base, tp.snr_db, tp.sir_db)
        idx = int(math.floor(base.toa / setup.Ts)) - 1
        windows.append(synth_window(sc, setup.sync, setup.intf, idx).freq_samples)
    # one untimed call per method so lazy setup is not charged to the first sample
    for method in ("glrt", "fdnc"):
        fine_estimate(windows[0], ec, setup.sync, method=method)
    times = {"glrt": [], "fdnc": []}
    for Yf in windows:
        for method in ("glrt", "fdnc"):
            t0 = time.perf_counter_ns()
            fine_estimate(Yf, ec, setup.sync, method=method)
            times[method].append(time.perf_counter_ns() - t0)
    stats = {}
    rows = []
    for method, label_rank in (("glrt", ec.rank_fine), ("fdnc", 0)):
        ms = np.array(times[method]) / 1e6
        stats[method] = dict(mean=float(ms.mean()), max=float(ms.max()), min=float(ms.min()),
                             std=float(ms.std(ddof=1)) if ms.size > 1 else 0.0, n=int(ms.size))
    ratio = stats["glrt"]["mean"] / stats["fdnc"]["mean"]
    for method, rank in (("glrt", ec.rank_fine), ("fdnc", 0)):
        s = stats[method]
        rows.append([method, rank, tp.snr_db, _sir_label(tp.sir_db), s["n"], s["mean"], s["max"], s["min"],
                     s["std"], ratio if method == "glrt" else 1.0])
    writer.table("timing.csv", ["method", "rank", "snr_db", "sir_db", "invocations", "mean_ms", "max_ms",
                                "min_ms", "std_ms", "mean_ratio_to_fdnc"], rows)
    writer.manifest({"nondeterministic_files": ["timing.csv"]})
    stats["ratio"] = ratio
    return stats


def check_timing(cfg: ExperimentConfig, stats: dict) -> list[CheckResult]:
    g, f = stats["glrt"]["mean"], stats["fdnc"]["mean"]
    return [CheckResult("timing mean FDNC < mean GLRT", f < g, f"FDNC {f:.3f} ms, GLRT {g:.3f} ms")]


# ---------------------------------------------------------------------------
# Replay and CIR export
# ---------------------------------------------------------------------------

class ReplayMismatch(RuntimeError):
    pass


def _read_manifest(run_dir: Path) -> dict:
    try:
        return json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise OutputError(f"cannot read manifest in {run_dir}: {exc}") from None


def _read_rows(path: Path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from None


def replay(run_dir, trial: int, cfg: Optional[ExperimentConfig] = None) -> list[str]:
    """Re-run one persisted trial and compare it with the record field by field.

    ``cfg`` defaults to the configuration embedded in the run's manifest; a
    different configuration is refused with a list of the fields that drifted.
    Returns a human-readable report; raises :class:`ReplayMismatch` if any
    value differs.
    """
    run_dir = Path(run_dir)
    man = _read_manifest(run_dir)
    recorded = config_from_dict(man["config"])
    if cfg is None:
        cfg = recorded
    if config_hash(cfg) != man["config_hash"]:
        diff = config_diff(man["config"], config_dict(cfg))
        raise ConfigError("configuration differs from the recorded run:\n  " + "\n  ".join(diff or ["(hash only)"]))
    setup = Setup.from_config(cfg)
    command = man["command"]
    report, bad = [], []
    if command == "coarse-bench":
        rows = [r for r in _read_rows(run_dir / "coarse_trials.csv") if int(r["trial"]) == trial]
        fresh = {(_sir_label(r["sir"]), repr(r["snr"]), r["method"], str(r["rank"])): r
                 for r in coarse_trial(setup, trial)}
        for row in rows:
            r = fresh[(row["sir_db"], row["snr_db"], row["method"], row["rank"])]
            got = " ".join(repr(float(x)) for x in r["trace"])
            same = got == row["scores"] and str(r["noise_seed"]) == row["noise_seed"]
            (report if same else bad).append(
                f"SNR {row['snr_db']} SIR {row['sir_db']} {row['method']} rank {row['rank']}: "
                f"{'identical' if same else 'MISMATCH'} ({len(r['trace'])} window scores)")
    elif command == "fine-bench":
        rows = [r for r in _read_rows(run_dir / "fine_trials.csv") if int(r["trial"]) == trial]
        thresholds = _e2e_thresholds(setup) if cfg.fine.mode == "end-to-end" else None
        fresh = {(_sir_label(r["sir"]), repr(r["snr"]), r["method"], str(r["rank"])): r
                 for r in fine_trial(setup, trial, thresholds)}
        for row in rows:
            r = fresh[(row["sir_db"], row["snr_db"], row["method"], row["rank"])]
            same = _fmt(r["estimate"]) == row["estimate_samples"] and str(r["noise_seed"]) == row["noise_seed"]
            (report if same else bad).append(
                f"SNR {row['snr_db']} SIR {row['sir_db']} {row['method']} rank {row['rank']}: "
                f"estimate {_fmt(r['estimate'])} vs recorded {row['estimate_samples']} "
                f"{'identical' if same else 'MISMATCH'}")
    elif command == "resolvability":
        rows = [r for r in _read_rows(run_dir / "resolvability_trials.csv") if int(r["trial"]) == trial]
        from .metrics import count_maxima, two_path_scenario
        for row in rows:
            rng = trial_rng(cfg.seed, trial)
            sc = two_path_scenario(float(row["separation_samples"]), float(row["snr_db"]), setup.sync, rng,
                                   trial_noise_seed(cfg.seed, trial), setup.geometry)
            W = synth_window(sc, setup.sync, None, 0)
            n = count_maxima(W.freq_samples, setup.sync, cfg.resolvability.rank, cfg.resolvability.dense)
            same = str(n) == row["maxima"]
            (report if same else bad).append(
                f"SNR {row['snr_db']} separation {row['separation_samples']}: maxima {n} vs recorded "
                f"{row['maxima']} {'identical' if same else 'MISMATCH'}")
    else:
        raise ConfigError(f"runs of type {command!r} hold no per-trial records to replay")
    if not report and not bad:
        raise ConfigError(f"trial {trial} is not in the records of {run_dir}")
    if bad:
        raise ReplayMismatch("\n".join(bad + report))
    return report


def synth_cir(cfg: ExperimentConfig, path, trial: int = 0, snr_db: Optional[float] = None,
              sir_db: Optional[float] = None) -> MultipathScenario:
    """Write the (calibrated) channel of one synthetic trial as a CIR file."""
    from .channel import write_cir

    setup = Setup.from_config(cfg)
    base = setup.base_scenario(FINE_STREAM, trial)
    snr = cfg.snr_db[0] if snr_db is None else snr_db
    sir = cfg.sir_db[0] if sir_db is None else sir_db
    sc = setup.calibrated(base, snr, sir)
    if math.isinf(sir):
        sc = dataclasses.replace(sc, intf_paths=())
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        write_cir(sc, path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None
    return sc
