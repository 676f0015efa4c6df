"""Multi-antenna observation windows under block-fading multipath plus interference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
import yaml

from .waveforms import SyncWaveform, udft

__all__ = [
    "SPEED_OF_LIGHT",
    "BOLTZMANN",
    "ArrayGeometry",
    "Mpc",
    "MultipathScenario",
    "ObservationWindow",
    "ura_response",
    "synth_window",
    "window_stream",
    "calibrate_powers",
    "measured_snr",
    "measured_sir",
    "thermal_noise_variance",
    "random_scenario",
    "cone_direction",
    "CirError",
    "CirFormatError",
    "CirDataError",
    "load_cir",
    "parse_cir",
    "write_cir",
    "dump_cir",
]

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23

# noise is generated in fixed blocks of stream columns, each keyed by its index
_NOISE_BLOCK = 256
_NOISE_TAG = 0x4E4F495345  # separates the noise key space from other uses of the seed


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform rectangular array in the plane orthogonal to boresight (+x).

    Columns run along +y and rows along +z; ``spacing`` defaults to half a
    carrier wavelength.
    """

    rows: int = 8
    cols: int = 4
    carrier_hz: float = 15e9
    spacing: float | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array needs at least one row and one column")
        if self.carrier_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.spacing is None:
            object.__setattr__(self, "spacing", 0.5 * self.wavelength)

    @property
    def M(self) -> int:
        return self.rows * self.cols

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def positions(self) -> np.ndarray:
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        pos = np.zeros((self.M, 3))
        pos[:, 1] = (c.ravel() - (self.cols - 1) / 2) * self.spacing
        pos[:, 2] = (r.ravel() - (self.rows - 1) / 2) * self.spacing
        return pos


def ura_response(geometry: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-modulus array response for a plane wave from (azimuth, elevation) radians."""
    if abs(elevation) > math.pi / 2 + 1e-12:
        raise ValueError("elevation must lie in [-pi/2, pi/2]")
    d = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    return np.exp(2j * np.pi / geometry.wavelength * (geometry.positions() @ d))


@dataclass(frozen=True)
class Mpc:
    """One propagation path: absolute delay (s), complex gain, arrival angles (rad)."""

    delay: float
    gain: complex
    azimuth: float = 0.0
    elevation: float = 0.0

    def __post_init__(self):
        if not self.delay >= 0.0:
            raise ValueError(f"path delay must be nonnegative, got {self.delay}")
        object.__setattr__(self, "gain", complex(self.gain))


@dataclass(frozen=True)
class MultipathScenario:
    sync_paths: tuple
    intf_paths: tuple = ()
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    noise_variance: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        sync = tuple(self.sync_paths)
        if not sync:
            raise ValueError("scenario needs at least one synchronization path")
        if any(b.delay < a.delay for a, b in zip(sync, sync[1:])):
            raise ValueError("sync paths must be sorted by delay")
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "sync_paths", sync)
        object.__setattr__(self, "intf_paths", tuple(self.intf_paths))

    @property
    def toa(self) -> float:
        return self.sync_paths[0].delay


@dataclass
class ObservationWindow:
    """``samples`` is the M x N window starting at stream column ``index``."""

    index: int
    samples: np.ndarray

    @cached_property
    def freq_samples(self) -> np.ndarray:
        return udft(self.samples, axis=1)


def _noise_block(seed: int, block: int, M: int) -> np.ndarray:
    bitgen = np.random.Philox(key=[seed, _NOISE_TAG], counter=[0, block, 0, 0])
    g = np.random.Generator(bitgen).standard_normal((2, M, _NOISE_BLOCK))
    return (g[0] + 1j * g[1]) * math.sqrt(0.5)


def unit_noise(seed: int, start: int, M: int, N: int) -> np.ndarray:
    """Unit-variance complex Gaussian noise for stream columns ``start .. start+N-1``."""
    first, last = start // _NOISE_BLOCK, (start + N - 1) // _NOISE_BLOCK
    blocks = [_noise_block(seed, b, M) for b in range(first, last + 1)]
    z = np.concatenate(blocks, axis=1)
    off = start - first * _NOISE_BLOCK
    return z[:, off:off + N]


def _path_sum(Y, paths, waveform, geometry, start, N):
    for p in paths:
        if p.gain == 0:
            continue
        coef = ura_response(geometry, p.azimuth, p.elevation) * p.gain
        Y += np.outer(coef, waveform.sample(p.delay, N, start=start))


def synth_window(scenario: MultipathScenario, sync_waveform: SyncWaveform,
                 intf_waveform: SyncWaveform | None, index: int,
                 N: int | None = None) -> ObservationWindow:
    """Observation window at stream column ``index``.

    Each column depends only on its absolute stream position, so overlapping
    windows agree bit for bit.
    """
    if index < 0:
        raise ValueError("window index must be nonnegative")
    N = sync_waveform.window_length if N is None else N
    M = scenario.geometry.M
    Y = np.zeros((M, N), dtype=complex)
    _path_sum(Y, scenario.sync_paths, sync_waveform, scenario.geometry, index, N)
    if scenario.intf_paths:
        if intf_waveform is None:
            raise ValueError("scenario has interference paths but no interference waveform")
        _path_sum(Y, scenario.intf_paths, intf_waveform, scenario.geometry, index, N)
    Y += math.sqrt(scenario.noise_variance) * unit_noise(scenario.rng_seed, index, M, N)
    return ObservationWindow(index, Y)


def window_stream(scenario: MultipathScenario, waveforms: Sequence[SyncWaveform],
                  start: int, count: int) -> Iterator[ObservationWindow]:
    """Windows ``start .. start+count-1`` of one sample stream.

    ``waveforms`` is ``(sync, interference)``; interference may be ``None``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    sync, intf = waveforms
    N = sync.window_length
    M = scenario.geometry.M
    # synthesise the covered stretch once and slice views out of it
    Y = np.zeros((M, N + count - 1), dtype=complex)
    _path_sum(Y, scenario.sync_paths, sync, scenario.geometry, start, Y.shape[1])
    if scenario.intf_paths:
        _path_sum(Y, scenario.intf_paths, intf, scenario.geometry, start, Y.shape[1])
    Y += math.sqrt(scenario.noise_variance) * unit_noise(scenario.rng_seed, start, M, Y.shape[1])
    for k in range(count):
        yield ObservationWindow(start + k, Y[:, k:k + N])


def measured_snr(scenario: MultipathScenario, sync_waveform: SyncWaveform) -> float:
    """Per-antenna first-path SNR (linear): ``|beta_1|^2 ||x_0||^2 / (N N0)``."""
    b = abs(scenario.sync_paths[0].gain) ** 2
    return b * sync_waveform.energy / (sync_waveform.window_length * scenario.noise_variance)


def measured_sir(scenario: MultipathScenario) -> float:
    """Total sync path power over total interference path power (linear)."""
    ps = sum(abs(p.gain) ** 2 for p in scenario.sync_paths)
    pi = sum(abs(p.gain) ** 2 for p in scenario.intf_paths)
    return math.inf if pi == 0 else ps / pi


def calibrate_powers(scenario: MultipathScenario, sync_waveform: SyncWaveform,
                     snr_db: float, sir_db: float) -> MultipathScenario:
    """Rescale path gains to hit a target SNR and SIR; N0 is left unchanged."""
    if math.isfinite(sir_db) and not scenario.intf_paths:
        raise ValueError("finite SIR requested but the scenario has no interference paths")
    if sir_db == -math.inf:
        raise ValueError("SIR of -inf dB is not supported")
    snr = 10.0 ** (snr_db / 10.0)
    cur = measured_snr(scenario, sync_waveform)
    if cur == 0:
        raise ValueError("first sync path has zero gain")
    cs = math.sqrt(snr / cur)
    sync = tuple(replace(p, gain=p.gain * cs) for p in scenario.sync_paths)

    if math.isinf(sir_db):
        intf = tuple(replace(p, gain=0j) for p in scenario.intf_paths)
    else:
        ps = sum(abs(p.gain) ** 2 for p in sync)
        pi = sum(abs(p.gain) ** 2 for p in scenario.intf_paths)
        if pi == 0:
            raise ValueError("interference paths carry no power")
        ci = math.sqrt(ps / (pi * 10.0 ** (sir_db / 10.0)))
        intf = tuple(replace(p, gain=p.gain * ci) for p in scenario.intf_paths)
    return replace(scenario, sync_paths=sync, intf_paths=intf)


def thermal_noise_variance(f_s: float, T_sys: float, noise_figure_db: float) -> float:
    """``k_B f_s T_sys 10^(F/10)`` in watts."""
    if f_s <= 0 or T_sys <= 0:
        raise ValueError("sampling rate and temperature must be positive")
    return BOLTZMANN * f_s * T_sys * 10.0 ** (noise_figure_db / 10.0)


def cone_direction(rng: np.random.Generator, half_angle: float = math.radians(60)) -> tuple[float, float]:
    """Uniform direction inside a cone around boresight, as (azimuth, elevation)."""
    cos_t = rng.uniform(math.cos(half_angle), 1.0)
    sin_t = math.sqrt(1.0 - cos_t * cos_t)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    d = (cos_t, sin_t * math.cos(phi), sin_t * math.sin(phi))
    return math.atan2(d[1], d[0]), math.asin(max(-1.0, min(1.0, d[2])))


def _path_profile(rng, first_delay, n, T_s, mean_gap, decay, spread_db):
    gaps = rng.exponential(mean_gap, size=n - 1) + 0.1
    excess = np.concatenate([[0.0], np.cumsum(gaps)])
    power_db = -10.0 * np.log10(np.e) * excess / decay
    power_db[1:] += rng.normal(0.0, spread_db, size=n - 1)
    amp = 10.0 ** (power_db / 20.0)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    paths = []
    for k in range(n):
        az, el = cone_direction(rng)
        paths.append(Mpc(first_delay + excess[k] * T_s, amp[k] * np.exp(1j * phase[k]), az, el))
    return tuple(paths)


def random_scenario(rng: np.random.Generator, first_delay: float, sync_waveform: SyncWaveform,
                    geometry: ArrayGeometry | None = None, n_sync: tuple = (2, 6),
                    n_intf: tuple = (2, 6), mean_gap: float = 1.5, decay: float = 3.0,
                    spread_db: float = 2.0, noise_seed: int | None = None) -> MultipathScenario:
    """Random factory-like multipath scenario with an interfering transmitter.

    Path counts are uniform over the inclusive ranges ``n_sync``/``n_intf``;
    excess delays (in samples) follow exponential gaps of mean ``mean_gap``;
    path power decays as ``exp(-excess/decay)`` with lognormal spread.
    Arrival directions are uniform within the 60-degree cone around boresight.
    Gains are unnormalised; use :func:`calibrate_powers`.
    """
    geometry = ArrayGeometry() if geometry is None else geometry
    T_s = sync_waveform.sample_period
    ls = int(rng.integers(n_sync[0], n_sync[1] + 1))
    sync = _path_profile(rng, first_delay, ls, T_s, mean_gap, decay, spread_db)
    intf = ()
    if n_intf[1] > 0:
        li = int(rng.integers(n_intf[0], n_intf[1] + 1))
        period = sync_waveform.K * sync_waveform.symbol_period
        intf = _path_profile(rng, rng.uniform(0.0, period), li, T_s, mean_gap, decay, spread_db)
    seed = int(rng.integers(0, 2**63)) if noise_seed is None else noise_seed
    return MultipathScenario(sync, intf, geometry, 1.0, seed)


# ---------------------------------------------------------------------------
# CIR files
# ---------------------------------------------------------------------------

class CirError(ValueError):
    """Problem with a CIR document; ``line`` is 1-based or ``None``."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class CirFormatError(CirError):
    """Malformed document: bad syntax, wrong types, missing or unknown fields."""


class CirDataError(CirError):
    """Well-formed document whose content is not a usable scenario."""


_TOP_FIELDS = {"carrier_hz": True, "array": True, "noise_variance_w": True,
               "sync_paths": True, "intf_paths": False}
_ARRAY_FIELDS = {"rows": True, "cols": True, "spacing_m": False}
_PATH_FIELDS = {"delay_s": True, "gain_re": True, "gain_im": True,
                "azimuth_deg": True, "elevation_deg": True}

# angles are written rounded to this many decimals so deg -> rad -> deg is stable
_ANGLE_DECIMALS = 10


def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, fields: dict, what: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise CirFormatError(f"{what} must be a mapping", _line(node))
    out = {}
    for k, v in node.value:
        key = k.value if isinstance(k, yaml.ScalarNode) else None
        if key not in fields:
            raise CirFormatError(f"unknown field {key!r} in {what}", _line(k))
        if key in out:
            raise CirFormatError(f"duplicate field {key!r} in {what}", _line(k))
        out[key] = v
    for key, required in fields.items():
        if required and key not in out:
            raise CirFormatError(f"{what} is missing field {key!r}", _line(node))
    return out


def _number(node, what: str, integer: bool = False):
    if not isinstance(node, yaml.ScalarNode):
        raise CirFormatError(f"{what} must be a number", _line(node))
    value = yaml.SafeLoader("").construct_object(node)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CirFormatError(f"{what} must be a number, got {node.value!r}", _line(node))
    if integer:
        if not isinstance(value, int):
            raise CirFormatError(f"{what} must be an integer", _line(node))
        return value
    value = float(value)
    if not math.isfinite(value):
        raise CirFormatError(f"{what} must be finite", _line(node))
    return value


def _paths(node, what: str) -> list:
    if not isinstance(node, yaml.SequenceNode):
        raise CirFormatError(f"{what} must be a list", _line(node))
    paths = []
    for item in node.value:
        rec = _mapping(item, _PATH_FIELDS, f"{what} record")
        delay = _number(rec["delay_s"], "delay_s")
        if delay < 0:
            raise CirDataError(f"negative path delay {delay!r}", _line(rec["delay_s"]))
        gain = complex(_number(rec["gain_re"], "gain_re"), _number(rec["gain_im"], "gain_im"))
        el = _number(rec["elevation_deg"], "elevation_deg")
        if abs(el) > 90.0:
            raise CirDataError(f"elevation {el} outside [-90, 90] degrees", _line(rec["elevation_deg"]))
        az = _number(rec["azimuth_deg"], "azimuth_deg")
        paths.append(Mpc(delay, gain, math.radians(az), math.radians(el)))
    return sorted(paths, key=lambda p: p.delay)


def parse_cir(text: str, rng_seed: int = 0) -> MultipathScenario:
    """Build a scenario from CIR document text.  Paths are sorted by delay."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise CirFormatError(exc.problem or str(exc), None if mark is None else mark.line + 1) from None
    if root is None:
        raise CirFormatError("empty document", 1)
    top = _mapping(root, _TOP_FIELDS, "document")
    arr = _mapping(top["array"], _ARRAY_FIELDS, "array")
    rows = _number(arr["rows"], "rows", integer=True)
    cols = _number(arr["cols"], "cols", integer=True)
    if rows < 1 or cols < 1:
        raise CirDataError("array needs at least one row and one column", _line(top["array"]))
    carrier = _number(top["carrier_hz"], "carrier_hz")
    if carrier <= 0:
        raise CirDataError("carrier_hz must be positive", _line(top["carrier_hz"]))
    spacing = _number(arr["spacing_m"], "spacing_m") if "spacing_m" in arr else None
    if spacing is not None and spacing <= 0:
        raise CirDataError("spacing_m must be positive", _line(arr["spacing_m"]))
    n0 = _number(top["noise_variance_w"], "noise_variance_w")
    if n0 <= 0:
        raise CirDataError("noise_variance_w must be positive", _line(top["noise_variance_w"]))
    sync = _paths(top["sync_paths"], "sync_paths")
    if not sync:
        raise CirDataError("sync_paths is empty", _line(top["sync_paths"]))
    intf = _paths(top["intf_paths"], "intf_paths") if "intf_paths" in top else []
    geom = ArrayGeometry(rows, cols, carrier, spacing)
    return MultipathScenario(tuple(sync), tuple(intf), geom, n0, rng_seed)


def load_cir(path, rng_seed: int = 0) -> MultipathScenario:
    """Read a CIR file.

    Raises
    ------
    CirFormatError
        Syntax errors, wrong field types, unknown or missing fields.
    CirDataError
        Empty ``sync_paths``, negative delays and other invalid values.
    OSError
        The file cannot be read.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_cir(text, rng_seed)


def _path_record(p: Mpc) -> dict:
    return {
        "delay_s": float(p.delay),
        "gain_re": float(p.gain.real),
        "gain_im": float(p.gain.imag),
        "azimuth_deg": round(math.degrees(p.azimuth), _ANGLE_DECIMALS),
        "elevation_deg": round(math.degrees(p.elevation), _ANGLE_DECIMALS),
    }


def dump_cir(scenario: MultipathScenario) -> str:
    """Canonical CIR text for ``scenario`` (the seed is not part of the format)."""
    g = scenario.geometry
    doc = {
        "carrier_hz": float(g.carrier_hz),
        "array": {"rows": int(g.rows), "cols": int(g.cols), "spacing_m": float(g.spacing)},
        "noise_variance_w": float(scenario.noise_variance),
        "sync_paths": [_path_record(p) for p in scenario.sync_paths],
        "intf_paths": [_path_record(p) for p in scenario.intf_paths],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def write_cir(scenario: MultipathScenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_cir(scenario))
