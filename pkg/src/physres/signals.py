"""Synthetic gearbox-fault recordings, CSV ingestion and windowing.

The generator produces the seven drive/gearbox channels at a fixed sample
rate. A healthy recording is a sum of sinusoidal gear-mesh components plus
Gaussian noise; each fault label adds its own signature on top of that
baseline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

CHANNELS: tuple = (
    "speed",
    "torque",
    "vdc",
    "i_active",
    "i_reactive",
    "accel_x",
    "accel_y",
)
NUM_CHANNELS = len(CHANNELS)

# Gear teeth on the instrumented gear; sets the mesh frequency.
MESH_TEETH = 18


class FaultLabel(IntEnum):
    HEALTHY = 0
    MISSING_TOOTH = 1
    CHIPPED_TOOTH = 2
    ROOT_CRACK = 3
    SURFACE_CRACK = 4
    ECCENTRICITY = 5


FAULT_NAMES = {
    FaultLabel.HEALTHY: "healthy",
    FaultLabel.MISSING_TOOTH: "missing tooth",
    FaultLabel.CHIPPED_TOOTH: "chipped tooth",
    FaultLabel.ROOT_CRACK: "root crack",
    FaultLabel.SURFACE_CRACK: "surface crack",
    FaultLabel.ECCENTRICITY: "eccentricity",
}


class SignalError(ValueError):
    """Invalid recording, generator setting or input file."""


def as_label(label: Union[int, FaultLabel]) -> FaultLabel:
    try:
        return FaultLabel(int(label))
    except ValueError:
        raise SignalError(f"fault label must be in 0..5, got {label!r}") from None


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 20.0
    sample_rate_hz: float = 5000.0
    base_speed_hz: float = 25.0
    noise_std: float = 0.05
    fault_intensity: float = 1.0

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise SignalError(f"duration_s must be positive, got {self.duration_s}")
        if not self.sample_rate_hz > 0:
            raise SignalError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.base_speed_hz > 0:
            raise SignalError(f"base_speed_hz must be positive, got {self.base_speed_hz}")
        if self.noise_std < 0:
            raise SignalError(f"noise_std must be nonnegative, got {self.noise_std}")
        if not 0.0 <= self.fault_intensity <= 1.0:
            raise SignalError(f"fault_intensity must be in [0, 1], got {self.fault_intensity}")
        if self.duration_s * self.sample_rate_hz < 1:
            raise SignalError("duration_s * sample_rate_hz must be at least 1")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


@dataclass(frozen=True)
class RawRecording:
    """A 7-channel recording. ``samples`` has shape (7, num_samples)."""

    samples: np.ndarray
    sample_rate_hz: float
    label: FaultLabel
    load_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != NUM_CHANNELS:
            raise SignalError(
                f"samples must have shape ({NUM_CHANNELS}, n), got {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise SignalError("recording contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise SignalError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "label", as_label(self.label))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.samples[CHANNELS.index(name)]


@dataclass(frozen=True)
class Window:
    samples: np.ndarray
    label: FaultLabel
    load_level: float
    offset: int


# Healthy operating point. Torque and active-current dc levels are
# multiplied by the load level.
_TORQUE_RATED = 10.0  # N m
_CURRENT_RATED = 8.0  # A
_VDC = 560.0  # V


def _slow_noise(rng: np.random.Generator, n: int, fs: float, rows: int, corr_s: float = 1.0) -> np.ndarray:
    """Unit-variance random drift with roughly ``corr_s`` seconds correlation time."""
    knots = int(math.ceil(n / (corr_s * fs))) + 2
    values = rng.standard_normal((rows, knots))
    pos = np.arange(n) / (corr_s * fs)
    return np.vstack([np.interp(pos, np.arange(knots), v) for v in values])


def synthesize_recording(
    label: Union[int, FaultLabel],
    load_level: float,
    cfg: SynthConfig = SynthConfig(),
    seed: int = 0,
) -> RawRecording:
    """Generate one seeded recording for ``label`` at ``load_level``.

    Fault signatures (scaled by ``cfg.fault_intensity``):

    * missing tooth: impulse train on both accelerometers and a torque dip,
      once per revolution
    * chipped tooth: random torque fluctuation variance times (1 + 3 I), plus
      amplitude modulation of the accelerometers
    * root crack: low-frequency sideband on torque and active current
    * surface crack: raised broadband noise floor on the accelerometers
    * eccentricity: 1x-rotation oscillation on speed and reactive current
    """
    label = as_label(label)
    cfg.validate()
    if not 0.0 <= load_level <= 1.0:
        raise SignalError(f"load_level must be in [0, 1], got {load_level}")
    if seed < 0:
        raise SignalError("seed must be unsigned")

    rng = np.random.default_rng(int(seed))
    n = cfg.num_samples
    fs = cfg.sample_rate_hz
    t = np.arange(n) / fs
    intensity = cfg.fault_intensity
    noise = cfg.noise_std

    f_rot = cfg.base_speed_hz * (1.0 - 0.02 * load_level)
    f_mesh = MESH_TEETH * f_rot
    # Harmonics are phase-locked to the fundamental mesh component.
    mesh_phase = 2 * np.pi * f_mesh * t + rng.uniform(0, 2 * np.pi)
    mesh = np.sin(mesh_phase)
    mesh2 = np.sin(2 * mesh_phase)
    rot_phase = rng.uniform(0, 2 * np.pi)
    rotation = np.sin(2 * np.pi * f_rot * t + rot_phase)

    # Slow per-channel drift of the mesh ripple amplitude (temperature,
    # lubrication); the dc operating point stays fixed.
    jitter = 1.0 + 0.1 * _slow_noise(rng, n, fs, NUM_CHANNELS)

    # Noise is drawn for every channel up front so that the healthy baseline
    # is identical across labels for the same seed.
    white = rng.standard_normal((NUM_CHANNELS, n))
    extra = rng.standard_normal((2, n))

    def ripple(ch: int, scale: float) -> np.ndarray:
        return scale * noise * jitter[ch] * (mesh + 0.5 * mesh2)

    speed = f_rot + ripple(0, 0.5) + 0.5 * noise * white[0]
    torque_dc = _TORQUE_RATED * load_level
    torque_ripple = 1.0 * noise * jitter[1] * mesh
    torque_noise = 1.0 * noise * white[1]
    vdc = _VDC + ripple(2, 20.0) + 20.0 * noise * white[2]
    i_active = _CURRENT_RATED * load_level + ripple(3, 2.0) + 2.0 * noise * white[3]
    i_reactive = 0.3 * _CURRENT_RATED + ripple(4, 2.0) + 2.0 * noise * white[4]
    accel_x = ripple(5, 10.0) + 10.0 * noise * white[5]
    accel_y = ripple(6, 10.0) * 0.8 + 10.0 * noise * white[6]

    if label == FaultLabel.MISSING_TOOTH:
        # One decaying impact per revolution where the tooth is missing.
        period = 1.0 / f_rot
        phase = np.mod(t + rot_phase / (2 * np.pi * f_rot), period)
        impact = np.exp(-phase * 800.0) * np.sin(2 * np.pi * 1200.0 * phase)
        amp = 60.0 * noise * intensity
        accel_x = accel_x + amp * impact
        accel_y = accel_y + 0.7 * amp * impact
        # The lost mesh contact also shows up as a torque dip.
        torque_ripple = torque_ripple - 8.0 * noise * intensity * np.exp(-phase * 300.0)
    elif label == FaultLabel.CHIPPED_TOOTH:
        torque_noise = torque_noise * math.sqrt(1.0 + 3.0 * intensity)
        am = 1.0 + 0.6 * intensity * rotation
        accel_x = accel_x * am
        accel_y = accel_y * am
    elif label == FaultLabel.ROOT_CRACK:
        side = np.sin(2 * np.pi * 0.5 * f_rot * t + rot_phase)
        torque_ripple = torque_ripple + 1.5 * noise * intensity * side
        i_active = i_active + 4.0 * noise * intensity * side
    elif label == FaultLabel.SURFACE_CRACK:
        accel_x = accel_x + 12.0 * noise * intensity * extra[0]
        accel_y = accel_y + 12.0 * noise * intensity * extra[1]
    elif label == FaultLabel.ECCENTRICITY:
        speed = speed + 1.0 * noise * intensity * rotation
        i_reactive = i_reactive + 4.0 * noise * intensity * rotation

    torque = torque_dc + torque_ripple + torque_noise
    samples = np.vstack([speed, torque, vdc, i_active, i_reactive, accel_x, accel_y])
    return RawRecording(samples, fs, label, float(load_level), int(seed))


def ingest_csv(
    path: Union[str, Path], label: Union[int, FaultLabel], sample_rate_hz: float
) -> RawRecording:
    """Read a recording from CSV, mapping columns by header name.

    Lines starting with ``#`` before the header are skipped. Row indices in
    error messages count data rows from 1 (the header is not counted).
    """
    label = as_label(label)
    if not sample_rate_hz > 0:
        raise SignalError("sample_rate_hz must be positive")
    path = Path(path)
    if not path.is_file():
        raise SignalError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if row and not row[0].lstrip().startswith("#"):
                header = [h.strip() for h in row]
                break
        if header is None:
            raise SignalError(f"{path}: empty file")
        missing = [c for c in CHANNELS if c not in header]
        if missing:
            raise SignalError(f"{path}: missing channel column(s): {', '.join(missing)}")
        cols = [header.index(c) for c in CHANNELS]
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for c in cols:
                try:
                    v = float(row[c])
                except (ValueError, IndexError):
                    raise SignalError(f"{path}: non-numeric value at row {i}") from None
                if not math.isfinite(v):
                    raise SignalError(f"{path}: non-finite value at row {i}")
                values.append(v)
            rows.append(values)
    if len(rows) < 2:
        raise SignalError(f"{path}: need at least 2 data rows, got {len(rows)}")
    return RawRecording(np.array(rows).T, float(sample_rate_hz), label)


def write_csv(rec: RawRecording, path: Union[str, Path], comment: str = None) -> None:
    """Write ``rec`` as CSV with a channel-name header, one sample per row."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(CHANNELS) + "\n")
        for row in rec.samples.T:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def segment(rec: RawRecording, window_len: int, hop: int) -> List[Window]:
    if window_len < 1 or hop < 1:
        raise SignalError("window_len and hop must be positive")
    n = rec.num_samples
    if window_len > n:
        raise SignalError(f"window_len {window_len} exceeds recording length {n}")
    return [
        Window(rec.samples[:, off : off + window_len], rec.label, rec.load_level, off)
        for off in range(0, n - window_len + 1, hop)
    ]


def concatenate(windows: Sequence[Window]) -> np.ndarray:
    return np.concatenate([w.samples for w in windows], axis=1)
