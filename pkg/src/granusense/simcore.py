"""Granular jamming resistance on a wedge-tipped probe and its relief by vibration.

The force law is phenomenological: no resistance above an onset depth, then
superlinear growth in the penetration past onset, divided by a fluidization
factor that grows with the dimensionless vibration acceleration.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

GRAVITY = 9.81
DEFAULT_MAX_DEPTH = 0.1524  # 6 inches of media in the container
DEFAULT_SAMPLE_RATE = 100.0


class InteractionMode(str, enum.Enum):
    STICKS = "Sticks"
    BLOCKS = "Blocks"
    SLIPS = "Slips"


class ClearingAction(str, enum.Enum):
    NONE = "None"
    VIBRATE = "Vibrate"
    TWIST = "Twist"


@dataclass(frozen=True)
class MediumSpec:
    name: str
    bulk_density: float
    grain_diameter: float
    k: float
    z0: float
    dz0: float
    interaction_mode: InteractionMode
    grain_length: float | None = None
    p: float = 1.5
    c: float = 0.5
    noise_sigma: float = 0.05
    ripple_gain: float = 0.15
    grain_density: float = 0.0
    occlusion: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bulk_density <= 0:
            raise ValueError(f"bulk_density must be > 0, got {self.bulk_density}")
        if self.grain_diameter <= 0:
            raise ValueError(f"grain_diameter must be > 0, got {self.grain_diameter}")
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.z0 < 0 or self.dz0 < 0:
            raise ValueError("onset depths z0 and dz0 must be >= 0")
        if self.p <= 0 or self.c < 0:
            raise ValueError("exponent p must be > 0 and fluidization constant c >= 0")
        object.__setattr__(self, "interaction_mode", InteractionMode(self.interaction_mode))

    @property
    def grain_major(self) -> float:
        return self.grain_length if self.grain_length is not None else self.grain_diameter


@dataclass(frozen=True)
class VibrationProfile:
    voltage: float
    frequency: float
    accel_amplitude: float

    def __post_init__(self):
        if self.frequency < 0 or self.accel_amplitude < 0:
            raise ValueError("frequency and acceleration amplitude must be >= 0")
        if self.frequency > 300.0:
            raise ValueError(
                f"frequency {self.frequency} Hz exceeds the 300 Hz motor limit (18000 rpm)")
        if self.voltage == 0 and (self.frequency != 0 or self.accel_amplitude != 0):
            raise ValueError("voltage 0 means vibration off: frequency and acceleration must be 0")

    @property
    def is_on(self) -> bool:
        return self.voltage != 0


VIBRATION_OFF = VibrationProfile(0.0, 0.0, 0.0)

# Measured tip vibration per motor voltage (the 12 V drop past the 10 V resonance is kept).
MOTOR_PROFILES = {
    0: VIBRATION_OFF,
    6: VibrationProfile(6.0, 156.0, 9.6),
    8: VibrationProfile(8.0, 189.0, 19.8),
    10: VibrationProfile(10.0, 213.0, 23.6),
    12: VibrationProfile(12.0, 172.0, 14.7),
}


def vibration_profile(voltage: float) -> VibrationProfile:
    """Look up the measured profile for a motor voltage."""
    key = int(voltage) if float(voltage).is_integer() else voltage
    try:
        return MOTOR_PROFILES[key]
    except KeyError:
        raise ValueError(
            f"no vibration profile for {voltage} V; known voltages: "
            f"{sorted(MOTOR_PROFILES)}") from None


@dataclass(frozen=True)
class ProbeSpec:
    tip_area: float
    descent_speed: float = 0.002
    force_limit: float = 30.0

    def __post_init__(self):
        if self.tip_area <= 0 or self.descent_speed <= 0 or self.force_limit <= 0:
            raise ValueError("tip_area, descent_speed and force_limit must all be > 0")

    @classmethod
    def from_diameter(cls, diameter: float, **kwargs) -> "ProbeSpec":
        return cls(tip_area=math.pi * (diameter / 2) ** 2, **kwargs)


@dataclass
class ForceTrace:
    time: np.ndarray
    depth: np.ndarray
    force: np.ndarray
    stalled: bool
    stall_depth: float | None = None

    def __post_init__(self):
        if self.stalled != (self.stall_depth is not None):
            raise ValueError("stall_depth must be present iff the run stalled")

    def __len__(self):
        return len(self.time)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time_s,depth_m,force_n\n")
        for t, d, f in zip(self.time, self.depth, self.force):
            buf.write(f"{float(t)!r},{float(d)!r},{float(f)!r}\n")
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, force_limit: float | None = None) -> "ForceTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["time_s", "depth_m", "force_n"]:
                raise ValueError(f"{path}: expected header time_s,depth_m,force_n, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        arr = np.asarray(rows, dtype=float).reshape(-1, 3)
        stalled = force_limit is not None and len(arr) > 0 and arr[-1, 2] >= force_limit
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], stalled,
                   float(arr[-1, 1]) if stalled else None)


@dataclass(frozen=True)
class Calibration:
    gravity: float
    probe: ProbeSpec
    media: dict

    def medium(self, name: str) -> MediumSpec:
        try:
            return self.media[name]
        except KeyError:
            raise ValueError(f"unknown medium {name!r}; calibrated media: {sorted(self.media)}") from None


def _medium_from_record(name: str, rec: dict) -> MediumSpec:
    return MediumSpec(
        name=name,
        bulk_density=rec["bulk_density_kg_m3"],
        grain_diameter=rec["grain_diameter_m"],
        grain_length=rec.get("grain_length_m"),
        k=rec["k"],
        z0=rec["z0_m"],
        dz0=rec["dz0_m"],
        p=rec.get("p", 1.5),
        c=rec.get("c", 0.5),
        noise_sigma=rec.get("noise_sigma_n", 0.05),
        ripple_gain=rec.get("ripple_gain_n", 0.15),
        grain_density=rec.get("grain_density_per_mm2", 0.0),
        occlusion=dict(rec.get("occlusion", {})),
        interaction_mode=InteractionMode(rec["interaction_mode"]),
    )


def load_calibration(path=None) -> Calibration:
    """Read a calibration document; the shipped one when ``path`` is None."""
    if path is None:
        text = resources.files("granusense").joinpath("data/calibration.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    probe = doc["probe"]
    return Calibration(
        gravity=doc.get("gravity_m_s2", GRAVITY),
        probe=ProbeSpec.from_diameter(
            probe["outer_diameter_m"],
            descent_speed=probe["descent_speed_m_s"],
            force_limit=probe["force_limit_n"],
        ),
        media={name: _medium_from_record(name, rec) for name, rec in doc["media"].items()},
    )


def builtin_medium(name: str) -> MediumSpec:
    return load_calibration().medium(name)


def dimensionless_acceleration(vib: VibrationProfile) -> float:
    """Vibration acceleration amplitude in units of g."""
    if not vib.is_on:
        return 0.0
    return vib.accel_amplitude / GRAVITY


def onset_depth(medium: MediumSpec, vib: VibrationProfile) -> float:
    gamma = dimensionless_acceleration(vib)
    if gamma == 0:
        return medium.z0
    return medium.z0 + medium.dz0 * min(gamma, 1.0)


def resistance_force(depth, medium: MediumSpec, probe: ProbeSpec,
                     vib: VibrationProfile):
    """Quasi-static jamming force on the probe at ``depth`` metres.

    Accepts a scalar or an array of depths and returns the same shape.
    """
    z = np.asarray(depth, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise ValueError("depth must be >= 0")
    gamma = dimensionless_acceleration(vib)
    z_on = onset_depth(medium, vib)
    past = np.clip(z - z_on, 0.0, None)
    scale = medium.k * medium.bulk_density * GRAVITY * probe.tip_area
    force = scale * past ** medium.p / (1.0 + medium.c * gamma)
    return float(force) if force.ndim == 0 else force


def stall_depth_model(medium: MediumSpec, probe: ProbeSpec, vib: VibrationProfile) -> float:
    """Noise-free depth at which the resistance reaches the force limit."""
    gamma = dimensionless_acceleration(vib)
    scale = medium.k * medium.bulk_density * GRAVITY * probe.tip_area
    travel = (probe.force_limit * (1.0 + medium.c * gamma) / scale) ** (1.0 / medium.p)
    return onset_depth(medium, vib) + travel


def simulate_penetration(medium: MediumSpec, probe: ProbeSpec, vib: VibrationProfile,
                         max_depth: float = DEFAULT_MAX_DEPTH,
                         sample_rate: float = DEFAULT_SAMPLE_RATE,
                         noise_seed: int = 0,
                         noise_sigma: float | None = None) -> ForceTrace:
    """Constant-speed vertical descent until the force limit or ``max_depth``.

    The measured force is the resistance plus zero-mean sensor noise and,
    while vibrating, a ripple at the vibration frequency whose amplitude
    scales with the dimensionless acceleration. Negative readings are clipped
    to zero.
    """
    if max_depth <= 0:
        raise ValueError(f"max_depth must be > 0, got {max_depth}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be > 0, got {sample_rate}")
    sigma = medium.noise_sigma if noise_sigma is None else noise_sigma
    if sigma < 0:
        raise ValueError("noise_sigma must be >= 0")

    duration = max_depth / probe.descent_speed
    n = int(math.floor(duration * sample_rate + 1e-9)) + 1
    t = np.arange(n) / sample_rate
    z = np.minimum(t * probe.descent_speed, max_depth)

    rng = np.random.default_rng(noise_seed)
    force = np.asarray(resistance_force(z, medium, probe, vib), dtype=float)
    if sigma > 0:
        force = force + rng.normal(0.0, sigma, size=n)
    if vib.is_on:
        gamma = dimensionless_acceleration(vib)
        phase = rng.uniform(0.0, 2 * math.pi)
        force = force + medium.ripple_gain * gamma * np.sin(2 * math.pi * vib.frequency * t + phase)
    force = np.clip(force, 0.0, None)

    over = np.flatnonzero(force >= probe.force_limit)
    if over.size:
        end = over[0] + 1
        return ForceTrace(t[:end], z[:end], force[:end], True, float(z[end - 1]))
    return ForceTrace(t, z, force, False, None)


def occlusion_fraction(medium: MediumSpec, action: ClearingAction | str, rng_seed: int) -> float:
    """Fraction of the object footprint hidden by lodged grains.

    Sticks media leave a small boundary fraction that no action clears;
    Blocks media draw from a Beta distribution whose mean depends on the
    clearing action; Slips media never occlude.
    """
    action = ClearingAction(action)
    mode = medium.interaction_mode
    if mode is InteractionMode.SLIPS:
        return 0.0
    if mode is InteractionMode.STICKS:
        # same draw regardless of action: stuck grains stay stuck
        base = medium.occlusion.get(ClearingAction.NONE.value, 0.08)
        rng = np.random.default_rng(rng_seed)
        return float(np.clip(base * rng.uniform(0.75, 1.25), 0.0, 1.0))
    defaults = {"None": 0.85, "Vibrate": 0.55, "Twist": 0.2}
    mean = float(medium.occlusion.get(action.value, defaults[action.value]))
    if mean <= 0.0 or mean >= 1.0:
        return float(np.clip(mean, 0.0, 1.0))
    concentration = 20.0
    rng = np.random.default_rng(rng_seed)
    return float(rng.beta(mean * concentration, (1.0 - mean) * concentration))
