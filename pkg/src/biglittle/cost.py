"""Latency, energy and battery-life estimates from invocation counts.

Power is constant per device and frequency, so energy is latency times
active power. Path latencies derive from the big-model latency: a little
model takes ``big / little_divisor``; dual and distance paths are multiples
of the little latency.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

PATHS = ("big", "little", "dual", "distance")
CSV_FIELDS = ("config", "scope", "accuracy", "big_count", "secondary_count", "latency_ms",
              "energy_mJ", "device", "freq_MHz")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    frequencies_mhz: tuple
    active_power_mw: Mapping
    big_latency_ms: Mapping
    little_divisor: float = 12.0
    dual_multiple: float = 2.0
    distance_multiple: float = 2.0
    sleep_power_mw: float = 0.0
    battery_capacity_mwh: float = 675.0
    window_period_s: float = 1.28

    def __post_init__(self):
        freqs = tuple(int(f) for f in self.frequencies_mhz)
        power = {int(k): float(v) for k, v in self.active_power_mw.items()}
        latency = {int(k): float(v) for k, v in self.big_latency_ms.items()}
        for f in freqs:
            if f not in power or f not in latency:
                raise ValueError(f"{self.name}: frequency {f} MHz lacks a power or latency entry")
            if power[f] <= 0 or latency[f] <= 0:
                raise ValueError(f"{self.name}: power and latency must be positive at {f} MHz")
        for attr in ("little_divisor", "dual_multiple", "distance_multiple", "battery_capacity_mwh",
                     "window_period_s"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"{self.name}: {attr} must be positive")
        if self.sleep_power_mw < 0:
            raise ValueError(f"{self.name}: sleep power cannot be negative")
        object.__setattr__(self, "frequencies_mhz", freqs)
        object.__setattr__(self, "active_power_mw", power)
        object.__setattr__(self, "big_latency_ms", latency)

    def check_freq(self, freq) -> int:
        f = int(freq)
        if f not in self.frequencies_mhz:
            raise ValueError(f"{self.name} has no {freq} MHz point; available: {list(self.frequencies_mhz)}")
        return f

    def path_latency_ms(self, path: str, freq) -> float:
        f = self.check_freq(freq)
        big = self.big_latency_ms[f]
        little = big / self.little_divisor
        return {"big": big, "little": little, "dual": little * self.dual_multiple,
                "distance": little * self.distance_multiple}[path]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frequencies_mhz"] = list(self.frequencies_mhz)
        d["active_power_mw"] = {str(k): v for k, v in self.active_power_mw.items()}
        d["big_latency_ms"] = {str(k): v for k, v in self.big_latency_ms.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "DeviceProfile":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "DeviceProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def builtin_profiles() -> list:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("profiles").iterdir()
                  if p.name.endswith(".json"))


def load_profile(name_or_path) -> DeviceProfile:
    """A shipped profile by name (``ecm3532``, ``stm32l4``, ...) or a JSON file."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.is_file():
        return DeviceProfile.load(path)
    ref = resources.files(__package__).joinpath("profiles", f"{name_or_path}.json")
    if not ref.is_file():
        raise ValueError(f"unknown device profile {name_or_path!r}; built-in: {builtin_profiles()}")
    return DeviceProfile.from_dict(json.loads(ref.read_text()))


@dataclass(frozen=True)
class EnergyReport:
    device: str
    freq_mhz: int
    n: int
    latency_ms: float
    energy_mj: float
    breakdown: Mapping
    battery_life_h: float

    def to_dict(self) -> dict:
        return asdict(self)


def _counts(stats) -> tuple:
    if isinstance(stats, Mapping):
        get = stats.get
    else:
        def get(key, default=0):
            return getattr(stats, key, default)
    counts = {p: int(get(f"{p}_count", 0) or 0) for p in PATHS}
    if any(c < 0 for c in counts.values()):
        raise ValueError(f"invocation counts cannot be negative: {counts}")
    n = get("n", None)
    return counts, int(n) if n is not None else None


def estimate(stats, profile: DeviceProfile, freq) -> EnergyReport:
    """Sum ``count * path latency`` over paths; energy = latency x active power.

    ``stats`` is a ``CascadeStats`` or a mapping with ``big_count``,
    ``little_count``, ``dual_count``, ``distance_count`` and optionally ``n``.
    Battery life is capacity over the average inference power when one
    window arrives every ``window_period_s``; sleep draw is not counted.
    """
    f = profile.check_freq(freq)
    counts, n = _counts(stats)
    power = profile.active_power_mw[f]
    breakdown = {}
    for path in PATHS:
        lat = counts[path] * profile.path_latency_ms(path, f)
        breakdown[path] = {"count": counts[path], "latency_ms": lat, "energy_mJ": lat * power / 1000.0}
    latency = sum(b["latency_ms"] for b in breakdown.values())
    energy = sum(b["energy_mJ"] for b in breakdown.values())
    if n is None:
        # every step after the first runs the secondary path when there is one
        secondary = counts["little"] + counts["dual"] + counts["distance"]
        n = secondary + 1 if secondary else counts["big"]
    battery = float("inf")
    if n > 0:
        duration_s = n * profile.window_period_s
        avg_power = energy / duration_s
        if avg_power > 0:
            battery = profile.battery_capacity_mwh / avg_power
    return EnergyReport(profile.name, f, n, latency, energy, breakdown, battery)


def battery_life_ratio(baseline: EnergyReport, candidate: EnergyReport) -> float:
    """How many times longer the candidate runs on the same battery."""
    if not candidate.energy_mj > 0:
        raise ValueError("candidate energy must be positive")
    return baseline.energy_mj / candidate.energy_mj


def energy_saving(baseline: EnergyReport, candidate: EnergyReport) -> float:
    if not baseline.energy_mj > 0:
        raise ValueError("baseline energy must be positive")
    return 1.0 - candidate.energy_mj / baseline.energy_mj
