"""Runtime configuration, read once from ``settings.HOLONSIM``."""

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from django.conf import settings


@dataclass(frozen=True)
class SimulationConfig:
    good_link_delay: int = 1
    jitter_ticks: int = 0
    good_drop_probability: float = 0.0
    weak_delay_factor: int = 5
    weak_drop_probability: float = 0.3
    formation_threshold: float = 1.0
    change_threshold: float = 0.5
    vote_timeout: int = 20
    reelection_timeout: int = 10
    snapshot_interval: int = 0
    default_speed: float = 1.0
    default_response_time: int = 3
    invoke_duration: int = 1
    default_duration: int = 10000
    injection_tick: int = 10
    trace_dir: Path = Path("traces")

    def __post_init__(self):
        if not 0 <= self.good_drop_probability < 1 or not 0 <= self.weak_drop_probability < 1:
            raise ValueError("drop probabilities must be in [0, 1)")
        for name in ("formation_threshold", "change_threshold"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.vote_timeout <= 0:
            raise ValueError("vote_timeout must be positive")

    @classmethod
    def from_settings(cls) -> "SimulationConfig":
        raw = getattr(settings, "HOLONSIM", {})
        return cls().with_overrides({key.lower(): value for key, value in raw.items()})

    def with_overrides(self, overrides: dict[str, Any]) -> "SimulationConfig":
        """Apply ``overrides`` (lower- or upper-case keys); unknown keys are rejected."""
        known = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            name = key.lower()
            if name not in known:
                raise ValueError(f"Unknown configuration key '{key}'")
            changes[name] = Path(value) if name == "trace_dir" else value
        return replace(self, **changes)
