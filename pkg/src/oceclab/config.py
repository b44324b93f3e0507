"""Simulation configuration: PUF calibration plus lab-wide knobs, loadable
from a key=value text file."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class SimConfig:
    n_stages: int = 32
    n_not_gates: int = 4
    delta_not: float = 0.25
    noise_sigma0: float = 0.05
    noise_alpha: float = 0.04
    temp_ref_c: float = 25.0
    response_len: int = 128
    t_max: int = 4096
    noise_enabled: bool = True
    recovery_mode: bool = False

    def puf_kwargs(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "n_not_gates": self.n_not_gates,
            "delta_not": self.delta_not,
            "noise_sigma0": self.noise_sigma0,
            "noise_alpha": self.noise_alpha,
            "temp_ref_c": self.temp_ref_c,
        }

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {name}: expected boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ValueError(f"config key {name}: {exc}") from exc


def parse_config_file(path: str | Path) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> SimConfig:
    """SimConfig from defaults, then config file, then explicit overrides."""
    defaults = SimConfig()
    known = {f.name: type(getattr(defaults, f.name)) for f in fields(SimConfig)}
    values: dict = {}
    raw = parse_config_file(path) if path is not None else {}
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    for key, val in raw.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val, known[key])
    return SimConfig(**values)
