"""Run configuration: one declarative JSON file with a section per campaign.

A config file looks like::

    {
      "defaults": {"seed": 1, "workers": 2},
      "overlap": {"n": 20, "beta": 2.0, "replicas": 2000, "gates": true}
    }

Values are resolved as built-in defaults < ``defaults`` section < campaign
section < command-line flags.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

# not part of the hash: they never change a number
_UNHASHED = ("out", "workers")


@dataclass
class RunConfig:
    command: str
    seed: int | None = None
    law: str = "binary_gaussian"
    q: float = 0.0
    n: int = 10
    beta: float = 2.0
    replicas: int = 1000
    grid_points: int = 64
    m: int = 512
    workers: int = 1
    out: str = "out"
    gates: bool = False
    params: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        d = asdict(self)
        for k in _UNHASHED:
            d.pop(k)
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


TOP_LEVEL = {f.name for f in fields(RunConfig)} - {"command", "params"}


def load_sections(path: str | Path | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ValueError("config must be a JSON object of sections, each an object")
    return data


def resolve(command: str, builtin: dict, sections: dict, flags: dict) -> RunConfig:
    """Merge the layers for ``command``; keys outside :class:`RunConfig` go to ``params``."""
    merged = dict(builtin)
    for layer in (sections.get("defaults", {}), sections.get(command, {}), flags):
        merged.update({k: v for k, v in layer.items() if v is not None})
    unknown = set(merged) - set(builtin) - TOP_LEVEL
    if unknown:
        raise ValueError(f"unknown keys for {command}: {sorted(unknown)}")
    top = {k: merged[k] for k in TOP_LEVEL if k in merged}
    params = {k: v for k, v in merged.items() if k not in TOP_LEVEL}
    return RunConfig(command=command, params=params, **top)


def load_thresholds() -> dict:
    return json.loads(resources.files("brwgibbs").joinpath("thresholds.json").read_text(encoding="utf-8"))
