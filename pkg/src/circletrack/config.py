"""Run configuration: a YAML file with one section per component.

Every key is optional; missing keys take the documented defaults below and
unknown keys are rejected.  Example::

    seed: 7
    meetings: 20
    sim:
      n_speakers: 4
      move_step_concentration: 300
      embedding_noise: 3.0
    kalman: {kappa_z: 300, kappa_phi: 20}
    affinity:
      kind: speaker+track
      weights: [1.0, 1.0]
      threshold: 0.05
      feature: ssl
    em: {max_iters: 100, grid_size: 720, init: [5, 5], feature: doa}
    sweep:
      kinds: [speaker, speaker+kl, speaker+track]
      weights: [0.1, 0.3, 1.0]
      thresholds: {start: -1.0, stop: 1.0, num: 81}
    figures: true
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .ahc import AffinityConfig
from .em import EmConfig
from .sim import SimConfig
from .tracker import KalmanParams

AFFINITY_KINDS = {"speaker": "none", "speaker+kl": "kl", "speaker+track": "track"}


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class AffinitySection:
    kind: str = "speaker+track"
    weights: tuple = (1.0, 1.0)
    threshold: float = 0.05
    feature: str = "ssl"

    def __post_init__(self):
        if self.kind not in AFFINITY_KINDS:
            raise ConfigError(f"affinity.kind must be one of {sorted(AFFINITY_KINDS)}")
        if len(self.weights) != 2:
            raise ConfigError("affinity.weights must be [w_speaker, w_location]")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def to_affinity(self, params: KalmanParams, threshold=None) -> AffinityConfig:
        th = self.threshold if threshold is None else threshold
        return AffinityConfig(
            weight_speaker=self.weights[0],
            weight_location=self.weights[1] if self.kind != "speaker" else 0.0,
            location_kind=AFFINITY_KINDS[self.kind],
            stop_threshold=float(th),
            params=params,
            feature=self.feature,
        )


@dataclass(frozen=True)
class EmSection:
    max_iters: int = 100
    grid_size: int = 720
    min_rel_improvement: float = 1e-6
    init: tuple = (5.0, 5.0)
    feature: str = "doa"

    def __post_init__(self):
        if self.feature not in ("doa", "ssl"):
            raise ConfigError("em.feature must be 'doa' or 'ssl'")
        if len(self.init) != 2:
            raise ConfigError("em.init must be [kappa_z, kappa_phi]")

    def to_em(self) -> EmConfig:
        return EmConfig(self.max_iters, self.grid_size, self.min_rel_improvement)


@dataclass(frozen=True)
class SweepSection:
    kinds: tuple = ("speaker", "speaker+kl", "speaker+track")
    weights: tuple = (0.01, 0.03, 0.1, 0.3, 1.0)  # location weights; speaker weight is 1
    thresholds: object = field(default_factory=lambda: {"start": -1.0, "stop": 1.0, "num": 81})

    def __post_init__(self):
        for k in self.kinds:
            if k not in AFFINITY_KINDS:
                raise ConfigError(f"sweep.kinds: unknown affinity {k!r}")

    def threshold_grid(self) -> np.ndarray:
        th = self.thresholds
        if isinstance(th, dict):
            unknown = set(th) - {"start", "stop", "num"}
            if unknown:
                raise ConfigError(f"sweep.thresholds: unknown keys {sorted(unknown)}")
            return np.linspace(float(th.get("start", -1.0)), float(th.get("stop", 1.0)), int(th.get("num", 81)))
        return np.asarray([float(t) for t in th])

    def grid(self):
        """(kind, w_speaker, w_location) combinations; speaker-only once."""
        out = []
        for k in self.kinds:
            if k == "speaker":
                out.append((k, 1.0, 0.0))
            else:
                out.extend((k, 1.0, float(w)) for w in self.weights)
        return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    meetings: int = 1
    figures: bool = True
    sim: SimConfig = SimConfig()
    kalman: KalmanParams = KalmanParams()
    affinity: AffinitySection = AffinitySection()
    em: EmSection = EmSection()
    sweep: SweepSection = SweepSection()

    def with_seed(self, seed) -> "RunConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, seed=int(seed), sim=dataclasses.replace(self.sim, seed=int(seed)))


_SECTIONS = {
    "sim": SimConfig,
    "kalman": KalmanParams,
    "affinity": AffinitySection,
    "em": EmSection,
    "sweep": SweepSection,
}
_TUPLE_FIELDS = {("affinity", "weights"), ("em", "init"), ("sweep", "kinds"), ("sweep", "weights")}


def _build(name, cls, values):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    values = {k: (tuple(v) if (name, k) in _TUPLE_FIELDS and isinstance(v, list) else v) for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a mapping")
    top = {"seed", "meetings", "figures"} | set(_SECTIONS)
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    meetings = doc.get("meetings", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(meetings, int) or meetings < 1:
        raise ConfigError("meetings must be a positive integer")
    sections = {name: _build(name, cls, doc.get(name)) for name, cls in _SECTIONS.items()}
    # the top-level seed drives the simulator unless sim.seed is given
    if "seed" not in (doc.get("sim") or {}):
        sections["sim"] = dataclasses.replace(sections["sim"], seed=seed)
    return RunConfig(seed=seed, meetings=meetings, figures=bool(doc.get("figures", True)), **sections)


def load_config(path) -> RunConfig:
    """Parse a YAML run configuration; None gives all defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    return config_from_dict(doc)
