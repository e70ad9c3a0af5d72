"""Run configuration loaded from YAML.

Example::

    seed: 0
    stft: {window: 512}
    model: {sources: 2, components_per_source: 25}
    vem:
      iterations: 100
      evolution_cov: learned        # or {pinned: 1.0e-10}
    init:
      mixing: ones                  # or a .npy file of shape (F, L, I*J)
      nmf_source: {corrupted: 20}   # clean | mixture | {corrupted: R_dB}
    scenario:
      channels: 2
      duration: 2.0
      sample_rate: 16000
      taps: 32
      positions: 2
      snr_db: null                  # AWGN on the mixture, null for none
    eval: {proj_taps: 32}
    paths:
      output_dir: out
      mixture: null                 # separate: defaults to <output_dir>/mixture.wav
      manifest: null                # simulate writes <output_dir>/manifest.json

Unknown keys are rejected so typos surface immediately.
"""

from dataclasses import dataclass, field, fields
import os

import yaml

from .vem import VemConfig


class ConfigError(ValueError):
    pass


@dataclass
class StftConfig:
    window: int = 512

    def validate(self):
        if self.window < 2 or self.window % 2:
            raise ConfigError("stft.window must be an even integer >= 2")


@dataclass
class ScenarioConfig:
    channels: int = 2
    duration: float = 2.0
    sample_rate: int = 16000
    taps: int = 32
    positions: int = 2
    snr_db: float = None
    trajectories: list = None  # optional explicit keyframes per source

    def validate(self, n_sources):
        if self.channels < 1:
            raise ConfigError("scenario.channels must be >= 1")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ConfigError("scenario.duration and scenario.sample_rate must be positive")
        if self.taps < 1 or self.positions < 1:
            raise ConfigError("scenario.taps and scenario.positions must be >= 1")
        if self.trajectories is not None and len(self.trajectories) != n_sources:
            raise ConfigError("scenario.trajectories needs one entry per source")


@dataclass
class InitConfig:
    mixing: str = "ones"
    nmf_source: object = "clean"
    nmf_iterations: int = 200

    @property
    def corruption_db(self):
        if self.nmf_source == "clean":
            return float("inf")
        if isinstance(self.nmf_source, dict):
            return float(self.nmf_source["corrupted"])
        return None

    def validate(self):
        ok = self.nmf_source in ("clean", "mixture") or (
            isinstance(self.nmf_source, dict) and set(self.nmf_source) == {"corrupted"}
        )
        if not ok:
            raise ConfigError("init.nmf_source must be clean, mixture or {corrupted: R_dB}")
        if self.mixing != "ones" and not os.path.exists(self.mixing):
            raise ConfigError(f"init.mixing file not found: {self.mixing}")
        if self.nmf_iterations < 1:
            raise ConfigError("init.nmf_iterations must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    sources: int = 2
    stft: StftConfig = field(default_factory=StftConfig)
    vem: VemConfig = field(default_factory=VemConfig)
    init: InitConfig = field(default_factory=InitConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    proj_taps: int = 32
    output_dir: str = "out"
    mixture: str = None
    manifest: str = None

    def validate(self):
        if self.sources < 1:
            raise ConfigError("model.sources must be >= 1")
        if self.proj_taps < 1:
            raise ConfigError("eval.proj_taps must be >= 1")
        self.stft.validate()
        self.init.validate()
        self.scenario.validate(self.sources)
        return self


def _build(cls, data, section):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _vem_config(data, seed, components):
    data = dict(data or {})
    evo = data.pop("evolution_cov", "learned")
    if evo == "learned":
        data["evolution_cov_mode"] = "learned"
    elif isinstance(evo, dict) and set(evo) == {"pinned"}:
        data["evolution_cov_mode"] = "pinned"
        data["pinned_evolution_cov"] = float(evo["pinned"])
    else:
        raise ConfigError("vem.evolution_cov must be 'learned' or {pinned: value}")
    data.setdefault("seed", seed)
    data.setdefault("components_per_source", components)
    return _build(VemConfig, data, "vem")


def config_from_dict(raw):
    raw = dict(raw or {})
    allowed = {"seed", "stft", "model", "vem", "init", "scenario", "eval", "paths"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    model = dict(raw.get("model") or {})
    extra = set(model) - {"sources", "components_per_source"}
    if extra:
        raise ConfigError(f"unknown keys in model: {sorted(extra)}")
    paths = dict(raw.get("paths") or {})
    extra = set(paths) - {"output_dir", "mixture", "manifest"}
    if extra:
        raise ConfigError(f"unknown keys in paths: {sorted(extra)}")
    ev = dict(raw.get("eval") or {})
    extra = set(ev) - {"proj_taps"}
    if extra:
        raise ConfigError(f"unknown keys in eval: {sorted(extra)}")
    stft = dict(raw.get("stft") or {})
    hop = stft.pop("hop", None)
    cfg = RunConfig(
        seed=seed,
        sources=int(model.get("sources", 2)),
        stft=_build(StftConfig, stft, "stft"),
        vem=_vem_config(raw.get("vem"), seed, int(model.get("components_per_source", 25))),
        init=_build(InitConfig, raw.get("init"), "init"),
        scenario=_build(ScenarioConfig, raw.get("scenario"), "scenario"),
        proj_taps=int(ev.get("proj_taps", 32)),
        output_dir=paths.get("output_dir", "out"),
        mixture=paths.get("mixture"),
        manifest=paths.get("manifest"),
    )
    if hop is not None and hop * 2 != cfg.stft.window:
        raise ConfigError("stft.hop must equal window / 2")
    return cfg.validate()


def load_config(path=None):
    """Parse and validate a YAML run configuration (defaults without a path)."""
    if path is None:
        return config_from_dict({})
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    return config_from_dict(raw)
