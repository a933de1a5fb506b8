"""Experiment configuration: a flat YAML mapping over profile defaults.

Unknown keys are fatal so that a typo cannot silently fall back to a
default. Every error message carries the offending key and, when known,
its line in the file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..motion import Scenario, SensingSetup
from ..protocol import LINK_MODES, TrainConfig, parse_scheme
from ..sensing import RxParams
from ..waveform import IsacConfig, InvalidInput


class ConfigError(ValueError):
    """The configuration file is malformed or violates a constraint."""


PROFILES = ("full", "reduced")

# per-profile defaults that differ from the dataclass defaults below
PROFILE_DEFAULTS = {
    "full": {},
    "reduced": {"decimation": 10, "stft_window": 128, "stft_hop": 32, "stft_nfft": 256,
                "train_per_class": 60, "test_per_class": 20, "iterations": 500},
}


@dataclass
class ExperimentConfig:
    profile: str = "full"
    # waveform
    bandwidth: float = 10e6
    carrier: float = 60e9
    t_chirp: float = 10e-6
    chirps_per_frame: int = 25
    sample_rate: float = 10e6
    tx_power: float = 1.0
    # scenario
    devices: list = field(default_factory=lambda: [list(d) for d in Scenario().devices])
    carriers: list = field(default_factory=lambda: list(Scenario().carriers))
    # sensing pipeline
    t_spec: float = 0.5
    decimation: int = 1
    sensing_snr_db: float = 20.0
    clutter_rank: int = 1
    stft_window: int = 512
    stft_hop: int = 128
    stft_nfft: int = 1024
    doppler_band: float = 1000.0
    db_floor: float = -80.0
    spec_size: int = 28
    # dataset
    train_per_class: int = 200
    test_per_class: int = 50
    data_seed: int = 0
    # training
    batch: int = 32
    lr_s: float = 0.01
    lr_l: float = 0.01
    iterations: int = 2000
    eval_every: int = 50
    link: str = "ideal"
    link_snr_db: float | None = None
    bits_per_element: int = 32
    two_way: bool = True
    schemes: list = field(default_factory=lambda: ["vfl-a-ewa", "vfl-a-cat", "vfl-b-ewa",
                                                   "vfl-b-cat", "ed-1", "ed-2", "ed-3",
                                                   "hfeel", "cl"])
    seeds: list = field(default_factory=lambda: list(range(12)))
    out: str = "runs"

    # ---- derived objects
    def isac(self) -> IsacConfig:
        return IsacConfig(self.bandwidth, self.carrier, self.t_chirp, self.chirps_per_frame,
                          self.sample_rate, self.tx_power)

    def scenario(self) -> Scenario:
        return Scenario(devices=tuple(tuple(float(c) for c in d) for d in self.devices),
                        carriers=tuple(float(c) for c in self.carriers))

    def rx(self) -> RxParams:
        return RxParams(self.clutter_rank, self.stft_window, self.stft_hop, self.stft_nfft,
                        self.doppler_band, (self.spec_size, self.spec_size), self.db_floor)

    def setup(self) -> SensingSetup:
        return SensingSetup(self.isac(), self.t_spec, self.decimation, self.sensing_snr_db,
                            self.rx())

    def counts(self):
        return [self.train_per_class + self.test_per_class] * 5

    @property
    def split(self) -> float:
        return self.train_per_class / (self.train_per_class + self.test_per_class)

    @property
    def n_frames(self) -> int:
        return self.setup().n_frames

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.batch, self.lr_s, self.lr_l, self.iterations, int(seed),
                           self.link, self.bits_per_element, self.two_way, self.eval_every,
                           self.link_snr_db)

    def validate(self):
        """Cross-field checks; raises :class:`ConfigError` naming the field."""
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: must be one of {PROFILES}")
        if self.link not in LINK_MODES:
            raise ConfigError(f"link: must be one of {LINK_MODES}")
        if len(self.devices) != len(self.carriers):
            raise ConfigError("carriers: need one carrier per device")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("train_per_class must be >= 1 and test_per_class >= 0")
        if self.spec_size != 28:
            raise ConfigError("spec_size: the default CNN expects 28x28 spectrograms")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed required")
        for s in self.schemes:
            try:
                parse_scheme(s)
            except InvalidInput as exc:
                raise ConfigError(f"schemes: {exc}") from None
        checks = [("bandwidth/t_chirp/sample_rate/carrier", self.isac),
                  ("devices", self.scenario),
                  ("t_spec", lambda: self.n_frames),
                  ("decimation", lambda: self.setup().chirp_times()),
                  ("batch/lr/bits_per_element", lambda: self.train_config(0))]
        for name, fn in checks:
            try:
                fn()
            except InvalidInput as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.stft_window > self.setup().chirp_times().size:
            raise ConfigError("stft_window: longer than the slow-time series")
        return self


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name, value, default):
    """Match the default's type; ints accept integral floats, floats accept ints.

    Numeric fields also accept text that parses as a number.
    """
    if value is None:
        if name == "link_snr_db":
            return None
        raise ConfigError(f"{name}: value required")
    numeric = isinstance(default, (int, float)) and not isinstance(default, bool)
    if isinstance(value, str) and (numeric or name == "link_snr_db"):
        # YAML 1.1 reads 60e9 (no exponent sign) as text
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) or name == "link_snr_db":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected text, got {value!r}")
    return value


def make_config(values: dict | None = None, profile: str | None = None,
                lines: dict | None = None) -> ExperimentConfig:
    """Profile defaults overlaid with ``values``; ``lines`` maps keys to file lines."""
    values = dict(values or {})
    lines = lines or {}
    prof = profile or values.get("profile", "full")
    if prof not in PROFILES:
        raise ConfigError(f"profile: must be one of {PROFILES}, got {prof!r}")
    base = ExperimentConfig(profile=prof)
    for k, v in PROFILE_DEFAULTS[prof].items():
        setattr(base, k, v)
    for key, value in values.items():
        where = f" (line {lines[key]})" if key in lines else ""
        if key not in FIELDS:
            raise ConfigError(f"unknown key {key!r}{where}")
        if key == "profile":
            continue
        try:
            setattr(base, key, _coerce(key, value, getattr(base, key)))
        except ConfigError as exc:
            raise ConfigError(f"{exc}{where}") from None
    if profile:
        base.profile = profile
    return base.validate()


def parse_config_text(text: str, profile: str | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}could not parse config: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data, lines = {}, {}
    elif not isinstance(data, dict):
        raise ConfigError("line 1: config must be a mapping of key: value pairs")
    else:
        lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    return make_config(data, profile, lines)


def load_config(path=None, profile: str | None = None) -> ExperimentConfig:
    """Read ``path`` (None means all defaults) and validate it."""
    if path is None:
        return make_config({}, profile)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} not found")
    return parse_config_text(p.read_text(), profile)


def dump_config(cfg: ExperimentConfig) -> str:
    d = dataclasses.asdict(cfg)
    return yaml.safe_dump(d, sort_keys=False)


def seed_list(cfg: ExperimentConfig):
    return [int(s) for s in np.atleast_1d(cfg.seeds)]
