"""
Run configuration: a YAML file whose sections mirror the model types.

Unknown keys are errors. Every error names the offending field, e.g.
``protocol.n_blank``.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .blanking import BlankingConfig
from .calibration import Target
from .detector import DetectorParams, TrapSpecies, overbias_for_efficiency
from .harness import ProtocolConfig
from .signal_chain import AvalanchePulse, ChainConfig


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-6`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+][0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


# Anchors: ~1e-6 per gate at DE = 20 %, 220 K and ~3e-5 at 273 K.
DEFAULT_TARGETS = (
    Target("p_d", 1e-6, temperature=220.0, de=0.20),
    Target("p_d", 3e-5, temperature=273.0, de=0.20),
)


@dataclass
class RunConfig:
    detector: DetectorParams = field(default_factory=DetectorParams)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    chain: ChainConfig | None = None
    avalanche: AvalanchePulse | None = None
    seed: int = 0
    output_dir: str = "out"
    sweep: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    calibrate: dict = field(default_factory=dict)


_PROTOCOL_KEYS = {"light_rate", "mu", "n_gates", "light_on", "n_blank", "temperature",
                  "gate_width", "v_ov", "de", "dc_offset"}
_SWEEP_KEYS = {"recipe", "axes", "firing", "auto_gates", "n_gates"}
_FIT_KEYS = {"input", "k"}
_CALIBRATE_KEYS = {"targets", "free", "tol"}
_TOP_KEYS = {"detector", "protocol", "chain", "avalanche", "seed", "output_dir", "sweep", "fit",
             "calibrate"}


def _check_keys(section: str, data: Any, allowed) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown key")
    return data


def _build(section: str, cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, data, names)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _detector(data) -> DetectorParams:
    data = dict(_check_keys("detector", data, {f.name for f in dataclasses.fields(DetectorParams)}))
    if "traps" in data:
        traps = data["traps"]
        if not isinstance(traps, list):
            raise ConfigError("detector.traps: expected a list")
        data["traps"] = tuple(_build(f"detector.traps[{i}]", TrapSpecies, t or {}) for i, t in enumerate(traps))
    return _build("detector", DetectorParams, data)


def _protocol(data, detector: DetectorParams) -> ProtocolConfig:
    data = dict(_check_keys("protocol", data, _PROTOCOL_KEYS))
    if "de" in data and "v_ov" in data:
        raise ConfigError("protocol.de: give either de or v_ov, not both")
    if "de" in data:
        try:
            data["v_ov"] = overbias_for_efficiency(detector, float(data.pop("de")))
        except ValueError as exc:
            raise ConfigError(f"protocol.de: {exc}") from None
    if "n_blank" in data:
        try:
            data["blanking"] = BlankingConfig(data.pop("n_blank"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"protocol.n_blank: {exc}") from None
    if "n_gates" in data and (not isinstance(data["n_gates"], int) or data["n_gates"] <= 0):
        raise ConfigError("protocol.n_gates: must be a positive integer")
    try:
        return ProtocolConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"protocol: {exc}") from None


def targets_from(data) -> list[Target]:
    if not isinstance(data, list) or not data:
        raise ConfigError("calibrate.targets: expected a non-empty list")
    return [_build(f"calibrate.targets[{i}]", Target, t or {}) for i, t in enumerate(data)]


def parse_config(raw: dict | None) -> RunConfig:
    raw = _check_keys("config", raw or {}, _TOP_KEYS)
    detector = _detector(raw.get("detector"))
    cfg = RunConfig(detector=detector, protocol=_protocol(raw.get("protocol"), detector))
    if raw.get("chain") is not None:
        chain = dict(raw["chain"])
        cfg.chain = _build("chain", ChainConfig, chain)
    if raw.get("avalanche") is not None:
        cfg.avalanche = _build("avalanche", AvalanchePulse, raw["avalanche"])
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or not 0 <= raw["seed"] < 2**64:
            raise ConfigError("seed: must be an integer in [0, 2**64)")
        cfg.seed = raw["seed"]
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])
    cfg.sweep = dict(_check_keys("sweep", raw.get("sweep"), _SWEEP_KEYS))
    cfg.fit = dict(_check_keys("fit", raw.get("fit"), _FIT_KEYS))
    cfg.calibrate = dict(_check_keys("calibrate", raw.get("calibrate"), _CALIBRATE_KEYS))
    if "targets" in cfg.calibrate:
        cfg.calibrate["targets"] = targets_from(cfg.calibrate["targets"])
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(raw)


def detector_to_dict(p: DetectorParams) -> dict:
    out = {}
    for f in dataclasses.fields(p):
        v = getattr(p, f.name)
        if f.name == "traps":
            v = [dataclasses.asdict(t) for t in v]
        out[f.name] = v
    return out


def dump_detector(p: DetectorParams) -> str:
    return yaml.safe_dump({"detector": detector_to_dict(p)}, sort_keys=False)


def default_config_yaml() -> str:
    """The calibrated defaults as an editable config file."""
    doc = {
        "seed": 1,
        "output_dir": "out",
        "detector": detector_to_dict(DetectorParams()),
        "protocol": {
            "light_rate": 250e3,
            "mu": 0.1,
            "n_gates": 10_000_000,
            "light_on": True,
            "n_blank": 0,
            "temperature": 220.0,
            "gate_width": 1.2e-9,
            "de": 0.20,
            "dc_offset": 0.5,
        },
        "chain": {k: v for k, v in dataclasses.asdict(ChainConfig()).items() if v is not None},
        "avalanche": dataclasses.asdict(AvalanchePulse()),
    }
    header = "# calibrated defaults (220 K anchor: P_d ~ 1e-6 per gate at DE = 20 %)\n"
    return header + yaml.safe_dump(doc, sort_keys=False)

