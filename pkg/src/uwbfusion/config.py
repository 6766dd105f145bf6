"""Scenario configuration and its sectioned key/value file format.

A config file is INI-style. Keys are the dataclass field names; section names
are ``scenario`` for top-level fields and the attribute name for each nested
group (``rates``, ``sensor_noise``, ``process_noise``, ``measurement_noise``,
``filter``, ``controller``). Vectors are comma separated, lists of vectors are
separated by ``;``. Every key is optional and overrides the per-kind defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .fusion import FilterConfig, MeasurementNoiseConfig
from .strapdown import ProcessNoiseConfig
from .trajectory import FAR_RESPONDERS, MOVING_RESPONDERS, STATIC_RESPONDERS

SCENARIO_KINDS = ("static_square", "far_anchor", "translating_target", "rotating_target")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass(frozen=True)
class SensorRates:
    imu_hz: float = 100.0
    flow_hz: float = 30.0
    laser_hz: float = 40.0
    payload_hz: float = 10.0
    mag_hz: float = 50.0
    baro_hz: float = 20.0
    control_hz: float = 50.0
    ranging_step: float = 0.029  # s per pair of simultaneous transactions
    use_mag: bool = True
    use_flow: bool = True
    use_laser: bool = True
    use_baro: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not v > 0:
                raise ConfigError(f"{f.name}: rate must be positive, got {v}")


@dataclass(frozen=True)
class SensorNoise:
    """Noise the simulator injects into synthetic measurements."""

    gyro_sigma: float = 0.005  # rad/s per sample
    accel_sigma: float = 0.05  # m/s^2 per sample
    gyro_bias_sigma: float = 0.003  # rad/s, spread of the constant turn-on bias
    gyro_bias_walk: float = 1e-4  # rad/s/sqrt(s)
    flow_sigma: float = 0.05  # 1/s
    laser_sigma: float = 0.02  # m
    laser_bias: float = 0.05  # m, rangefinder mounting offset
    baro_sigma: float = 0.3  # m
    baro_b0: float = 35.0  # m
    baro_drift: float = 0.02  # m/sqrt(s)
    mag_sigma: float = 0.02
    range_sigma: float = 0.02  # m
    range_dropout: float = 0.0
    nlos_probability: float = 0.0
    nlos_max: float = 0.5  # m
    pair_bias_error_sigma: float = 0.03  # m
    payload_yaw_sigma: float = 0.005  # rad

    def __post_init__(self):
        for f in fields(self):
            if f.name != "baro_b0" and getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name}: must be non-negative")

    def zeroed(self) -> "SensorNoise":
        return replace(self, **{f.name: 0.0 for f in fields(self) if f.name != "baro_b0"})


@dataclass(frozen=True)
class ControllerGains:
    kp_xy: float = 1.5  # 1/s^2
    kd_xy: float = 2.2  # 1/s
    kp_z: float = 2.0
    kd_z: float = 2.8
    max_tilt_deg: float = 12.0
    lag_tau: float = 0.15  # s, first-order attitude response
    divergence_limit: float = 5.0  # m of estimation error before aborting


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "static_square"
    altitude: float = 0.9  # m
    square_side: float = 4.0  # m
    target_speed: float = 0.4  # m/s
    target_accel: float = 0.3  # m/s^2
    circle_radius: float = 2.0  # m
    relative_setpoint: tuple = ()  # empty: the scenario's default
    edge_speed: float = 0.5  # m/s
    edge_accel: float = 0.5  # m/s^2
    corner_dwell: float = 1.0  # s
    trajectory_index: int = 1
    responders: tuple = ()  # empty: the scenario's default
    requester_side: float = 0.55  # m
    single_pair: bool = False
    flow_reference: str = "relative"  # relative | ground
    mag_declination: float = 0.0  # rad
    init_time: float = 1.2  # s held stationary before the filter starts
    init_mode: str = "sensors"  # sensors | truth (truth seeds the filter from the simulator)
    start_time: float = 3.0  # s when the reference begins to move
    initial_yaw_error_deg: float = 0.0
    duration: float = 60.0  # s
    seed: int = 0
    rates: SensorRates = field(default_factory=SensorRates)
    sensor_noise: SensorNoise = field(default_factory=SensorNoise)
    process_noise: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    measurement_noise: MeasurementNoiseConfig = field(default_factory=MeasurementNoiseConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    controller: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"kind: unknown scenario kind {self.kind!r} (expected one of {', '.join(SCENARIO_KINDS)})")
        if not self.duration > 0:
            raise ConfigError(f"duration: must be positive, got {self.duration}")
        if self.flow_reference not in ("relative", "ground"):
            raise ConfigError(f"flow_reference: expected 'relative' or 'ground', got {self.flow_reference!r}")
        if self.init_mode not in ("sensors", "truth"):
            raise ConfigError(f"init_mode: expected 'sensors' or 'truth', got {self.init_mode!r}")
        if self.relative_setpoint and len(self.relative_setpoint) != 3:
            raise ConfigError("relative_setpoint: expected three components")
        if self.init_time < 1.0:
            raise ConfigError("init_time: at least 1 s of stationary data is needed")

    def responder_offsets(self) -> tuple:
        if self.responders:
            return self.responders
        return {
            "static_square": STATIC_RESPONDERS,
            "far_anchor": FAR_RESPONDERS,
            "translating_target": MOVING_RESPONDERS,
            "rotating_target": MOVING_RESPONDERS,
        }[self.kind]

    def filter_config(self) -> FilterConfig:
        return replace(self.filter, measurement=self.measurement_noise, process=self.process_noise,
                       mag_declination=self.mag_declination)

    def noise_free(self) -> "ScenarioConfig":
        return replace(self, sensor_noise=self.sensor_noise.zeroed())


_KIND_DEFAULTS = {
    "static_square": {},
    "far_anchor": {"altitude": 0.6},
    "translating_target": {"target_speed": 0.4},
    "rotating_target": {"target_speed": 0.3, "altitude": 0.75},
}


def scenario_defaults(kind: str, **overrides) -> ScenarioConfig:
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"kind: unknown scenario kind {kind!r}")
    return ScenarioConfig(kind=kind, **{**_KIND_DEFAULTS[kind], **overrides})


_NESTED = ("rates", "sensor_noise", "process_noise", "measurement_noise", "filter", "controller")
# Filter fields filled from other sections.
_FILTER_SKIP = ("measurement", "process", "mag_declination")


def _parse_value(key: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(text)
            return v
        if isinstance(default, str):
            return text
        if isinstance(default, tuple):
            if not text:
                return ()
            if ";" in text or key == "responders":
                return tuple(tuple(float(x) for x in row.split(",")) for row in text.split(";") if row.strip())
            return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    raise ConfigError(f"{key}: unsupported value type")


def _apply(obj, items: dict, section: str, skip=()):
    known = {f.name: f for f in fields(obj) if f.name not in skip and f.name not in _NESTED}
    changes = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown key in section [{section}]")
        changes[key] = _parse_value(key, getattr(obj, key), text)
    return replace(obj, **changes) if changes else obj


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    for name in parser.sections():
        if name != "scenario" and name not in _NESTED:
            raise ConfigError(f"{name}: unknown section")
    top = dict(parser["scenario"]) if parser.has_section("scenario") else {}
    kind = top.get("kind", "static_square").strip()
    cfg = scenario_defaults(kind)
    for name in _NESTED:
        if parser.has_section(name):
            skip = _FILTER_SKIP if name == "filter" else ()
            try:
                sub = _apply(getattr(cfg, name), dict(parser[name]), name, skip)
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{name}: {exc}") from None
            cfg = replace(cfg, **{name: sub})
    return _apply(cfg, top, "scenario")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join(repr(float(x)) for x in row) for row in v)
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialize every field; ``parse_config(dump_config(c)) == c``."""
    lines = ["[scenario]"]
    for f in fields(cfg):
        if f.name not in _NESTED:
            lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for name in _NESTED:
        sub = getattr(cfg, name)
        lines.append("")
        lines.append(f"[{name}]")
        for f in fields(sub):
            if name == "filter" and f.name in _FILTER_SKIP:
                continue
            lines.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
