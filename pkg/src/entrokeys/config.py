"""Flat ``key = value`` run configuration shared by every subcommand.

Values are merged defaults <- config file <- command-line flags. Each key
maps onto one field of the discoverer, loss, heatmap or histogram settings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

from .discoverer import DiscoveryConfig
from .entropy import DEFAULT_BANDWIDTH, HistogramSpec, default_threads
from .geometry import ETA, SIGMA_G, TAU, HeatmapParams
from .image_io import DEFAULT_BLUR_RADIUS
from .losses import LossWeights


class ConfigError(ValueError):
    pass


def _auto_float(text: str):
    return None if text.strip().lower() == "auto" else float(text)


def _auto_int(text: str):
    return None if text.strip().lower() == "auto" else int(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS = [
    Key("k", int, 25, "keypoint budget"),
    Key("iterations", int, 300, "descent iterations per frame"),
    Key("lr", float, 0.5, "learning rate (pixels per unit gradient)"),
    Key("momentum", float, 0.9, "momentum factor"),
    Key("clip", float, 10.0, "gradient-norm clip"),
    Key("init", _choice("entropy", "grid"), "entropy", "initial placement: entropy or grid"),
    Key("seed", int, 0, "random seed"),
    Key("threshold", float, 0.5, "status above which a keypoint is active"),
    Key("lambda_me", float, 100.0, "masked entropy weight"),
    Key("lambda_mce", float, 100.0, "masked conditional entropy weight"),
    Key("lambda_it", float, 20.0, "information transport weight"),
    Key("lambda_s", float, 10.0, "status weight"),
    Key("lambda_o", float, 30.0, "overlap weight"),
    Key("kappa", float, 0.9, "conditional entropy share in the transport target"),
    Key("m_d", float, 1.0, "movement weight"),
    Key("beta", float, 4.0, "overlap allowance"),
    Key("overlap_form", _choice("hinge", "paper"), "hinge", "overlap loss form: hinge or paper"),
    Key("movement_unit", _auto_float, None, "pixels per movement unit (auto = sigma_g)"),
    Key("sigma_g", float, SIGMA_G, "heatmap Gaussian width"),
    Key("tau", float, TAU, "heatmap threshold"),
    Key("eta", float, ETA, "heatmap scale"),
    Key("region", int, 3, "entropy neighbourhood side"),
    Key("bandwidth", float, DEFAULT_BANDWIDTH, "soft histogram bandwidth"),
    Key("blur_radius", int, DEFAULT_BLUR_RADIUS, "preprocessing box-blur radius"),
    Key("threads", _auto_int, None, "worker threads (auto = ENTROKEYS_THREADS or all cores)"),
]
KEY_MAP = {k.name: k for k in KEYS}

# short names accepted by --weights
WEIGHT_ALIASES = {"me": "lambda_me", "mce": "lambda_mce", "it": "lambda_it", "s": "lambda_s", "o": "lambda_o"}
WEIGHT_KEYS = ("lambda_me", "lambda_mce", "lambda_it", "lambda_s", "lambda_o", "kappa", "m_d", "beta")


def defaults() -> dict:
    return {k.name: k.default for k in KEYS}


def parse_value(name: str, text: str):
    if name not in KEY_MAP:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        value = KEY_MAP[name].parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{name} must be finite")
    return value


def parse_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load_file(path) -> dict:
    with open(path) as fh:
        return parse_text(fh.read())


def parse_weights(spec: str) -> dict:
    """``me=100,it=20,kappa=0.9`` -> loss keys; short or full names."""
    out = {}
    for item in filter(None, (p.strip() for p in spec.split(","))):
        if "=" not in item:
            raise ConfigError(f"bad weight {item!r}; expected name=value")
        name, value = (p.strip() for p in item.split("=", 1))
        name = WEIGHT_ALIASES.get(name, name)
        if name not in WEIGHT_KEYS:
            raise ConfigError(f"unknown weight {name!r}")
        out[name] = parse_value(name, value)
    return out


def format_value(value) -> str:
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def dump(values: dict) -> str:
    return "".join(f"{k.name} = {format_value(values[k.name])}\n" for k in KEYS)


def merge(*layers: dict) -> dict:
    out = defaults()
    for layer in layers:
        for key, value in layer.items():
            if key not in KEY_MAP:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = value
    return out


def resolve_threads(values: dict) -> int:
    return values["threads"] if values["threads"] is not None else default_threads()


def weights_of(values: dict) -> LossWeights:
    return LossWeights(**{k: values[k] for k in WEIGHT_KEYS}, overlap_form=values["overlap_form"])


def heat_of(values: dict) -> HeatmapParams:
    return HeatmapParams(values["sigma_g"], values["tau"], values["eta"])


def hist_of(values: dict) -> HistogramSpec:
    return HistogramSpec(bandwidth=values["bandwidth"], region_size=values["region"])


def discovery_of(values: dict) -> DiscoveryConfig:
    """Build the discoverer settings; invalid combinations raise ValueError."""
    return DiscoveryConfig(
        k=values["k"], iterations=values["iterations"], lr=values["lr"], momentum=values["momentum"],
        clip=values["clip"], init=values["init"], seed=values["seed"], threshold=values["threshold"],
        weights=weights_of(values), heat=heat_of(values), hist=hist_of(values),
        blur_radius=values["blur_radius"], threads=resolve_threads(values),
        movement_unit=values["movement_unit"])
