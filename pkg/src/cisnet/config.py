"""Plain-text run configuration: ``[section]`` headers and ``key = value`` lines.

Every key has a declared parser; unknown sections or keys are errors. The
resolved configuration is written next to every run's outputs.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from typing import Callable

from .layers import BI_VALUED, GLOBAL, SINGLE_VALUED, SublinearConfig, TruncationConfig
from .model import NetworkConfig
from .train import DEFAULT_LEARNING_RATES, TrainConfig


class ConfigError(ValueError):
    pass


def _float(v: str) -> float:
    v = v.strip().lower()
    if v in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def _bool(v: str) -> bool:
    m = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
    try:
        return m[v.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {v!r}") from None


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(_float(x) for x in v.split(",") if x.strip())


def _window(v: str):
    return GLOBAL if v.strip().lower() == GLOBAL else int(v)


def _mode(v: str) -> str:
    v = v.strip().lower()
    if v not in (SINGLE_VALUED, BI_VALUED):
        raise ValueError(f"truncation mode must be {SINGLE_VALUED} or {BI_VALUED}")
    return v


def _choice(*options) -> Callable[[str], str]:
    def parse(v: str) -> str:
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {v!r}")
        return v
    return parse


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


SCHEMA: dict[str, dict[str, tuple[Callable, object]]] = {
    "network": {
        "input_size": (int, 64),
        "threshold": (_float, 5.0),
        "truncation_mode": (_mode, SINGLE_VALUED),
        "gamma1": (_float, 1.0),
        "gamma2": (_float, 0.9),
        "spl_window": (_window, 2),
        "channels": (_ints, (32, 32, 64, 64, 128)),
        "n_type1": (int, 2),
        "n_type2": (int, 2),
        "dilation": (int, 2),
    },
    "train": {
        "pairs_per_batch": (int, 8),
        "epochs": (int, 20),
        "decay": (_float, 0.985),
        "beta1": (_float, 0.9),
        "beta2": (_float, 0.999),
        "eps": (_float, 1e-8),
        "init_pairs": (int, 50),
        "curriculum": (_floats, (0.4,)),
        "augment": (_bool, False),
        **{f"lr_{g}": (_float, lr) for g, lr in DEFAULT_LEARNING_RATES.items()},
    },
    "data": {
        "payloads": (_floats, (0.4,)),
        "test_fraction": (_float, 0.2),
        "embedder": (_choice("adaptive", "lsbm"), "adaptive"),
        "synthetic_count": (int, 500),
        "size": (int, 64),
    },
    "ablate": {
        "axis": (_choice("T", "gamma"), "T"),
        "train_pairs": (int, 400),
        "test_pairs": (int, 100),
        "payload": (_float, 0.4),
        "channels": (_ints, (8, 8, 16, 16, 32)),
    },
    "eval": {
        "cam_count": (int, 10),
        "post_map": (_bool, False),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            self.values[section][key] = SCHEMA[section][key][0](raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None

    def update_from_text(self, text: str, source: str = "<config>") -> None:
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                self.set(section, key, raw)

    def apply_override(self, item: str) -> None:
        """``section.key=value``."""
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        self.set(section, key.strip(), raw.strip())

    def to_text(self) -> str:
        out = io.StringIO()
        for section, keys in self.values.items():
            out.write(f"[{section}]\n")
            for k, v in keys.items():
                out.write(f"{k} = {_fmt(v)}\n")
            out.write("\n")
        return out.getvalue()

    # -- typed views

    def network(self, seed: int) -> NetworkConfig:
        n = self["network"]
        try:
            return NetworkConfig(
                input_size=(n["input_size"], n["input_size"]),
                truncation=TruncationConfig(n["threshold"], n["truncation_mode"]),
                spl=SublinearConfig(n["gamma1"], n["gamma2"], n["spl_window"]),
                channels=tuple(n["channels"]),
                n_type1=n["n_type1"],
                n_type2=n["n_type2"],
                dilation_type2=n["dilation"],
                seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(f"[network]: {exc}") from None

    def train(self, seed: int) -> TrainConfig:
        t = self["train"]
        return TrainConfig(
            pairs_per_batch=t["pairs_per_batch"],
            learning_rates={g: t[f"lr_{g}"] for g in DEFAULT_LEARNING_RATES},
            decay=t["decay"],
            beta1=t["beta1"],
            beta2=t["beta2"],
            eps=t["eps"],
            epochs=t["epochs"],
            init_pairs=t["init_pairs"],
            curriculum=tuple(t["curriculum"]),
            augment=t["augment"],
            seed=seed,
        )


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig.defaults()
    if path is not None:
        try:
            text = open(path, encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg.update_from_text(text, str(path))
    for item in overrides:
        cfg.apply_override(item)
    return cfg
