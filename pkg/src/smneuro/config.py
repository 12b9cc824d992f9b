"""Run configuration: JSON file + dotted-key overrides -> typed objects."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .cartpole import CartPoleParams
from .cells import DT, WINDOW, NeuronCellParams, WeightCellParams
from .codec import EncoderConfig
from .devices import HtronParams, SmParams, SnwParams
from .evolve import EvoConfig

CONFIG_SCHEMA = "smneuro.config/1"
CONFIG_ENV = "SMNEURO_CONFIG"


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "schema": CONFIG_SCHEMA,
    "seed": 0,
    "threads": 1,
    "output_dir": "runs",
    "devices": {
        "snw": {"i_c": 30e-6, "i_r": 20e-6, "r_nw": 5e3, "l_nw": 10e-9},
        "sm": {"r_lrs": 14.4e-3, "r_hrs": 98e-3, "gamma_0": 60.0},
        "htron": {"i_heater_th": 50e-6, "l_channel": 1e-9, "r_channel": 2.0,
                  "i_heater_pulse": 100e-6, "t_hold": 2e-9},
    },
    "cells": {
        "pre": {"i_bias": 30e-6, "i_in": 10e-6},
        "post": {"i_bias": 24e-6, "i_in": 10e-6},
        "neuron": {"l_shunt_main": 10e-9, "l_shunt_out": 10e-9, "r_shunt_main": 10e-3},
        "i_channel": 7.5e-3,
        # synapse h-Tron: device defaults overridden by these keys
        "synapse_htron": {"r_channel": 0.1, "t_hold": 20e-9},
        "l_syn": 10e-9,
        "l_integrate": 2e-6,
        "r_tap": 40e-3,
        "r_inject": 2.0,
        "i_program_heater": 100e-6,
    },
    "engine": {"dt": DT, "window": WINDOW},
    "tables": {"bias_grid": None, "count_grid": None, "max_loads": 2},
    "encoder": {"ranges": [2.4, 2.0, 0.20943951023931953, 2.0], "max_count": 100},
    "cartpole": {},
    "evo": {},
    "evaluate": {"episodes": 1000, "base_seed": 0},
    "validate": {"samples": 3, "chain_tolerance": 1, "fanin_tolerance": 2},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(cfg: dict, path: list[str], value) -> None:
    node = cfg
    for k in path[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {k} is not a section")
        node = nxt
    node[path[-1]] = value


def default_config_path() -> Path | None:
    p = os.environ.get(CONFIG_ENV)
    return Path(p) if p else None


def load_config(path=None, overrides=()) -> dict:
    """Defaults <- file (explicit path or $SMNEURO_CONFIG) <- overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    path = Path(path) if path else default_config_path()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        cfg = deep_merge(cfg, user)
    for item in overrides:
        apply_override(cfg, *parse_override(item))
    if cfg.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {cfg.get('schema')!r}")
    return cfg


@dataclass
class RunConfig:
    raw: dict
    weightcell: WeightCellParams
    dt: float
    window: float
    encoder: EncoderConfig
    cartpole: CartPoleParams
    evo: EvoConfig
    seed: int
    threads: int

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            return _build(raw)
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from None


def _build(raw: dict) -> RunConfig:
    dev, cells = raw["devices"], raw["cells"]
    snw = SnwParams(**dev["snw"])
    sm = SmParams(**dev["sm"])
    htron = HtronParams(**dev["htron"])
    syn_htron = HtronParams(**{**dev["htron"], **cells.get("synapse_htron", {})})
    shunt = cells.get("neuron", {})

    def neuron(d):
        return NeuronCellParams(snw_main=snw, snw_out=snw, sm=sm, htron=htron, **shunt, **d)

    extra = {k: cells[k] for k in ("i_channel", "l_syn", "l_integrate", "r_tap", "r_inject", "i_program_heater")
             if k in cells}
    wc = WeightCellParams(pre=neuron(cells["pre"]), post=neuron(cells["post"]), sm=sm, htron=syn_htron, **extra)
    eng = raw["engine"]
    if not eng["dt"] > 0 or not eng["window"] >= eng["dt"]:
        raise ConfigError("engine needs dt > 0 and window >= dt")
    enc = raw["encoder"]
    evo = dict(raw.get("evo", {}))
    evo.setdefault("seed", int(raw["seed"]))
    threads = int(raw.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return RunConfig(
        raw=raw,
        weightcell=wc,
        dt=float(eng["dt"]),
        window=float(eng["window"]),
        encoder=EncoderConfig(tuple(enc["ranges"]), int(enc["max_count"])),
        cartpole=CartPoleParams(**raw.get("cartpole", {})),
        evo=EvoConfig.from_dict(evo),
        seed=int(raw["seed"]),
        threads=threads,
    )
