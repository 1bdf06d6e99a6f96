"""Run configuration: nested JSON blocks, named presets and object builders."""

from __future__ import annotations

import copy
import csv
import json
import os
from pathlib import Path

import numpy as np

from .contract import ContractTerms
from .exceptions import ConfigError
from .models import MultiCurveModel, OneFactorModel, ThreeFactorModel, multicurve_2022
from .training import TrainConfig

DEFAULTS = {
    "contract": {"kind": "uniform", "n": 31, "maturity": 31 / 365, "q_min": 0.0, "q_max": 6.0,
                 "Q_min": 140.0, "Q_max": 200.0, "strike": 20.0, "lag_steps": 1},
    "model": {"kind": "one_factor", "mean_reversion": 4.0, "vol": 0.7, "forward": 20.0},
    "strategy": {"kind": "pv", "hidden": [10, 10], "input_spec": "basic", "load": None},
    "optimizer": {"name": "psgld", "lr": 0.1, "beta": 0.8, "noise": 1e-6, "eps": 1e-10},
    "train": {"iterations": 1000, "batch_size": 2**14, "batches_per_iter": 1, "seed": 0},
    "eval": {"paths": 10**6, "modes": ["smooth", "bang_bang"], "seed": 1, "chunk_size": 2**17},
    "transfer": {"agg_iterations": 500, "fine_iterations": 300, "calendar_start": "2022-01-01",
                 "compare_scratch": False},
    "market_move": None,
    "convergence": {"grid": None, "validation_paths": 2**16, "validation_seed": 12345},
    "variance": {"replications": 20, "me_grid": [10**4, 10**5, 10**6], "eval_seed": 1000},
    "threads": None,
}

_CASE2 = {"contract": {"n": 365, "maturity": 1.0, "Q_min": 1300.0, "Q_max": 1900.0}}
_ADAM = {"optimizer": {"name": "adam", "lr": 0.1, "beta1": 0.9, "beta2": 0.999, "eps": 1e-10},
         "train": {"batch_size": 2**12, "batches_per_iter": 4}}
_NN = {"strategy": {"kind": "nn"}}


def _three_factor(rho):
    return {"model": {"kind": "three_factor", "vols": [0.7] * 3, "mean_reversions": [1.5] * 3, "rho": rho}}


PRESETS = {
    "case1-pv-psgld": {},
    "case1-pv-adam": _ADAM,
    "case1-nn-psgld": _NN,
    "case1-nn-adam": [_NN, _ADAM],
    "case2-pv": _CASE2,
    "case2-nn": [_CASE2, _NN],
    "case2-transfer": [_CASE2, {"transfer": {"compare_scratch": True}}],
    "market-moves-M1": [_CASE2, {"market_move": {"name": "M1", "forward": 22.0, "retrain_iterations": 300}}],
    "market-moves-M2": [_CASE2, {"market_move": {"name": "M2", "Q_min": 1400.0, "Q_max": 2000.0,
                                                 "retrain_iterations": 300}}],
    "market-moves-M3": [_CASE2, {"market_move": {"name": "M3", "strike": 18.0, "retrain_iterations": 300}}],
    "threefactor-0.6": _three_factor(0.6),
    "threefactor-0.3": _three_factor(0.3),
    "threefactor--0.2": _three_factor(-0.2),
    "multicurve-2022": {
        "contract": {"kind": "multicurve-2022", "q_min": 0.0, "q_max": 1.0, "Q_min": 180.0, "Q_max": 270.0,
                     "strike": None},
        "model": {"kind": "multi_curve", "preset": "2022"},
        "strategy": {"kind": "nn", "hidden": [50, 50], "input_spec": "state"},
        "optimizer": {"lr": 0.01},
        "train": {"iterations": 300, "batch_size": 2**11},
        "eval": {"paths": 10**5},
    },
    "convergence": {},
    "variance": {"train": {"iterations": 100}},
}
PRESETS["case2-yearly"] = PRESETS["case2-transfer"]
PRESETS["threefactor-minus0.2"] = PRESETS["threefactor--0.2"]


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    layers = PRESETS[name]
    cfg = copy.deepcopy(DEFAULTS)
    for layer in layers if isinstance(layers, list) else [layers]:
        cfg = deep_merge(cfg, layer)
    cfg["preset"] = name
    return cfg


def parse_override(text: str):
    """``a.b.c=value`` with ``value`` parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        path, value = parse_override(item)
        node = cfg
        for part in path[:-1]:
            if node.get(part) is None:
                node[part] = {}
            if not isinstance(node[part], dict):
                raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not a block")
            node = node[part]
        node[path[-1]] = value
    return cfg


def load_config(path=None, preset_name=None, overrides=()) -> dict:
    cfg = preset(preset_name) if preset_name else copy.deepcopy(DEFAULTS)
    if path:
        try:
            cfg = deep_merge(cfg, json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        cfg["config_dir"] = str(Path(path).resolve().parent)
    return apply_overrides(cfg, overrides)


def _table(block: dict, key: str, cfg: dict):
    """Inline array ``block[key]`` or CSV file ``block[key + '_csv']`` (header row, one row per factor)."""
    if block.get(key) is not None:
        return np.asarray(block[key], dtype=float)
    ref = block.get(key + "_csv")
    if ref is None:
        return None
    path = Path(ref)
    if not path.is_absolute():
        path = Path(cfg.get("config_dir", ".")) / path
    if not path.exists():
        raise ConfigError(f"referenced file does not exist: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    arr = np.array([[float(x) for x in row] for row in rows if row])
    return arr[:, 0] if arr.shape[1] == 1 else arr


def build_terms(cfg: dict) -> ContractTerms:
    c = cfg["contract"]
    kind = c.get("kind", "uniform")
    if kind == "multicurve-2022":
        return multicurve_2022(c.get("q_min", 0.0), c.get("q_max", 1.0), c.get("Q_min", 180.0),
                               c.get("Q_max", 270.0), c.get("strike"))[0]
    if kind == "uniform":
        try:
            return ContractTerms.uniform(int(c["n"]), float(c["maturity"]), c["q_min"], c["q_max"],
                                         c["Q_min"], c["Q_max"], c["strike"], int(c.get("lag_steps", 0)))
        except KeyError as exc:
            raise ConfigError(f"contract block misses {exc}") from exc
    if kind == "explicit":
        return ContractTerms(c["exercise_times"], c["q_min"], c["q_max"], c["Q_min"], c["Q_max"], c["strike"])
    raise ConfigError(f"unknown contract kind {kind!r}")


def build_model(cfg: dict, terms: ContractTerms):
    m = cfg["model"]
    kind = m.get("kind")
    try:
        if kind == "one_factor":
            return OneFactorModel(m["mean_reversion"], m["vol"], m.get("forward", 20.0))
        if kind == "three_factor":
            if "rho" in m:
                dim = len(m["vols"])
                corr = np.full((dim, dim), float(m["rho"]))
                np.fill_diagonal(corr, 1.0)
            else:
                corr = _table(m, "correlation", cfg)
            return ThreeFactorModel(m["vols"], m["mean_reversions"], corr, m.get("forward", 20.0))
        if kind == "multi_curve":
            if m.get("preset") == "2022":
                c = cfg["contract"]
                return multicurve_2022(c.get("q_min", 0.0), c.get("q_max", 1.0), c.get("Q_min", 180.0),
                                       c.get("Q_max", 270.0), c.get("strike"))[1]
            vols, corr = _table(m, "vols", cfg), _table(m, "correlation", cfg)
            fwd, months = _table(m, "forwards", cfg), m.get("factor_of_date")
            if any(x is None for x in (vols, corr, fwd, months)):
                raise ConfigError("multi-curve model needs vols, correlation, forwards and factor_of_date")
            return MultiCurveModel(vols, corr, fwd, np.asarray(months, dtype=int))
    except KeyError as exc:
        raise ConfigError(f"model block misses {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    opt = dict(cfg["optimizer"])
    name = opt.pop("name", "psgld")
    if name == "adam":
        opt = {k: v for k, v in opt.items() if k in ("lr", "beta1", "beta2", "eps", "strict_index")}
    elif name == "psgld":
        opt = {k: v for k, v in opt.items() if k in ("lr", "beta", "noise", "eps")}
    elif name == "sgd":
        opt = {"lr": opt.get("lr", 0.1)}
    t, s = cfg["train"], cfg["strategy"]
    return TrainConfig(iterations=int(t["iterations"]), batch_size=int(t["batch_size"]),
                       batches_per_iter=int(t.get("batches_per_iter", 1)), optimizer=name,
                       optimizer_params=opt, seed=int(t["seed"]), strategy=s["kind"],
                       hidden=tuple(s.get("hidden", (10, 10))), input_spec=s.get("input_spec", "basic"))


def thread_count(cfg: dict) -> int:
    return int(cfg.get("threads") or os.cpu_count() or 1)
