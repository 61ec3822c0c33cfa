"""JSON experiment configs: defaults, validation and seed derivation.

A config is a flat JSON object.  Missing fields are filled from the
per-command, per-benchmark defaults below; :func:`resolve` returns the
effective config that ``--print-config`` shows.
"""
from __future__ import annotations

import copy
import json
import math

import numpy as np

from .benchmarks import BENCHMARKS, TRANSFER_SCENARIOS, ConfigError

LEARNERS = ("mgedmd", "medmd", "ledmd", "sedmd", "edmd")

_BENCH_DEFAULTS = {
    "duffing3": {
        "learners": ["mgedmd", "medmd", "ledmd", "sedmd", "edmd"],
        "m": [1500, 5000],
        "dictionary": {"type": "rbf", "size": 456},
        "eval_box": {"cube": [-0.5, 0.5]},
    },
    "vdp3": {
        "learners": ["mgedmd", "medmd", "ledmd", "sedmd"],
        "m": [2500, 8000],
        "dictionary": {"type": "rbf", "size": 456},
        "eval_box": {"low": [-math.pi / 5, -0.4] * 3, "high": [math.pi / 5, 0.4] * 3},
    },
}

_COMMON = {"seed": 0, "dt": 0.01, "n_sims": 500, "ridge": 0.0, "substeps": 10,
           "medmd_mode": "extract", "mgedmd_mode": "shared", "mgedmd_inputs": "all",
           "exclude_diverged": False}

_TRANSFER_DEFAULTS = {
    "learners": ["mgedmd", "medmd", "ledmd"],
    "m": [20, 50],
    "steps": 50,
    "dictionary": {"type": "monomial", "degree": 3, "constant": True},
    "eval_box": {"cube": [-0.5, 0.5]},
    "ledmd_copy": "verbatim",
    "certify": None,
}

_CERTIFY_DEFAULTS = {
    "benchmark": "transfer_mod3_add4",
    "surrogate_m": 2000,
    "T": 0.5,
    "x0": 0.25,
    "dictionary": {"type": "monomial", "degree": 3, "constant": True},
    "seed": 0,
    "ridge": 0.0,
}


def load(path: str) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _merge(defaults: dict, cfg: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in cfg.items():
        out[k] = copy.deepcopy(v)
    return out


def seed_int(master: int, *labels: int) -> int:
    """A 63-bit integer derived from ``(master, *labels)``; stable across platforms."""
    state = np.random.SeedSequence([int(master)] + [int(v) for v in labels]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def resolve(command: str, cfg: dict, seed: int | None = None) -> dict:
    cfg = dict(cfg)
    cfg.pop("command", None)
    if seed is not None:
        cfg["seed"] = int(seed)
    if command == "bench":
        name = cfg.get("benchmark", "duffing3")
        if name not in _BENCH_DEFAULTS:
            raise ConfigError(f"config.benchmark: {name!r} is not a benchmark network "
                              f"(choose {', '.join(_BENCH_DEFAULTS)})")
        out = _merge({**_COMMON, "benchmark": name, "horizon": 0.5, **_BENCH_DEFAULTS[name]}, cfg)
    elif command == "transfer":
        scen = cfg.get("scenario", "transfer_add4")
        if scen not in TRANSFER_SCENARIOS:
            raise ConfigError(f"config.scenario: {scen!r} is not one of {', '.join(TRANSFER_SCENARIOS)}")
        out = _merge({**_COMMON, "scenario": scen, **_TRANSFER_DEFAULTS}, cfg)
        if out.get("certify") is True:
            out["certify"] = {}
        if isinstance(out.get("certify"), dict):
            out["certify"] = _merge({k: v for k, v in _CERTIFY_DEFAULTS.items()
                                     if k in ("surrogate_m", "T", "x0")}, out["certify"])
    elif command == "certify":
        out = _merge(_CERTIFY_DEFAULTS, cfg)
    elif command == "fit":
        name = cfg.get("benchmark", "duffing3")
        base = _BENCH_DEFAULTS.get(name, {"dictionary": {"type": "monomial", "degree": 3, "constant": True}})
        out = _merge({**_COMMON, "benchmark": name, "learner": "mgedmd", "m": 1500,
                      "dictionary": base["dictionary"]}, cfg)
    elif command == "predict":
        out = _merge({"dt": 0.01, "steps": 50, "substeps": 10, "n_sims": 1, "seed": 0,
                      "eval_box": {"cube": [-0.5, 0.5]}}, cfg)
    else:
        raise ConfigError(f"unknown command {command!r}")
    validate(command, out)
    out["derived_seeds"] = derived_seeds(command, out)
    return out


def _need(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"config.{path}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _validate_dictionary(d, path="dictionary"):
    _need(isinstance(d, dict), path, "must be an object")
    _need(d.get("type") in ("rbf", "monomial"), f"{path}.type", "must be 'rbf' or 'monomial'")
    if d["type"] == "rbf":
        _need(_is_int(d.get("size")) and d["size"] > 0, f"{path}.size", "must be a positive integer")
    else:
        _need(_is_int(d.get("degree")) and d["degree"] >= 1, f"{path}.degree", "must be an integer >= 1")
        _need(isinstance(d.get("constant", False), bool), f"{path}.constant", "must be true or false")


def _validate_box(b, path="eval_box"):
    _need(isinstance(b, dict), path, "must be an object with 'cube' or 'low'/'high'")
    if "cube" in b:
        _need(isinstance(b["cube"], list) and len(b["cube"]) == 2 and b["cube"][0] <= b["cube"][1],
              f"{path}.cube", "must be [low, high] with low <= high")
    else:
        _need("low" in b and "high" in b, path, "needs 'cube' or both 'low' and 'high'")
        _need(len(b["low"]) == len(b["high"]), path, "'low' and 'high' differ in length")
        _need(all(lo <= hi for lo, hi in zip(b["low"], b["high"])), path, "has negative width")


def validate(command: str, cfg: dict) -> None:
    _need(_is_int(cfg.get("seed")), "seed", "must be an integer")
    if command in ("bench", "transfer", "fit"):
        _need(isinstance(cfg.get("dt"), (int, float)) and cfg["dt"] > 0, "dt", "must be positive")
        _need(_is_int(cfg.get("substeps")) and cfg["substeps"] >= 1, "substeps", "must be a positive integer")
        _validate_dictionary(cfg.get("dictionary"))
        _need(cfg.get("medmd_mode") in ("extract", "frozen"), "medmd_mode", "must be 'extract' or 'frozen'")
        _need(cfg.get("mgedmd_mode") in ("shared", "independent"), "mgedmd_mode",
              "must be 'shared' or 'independent'")
        _need(cfg.get("mgedmd_inputs") in ("all", "active"), "mgedmd_inputs", "must be 'all' or 'active'")
        _need(isinstance(cfg.get("ridge"), (int, float)) and cfg["ridge"] >= 0, "ridge", "must be >= 0")
    if command in ("bench", "transfer"):
        learners = cfg.get("learners")
        _need(isinstance(learners, list) and learners, "learners", "must be a non-empty list")
        for k, name in enumerate(learners):
            _need(name in LEARNERS, f"learners[{k}]", f"unknown learner {name!r}")
        ms = cfg.get("m")
        _need(isinstance(ms, list) and ms, "m", "must be a non-empty list of sample counts")
        for k, m in enumerate(ms):
            _need(_is_int(m) and m >= 1, f"m[{k}]", "must be a positive integer")
        _need(_is_int(cfg.get("n_sims")) and cfg["n_sims"] >= 1, "n_sims", "must be a positive integer")
        _validate_box(cfg.get("eval_box"))
    if command == "bench":
        _need(isinstance(cfg.get("horizon"), (int, float)) and cfg["horizon"] >= 0, "horizon", "must be >= 0")
    if command == "transfer":
        for k, name in enumerate(cfg["learners"]):
            _need(name in ("mgedmd", "medmd", "ledmd"), f"learners[{k}]",
                  f"{name!r} has no transfer procedure (use mgedmd, medmd or ledmd)")
        _need(_is_int(cfg.get("steps")) and cfg["steps"] >= 0, "steps", "must be a non-negative integer")
        _need(cfg.get("ledmd_copy") in ("verbatim", "relabel"), "ledmd_copy", "must be 'verbatim' or 'relabel'")
        if cfg.get("certify") is not None:
            _need(isinstance(cfg["certify"], dict), "certify", "must be an object, true or null")
    if command == "certify":
        _need(cfg.get("benchmark") in BENCHMARKS, "benchmark", f"must be one of {', '.join(BENCHMARKS)}")
        _need(_is_int(cfg.get("surrogate_m")) and cfg["surrogate_m"] >= 1, "surrogate_m",
              "must be a positive integer")
        _need(isinstance(cfg.get("T"), (int, float)) and cfg["T"] > 0, "T", "must be positive")
        _validate_dictionary(cfg.get("dictionary"))
    if command == "fit":
        _need(cfg.get("benchmark") in BENCHMARKS, "benchmark", f"must be one of {', '.join(BENCHMARKS)}")
        _need(cfg.get("learner") in LEARNERS, "learner", f"must be one of {', '.join(LEARNERS)}")
        _need(_is_int(cfg.get("m")) and cfg["m"] >= 1, "m", "must be a positive integer")
    if command == "predict":
        _need(isinstance(cfg.get("model"), str), "model", "must be the path of a model.json")
        _need(cfg.get("benchmark") in BENCHMARKS, "benchmark", f"must be one of {', '.join(BENCHMARKS)}")
        _need(_is_int(cfg.get("steps")) and cfg["steps"] >= 0, "steps", "must be a non-negative integer")


# labels of the derived seed streams; the first label after the master seed
DATA, DICT, SEDMD_DICT, EDMD_DICT, EVAL, REFIT, SURROGATE, FIT = range(1, 9)


def derived_seeds(command: str, cfg: dict) -> dict:
    s = cfg["seed"]
    if command in ("bench", "transfer"):
        out = {f"data[m={m}]": seed_int(s, DATA, m) for m in cfg["m"]}
        out["dictionaries"] = seed_int(s, DICT)
        out["evaluation"] = seed_int(s, EVAL)
        if command == "transfer":
            out.update({f"refit[m={m}]": seed_int(s, REFIT, m) for m in cfg["m"]})
        return out
    if command == "certify":
        return {"surrogate": seed_int(s, SURROGATE)}
    if command == "fit":
        return {"data": seed_int(s, DATA, cfg["m"]), "dictionaries": seed_int(s, DICT)}
    return {"evaluation": seed_int(s, EVAL)}
