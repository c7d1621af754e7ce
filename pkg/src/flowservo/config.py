"""Versioned YAML run and suite configuration.

A config is a mapping with ``schema_version: 1`` and these sections::

    seed: 0                    # episode seed (falls back to FLOWSERVO_SEED, then 0)
    scenario:                  # one episode (``run``) or the template for a suite
      id: desk00
      scene_seed: 0
      start: {rotvec: [0, 0.1, 0], translation: [0.2, 0, 0]}
      goal: {rotvec: [0, 0, 0], translation: [0, 0, 0]}
      dt: 0.1
      eps: 8.0e-4
      ...
      scene: {width: 5.6, ...}
      intrinsics: {fx: 128, ...}
    controller: {id: lstm_mpc, params: {lr: 0.01}}
    suite:                     # ``bench`` only
      kind: desk               # generated suite, or "list" with explicit scenarios
      n: 10
      seed: 2021
      controllers: [ibvs, lstm_mpc, nn_mpc, cem_mpc]
      seeds: [0]
      controller_params: {cem_mpc: {population: 128}}
      scenarios: []            # list entries use the same keys as ``scenario``

Loading fills every default, so ``dump_config(load_config(...))`` is a
complete, self-describing file that loads back to the same run.
"""

from __future__ import annotations

import copy
import os
from dataclasses import fields

import yaml

from flowservo.control import CONTROLLER_IDS
from flowservo.geometry import DomainError, Intrinsics, Pose
from flowservo.scene import SceneConfig
from flowservo.servo import Scenario

SCHEMA_VERSION = 1
SEED_ENV = "FLOWSERVO_SEED"


class ConfigError(DomainError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


_SCENARIO_DEFAULTS = {
    "id": "scenario",
    "scene_seed": 0,
    "start": {"rotvec": [0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]},
    "goal": {"rotvec": [0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]},
    "dt": 0.1,
    "eps": 8e-4,
    "max_steps": 300,
    "horizon": 5,
    "train_iters": 100,
    "noise_std": 0.0,
    "flow_source": "oracle",
    "stride": 8,
    "depth_prior": 2.0,
    "min_coverage": 0.25,
    "v0_std": 0.01,
}
_FLOATS = {"dt", "eps", "noise_std", "depth_prior", "min_coverage", "v0_std"}
_INTS = {"scene_seed", "max_steps", "horizon", "train_iters", "stride"}

_SUITE_DEFAULTS = {
    "kind": "desk",
    "n": 10,
    "seed": 2021,
    "controllers": list(CONTROLLER_IDS),
    "seeds": [0],
    "controller_params": {},
    "scenarios": [],
}


def _as_float(key, value):
    if isinstance(value, bool):
        raise ConfigError(key, "expected a number")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _as_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return value


def _vec3(key, value):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(key, "expected a list of 3 numbers")
    return [_as_float(key, v) for v in value]


def _pose(key, value):
    if not isinstance(value, dict):
        raise ConfigError(key, "expected a mapping with rotvec and translation")
    extra = set(value) - {"rotvec", "translation"}
    if extra:
        raise ConfigError(f"{key}.{sorted(extra)[0]}", "unknown key")
    return {"rotvec": _vec3(f"{key}.rotvec", value.get("rotvec", [0.0, 0.0, 0.0])),
            "translation": _vec3(f"{key}.translation", value.get("translation", [0.0, 0.0, 0.0]))}


def _dataclass_section(key, value, cls, base):
    names = {f.name: f.type for f in fields(cls)}
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ConfigError(key, "expected a mapping")
    out = dict(base)
    for k, v in value.items():
        if k not in names:
            raise ConfigError(f"{key}.{k}", "unknown key")
        out[k] = _as_int(f"{key}.{k}", v) if isinstance(base[k], int) else _as_float(f"{key}.{k}", v)
    try:
        cls(**out)
    except DomainError as exc:
        raise ConfigError(key, str(exc)) from None
    return out


def normalize_scenario(raw, key="scenario") -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected a mapping")
    allowed = set(_SCENARIO_DEFAULTS) | {"scene", "intrinsics"}
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"{key}.{k}", "unknown key")
    out = copy.deepcopy(_SCENARIO_DEFAULTS)
    for k, v in raw.items():
        if k in ("start", "goal"):
            out[k] = _pose(f"{key}.{k}", v)
        elif k in _FLOATS:
            out[k] = _as_float(f"{key}.{k}", v)
        elif k in _INTS:
            out[k] = _as_int(f"{key}.{k}", v)
        elif k in ("id", "flow_source"):
            if not isinstance(v, str) or not v:
                raise ConfigError(f"{key}.{k}", "expected a non-empty string")
            out[k] = v
    out["scene"] = _dataclass_section(f"{key}.scene", raw.get("scene"), SceneConfig, SceneConfig().to_dict())
    out["intrinsics"] = _dataclass_section(f"{key}.intrinsics", raw.get("intrinsics"), Intrinsics,
                                           Intrinsics.default().to_dict())
    for k in ("dt", "eps"):
        if not out[k] > 0:
            raise ConfigError(f"{key}.{k}", "must be positive")
    for k in ("max_steps", "horizon", "stride"):
        if out[k] < 1:
            raise ConfigError(f"{key}.{k}", "must be >= 1")
    if out["train_iters"] < 0 or out["noise_std"] < 0:
        bad = "train_iters" if out["train_iters"] < 0 else "noise_std"
        raise ConfigError(f"{key}.{bad}", "must be non-negative")
    return out


def normalize_controller(raw) -> dict:
    if raw is None:
        raw = {}
    if isinstance(raw, str):
        raw = {"id": raw}
    if not isinstance(raw, dict):
        raise ConfigError("controller", "expected a mapping with id and params")
    for k in raw:
        if k not in ("id", "params"):
            raise ConfigError(f"controller.{k}", "unknown key")
    cid = raw.get("id", "lstm_mpc")
    if cid not in CONTROLLER_IDS:
        raise ConfigError("controller.id", f"unknown controller {cid!r}; valid ids: {', '.join(CONTROLLER_IDS)}")
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("controller.params", "expected a mapping")
    return {"id": cid, "params": dict(params)}


def normalize_suite(raw) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("suite", "expected a mapping")
    for k in raw:
        if k not in _SUITE_DEFAULTS:
            raise ConfigError(f"suite.{k}", "unknown key")
    out = copy.deepcopy(_SUITE_DEFAULTS)
    out.update(copy.deepcopy(raw))
    if out["kind"] not in ("desk", "list"):
        raise ConfigError("suite.kind", "expected 'desk' or 'list'")
    out["n"] = _as_int("suite.n", out["n"])
    out["seed"] = _as_int("suite.seed", out["seed"])
    if not out["controllers"]:
        raise ConfigError("suite.controllers", "need at least one controller")
    for c in out["controllers"]:
        if c not in CONTROLLER_IDS:
            raise ConfigError("suite.controllers", f"unknown controller {c!r}; valid ids: {', '.join(CONTROLLER_IDS)}")
    out["seeds"] = [_as_int("suite.seeds", s) for s in out["seeds"]]
    if not out["seeds"]:
        raise ConfigError("suite.seeds", "need at least one seed")
    if not isinstance(out["controller_params"], dict):
        raise ConfigError("suite.controller_params", "expected a mapping")
    out["scenarios"] = [normalize_scenario(s, f"suite.scenarios[{i}]") for i, s in enumerate(out["scenarios"])]
    if out["kind"] == "list":
        if not out["scenarios"]:
            raise ConfigError("suite.scenarios", "a list suite needs at least one scenario")
        ids = [s["id"] for s in out["scenarios"]]
        if len(set(ids)) != len(ids):
            raise ConfigError("suite.scenarios", "scenario ids must be unique")
    elif out["n"] < 1:
        raise ConfigError("suite.n", "must be >= 1")
    return out


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(SEED_ENV, f"expected an integer, got {env!r}") from None


def normalize_config(raw) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    for k in raw:
        if k not in ("schema_version", "seed", "scenario", "controller", "suite"):
            raise ConfigError(k, "unknown key")
    seed = raw.get("seed")
    cfg = {
        "schema_version": SCHEMA_VERSION,
        "seed": default_seed() if seed is None else _as_int("seed", seed),
        "scenario": normalize_scenario(raw.get("scenario")),
        "controller": normalize_controller(raw.get("controller")),
    }
    if "suite" in raw:
        cfg["suite"] = normalize_suite(raw["suite"])
    return cfg


def load_config(path=None) -> dict:
    """Read and normalize a YAML config; ``None`` gives the all-defaults config."""
    if path is None:
        return normalize_config({})
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return normalize_config(raw)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def scenario_from_dict(sc: dict, controller: dict) -> Scenario:
    try:
        return Scenario(
            start=Pose.from_dict(sc["start"]), goal=Pose.from_dict(sc["goal"]),
            scenario_id=sc["id"], scene_seed=sc["scene_seed"],
            scene=SceneConfig(**sc["scene"]), intrinsics=Intrinsics(**sc["intrinsics"]),
            dt=sc["dt"], eps=sc["eps"], max_steps=sc["max_steps"],
            controller=controller["id"], controller_params=dict(controller["params"]),
            horizon=sc["horizon"], train_iters=sc["train_iters"], noise_std=sc["noise_std"],
            flow_source=sc["flow_source"], stride=sc["stride"], depth_prior=sc["depth_prior"],
            min_coverage=sc["min_coverage"], v0_std=sc["v0_std"])
    except DomainError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("scenario", str(exc)) from None


def scenario_from_config(cfg: dict) -> Scenario:
    return scenario_from_dict(cfg["scenario"], cfg["controller"])


def suite_from_config(cfg: dict):
    from flowservo.bench import BenchSuite, default_desk_suite

    suite_cfg = cfg.get("suite") or normalize_suite({})
    template = cfg["scenario"]
    shared = {k: template[k] for k in ("dt", "eps", "max_steps", "horizon", "train_iters", "noise_std",
                                       "stride", "depth_prior", "min_coverage", "v0_std")}
    if suite_cfg["kind"] == "desk":
        suite = default_desk_suite(suite_cfg["n"], suite_cfg["seed"], suite_cfg["controllers"],
                                   scene=SceneConfig(**template["scene"]),
                                   intrinsics=Intrinsics(**template["intrinsics"]), **shared)
    else:
        scenarios = [scenario_from_dict(s, {"id": suite_cfg["controllers"][0], "params": {}})
                     for s in suite_cfg["scenarios"]]
        suite = BenchSuite(scenarios, tuple(suite_cfg["controllers"]))
    suite.controller_params = {c: dict(p) for c, p in suite_cfg["controller_params"].items()}
    suite.seeds = tuple(suite_cfg["seeds"])
    return suite
