"""Experiment configuration: YAML in, validated and fully resolved out.

A resolved config is a plain dict with every default filled in.  It is what
output files echo in their metadata line, and resolving it again gives the
same dict back.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np
import yaml

from .bounds import EvalPolicy
from .model import ConfigError, PowerModel, RouterConfig, TrafficSpec

PRESETS = ("figure2", "figure3")

DEFAULTS = {
    "router": {"m_active": None, "alpha": 2.0, "beta": 2.0, "epsilon": 0.05},
    "traffic": {"load": None, "rates": None, "sigma": 0.0, "sigma_ik": 0.0},
    "policy": {"form": "tight", "path": "numeric", "tolerance": 1e-12, "reading": "theorem"},
    "curves": {"kinds": ["middle_q"], "thresholds": {"start": 1, "stop": 100, "step": 1}},
    "sim": {"seed": 0, "horizon": 100_000, "warmup": None},
    "sweep": {"parameter": "m_active", "values": []},
    "tradeoff": {"target": 1e-6, "power": {"w0": 0.0, "w1": 1.0, "table": None}},
    "output": {"path": None, "format": "csv"},
}


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1, where ``1e-6`` (no dot) is a string; accept the 1.2 float syntax
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def parse_yaml(text):
    return yaml.load(text, Loader=_Loader)


def _schema() -> dict:
    return json.loads(resources.files("lbrouter").joinpath("config_schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _normalise(doc: dict) -> dict:
    r = doc["router"]
    if r["m_active"] is None:
        r["m_active"] = r["m"]
    for key in ("alpha", "beta", "epsilon"):
        r[key] = float(r[key])
    t = doc["traffic"]
    if t["load"] is None and t["rates"] is None:
        t["load"] = 1.0
    if t["load"] is not None and t["rates"] is not None:
        raise ConfigError("traffic: give either 'load' or 'rates', not both")
    if t["load"] is not None:
        t["load"] = float(t["load"])
    t["sigma"] = float(t["sigma"])
    if not isinstance(t["sigma_ik"], list):
        t["sigma_ik"] = float(t["sigma_ik"])
    doc["policy"]["tolerance"] = float(doc["policy"]["tolerance"])
    th = doc["curves"]["thresholds"]
    for key in ("start", "stop", "step"):
        th[key] = float(th[key])
    doc["tradeoff"]["target"] = float(doc["tradeoff"]["target"])
    if doc["sweep"]["parameter"] == "m_active":
        doc["sweep"]["values"] = [int(v) for v in doc["sweep"]["values"]]
    else:
        doc["sweep"]["values"] = [float(v) for v in doc["sweep"]["values"]]
    return doc


def resolve(raw: dict) -> dict:
    """Validate against the schema and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}") from None
    doc = _normalise(_merge(DEFAULTS, raw))
    # building the model objects catches cross-field problems early
    ExperimentConfig.from_resolved(doc)
    return doc


def load(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = parse_yaml(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid YAML: {err}") from None
    return resolve(raw or {})


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("lbrouter").joinpath("presets", f"{name}.yaml").read_text()
    return resolve(parse_yaml(text))


def dumps(doc: dict) -> str:
    """One-line, key-sorted JSON; JSON is also YAML so this re-parses directly."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ExperimentConfig:
    router: RouterConfig
    traffic: TrafficSpec
    policy: EvalPolicy
    reading: str
    kinds: tuple
    thresholds: np.ndarray
    seed: int
    horizon: int
    warmup: int | None
    sweep_parameter: str
    sweep_values: tuple
    target: float
    power: PowerModel
    output: str | None

    @classmethod
    def from_resolved(cls, doc: dict) -> ExperimentConfig:
        r, t = doc["router"], doc["traffic"]
        router = RouterConfig(r["n"], r["m"], r["m_active"], r["alpha"], r["beta"], r["epsilon"])
        if t["rates"] is not None:
            rates = np.array(t["rates"], dtype=float)
            if rates.shape != (router.n, router.n):
                raise ConfigError(f"traffic.rates must be {router.n}x{router.n}, got shape {rates.shape}")
        else:
            rates = np.full((router.n, router.n), t["load"] / router.n)
        traffic = TrafficSpec(rates, np.broadcast_to(np.array(t["sigma_ik"], dtype=float), rates.shape), t["sigma"])
        p = doc["policy"]
        try:
            policy = EvalPolicy(form=p["form"], path=p["path"], tol=p["tolerance"])
        except ValueError as err:
            raise ConfigError(f"policy: {err}") from None
        th = doc["curves"]["thresholds"]
        thresholds = np.arange(th["start"], th["stop"] + th["step"] / 2, th["step"])
        if thresholds.size == 0:
            raise ConfigError("curves.thresholds: empty range")
        w = doc["tradeoff"]["power"]
        if w["table"] is not None:
            if len(w["table"]) != router.m + 1:
                raise ConfigError(f"tradeoff.power.table needs m+1={router.m + 1} entries, got {len(w['table'])}")
            power = PowerModel.tabulated(w["table"])
        else:
            power = PowerModel.affine(w["w0"], w["w1"], router.m)
        s = doc["sim"]
        if s["warmup"] is not None and s["warmup"] > s["horizon"]:
            raise ConfigError("sim.warmup must not exceed sim.horizon")
        return cls(
            router=router,
            traffic=traffic,
            policy=policy,
            reading=p["reading"],
            kinds=tuple(doc["curves"]["kinds"]),
            thresholds=thresholds,
            seed=s["seed"],
            horizon=s["horizon"],
            warmup=s["warmup"],
            sweep_parameter=doc["sweep"]["parameter"],
            sweep_values=tuple(doc["sweep"]["values"]),
            target=doc["tradeoff"]["target"],
            power=power,
            output=doc["output"]["path"],
        )
