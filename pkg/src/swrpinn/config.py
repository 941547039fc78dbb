"""Run configuration: YAML documents validated against ``schema.json``.

A document may name a packaged preset (or another file) under ``extends``;
its mappings are merged key by key over the base, lists replace wholesale.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError
from .loss import LossWeights
from .network import NetworkArchitecture
from .problem import (
    Box,
    Decomposition,
    NonlocalTerm,
    PdeProblem,
    TransmissionCondition,
    coefficient,
    midpoint_grid,
    split_decomposition,
    vector_coefficient,
)
from .reference import FdGrid
from .swr import SchwarzConfig
from .training import OptimizerConfig, SamplerConfig

SCHEMA_VERSION = 1


class SchemaError(ConfigError):
    """Config failed validation; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@cache
def schema() -> dict:
    return json.loads(resources.files("swrpinn").joinpath("schema.json").read_text())


def preset_names() -> list[str]:
    folder = resources.files("swrpinn").joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def _read_preset(name: str) -> dict:
    path = resources.files("swrpinn").joinpath("presets").joinpath(f"{name}.yaml")
    if not path.is_file():
        raise SchemaError("extends", f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return yaml.safe_load(path.read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _resolve(doc: dict, seen: tuple[str, ...] = ()) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError("$", "config must be a mapping")
    parent = doc.get("extends")
    if parent is None:
        return dict(doc)
    if parent in seen:
        raise SchemaError("extends", f"cyclic extends chain through {parent!r}")
    base = _resolve(_read_preset(parent), seen + (parent,))
    merged = _merge(base, {k: v for k, v in doc.items() if k != "extends"})
    return merged


def _path(err: jsonschema.ValidationError) -> str:
    out = ""
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "$"


def validate(doc: dict) -> None:
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema()).iter_errors(doc))
    if err is not None:
        raise SchemaError(_path(err), err.message)


def _check_consistency(doc: dict) -> None:
    prob = doc["problem"]
    d = prob["dim"]
    for key in ("lo", "hi"):
        if len(prob["domain"][key]) != d:
            raise SchemaError(f"problem.domain.{key}", f"needs {d} entries")
    if len(prob["advection"]) != d:
        raise SchemaError("problem.advection", f"needs {d} entries")
    n_nets, n_sub = len(doc["networks"]), doc["decomposition"]["n_sub"]
    if n_nets not in (1, n_sub):
        raise SchemaError("networks", f"give 1 or {n_sub} entries, got {n_nets}")
    if doc["transmission"]["kind"] == "robin" and not doc["transmission"]["lambda"] > 0:
        raise SchemaError("transmission.lambda", "Robin transmission needs lambda > 0")
    if doc["schwarz"]["local_solver"] == "fd" and d != 1:
        raise SchemaError("schwarz.local_solver", "the finite-difference local solver is 1D only")
    if any(t > prob["horizon"] for t in doc["output"]["times"]):
        raise SchemaError("output.times", "output times must not exceed the horizon")
    nl = prob.get("nonlocal")
    if nl is not None:
        for key in ("lo", "hi"):
            if len(nl["support"][key]) != d:
                raise SchemaError(f"problem.nonlocal.support.{key}", f"needs {d} entries")


def resolve_config(doc: dict) -> dict:
    """Merge ``extends`` chains, validate, and return the fully explicit config."""
    resolved = _resolve(doc)
    resolved.pop("extends", None)
    validate(resolved)
    _check_consistency(resolved)
    # normalise numbers so a dump/load round trip is the identity
    return json.loads(json.dumps(resolved))


def load_config(source: str | Path) -> dict:
    """Load a config file path, a packaged preset name, or a run manifest."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
        try:
            doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise SchemaError("$", f"cannot parse {path}: {exc}") from None
        if isinstance(doc, dict) and "config" in doc and "files" in doc:
            doc = doc["config"]  # a run manifest
    elif str(source) in preset_names():
        doc = _read_preset(str(source))
    else:
        raise SchemaError("$", f"no config file or preset named {str(source)!r}")
    return resolve_config(doc)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)


# builders ----------------------------------------------------------------------------


def _box(spec) -> Box:
    return Box(tuple(float(v) for v in spec["lo"]), tuple(float(v) for v in spec["hi"]))


def build_problem(cfg: dict) -> PdeProblem:
    p = cfg["problem"]
    nonlocal_term = None
    if p.get("nonlocal") is not None:
        nl = p["nonlocal"]
        nodes, weights = midpoint_grid(_box(nl["support"]), nl["nodes"])
        nonlocal_term = NonlocalTerm(coefficient(nl["kernel"]), nodes, weights)
    return PdeProblem(
        dim=p["dim"],
        domain=_box(p["domain"]),
        horizon=float(p["horizon"]),
        u0=coefficient(p["u0"]),
        nu=coefficient(p["nu"]),
        adv=vector_coefficient(p["advection"], p["dim"]),
        reac=coefficient(p["reaction"]),
        source=coefficient(p["source"]),
        nonlocal_term=nonlocal_term,
    )


def build_decomposition(cfg: dict, problem: PdeProblem) -> Decomposition:
    d = cfg["decomposition"]
    return split_decomposition(problem.domain, d["n_sub"], float(d["eps"]))


def build_transmission(cfg: dict) -> TransmissionCondition:
    t = cfg["transmission"]
    return TransmissionCondition(t["kind"], float(t["lambda"]))


def build_archs(cfg: dict) -> list[NetworkArchitecture]:
    dim, n_sub = cfg["problem"]["dim"], cfg["decomposition"]["n_sub"]
    nets = cfg["networks"] * n_sub if len(cfg["networks"]) == 1 else cfg["networks"]
    return [NetworkArchitecture(dim + 1, (n["width"],) * n["layers"], n["activation"]) for n in nets]


def build_schwarz(cfg: dict, threads: int = 1) -> SchwarzConfig:
    s = cfg["schwarz"]
    return SchwarzConfig(
        max_iters=s["max_iters"],
        delta_sc=float(s["delta_sc"]),
        transmission=build_transmission(cfg),
        local_solver=s["local_solver"],
        n_space=s["n_space"],
        n_time=s["n_time"],
        stagnation_rel=float(s["stagnation_rel"]),
        stagnation_count=s["stagnation_count"],
        threads=threads,
    )


def build_sampler(cfg: dict) -> SamplerConfig:
    return SamplerConfig(seed=cfg["seed"], **cfg["sampler"])


def build_optimizer(cfg: dict) -> OptimizerConfig:
    o = cfg["optimizer"]
    return OptimizerConfig(o["kind"], float(o["lr0"]), float(o["decay"]), o["epochs"], o["minibatch"])


def build_weights(cfg: dict) -> LossWeights:
    return LossWeights(**{k: float(v) for k, v in cfg["weights"].items()})


def build_grid(cfg: dict) -> FdGrid:
    r = cfg["reference"]
    ny = r["nx"] if cfg["problem"]["dim"] == 2 else None
    return FdGrid(r["nx"], float(r["dt"]), float(r["theta"]), ny)


def prediction_points(cfg: dict) -> np.ndarray:
    """Uniform query grid (endpoints included) used by snapshots and references."""
    dom = cfg["problem"]["domain"]
    n = cfg["output"]["n_points"]
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(dom["lo"], dom["hi"])]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class RunSetup:
    cfg: dict
    problem: PdeProblem
    decomp: Decomposition


def setup(cfg: dict) -> RunSetup:
    problem = build_problem(cfg)
    return RunSetup(cfg, problem, build_decomposition(cfg, problem))
