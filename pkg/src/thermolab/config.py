"""Experiment configuration: TOML tables, defaults, dot-path overrides.

A config file holds one experiment::

    [potential]
    kind = "ising"
    J = 1.0

    [weights]
    kind = "counting"

    [run]
    depth = 4
    seed = 7

    [fclt]
    replicas = 2000

Every table is optional; missing keys take the defaults below.  Unknown keys
are rejected so that a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

SUBCOMMANDS = ("spectral", "conformal", "specification", "curie-weiss", "fclt", "dyson", "entropy")

DEFAULTS: dict[str, dict[str, Any]] = {
    "potential": {
        "kind": "constant",
        "value": 0.0,
        "J": 1.0,
        "table": [],
        "m": 2,
        "epsilon": 3.0,
        "beta": 2.0,
        "gamma": "solve",
    },
    "alphabet": {"labels": [-1.0, 1.0]},
    "weights": {"kind": "counting", "values": [], "normalized": True},
    "run": {"depth": 4, "tol": 1e-12, "seed": 0, "threads": 1, "max_states": 1 << 22},
    "spectral": {"expect_multiplicity": 1, "multiplicity_tol": 1e-8, "residual_max": 1e-10},
    "conformal": {"support_tol": 1e-9, "h1_tol": 1e-9, "condition_on": [], "invariance_tol": 1e-9},
    "specification": {
        "event": [1],
        "boundaries": [[0], [1]],
        "n_list": [1, 2, 3, 4, 5, 6, 7, 8],
        "partition_tol": 1e-12,
        "consistency_tol": 1e-8,
        "expect": "none",
    },
    "curie-weiss": {
        "beta": 2.0,
        "N": 10_000,
        "count": 100_000,
        "mixture_t": 0.5,
        "mixture_count": 2_000,
        "k_se": 3.0,
        "root_tol": 1e-12,
    },
    "fclt": {
        "n": 10_000,
        "replicas": 2_000,
        "t_grid": [0.25, 0.5, 0.75, 1.0],
        "significance": 0.01,
        "position": 1,
        "k_se": 3.0,
    },
    "dyson": {
        "epsilon": 3.0,
        "pairs": 10_000,
        "N_list": [1, 2, 5, 10, 20, 50, 100],
        "flatness_n": 10,
        "flatness_pairs": 2_000,
        "flatness_N_list": [1, 2, 4, 8, 16, 32],
        "depth": 14,
        "window": [2, 10],
        "slack": 0.5,
        "residual_max": 1e-8,
    },
    "entropy": {"n_list": [2, 3, 4, 5, 6], "tol": 1e-6},
}

POTENTIAL_KINDS = ("constant", "ising", "tabulated", "dyson", "mean-field")
WEIGHT_KINDS = ("counting", "uniform", "values")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dot path, ``line`` the TOML line if known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def as_dict(self) -> dict:
        return {"error": "config", "message": str(self), "field": self.field, "line": self.line}


def parse_value(text: str) -> Any:
    """A TOML scalar or array (``3``, ``1e-8``, ``[1, 2]``, ``"x"``); anything
    else is kept as a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _toml_line(exc: tomli.TOMLDecodeError) -> int | None:
    # tomli reports "(at line L, column C)" in the message
    msg = str(exc)
    if "line " in msg:
        try:
            return int(msg.split("line ")[1].split(",")[0])
        except (IndexError, ValueError):
            return None
    return None


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown key {where!r}", where)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a table", where)
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"unknown table {'.'.join(keys[: i + 1])!r}", dotted)
        node = node[key]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigError(f"unknown key {dotted!r}", dotted)
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, overrides: list[str] | tuple[str, ...] = ()) -> dict:
    """Defaults, then the file, then ``key=value`` overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error: {exc}", line=_toml_line(exc)) from exc
        _merge(cfg, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", item)
        key, _, text = item.partition("=")
        set_path(cfg, key.strip(), parse_value(text.strip()))
    validate(cfg)
    return cfg


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {message}", field)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _int_list(x) -> bool:
    return isinstance(x, list) and len(x) > 0 and all(_is_int(v) and v >= 0 for v in x)


def validate(cfg: dict) -> None:
    pot, run = cfg["potential"], cfg["run"]
    _require(pot["kind"] in POTENTIAL_KINDS, "potential.kind", f"expected one of {POTENTIAL_KINDS}")
    labels = cfg["alphabet"]["labels"]
    _require(isinstance(labels, list) and len(labels) >= 2 and all(_is_num(v) for v in labels)
             and len(set(labels)) == len(labels), "alphabet.labels", "need >= 2 distinct numbers")
    k = len(labels)
    wt = cfg["weights"]
    _require(wt["kind"] in WEIGHT_KINDS, "weights.kind", f"expected one of {WEIGHT_KINDS}")
    if wt["kind"] == "values":
        _require(isinstance(wt["values"], list) and len(wt["values"]) == k
                 and all(_is_num(v) and v > 0 for v in wt["values"]),
                 "weights.values", f"need {k} positive numbers")
    _require(_is_int(run["depth"]) and run["depth"] >= 1, "run.depth", "must be an integer >= 1")
    _require(_is_num(run["tol"]) and run["tol"] > 0, "run.tol", "must be positive")
    _require(_is_int(run["seed"]) and 0 <= run["seed"] < 2**64, "run.seed", "must be an unsigned 64-bit integer")
    _require(_is_int(run["threads"]) and run["threads"] >= 1, "run.threads", "must be an integer >= 1")
    if pot["kind"] == "tabulated":
        m = pot["m"]
        _require(_is_int(m) and m >= 1, "potential.m", "must be an integer >= 1")
        _require(isinstance(pot["table"], list) and len(pot["table"]) == k**m
                 and all(_is_num(v) for v in pot["table"]), "potential.table", f"need {k}**{m} numbers")
    if pot["kind"] == "dyson":
        _require(k == 2, "alphabet.labels", "the Dyson potential lives on two spins")
        _require(_is_num(pot["epsilon"]) and pot["epsilon"] > 0, "potential.epsilon", "must be > 0")
        _require(_is_int(pot["m"]) and pot["m"] >= 2, "potential.m", "must be an integer >= 2")
    if pot["kind"] == "mean-field":
        _require(_is_num(pot["beta"]) and pot["beta"] > 0, "potential.beta", "must be > 0")
        _require(pot["gamma"] == "solve" or (_is_num(pot["gamma"]) and -1 <= pot["gamma"] <= 1),
                 "potential.gamma", 'must be "solve" or a number in [-1, 1]')
    for key in ("J", "value"):
        _require(_is_num(pot[key]), f"potential.{key}", "must be a number")

    spec = cfg["specification"]
    _require(_int_list(spec["event"]) and max(spec["event"]) < k, "specification.event", "need a word over the alphabet")
    _require(isinstance(spec["boundaries"], list) and len(spec["boundaries"]) >= 1
             and all(_int_list(b) and max(b) < k for b in spec["boundaries"]),
             "specification.boundaries", "need a list of words over the alphabet")
    _require(_int_list(spec["n_list"]) and min(spec["n_list"]) >= len(spec["event"]),
             "specification.n_list", "volumes must be >= the event depth")
    _require(spec["expect"] in ("none", "decay", "persist"), "specification.expect",
             'must be "none", "decay" or "persist"')
    cond = cfg["conformal"]["condition_on"]
    _require(isinstance(cond, list) and all(_int_list(wd) and max(wd) < k for wd in cond),
             "conformal.condition_on", "need a list of words")

    cw = cfg["curie-weiss"]
    _require(_is_num(cw["beta"]) and cw["beta"] > 0, "curie-weiss.beta", "must be > 0")
    for key in ("N", "count", "mixture_count"):
        _require(_is_int(cw[key]) and cw[key] >= 2, f"curie-weiss.{key}", "must be an integer >= 2")
    _require(_is_num(cw["mixture_t"]) and 0 <= cw["mixture_t"] <= 1, "curie-weiss.mixture_t", "must lie in [0, 1]")

    fc = cfg["fclt"]
    for key in ("n", "replicas"):
        _require(_is_int(fc[key]) and fc[key] >= 2, f"fclt.{key}", "must be an integer >= 2")
    _require(isinstance(fc["t_grid"], list) and all(_is_num(t) and 0 < t <= 1 for t in fc["t_grid"]),
             "fclt.t_grid", "need times in (0, 1]")
    _require(_is_num(fc["significance"]) and 0 < fc["significance"] < 1, "fclt.significance", "must lie in (0, 1)")
    _require(_is_int(fc["position"]) and fc["position"] >= 1, "fclt.position", "must be an integer >= 1")

    dy = cfg["dyson"]
    _require(_is_num(dy["epsilon"]) and dy["epsilon"] > 0, "dyson.epsilon", "must be > 0")
    _require(_is_int(dy["depth"]) and dy["depth"] >= 2, "dyson.depth", "must be an integer >= 2")
    w = dy["window"]
    _require(isinstance(w, list) and len(w) == 2 and all(_is_int(v) for v in w) and 1 <= w[0] < w[1] <= dy["depth"],
             "dyson.window", "need [lo, hi] with 1 <= lo < hi <= dyson.depth")
    for key in ("N_list", "flatness_N_list"):
        _require(_int_list(dy[key]) and min(dy[key]) >= 1, f"dyson.{key}", "need positive integers")
    _require(_int_list(cfg["entropy"]["n_list"]) and min(cfg["entropy"]["n_list"]) >= 1,
             "entropy.n_list", "need positive depths")


@dataclass
class Experiment:
    """Module-level objects built from a validated config."""

    alphabet: Any
    weights: Any
    potential: Any
    depth: int
    tol: float
    seed: int


def build(cfg: dict) -> Experiment:
    from .curie_weiss import solve_magnetization
    from .lattice import Alphabet, AprioriWeights, PotentialSpec

    alphabet = Alphabet(tuple(float(v) for v in cfg["alphabet"]["labels"]))
    k = alphabet.k
    wt = cfg["weights"]
    if wt["kind"] == "counting":
        weights = AprioriWeights.counting(k)
    elif wt["kind"] == "uniform":
        weights = AprioriWeights.uniform(k)
    else:
        values = [float(v) for v in wt["values"]]
        if wt["normalized"]:
            total = math.fsum(values)
            values = [v / total for v in values]
        weights = AprioriWeights(tuple(values), normalized=bool(wt["normalized"]))
    pot = cfg["potential"]
    kind = pot["kind"]
    if kind == "constant":
        potential = PotentialSpec.constant(pot["value"])
    elif kind == "ising":
        potential = PotentialSpec.ising(pot["J"], alphabet)
    elif kind == "tabulated":
        potential = PotentialSpec.tabulated(pot["table"], k, pot["m"])
    elif kind == "dyson":
        potential = PotentialSpec.dyson(pot["epsilon"], pot["m"])
    else:
        gamma = solve_magnetization(pot["beta"]).gamma if pot["gamma"] == "solve" else float(pot["gamma"])
        potential = PotentialSpec.mean_field(pot["beta"], gamma)
    run = cfg["run"]
    return Experiment(alphabet, weights, potential, int(run["depth"]), float(run["tol"]), int(run["seed"]))
