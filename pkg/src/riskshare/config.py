"""Experiment configuration files (TOML).

A config names one experiment and carries the literals it needs. Unknown
keys are rejected everywhere, so a typo fails loudly instead of silently
falling back to a default. See ``docs/config.md`` for the full schema.
"""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import tomli

from .infconv import AgentPopulation
from .probspace import FiniteProbSpace, PartitionAlgebra
from .riskmeasures import spec_from_dict

EXPERIMENTS = {
    "eval": "Evaluate risk measures (and optionally a population value) on payoffs; "
            "VaR example with two equally weighted agents",
    "conj": "Conjugate table of one risk measure over the simplex grid; dual representation",
    "infconv": "Value function, optimal allocation and dual bound of a population; "
               "conjugate of a convolution is the sum of conjugates",
    "degeneracy": "Conjugate degeneracy verdicts for risk measures; VaR degeneracy on finite spaces",
    "improperness": "Probe a population for a value of -inf; degenerate agents make the value improper",
    "convexify": "Convexity violation and duality gap of replicated agents as n grows; "
                 "Shapley-Folkman convexification",
    "consistency": "Dilatation monotonicity and consistency checks; "
                   "consistency versus dilatation monotonicity",
    "identity-var": "VaR at half the atom mass equals the essential supremum, and the "
                    "quantile convolution identity fails",
    "group-check": "Convolving group value functions reproduces the direct value; partitioned convolutions",
    "conditional-check": "Value over all allocations versus G-measurable allocations; "
                         "G-convolution lemma",
}

RANDOMIZED = {"infconv", "convexify", "consistency", "identity-var", "group-check",
              "conditional-check"}

TOP_KEYS = {"experiment", "seed", "space", "spec", "specs", "population", "payoffs",
            "random_payoffs", "solver", "conjugate", "output", "params"}
SECTION_KEYS = {
    "space": {"p", "uniform"},
    "population": {"mode", "agents"},
    "random_payoffs": {"count", "scale", "partition"},
    "solver": {"method", "restarts", "points", "max_escalations", "tol", "radius"},
    "conjugate": {"step", "M", "payoff_step", "escalation", "polish_tol"},
    "output": {"dir", "name"},
}
PARAM_KEYS = {
    "eval": set(),
    "conj": set(),
    "infconv": {"dual"},
    "degeneracy": set(),
    "improperness": {"steps", "threshold"},
    "convexify": {"n_list", "segment", "lambda_points"},
    "consistency": {"q", "samples", "pairs", "explicit_payoffs"},
    "identity-var": {"N", "samples"},
    "group-check": {"groups"},
    "conditional-check": {"partitions", "q"},
}


class ConfigError(ValueError):
    """A config file that cannot be parsed or does not match the schema."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    space: FiniteProbSpace
    raw: dict
    specs: list = field(default_factory=list)
    population: AgentPopulation = None
    payoffs: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    conjugate: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _check_keys(where, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _space(data):
    _check_keys("space", data, SECTION_KEYS["space"])
    if ("p" in data) == ("uniform" in data):
        raise ConfigError("space: give exactly one of 'p' or 'uniform'")
    try:
        if "uniform" in data:
            return FiniteProbSpace.uniform(int(data["uniform"]))
        return FiniteProbSpace(tuple(data["p"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"space: {exc}") from None


def _spec(where, data):
    try:
        return spec_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _population(data):
    _check_keys("population", data, SECTION_KEYS["population"])
    mode = data.get("mode", "weighted")
    agents = []
    for k, a in enumerate(data.get("agents", [])):
        _check_keys(f"population.agents[{k}]", a, {"weight", "spec"})
        if "spec" not in a:
            raise ConfigError(f"population.agents[{k}]: missing 'spec'")
        agents.append((float(a.get("weight", 1.0)), _spec(f"population.agents[{k}].spec", a["spec"])))
    try:
        return AgentPopulation(tuple(agents), mode)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"population: {exc}") from None


def _payoffs(data, space, seed):
    rows = [list(map(float, x)) for x in data.get("payoffs", [])]
    for k, x in enumerate(rows):
        if len(x) != space.d:
            raise ConfigError(f"payoffs[{k}]: has {len(x)} entries, space has {space.d} atoms")
    rp = data.get("random_payoffs")
    if rp is not None:
        _check_keys("random_payoffs", rp, SECTION_KEYS["random_payoffs"])
        rng = np.random.default_rng(seed)
        count, scale = int(rp.get("count", 10)), float(rp.get("scale", 5.0))
        if "partition" in rp:
            G = _partition("random_payoffs.partition", rp["partition"], space.d)
            vals = rng.uniform(-scale, scale, size=(count, len(G.blocks)))
            rows += (vals @ np.asarray(G.basis).T).tolist()
        else:
            rows += rng.uniform(-scale, scale, size=(count, space.d)).tolist()
    return rows


def _partition(where, blocks, d):
    try:
        G = PartitionAlgebra(tuple(tuple(b) for b in blocks))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if G.d != d:
        raise ConfigError(f"{where}: covers {G.d} atoms, space has {d}")
    return G


def parse_config(text, seed_override=None):
    """Parse and validate TOML text into an ``ExperimentConfig``."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    _check_keys("config", data, TOP_KEYS)
    exp = data.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    if seed_override is not None:
        data["seed"] = int(seed_override)
    if "seed" not in data:
        if exp in RANDOMIZED or "random_payoffs" in data:
            raise ConfigError(f"seed: required for the randomized experiment {exp!r}")
        data["seed"] = 0
    if not isinstance(data["seed"], int) or data["seed"] < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    if "space" not in data:
        raise ConfigError("space: missing")
    space = _space(data["space"])
    specs = []
    if "spec" in data:
        specs.append(_spec("spec", data["spec"]))
    for k, s in enumerate(data.get("specs", [])):
        specs.append(_spec(f"specs[{k}]", s))
    pop = _population(data["population"]) if "population" in data else None
    for name in ("solver", "conjugate", "output"):
        if name in data:
            _check_keys(name, data[name], SECTION_KEYS[name])
    params = data.get("params", {})
    _check_keys("params", params, PARAM_KEYS[exp])
    cfg = ExperimentConfig(
        experiment=exp, seed=data["seed"], space=space, raw=data, specs=specs, population=pop,
        payoffs=_payoffs(data, space, data["seed"]), solver=dict(data.get("solver", {})),
        conjugate=dict(data.get("conjugate", {})), output=dict(data.get("output", {})),
        params=dict(params),
    )
    _require(cfg)
    return cfg


def _require(cfg):
    exp = cfg.experiment
    need_specs = {"eval", "conj", "degeneracy", "convexify", "consistency"}
    need_pop = {"infconv", "improperness", "group-check", "conditional-check"}
    need_payoffs = {"infconv", "group-check", "conditional-check"}
    if exp in need_specs and not cfg.specs:
        raise ConfigError(f"{exp}: needs 'spec' or 'specs'")
    if exp in need_pop and cfg.population is None:
        raise ConfigError(f"{exp}: needs a [population] table")
    if exp in need_payoffs and not cfg.payoffs:
        raise ConfigError(f"{exp}: needs 'payoffs' or [random_payoffs]")
    if exp == "eval" and not cfg.payoffs:
        raise ConfigError("eval: needs 'payoffs' or [random_payoffs]")
    if exp == "group-check":
        groups = cfg.params.get("groups")
        if not groups:
            raise ConfigError("params.groups: required for group-check")
        flat = sorted(i for g in groups for i in g)
        if any(len(g) == 0 for g in groups) or flat != list(range(cfg.population.n)):
            raise ConfigError("params.groups: must partition the agents 0..n-1 into nonempty groups")
    if exp == "conditional-check":
        parts = cfg.params.get("partitions", "all")
        if parts != "all":
            for k, p in enumerate(parts):
                _partition(f"params.partitions[{k}]", p, cfg.space.d)
    if exp == "convexify" and len(cfg.params.get("n_list", [1, 2, 4])) < 3:
        raise ConfigError("params.n_list: need at least three values")


def load_config(path, seed_override=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, seed_override)


__all__ = ["ConfigError", "EXPERIMENTS", "ExperimentConfig", "load_config", "parse_config"]
