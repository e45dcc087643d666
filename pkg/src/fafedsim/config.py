"""INI-style run configuration.

Three sections, ``[problem]``, ``[algorithm]`` and ``[run]``, whose keys are the
field names of :class:`ProblemConfig`, :class:`HyperParams` (plus ``name``)
and :class:`RunConfig`.  Unknown sections or keys are errors.  Values from
command-line flags override the file, which overrides the defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .engine import RunConfig
from .optimizers import ALGORITHMS, HyperParams
from .problems import ProblemSpec, make_counterexample, make_logistic, make_quadratic

PROBLEM_KINDS = ("counterexample", "quadratic", "logistic")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "quadratic"
    n_clients: int = 8
    dim: int = 20
    center_spread: float = 2.0
    curvature_min: float = 1.0
    curvature_max: float = 2.0
    noise_sigma: float = 0.5
    # None picks the kind's default (1000 quadratic, 200 logistic)
    samples_per_client: int | None = None
    label_skew: float = 0.5
    separation: float = 1.0
    identical_clients: bool = False
    # None reuses the run seed
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"kind must be one of {', '.join(PROBLEM_KINDS)}")
        if self.n_clients < 1 or self.dim < 1:
            raise ConfigError("n_clients and dim must be ≥ 1")

    def build(self, run_seed: int = 0) -> ProblemSpec:
        seed = run_seed if self.seed is None else self.seed
        if self.kind == "counterexample":
            return make_counterexample()
        if self.kind == "quadratic":
            return make_quadratic(
                self.n_clients, self.dim, self.center_spread,
                (self.curvature_min, self.curvature_max), self.noise_sigma, seed,
                self.samples_per_client or 1000, self.identical_clients,
            )
        return make_logistic(
            self.n_clients, self.dim, self.samples_per_client or 200, self.label_skew,
            seed, self.identical_clients, self.separation,
        )


# [run] keys; algorithm, problem and hp are filled from the other sections
RUN_KEYS = ("total_steps", "seed", "record_every", "out", "audit", "workers",
            "stop_grad_norm", "timing")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _converter(annotation: str):
    base = annotation.replace(" | None", "")
    conv = {"int": int, "float": float, "bool": _parse_bool, "str": str}[base]
    if annotation.endswith("| None"):
        return lambda s: None if s.strip().lower() in ("", "none") else conv(s)
    return conv


def _types(cls, only=None) -> dict:
    return {f.name: _converter(f.type) for f in fields(cls) if only is None or f.name in only}


SECTION_TYPES = {
    "problem": _types(ProblemConfig),
    "algorithm": {"name": str, **_types(HyperParams)},
    "run": _types(RunConfig, RUN_KEYS),
}


def convert(section: str, key: str, raw):
    """Typed value for ``key`` in ``section``; strings are parsed, others pass through."""
    if section not in SECTION_TYPES:
        raise ConfigError(f"unknown section [{section}]")
    types = SECTION_TYPES[section]
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    if not isinstance(raw, str):
        return raw
    try:
        return types[key](raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} in [{section}]: {exc}") from None


def read_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case so typos are reported verbatim
    parser.read_string(text)
    out = {s: {} for s in SECTION_TYPES}
    for section in parser.sections():
        if section not in SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            out[section][key] = convert(section, key, raw)
    return out


def read_config(path) -> dict:
    with open(path) as fh:
        return read_config_text(fh.read())


def merge(*layers: dict) -> dict:
    """Later layers win; each layer maps section -> {key: value}."""
    out = {s: {} for s in SECTION_TYPES}
    for layer in layers:
        for section, values in layer.items():
            for key, value in values.items():
                if value is not None:
                    out[section][key] = convert(section, key, value)
    return out


def build_run_config(values: dict) -> RunConfig:
    prob = dict(values.get("problem", {}))
    algo = dict(values.get("algorithm", {}))
    run = dict(values.get("run", {}))
    name = algo.pop("name", "fafed")
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")
    try:
        pcfg = ProblemConfig(**prob)
        hp = HyperParams(**algo)
        seed = run.get("seed", 0)
        return RunConfig(name, pcfg.build(seed), hp, **run)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
