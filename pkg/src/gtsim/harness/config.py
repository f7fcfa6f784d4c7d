"""Experiment configuration: flat ``key = value`` sections, presets and flag overrides.

Every key lives in exactly one section, so a flag ``--key value`` is
unambiguous; ``--section.key value`` is accepted as well.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_SEED = 20200101

TOPOLOGY_FAMILIES = ("exponential", "grid", "geometric", "complete", "path")
WEIGHT_RULES = ("auto", "equal", "metropolis", "lazy_metropolis")
SUITE_KINDS = ("pl", "quadratic", "logistic")
ORACLE_KINDS = ("gaussian", "sampling")
METHODS = ("gt_dsgd", "dsgd", "centralized")
SCHEDULES = ("constant", "poly_decay", "harmonic")
PARTITIONS = ("iid", "label_sorted")
STEP_NAMES = ("alpha_bar", "ncvx", "sqrt_n_over_k")
_STEP_TOKEN = re.compile(r"^(?:([0-9.eE+-]+)\s*\*\s*)?([a-z_]+)$")


class ConfigError(ValueError):
    """Invalid configuration; messages name the offending key."""


@dataclass
class TopologyConfig:
    families: tuple = ("exponential",)
    n: int = 16
    rows: int = 0  # 0: square grid from n
    cols: int = 0
    radius: float = 0.0  # 0: default radius for the geometric family
    graph_seed: int = 0
    rule: str = "auto"


@dataclass
class SuiteConfig:
    problem: str = "pl"
    hetero_scale: float = 0.1
    box: float = 10.0
    spread: float = 1.0  # quadratic
    curvature: float = 1.0  # quadratic
    dim: int = 1  # quadratic / synthetic logistic
    dataset: str = ""  # logistic: sample file; empty means synthetic data
    partition: str = "iid"
    samples_per_node: int = 200
    separation: float = 1.0
    feature_scale: float = 0.0  # 0: default normalization
    reg: float = 1e-4
    data_seed: int = 0


@dataclass
class OracleConfig:
    oracle: str = "gaussian"
    sigma: float = 0.5
    batch: int = 1
    nu_draws: int = 10_000


@dataclass
class MethodConfig:
    methods: tuple = ("gt_dsgd",)
    central_batch: int = 0  # 0: batch = n


@dataclass
class ScheduleConfig:
    schedule: str = "constant"
    alpha: tuple = ("alpha_bar",)  # numbers or [c*]alpha_bar | [c*]ncvx | [c*]sqrt_n_over_k
    delta: str = "auto"
    phi: str = "auto"
    epsilon: tuple = (1.0,)
    beta: str = "auto"
    gamma: str = "auto"
    strict: bool = False  # reject schedules outside the analysed range


@dataclass
class RunConfig:
    iters: int = 10_000
    trials: int = 20
    seed: int = DEFAULT_SEED
    stride: int = 10
    output: str = "results"
    x0: float = 2.0
    bounds: bool = True
    allow_divergence: bool = False
    threads: int = 0  # 0: GTSIM_THREADS or 1


SECTIONS = {
    "topology": TopologyConfig,
    "suite": SuiteConfig,
    "oracle": OracleConfig,
    "method": MethodConfig,
    "schedule": ScheduleConfig,
    "run": RunConfig,
}

CHOICES = {
    ("topology", "families"): TOPOLOGY_FAMILIES,
    ("topology", "rule"): WEIGHT_RULES,
    ("suite", "problem"): SUITE_KINDS,
    ("suite", "partition"): PARTITIONS,
    ("oracle", "oracle"): ORACLE_KINDS,
    ("method", "methods"): METHODS,
    ("schedule", "schedule"): SCHEDULES,
}


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    run: RunConfig = field(default_factory=RunConfig)
    preset: str = ""

    def to_dict(self) -> dict:
        """Flat ``{section: {key: text}}`` echo that ``parse_config`` reads back."""
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _format(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        return out


def _key_index() -> dict:
    index = {}
    for sname, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            assert f.name not in index, f"duplicate key {f.name}"
            index[f.name] = sname
    return index


KEY_SECTION = _key_index()


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(section: str, key: str, text: str, default):
    text = str(text).strip()
    where = f"[{section}] {key} = {text!r}"
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(float(text)) if float(text).is_integer() else int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = tuple(t.strip() for t in text.split(",") if t.strip())
            if not items:
                raise ValueError
            if default and isinstance(default[0], float):
                return tuple(float(t) for t in items)
            return items
    except ValueError:
        kind = type(default).__name__ if not isinstance(default, tuple) else "comma-separated list"
        raise ConfigError(f"{where}: expected {kind}") from None
    return text


def _validate(cfg: ExperimentConfig) -> None:
    for (sname, key), allowed in CHOICES.items():
        value = getattr(getattr(cfg, sname), key)
        values = value if isinstance(value, tuple) else (value,)
        for v in values:
            if v not in allowed:
                raise ConfigError(f"[{sname}] {key}: {v!r} is not one of {', '.join(allowed)}")
    t, s, o, m, sc, r = cfg.topology, cfg.suite, cfg.oracle, cfg.method, cfg.schedule, cfg.run
    if t.n < 1:
        raise ConfigError("[topology] n: must be >= 1")
    if r.iters < 1 or r.trials < 1 or r.stride < 1:
        raise ConfigError("[run] iters, trials and stride must be >= 1")
    if r.threads < 0:
        raise ConfigError("[run] threads: must be >= 0")
    if o.sigma < 0:
        raise ConfigError("[oracle] sigma: must be >= 0")
    if o.batch < 1:
        raise ConfigError("[oracle] batch: must be >= 1")
    if o.oracle == "sampling" and s.problem != "logistic":
        raise ConfigError("[oracle] oracle = sampling needs [suite] problem = logistic")
    if s.problem == "pl" and s.hetero_scale <= 0:
        raise ConfigError("[suite] hetero_scale: must be > 0")
    if s.problem == "logistic" and s.dataset and not Path(s.dataset).is_file():
        raise ConfigError(f"[suite] dataset: no such file {s.dataset!r}")
    if sc.schedule == "poly_decay":
        for eps in sc.epsilon:
            if not 0.5 < eps <= 1:
                raise ConfigError(f"[schedule] epsilon = {eps}: must lie in (0.5, 1]")
    for name in ("delta", "phi", "beta", "gamma"):
        text = getattr(sc, name)
        if text != "auto":
            try:
                ok = float(text) > 0
            except ValueError:
                ok = False
            if not ok:
                raise ConfigError(f"[schedule] {name} = {text!r}: expected 'auto' or a positive number")
    if sc.schedule == "constant":
        for tok in sc.alpha:
            parse_step_token(tok)
    if "centralized" in m.methods and m.central_batch < 0:
        raise ConfigError("[method] central_batch: must be >= 0")


def parse_step_token(tok: str) -> tuple[float, str | None]:
    """``'0.5*alpha_bar'`` -> ``(0.5, 'alpha_bar')``; ``'0.01'`` -> ``(0.01, None)``."""
    tok = tok.strip()
    try:
        value = float(tok)
    except ValueError:
        pass
    else:
        if value <= 0:
            raise ConfigError(f"[schedule] alpha = {tok!r}: must be > 0")
        return value, None
    mt = _STEP_TOKEN.match(tok)
    if not mt or mt.group(2) not in STEP_NAMES:
        raise ConfigError(f"[schedule] alpha = {tok!r}: expected a number or "
                          f"[c*]{{{', '.join(STEP_NAMES)}}}")
    scale = float(mt.group(1)) if mt.group(1) else 1.0
    if scale <= 0:
        raise ConfigError(f"[schedule] alpha = {tok!r}: scale must be > 0")
    return scale, mt.group(2)


def _apply(cfg: ExperimentConfig, section: str, key: str, text) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; sections are {', '.join(SECTIONS)}")
    sec = getattr(cfg, section)
    names = [f.name for f in dataclasses.fields(sec)]
    if key not in names:
        raise ConfigError(f"[{section}] unknown key {key!r}; accepted keys: {', '.join(names)}")
    setattr(sec, key, _convert(section, key, text, getattr(sec, key)))


def _apply_mapping(cfg: ExperimentConfig, mapping: dict) -> None:
    for section, values in mapping.items():
        for key, text in values.items():
            _apply(cfg, section, key, text)


def _parse_overrides(overrides) -> list[tuple[str, str, str]]:
    """Accepts ``{'key': value}``, ``{'section.key': value}`` or a flag list."""
    if overrides is None:
        return []
    pairs = []
    if isinstance(overrides, dict):
        items = list(overrides.items())
    else:
        items, args = [], list(overrides)
        i = 0
        while i < len(args):
            arg = args[i]
            if not arg.startswith("--"):
                raise ConfigError(f"unexpected argument {arg!r}; overrides look like --key value")
            name = arg[2:]
            if "=" in name:
                name, value = name.split("=", 1)
                i += 1
            else:
                if i + 1 >= len(args):
                    raise ConfigError(f"flag {arg} needs a value")
                value = args[i + 1]
                i += 2
            items.append((name.replace("-", "_"), value))
    for name, value in items:
        if "." in name:
            section, key = name.split(".", 1)
        else:
            if name not in KEY_SECTION:
                raise ConfigError(f"unknown key {name!r}; accepted keys: {', '.join(sorted(KEY_SECTION))}")
            section, key = KEY_SECTION[name], name
        pairs.append((section, key, value))
    return pairs


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def parse_config(path=None, overrides=None, preset: str | None = None,
                 mapping: dict | None = None) -> ExperimentConfig:
    """Build and validate a config: defaults, then preset, file, mapping, overrides."""
    from .presets import PRESETS

    cfg = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; presets: {', '.join(PRESETS)}")
        _apply_mapping(cfg, PRESETS[preset].settings)
        cfg.preset = preset
    if path is not None:
        _apply_mapping(cfg, read_config_file(path))
    if mapping:
        _apply_mapping(cfg, mapping)
    for section, key, value in _parse_overrides(overrides):
        _apply(cfg, section, key, value)
    _validate(cfg)
    return cfg
