"""Run configuration: a line-oriented ``key: value`` file with ``[section]`` headers.

Example::

    [run]
    seed: 0
    periods: 50
    period_steps: 20

    [cluster]
    M_A: 4

    [env]
    name: rps

    [hyper]
    learning_rate: 9.0

Per-group overrides go in ``[group.<id>]`` sections.  Endpoints are assigned
automatically unless given in ``[endpoints]`` (``pool.0``, ``league``,
``learner.<g>.<r>``, ``infserver.<g>.<i>``).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..envs import ENV_REGISTRY, EnvSpec, default_spec
from ..league import GroupConfig, SamplingScheme, Scheme
from ..policy import Family
from ..rlmath import HyperParams


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _table(text: str) -> tuple:
    rows = [r.split(",") for r in text.split(";")]
    return tuple(tuple(float(x) for x in row) for row in rows)


def _opt(conv):
    return lambda text: None if text.lower() in ("none", "") else conv(text)


_HYPER_TYPES = {f.name: ({float: float, int: int, bool: _bool}[type(f.default)])
                for f in dataclasses.fields(HyperParams)}

SECTIONS = {
    "run": {"name": str, "seed": int, "periods": int, "period_steps": int, "lockstep": _bool,
            "run_dir": str, "max_runtime": float},
    "cluster": {"M_G": int, "M_L": int, "M_A": int, "M_M": int, "inf_servers": int,
                "host": str},
    "env": {"name": str, "horizon": int, "seed": int, "payoff_table": _table},
    "policy": {"family": Family.parse, "init_scale": float, "seed": int},
    "learner": {"algo": str, "publish_interval": int, "capacity": int, "train_delay": float,
                "metrics_interval": float, "teacher_key": _opt(str)},
    "actor": {"unroll_len": int, "param_refresh_interval": int, "inference": str,
              "step_delay": float},
    "infserver": {"max_batch": int, "flush_timeout_ms": float, "refresh_interval": float,
                  "model_key": str},
    "hyper": _HYPER_TYPES,
    "league": {"scheme": Scheme, "K": int, "pfsp_exponent": float,
               "mixture_self_play_weight": float, "elo_sigma": _opt(float), "k_factor": float,
               "perturb_hyper": _bool},
    "group": {"lineage": str, "scheme": Scheme, "K": int, "pfsp_exponent": float,
              "mixture_self_play_weight": float, "elo_sigma": _opt(float),
              "opponent_lineage": _opt(str), "periods": int},
}


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    periods: int = 10
    period_steps: int = 1000
    lockstep: bool = False
    run_dir: Optional[str] = None
    max_runtime: float = 3600.0
    M_G: int = 1
    M_L: int = 1
    M_A: int = 2
    M_M: int = 1
    inf_servers: int = 0          # per learner group
    host: str = "127.0.0.1"
    env: EnvSpec = field(default_factory=lambda: default_spec("rps"))
    family: Family = Family.TABULAR_SOFTMAX
    init_scale: float = 0.0
    policy_seed: int = 0
    algo: str = "ppo"
    publish_interval: int = 1
    capacity: int = 4096
    train_delay: float = 0.0
    metrics_interval: float = 1.0
    teacher_key: Optional[str] = None
    unroll_len: Optional[int] = None
    param_refresh_interval: int = 1
    inference: str = "local"
    step_delay: float = 0.0
    max_batch: int = 32
    flush_timeout_ms: float = 2.0
    refresh_interval: float = 0.5
    infserver_model_key: Optional[str] = None   # default: latest:<group lineage>
    hyper: HyperParams = field(default_factory=HyperParams)
    k_factor: float = 16.0
    perturb_hyper: bool = False
    groups: list = field(default_factory=list)
    endpoints: dict = field(default_factory=dict)

    @property
    def n_actors(self) -> int:
        return self.M_G * self.M_L * self.M_A

    @property
    def process_count(self) -> int:
        return self.M_M + 1 + self.M_G + self.n_actors + self.M_G * self.inf_servers


_SCHEME_KEYS = ("scheme", "K", "pfsp_exponent", "mixture_self_play_weight", "elo_sigma")


def _group_configs(league: dict, group_sections: dict, cfg: RunConfig, lines: dict,
                   source: str) -> list:
    base = {k: league[k] for k in _SCHEME_KEYS if k in league}
    out = []
    for g in range(cfg.M_G):
        over = dict(group_sections.get(g, {}))
        scheme_fields = dict(base)
        scheme_fields.update({k: over.pop(k) for k in list(over) if k in _SCHEME_KEYS})
        try:
            scheme = SamplingScheme(**scheme_fields)
        except ValueError as exc:
            at = [lines.get((sec, k)) for sec in (f"group.{g}", "league") for k in _SCHEME_KEYS]
            at = [n for n in at if n is not None]
            raise ConfigError(str(exc), min(at) if at else None, source) from None
        out.append(GroupConfig(
            group_id=g,
            lineage=over.get("lineage", "main" if g == 0 else f"g{g}"),
            scheme=scheme,
            hyperparams=cfg.hyper,
            total_periods=over.get("periods", cfg.periods),
            n_opponents=cfg.env.n_agents - 1,
            opponent_lineage=over.get("opponent_lineage"),
        ))
    lineages = [g.lineage for g in out]
    if len(set(lineages)) != len(lineages):
        dup = next(g for g in out if lineages.count(g.lineage) > 1 and g.group_id > 0)
        raise ConfigError("learner groups need distinct lineages",
                          lines.get((f"group.{dup.group_id}", "lineage")), source)
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict] = {}
    lines: dict[tuple, int] = {}
    group_sections: dict[int, dict] = {}
    endpoints: dict[str, str] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            base = section.split(".", 1)[0]
            if base not in SECTIONS and section != "endpoints":
                raise ConfigError(f"unknown section [{section}]", lineno, source)
            if base == "group":
                try:
                    gid = int(section.split(".", 1)[1])
                except (IndexError, ValueError):
                    raise ConfigError("group sections are named [group.<id>]", lineno, source) from None
                group_sections.setdefault(gid, {})
            continue
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, source)
        key, sep, val = line.partition(":")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key: value', got {raw.strip()!r}", lineno, source)
        if section == "endpoints":
            if key in endpoints:
                raise ConfigError(f"duplicate endpoint {key!r}", lineno, source)
            endpoints[key] = val
            lines[("endpoints", key)] = lineno
            continue
        base = section.split(".", 1)[0]
        conv = SECTIONS[base].get(key)
        if conv is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, source)
        try:
            parsed = conv(val)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno, source) from None
        target = group_sections[int(section.split(".", 1)[1])] if base == "group" else \
            values.setdefault(section, {})
        if key in target:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, source)
        target[key] = parsed
        lines[(section, key)] = lineno
    return build_config(values, group_sections, endpoints, lines, source)


def build_config(values: dict, group_sections: dict, endpoints: dict, lines: dict,
                 source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    run = values.get("run", {})
    for k, v in run.items():
        setattr(cfg, k, v)
    for k, v in values.get("cluster", {}).items():
        setattr(cfg, k, v)
    for k in ("M_G", "M_L", "M_A", "M_M", "periods", "period_steps"):
        if getattr(cfg, k) < 1:
            raise ConfigError(f"{k} must be >= 1", lines.get(("cluster", k), lines.get(("run", k))),
                              source)
    if cfg.inf_servers < 0:
        raise ConfigError("inf_servers must be >= 0", lines.get(("cluster", "inf_servers")), source)

    env = dict(values.get("env", {}))
    name = env.pop("name", "rps")
    if name not in ENV_REGISTRY:
        raise ConfigError(f"unknown env {name!r}", lines.get(("env", "name")), source)
    try:
        cfg.env = default_spec(name, **env)
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get(("env", "name")), source) from None

    pol = values.get("policy", {})
    cfg.family = pol.get("family", cfg.family)
    cfg.init_scale = pol.get("init_scale", cfg.init_scale)
    cfg.policy_seed = pol.get("seed", cfg.seed)
    if cfg.init_scale < 0:
        raise ConfigError("init_scale must be >= 0", lines.get(("policy", "init_scale")), source)

    for k, v in values.get("learner", {}).items():
        setattr(cfg, k, v)
    if cfg.algo not in ("ppo", "vtrace"):
        raise ConfigError("algo must be ppo or vtrace", lines.get(("learner", "algo")), source)
    for k, v in values.get("actor", {}).items():
        setattr(cfg, k, v)
    if cfg.inference not in ("local", "remote"):
        raise ConfigError("inference must be local or remote", lines.get(("actor", "inference")),
                          source)
    if cfg.inference == "remote" and cfg.inf_servers < 1:
        raise ConfigError("remote inference needs inf_servers >= 1",
                          lines.get(("actor", "inference")), source)
    for k, v in values.get("infserver", {}).items():
        setattr(cfg, "infserver_model_key" if k == "model_key" else k, v)

    hyper = dict(values.get("hyper", {}))
    if cfg.algo == "vtrace" and "max_reuse" not in hyper:
        hyper["max_reuse"] = 4
    try:
        cfg.hyper = HyperParams(**hyper)
    except ValueError as exc:
        first = min((lines[("hyper", k)] for k in hyper), default=None)
        raise ConfigError(str(exc), first, source) from None

    league = values.get("league", {})
    cfg.k_factor = league.get("k_factor", cfg.k_factor)
    cfg.perturb_hyper = league.get("perturb_hyper", cfg.perturb_hyper)
    for gid in group_sections:
        if not 0 <= gid < cfg.M_G:
            raise ConfigError(f"[group.{gid}] but M_G is {cfg.M_G}", None, source)
    cfg.groups = _group_configs(league, group_sections, cfg, lines, source)

    seen: dict[str, str] = {}
    for key, ep in endpoints.items():
        host, _, port = ep.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"malformed endpoint {ep!r}", lines[("endpoints", key)], source)
        if int(port) != 0:
            if ep in seen:
                raise ConfigError(f"endpoint {ep} used by both {seen[ep]} and {key}",
                                  lines[("endpoints", key)], source)
            seen[ep] = key
    cfg.endpoints = endpoints
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
