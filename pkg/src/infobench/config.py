"""Experiment configuration: documented defaults, flat key-value files, and
CLI overrides.

Config files are plain `key = value` lines (# comments allowed); keys use the
dotted names shown by `describe_defaults`, e.g. `b.sigma_sweep = 0.5,1.0,2.0`.
Desk scale is sized for a workstation; full scale matches the source
experiment sizes where those are larger.
"""

import dataclasses
from dataclasses import dataclass, field, fields

from .dynamics import HymodParams


@dataclass
class AppendixAConfig:
    """Multi-model probability grid."""

    n_params: int = 100          # parameter sets per model (full: 500)
    n_forcings: int = 100        # perturbed forcing series per cell (full: 500)
    record_days: int = 500       # total record; first half is warmup (full: 1000)
    sigma_grid: tuple = (0.01, 0.1, 0.5)
    n_bootstrap: int = 10
    chunk: int = 2000            # combos simulated per block


@dataclass
class AppendixBConfig:
    """Missing-information benchmark."""

    n_days: int = 10_000
    warmup: int = 500
    lag: int = 90
    sigma_sweep: tuple = (0.5, 0.8, 1.1, 1.4, 1.7, 2.0)
    n_replicates: int = 30
    train_fraction: float = 0.75
    n_networks: int = 7
    hidden: int = 20
    bins: int = 20
    fractions: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    # truth system: thin-soil, quick-flow-dominated HyMod so the response is
    # determined by the lag window rather than unobservable seasonal state
    truth_c_max: float = 5.0
    truth_b_exp: float = 0.3
    truth_alpha: float = 0.9
    truth_k_quick: float = 0.6
    truth_k_slow: float = 0.15

    def truth_params(self) -> HymodParams:
        return HymodParams(c_max=self.truth_c_max, b_exp=self.truth_b_exp,
                           alpha=self.truth_alpha, k_quick=self.truth_k_quick,
                           k_slow=self.truth_k_slow)


@dataclass
class AppendixCConfig:
    """Assimilation, system identification, and edge information flow."""

    warmup: int = 365
    calibration_days: int = 1095
    evaluation_days: int = 365
    m_particles: int = 200       # full: 1000
    sigma_obs: float = 0.3
    obs_noise: float = 0.1
    param_jitter: float = 0.15
    process_noise: float = 0.1
    te_bins: int = 11
    te_lag: int = 1
    id_bins: int = 11
    truth_c_max: float = 150.0
    truth_b_exp: float = 1.5
    truth_alpha: float = 0.65
    truth_k_quick: float = 0.4
    truth_k_slow: float = 0.05
    # hypothesis model with a deliberately degraded infiltration function
    hyp_c_max: float = 150.0
    hyp_b_exp: float = 6.0
    hyp_alpha: float = 0.65
    hyp_k_quick: float = 0.4
    hyp_k_slow: float = 0.05

    def truth_params(self) -> HymodParams:
        return HymodParams(c_max=self.truth_c_max, b_exp=self.truth_b_exp,
                           alpha=self.truth_alpha, k_quick=self.truth_k_quick,
                           k_slow=self.truth_k_slow)

    def hypothesis_params(self) -> HymodParams:
        return HymodParams(c_max=self.hyp_c_max, b_exp=self.hyp_b_exp,
                           alpha=self.hyp_alpha, k_quick=self.hyp_k_quick,
                           k_slow=self.hyp_k_slow)


@dataclass
class ExperimentConfig:
    seed: int = 42
    scale: str = "desk"          # "desk" or "full"
    out_dir: str = "out"
    forcing_csv: str | None = None
    workers: int = 1
    a: AppendixAConfig = field(default_factory=AppendixAConfig)
    b: AppendixBConfig = field(default_factory=AppendixBConfig)
    c: AppendixCConfig = field(default_factory=AppendixCConfig)

    def __post_init__(self):
        if self.scale not in ("desk", "full"):
            raise ValueError(f"scale must be desk or full, got {self.scale!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def apply_scale(self) -> "ExperimentConfig":
        """Return a copy with full-scale sizes substituted where they differ."""
        cfg = copy_config(self)
        if cfg.scale == "full":
            cfg.a.n_params = 500
            cfg.a.n_forcings = 500
            cfg.a.record_days = 1000
            cfg.c.m_particles = 1000
        return cfg


def copy_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig(
        seed=cfg.seed, scale=cfg.scale, out_dir=cfg.out_dir,
        forcing_csv=cfg.forcing_csv, workers=cfg.workers,
        a=dataclasses.replace(cfg.a), b=dataclasses.replace(cfg.b),
        c=dataclasses.replace(cfg.c),
    )


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    if like is None or isinstance(like, str):
        return None if raw in ("", "None", "none") else raw
    raise ValueError(f"cannot parse {raw!r}")


def parse_config_text(text: str) -> dict:
    """Parse flat `key = value` lines into a dict; # starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build a config from dotted keys, validating every key and value."""
    cfg = ExperimentConfig()
    top = {f.name: f for f in fields(cfg)}
    for key, raw in mapping.items():
        if "." in key:
            group, name = key.split(".", 1)
            if group not in ("a", "b", "c"):
                raise ValueError(f"unknown config group {group!r}")
            sub = getattr(cfg, group)
            subfields = {f.name: f for f in fields(sub)}
            if name not in subfields:
                raise ValueError(f"unknown config key {key!r}")
            setattr(sub, name, _coerce(raw, getattr(sub, name)))
        else:
            if key not in top or key in ("a", "b", "c"):
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(raw, getattr(cfg, key)))
    cfg.__post_init__()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def flatten_config(cfg: ExperimentConfig) -> dict:
    """Dotted-key snapshot of every field, for manifests."""
    flat = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in ("a", "b", "c"):
            for sf in fields(value):
                sv = getattr(value, sf.name)
                if isinstance(sv, tuple):
                    sv = ",".join(repr(float(x)) for x in sv)
                flat[f"{f.name}.{sf.name}"] = sv
        else:
            flat[f.name] = value
    return flat


def describe_defaults() -> str:
    """The documented key list with defaults, config-file syntax."""
    lines = []
    for key, value in flatten_config(ExperimentConfig()).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines)
