"""Run configuration: per-system defaults, config-file loading, overrides.

Config files are YAML mappings of the keys below; unknown keys are
rejected.  Command-line flags override file values, which override the
per-system defaults.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .training import TrainConfig


@dataclass
class RunConfig:
    system: str
    seed: int = 0
    dt: float = 0.02
    episode_steps: int = 500
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    r_cbfqp: int = 10
    eps_c: float = 0.1
    rollout_horizon: int = 50
    gamma: float = 5.0
    lambda1: float = 0.0
    lambda2: float = 1.0
    init_low: float = -15.0
    init_high: float = -5.0
    perf_rollouts: bool = True
    mpc_horizon: int = 20
    dataset_capacity: int = 100_000
    hidden: int = 128
    eval_steps: int = 750
    eval_init: float = -15.0
    # integrator barrier/constraint parameters
    hand_cap: float = 2.0
    vel_max: float = 3.0
    # ball-on-beam barrier/constraint/physical parameters
    gamma0: float = 1.0
    beta_bar: float = 0.5
    beta_max: float = 0.75
    betadot_min: float = -2.5
    m_ball: float = 0.5
    g_grav: float = 9.81
    i_beam: float = 0.5

    def as_dict(self):
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

DEFAULTS = {
    "integrator2d": {},
    "ball_on_beam": {
        "dt": 0.01,
        "episode_steps": 800,
        "epochs": 1000,
        "lr": 1e-4,
        "gamma": 2.0,
        "lambda1": 2.0,
        "lambda2": 0.0,
        "init_low": 0.6,
        "init_high": 1.2,
        "perf_rollouts": False,
        "eval_steps": 800,
        "eval_init": 1.0,
    },
}


class ConfigError(ValueError):
    """Bad configuration file or overrides."""


def _coerce(name, value):
    field = _FIELDS[name]
    try:
        if field.type in ("int", int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if field.type in ("float", float):
            return float(value)
        if field.type in ("bool", bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
            raise ValueError
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot interpret "
                          f"{value!r}") from None


def load_config_file(path):
    """Read a YAML config file into a plain dict of known keys."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return dict(raw)


def resolve_config(system=None, file_values=None, overrides=None):
    """Merge defaults <- config file <- explicit overrides into a RunConfig."""
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    system = overrides.pop("system", None) or system \
        or file_values.get("system")
    if system is None:
        raise ConfigError("no system selected (use --system or a config file)")
    if system not in DEFAULTS:
        raise ConfigError(f"unknown system {system!r}; available: "
                          f"{', '.join(sorted(DEFAULTS))}")
    merged = {"system": system}
    merged.update(DEFAULTS[system])
    file_values.pop("system", None)
    merged.update(file_values)
    merged.update(overrides)
    unknown = sorted(set(merged) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {k: (_coerce(k, v) if k != "system" else v)
               for k, v in merged.items()}
    cfg = RunConfig(**coerced)
    to_train_config(cfg)  # validates the loop constants eagerly
    return cfg


def to_train_config(cfg):
    """Project the run configuration onto the training-loop constants."""
    return TrainConfig(
        epochs=cfg.epochs,
        episode_steps=cfg.episode_steps,
        dt=cfg.dt,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        r_cbfqp=cfg.r_cbfqp,
        eps_c=cfg.eps_c,
        rollout_horizon=cfg.rollout_horizon,
        gamma=cfg.gamma,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        seed=cfg.seed,
        init_low=cfg.init_low,
        init_high=cfg.init_high,
        perf_rollouts=cfg.perf_rollouts,
        dataset_capacity=cfg.dataset_capacity,
        mpc_horizon=cfg.mpc_horizon,
        hidden=cfg.hidden,
    )


def system_params(cfg):
    if cfg.system == "ball_on_beam":
        return {"m_ball": cfg.m_ball, "g_grav": cfg.g_grav,
                "i_beam": cfg.i_beam}
    return {}


def hand_params(cfg):
    if cfg.system == "ball_on_beam":
        return {"gamma0": cfg.gamma0, "beta_bar": cfg.beta_bar}
    return {"cap": cfg.hand_cap}


def constraint_params(cfg):
    if cfg.system == "ball_on_beam":
        return {"beta_max": cfg.beta_max, "betadot_min": cfg.betadot_min}
    return {"vel_max": cfg.vel_max}
