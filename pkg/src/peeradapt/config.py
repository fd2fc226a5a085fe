"""Experiment configuration: TOML sections, defaults, presets, freezing.

Every tunable lives here with per-environment defaults; a run's fully
resolved configuration is written next to its outputs so the run can be
reproduced bit-for-bit from that frozen copy. Unknown sections or keys
are rejected. Paths inside a config file resolve relative to the file.
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields

import tomli

from .pools import (
    ENV_KUHN,
    ENV_PP,
    PoolSpec,
    check_pool_env,
    gen_kuhn_pool,
    gen_pp_pool,
    load_pool,
)
from .predprey import DEFAULT_TEST_PATHS, DEFAULT_TRAIN_PATHS, PhysicsConfig
from .trainer import ModelSpec, PPOConfig

ENV_DIMS = {ENV_KUHN: (13, 2), ENV_PP: (37, 5)}

PRESETS = ("pace", "pace-reward", "pace-reward-aux")

OUT_ROOT_ENV_VAR = "PEERADAPT_OUT"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class RunSection:
    env: str = ENV_KUHN
    seed: int = 0
    n_eps: int = 100


@dataclass
class PoolSection:
    path: str = ""  # load this pool file; empty means generate
    train: int = 40
    test: int = 10
    seed: int = 0


@dataclass
class EncoderSection:
    d_z: int = 64
    f_hidden: list = field(default_factory=lambda: [64, 64])
    g_hidden: list = field(default_factory=lambda: [64])
    actor_hidden: list = field(default_factory=lambda: [128, 128])
    critic_hidden: list = field(default_factory=lambda: [128, 128])


@dataclass
class PPOSection:
    lr: float = 2e-4
    clip_eps: float = 0.2
    entropy_coef: float = 5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    batch_size: int = 80_000
    update_epochs: int = 15
    minibatches: int = 12
    grad_clip: float = 2.0
    value_coef: float = 0.5
    aux_weight: float = 1.0
    advantage_norm: bool = True
    total_steps: int = 5_000_000
    checkpoint_interval: int = 0


@dataclass
class ScheduleSection:
    c_init: float = 0.01
    decay_steps: int = 4_000_000
    warmup_steps: int = 100_000


@dataclass
class EvalSection:
    episodes: int = 100
    window: int = 10
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    cth: float = 0.8
    switch_at: int = 0  # 0 disables the sudden-change protocol


@dataclass
class PhysicsSection:
    dt: float = 0.1
    damping: float = 0.25
    accel: float = 5.0
    max_speed: float = 1.0
    body_radius: float = 0.05
    tower_contact_radius: float = 0.1
    obs_radius: float = 0.2
    reward_coef: float = 0.1
    max_steps: int = 40
    prey_speed: float = 0.08
    towers: list = field(
        default_factory=lambda: [[0.8, 0.8], [0.8, -0.8], [-0.8, 0.8], [-0.8, -0.8]]
    )
    landmarks: list = field(default_factory=lambda: [[0.0, 0.35], [0.0, -0.35]])


@dataclass
class PathsSection:
    # Reconstructed prey path coordinates (the source layouts exist only
    # as a figure); override freely per experiment.
    train: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_TRAIN_PATHS))
    test: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_TEST_PATHS))


@dataclass
class ExperimentConfig:
    run: RunSection
    pool: PoolSection
    encoder: EncoderSection
    ppo: PPOSection
    schedule: ScheduleSection
    eval: EvalSection
    physics: PhysicsSection | None = None
    paths: PathsSection | None = None
    base_dir: str = "."  # directory relative paths resolve against

    # -- derived objects ------------------------------------------------

    def ppo_config(self) -> PPOConfig:
        p, s = self.ppo, self.schedule
        return PPOConfig(
            lr=p.lr,
            entropy_coef=p.entropy_coef,
            batch_size=p.batch_size,
            update_epochs=p.update_epochs,
            n_minibatches=p.minibatches,
            grad_clip=p.grad_clip,
            total_steps=p.total_steps,
            n_eps=self.run.n_eps,
            warmup_steps=s.warmup_steps,
            c_init=s.c_init,
            c_decay_steps=s.decay_steps,
            clip_eps=p.clip_eps,
            gamma=p.gamma,
            gae_lambda=p.gae_lambda,
            value_coef=p.value_coef,
            aux_weight=p.aux_weight,
            advantage_norm=p.advantage_norm,
            checkpoint_interval=p.checkpoint_interval,
        )

    def model_spec(self, pool: PoolSpec) -> ModelSpec:
        obs_dim, n_actions = ENV_DIMS[self.run.env]
        e = self.encoder
        return ModelSpec(
            env=self.run.env,
            obs_dim=obs_dim,
            n_actions=n_actions,
            d_z=e.d_z,
            f_hidden=tuple(e.f_hidden),
            g_hidden=tuple(e.g_hidden),
            actor_hidden=tuple(e.actor_hidden),
            critic_hidden=tuple(e.critic_hidden),
            slot_cardinalities=tuple(pool.slot_cardinalities),
            n_eps=self.run.n_eps,
        )

    def physics_config(self) -> PhysicsConfig | None:
        if self.physics is None:
            return None
        ph = self.physics
        return PhysicsConfig(
            dt=ph.dt,
            damping=ph.damping,
            accel=ph.accel,
            max_speed=ph.max_speed,
            body_radius=ph.body_radius,
            tower_contact_radius=ph.tower_contact_radius,
            obs_radius=ph.obs_radius,
            reward_coef=ph.reward_coef,
            max_steps=ph.max_steps,
            prey_speed=ph.prey_speed,
            towers=tuple(tuple(t) for t in ph.towers),
            landmarks=tuple(tuple(t) for t in ph.landmarks),
        )

    def path_table(self) -> list | None:
        if self.paths is None:
            return None
        return list(self.paths.train) + list(self.paths.test)

    def resolve_pool(self, save_dir: str | None = None) -> PoolSpec:
        """Load the referenced pool, or generate one (and save it under
        ``save_dir`` so the frozen config can point at it)."""
        if self.pool.path:
            path = os.path.join(self.base_dir, self.pool.path)
            pool = load_pool(path)
            check_pool_env(pool, self.run.env)
            return pool
        if self.run.env == ENV_KUHN:
            pool = gen_kuhn_pool(self.pool.train, self.pool.test, self.pool.seed)
        else:
            prey_speed = self.physics.prey_speed if self.physics else 0.08
            pool = gen_pp_pool(
                self.pool.seed, self.pool.train, self.pool.test, prey_speed
            )
        if save_dir is not None:
            from .pools import save_pool

            save_pool(pool, os.path.join(save_dir, "pool.json"))
            self.pool.path = "pool.json"
        return pool


_SECTIONS = {
    "run": RunSection,
    "pool": PoolSection,
    "encoder": EncoderSection,
    "ppo": PPOSection,
    "schedule": ScheduleSection,
    "eval": EvalSection,
    "physics": PhysicsSection,
    "paths": PathsSection,
}


def default_config(env: str) -> ExperimentConfig:
    if env == ENV_KUHN:
        return ExperimentConfig(
            run=RunSection(env=ENV_KUHN, n_eps=100),
            pool=PoolSection(train=40, test=10),
            encoder=EncoderSection(d_z=64, f_hidden=[64, 64], g_hidden=[64]),
            ppo=PPOSection(),
            schedule=ScheduleSection(),
            eval=EvalSection(episodes=100, window=10),
        )
    if env == ENV_PP:
        return ExperimentConfig(
            run=RunSection(env=ENV_PP, n_eps=5),
            pool=PoolSection(train=16, test=24),
            encoder=EncoderSection(d_z=128, f_hidden=[128, 128], g_hidden=[128]),
            ppo=PPOSection(
                lr=1e-3,
                entropy_coef=0.03,
                batch_size=64_000,
                update_epochs=4,
                minibatches=16,
                grad_clip=15.0,
                total_steps=15_000_000,
            ),
            schedule=ScheduleSection(
                c_init=0.1, decay_steps=15_000_000, warmup_steps=500_000
            ),
            eval=EvalSection(episodes=5, window=1),
            physics=PhysicsSection(),
            paths=PathsSection(),
        )
    raise ConfigError(f"unknown env {env!r}")


def apply_preset(cfg: ExperimentConfig, preset: str) -> None:
    """Ablation presets are configuration transforms, not code forks."""
    if preset == "pace":
        return
    if preset == "pace-reward":
        cfg.schedule.c_init = 0.0
        return
    if preset == "pace-reward-aux":
        cfg.schedule.c_init = 0.0
        cfg.ppo.aux_weight = 0.0
        return
    raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as f:
        try:
            doc = tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"config is not valid TOML: {e}") from e
    if "run" not in doc or "env" not in doc["run"]:
        raise ConfigError("config must set run.env")
    env = doc["run"]["env"]
    cfg = default_config(env)
    for section, values in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        if section in ("physics", "paths") and env == ENV_KUHN:
            raise ConfigError(f"[{section}] does not apply to env {env!r}")
        target = getattr(cfg, section)
        valid = {f.name for f in fields(_SECTIONS[section])}
        for key, value in values.items():
            if key not in valid:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, key, value)
    cfg.base_dir = os.path.dirname(os.path.abspath(path))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.run.env not in ENV_DIMS:
        raise ConfigError(f"unknown env {cfg.run.env!r}")
    positives = [
        ("run.n_eps", cfg.run.n_eps),
        ("ppo.batch_size", cfg.ppo.batch_size),
        ("ppo.update_epochs", cfg.ppo.update_epochs),
        ("ppo.minibatches", cfg.ppo.minibatches),
        ("encoder.d_z", cfg.encoder.d_z),
        ("eval.episodes", cfg.eval.episodes),
        ("eval.window", cfg.eval.window),
        ("schedule.decay_steps", cfg.schedule.decay_steps),
    ]
    for name, value in positives:
        if value < 1:
            raise ConfigError(f"{name} must be >= 1, got {value}")
    if cfg.ppo.lr <= 0:
        raise ConfigError("ppo.lr must be positive")
    if not 0.0 <= cfg.eval.cth <= 1.0:
        raise ConfigError("eval.cth must lie in [0, 1]")
    if cfg.schedule.c_init < 0:
        raise ConfigError("schedule.c_init must be >= 0")
    if cfg.pool.path:
        path = os.path.join(cfg.base_dir, cfg.pool.path)
        if not os.path.exists(path):
            raise ConfigError(f"pool file does not exist: {path}")
    if cfg.run.env == ENV_PP and cfg.paths is not None:
        for side in ("train", "test"):
            for p in getattr(cfg.paths, side):
                if len(p) < 2:
                    raise ConfigError("every prey path needs >= 2 waypoints")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_toml(cfg: ExperimentConfig) -> str:
    """Deterministic TOML rendering of the fully resolved configuration."""
    lines = []
    for section, cls in _SECTIONS.items():
        value = getattr(cfg, section)
        if value is None:
            continue
        lines.append(f"[{section}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(value, f.name))}")
        lines.append("")
    return "\n".join(lines)


def freeze_config(cfg: ExperimentConfig, out_dir: str) -> str:
    path = os.path.join(out_dir, "config.toml")
    with open(path, "w") as f:
        f.write(dump_toml(cfg))
    return path


def default_out_root() -> str:
    return os.environ.get(OUT_ROOT_ENV_VAR, "runs")
