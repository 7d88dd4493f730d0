"""Seeded training runs producing one metrics row per episode."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .agents import (Algorithm, BoundsMode, BoundsSource, EncoderKind, LearnerConfig, Policy,
                     Trajectory, UpdateStats, collect_episode, greedy_action, update)
from .bp_model import BongardProblem
from .env import EnvConfig, downsample_bp, pair_index_arrays, reset
from .errors import ConfigError, MalformedFormat
from .nn import OptimizerState

CSV_SCHEMA = 1
CSV_COLUMNS = ("seed", "episode", "steps", "return", "discounted_return",
               "policy_loss", "value_loss", "entropy", "bounds_active")


@dataclass
class RunConfig:
    algorithm: str = "ppo"
    encoder: str = "snn"
    bounds_mode: str = "off"
    episode_length: int = 144
    episodes: int = 2000
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train_ids: Optional[list] = None
    eval_ids: Optional[list] = None
    image_side: int = 16
    out_dir: str = "runs/run"
    gamma: float = 0.99
    lr: float = 3e-4
    batch_episodes: int = 8
    epochs: int = 4
    minibatch_size: int = 256
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    min_samples: int = 100
    swap_history_in_lower: bool = False
    shuffle: bool = True

    def __post_init__(self):
        try:
            Algorithm(self.algorithm)
            EncoderKind(self.encoder)
            BoundsMode(self.bounds_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.episodes < 0:
            raise ConfigError("episodes must be nonnegative")
        if self.train_ids and self.eval_ids and set(self.train_ids) & set(self.eval_ids):
            raise ConfigError("train and eval problem ids overlap")
        self.env_config()
        self.learner_config()

    def env_config(self) -> EnvConfig:
        return EnvConfig(self.episode_length, self.gamma, self.image_side, self.shuffle)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(Algorithm(self.algorithm), self.clip_eps, self.epochs, self.entropy_coef,
                             self.value_coef, BoundsMode(self.bounds_mode), self.lr,
                             self.batch_episodes, self.minibatch_size, self.max_grad_norm,
                             self.min_samples, self.swap_history_in_lower)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class MetricsRow:
    seed: int
    episode: int
    steps: int
    ret: float
    discounted_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    bounds_active: bool

    def as_csv(self) -> list:
        def num(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))
        return [self.seed, self.episode, self.steps, repr(float(self.ret)),
                repr(float(self.discounted_return)), num(self.policy_loss), num(self.value_loss),
                num(self.entropy), int(self.bounds_active)]


class MetricsWriter:
    """Append-only CSV with a ``# schema=N`` header line."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# schema={CSV_SCHEMA}\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, row: MetricsRow) -> None:
        self._w.writerow(row.as_csv())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={CSV_SCHEMA}":
            raise MalformedFormat(f"{path}: unsupported metrics schema line {first!r}")
        rows = list(csv.DictReader(fh))
    return rows


@dataclass
class SeedResult:
    seed: int
    policy: Policy
    optimizer: OptimizerState
    rows: list

    def final_mean(self, last: int = 100) -> float:
        tail = self.rows[-last:]
        return float(np.mean([r.ret for r in tail])) if tail else float("nan")


def _streams(seed: int):
    init, env, act, upd = np.random.SeedSequence(seed).spawn(4)
    return (int(init.generate_state(1)[0]), np.random.default_rng(env),
            np.random.default_rng(act), np.random.default_rng(upd))


def train_seed(bps: Sequence[BongardProblem], config: RunConfig, seed: int,
               csv_path=None, policy: Optional[Policy] = None) -> SeedResult:
    """Train one agent on ``bps``; each episode plays a uniformly drawn problem."""
    if not bps:
        raise ConfigError("no training problems")
    env_cfg = config.env_config()
    learner = config.learner_config()
    init_seed, env_rng, act_rng, upd_rng = _streams(seed)
    small = [downsample_bp(bp, env_cfg.image_side) for bp in bps]
    if policy is None:
        policy = Policy.create(config.encoder, env_cfg.image_side, env_cfg.episode_length, seed=init_seed)
    optimizer = OptimizerState(lr=learner.lr)
    source = BoundsSource(learner.bounds_mode, learner.min_samples, learner.swap_history_in_lower)
    writer = MetricsWriter(csv_path) if csv_path is not None else None
    rows: list[MetricsRow] = []
    pending: list[tuple[int, Trajectory]] = []
    steps = 0
    try:
        for ep in range(config.episodes):
            bp = small[int(env_rng.integers(len(small)))]
            episode, _ = reset(bp, env_cfg, int(env_rng.integers(2**63)))
            traj = collect_episode(episode, policy, source, act_rng)
            steps += len(traj)
            pending.append((steps, traj))
            if len(pending) == learner.batch_episodes or ep == config.episodes - 1:
                stats = update(policy, [t for _, t in pending], learner, optimizer, upd_rng)
                first = ep - len(pending) + 1
                for k, (n_steps, t) in enumerate(pending):
                    disc = float((t.rewards * env_cfg.gamma ** np.arange(len(t))).sum())
                    row = MetricsRow(seed, first + k, n_steps, t.episode_return, disc,
                                     stats.policy_loss, stats.value_loss, stats.entropy,
                                     t.bounds_active)
                    rows.append(row)
                    if writer is not None:
                        writer.write(row)
                pending = []
    finally:
        if writer is not None:
            writer.close()
    return SeedResult(seed, policy, optimizer, rows)


def evaluate_greedy(policy: Policy, bps: Iterable[BongardProblem], oracle: bool = False) -> dict:
    """Greedy rollout in fixed pair order over every pair of each problem."""
    pi, pj, same = pair_index_arrays()
    correct_action = np.where(same, 0, 1)
    per_bp = {}
    total_correct = total = 0
    for bp in bps:
        small = downsample_bp(bp, policy.image_side)
        images = np.stack([img.grid.reshape(-1) for img in small.images]).astype(np.float64)
        actions = correct_action if oracle else greedy_action(policy, images[pi], images[pj])
        hits = int((actions == correct_action).sum())
        per_bp[str(bp.id)] = {"return": float(hits), "accuracy": hits / len(pi)}
        total_correct += hits
        total += len(pi)
    return {"problems": per_bp,
            "mean_return": float(np.mean([v["return"] for v in per_bp.values()])) if per_bp else 0.0,
            "accuracy": total_correct / total if total else 0.0}
