"""Bongard decision process: one episode per problem, one ordered image pair per step.

Action 0 means "same group", action 1 "different groups". The reward is 1
for a correct assignment. Actions never influence which pair comes next.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .bp_model import GROUP_SIZE, N_IMAGES, BongardProblem, PairState, downsample, make_state
from .errors import ConfigError, EpisodeFinished

N_PAIRS = N_IMAGES * N_IMAGES
SAME, DIFFERENT = 0, 1


@dataclass(frozen=True)
class EnvConfig:
    episode_length: int = N_PAIRS
    gamma: float = 0.99
    image_side: int = 16
    shuffle: bool = True

    def __post_init__(self):
        if not 1 <= self.episode_length <= N_PAIRS:
            raise ConfigError(f"episode_length must be in [1, {N_PAIRS}]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if self.image_side < 1:
            raise ConfigError("image_side must be positive")


@dataclass(frozen=True)
class LabeledPair:
    i: int
    j: int
    state: PairState
    same_group: bool

    @property
    def correct_action(self) -> int:
        return SAME if self.same_group else DIFFERENT


class StepRecord(NamedTuple):
    pair: int
    action: int
    reward: int


def same_group(i: int, j: int) -> bool:
    return (i < GROUP_SIZE) == (j < GROUP_SIZE)


def pair_index_arrays() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-major (i, j, same_group) arrays over all 144 ordered pairs."""
    i, j = np.divmod(np.arange(N_PAIRS), N_IMAGES)
    return i, j, (i < GROUP_SIZE) == (j < GROUP_SIZE)


def compile_pairs(bp: BongardProblem) -> list[LabeledPair]:
    images = bp.images
    return [LabeledPair(i, j, make_state(images[i], images[j]), same_group(i, j))
            for i in range(N_IMAGES) for j in range(N_IMAGES)]


def reward_for(action: int, is_same: bool) -> int:
    return int((action == SAME) == bool(is_same))


def downsample_bp(bp: BongardProblem, side: int) -> BongardProblem:
    if bp.width == side and bp.height == side:
        return bp
    imgs = [downsample(img, side, side) for img in bp.images]
    return BongardProblem(bp.id, imgs[:GROUP_SIZE], imgs[GROUP_SIZE:], bp.concept, bp.scenes)


def episode_order(seed: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(N_PAIRS)
    return np.random.default_rng(seed).permutation(N_PAIRS)


@dataclass
class EpisodeState:
    bp: BongardProblem
    config: EnvConfig
    pairs: list[LabeledPair]
    order: np.ndarray
    cursor: int = 0
    records: list[StepRecord] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.cursor >= self.config.episode_length

    @property
    def current(self) -> Optional[LabeledPair]:
        return None if self.done else self.pairs[int(self.order[self.cursor])]

    def history_counts(self) -> tuple[int, int]:
        """(same, different) pairs still unconsumed out of all 144."""
        seen_same = sum(self.pairs[r.pair].same_group for r in self.records)
        half = N_PAIRS // 2
        return half - seen_same, half - (len(self.records) - seen_same)

    def step(self, action: int):
        return step(self, action)


def reset(bp: BongardProblem, config: EnvConfig = EnvConfig(), seed: int = 0):
    """Start an episode on ``bp``; returns (episode, first state)."""
    small = downsample_bp(bp, config.image_side)
    episode = EpisodeState(small, config, compile_pairs(small), episode_order(seed, config.shuffle))
    return episode, episode.current.state


def step(env: EpisodeState, action: int):
    """Apply ``action`` to the current pair; returns (next state or None, reward, done)."""
    if env.done:
        raise EpisodeFinished("episode already finished; call reset()")
    if action not in (SAME, DIFFERENT):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    idx = int(env.order[env.cursor])
    r = reward_for(action, env.pairs[idx].same_group)
    env.records.append(StepRecord(idx, int(action), r))
    env.cursor += 1
    nxt = env.current
    return (None if nxt is None else nxt.state), r, env.done


def episode_return(records: Sequence, gamma: float = 1.0) -> float:
    """Discounted reward sum; accepts StepRecords or bare rewards."""
    total, weight = 0.0, 1.0
    for rec in records:
        total += weight * (rec.reward if isinstance(rec, StepRecord) else rec)
        weight *= gamma
    return total


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-to-go at every step of one episode."""
    out = np.empty(len(rewards), dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out
