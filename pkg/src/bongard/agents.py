"""Policies, bound-constrained action selection, and PPO/A2C learners.

A policy is an encoder (MLP over the concatenated pair, or a siamese
encoder compared by absolute difference) feeding separate policy and value
heads. Because there are only two actions, the action distribution is a
function of the logit gap ``u = logit_0 - logit_1``; every probability,
log-probability and entropy below is computed from ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import bounds as cb
from .bp_model import PairState
from .env import (DIFFERENT, N_PAIRS, SAME, EnvConfig, EpisodeState, discounted_returns,
                  pair_index_arrays, reset, step)
from .errors import (CheckpointVersionMismatch, ConfigError, CrossedInterval, DimensionMismatch,
                     EmptyBatch, InsufficientData)
from .nn import FORMAT_VERSION, Network, OptimizerState, backward, forward, optimize_step

FEATURE_DIM = 64
_EPS = 1e-12


class EncoderKind(Enum):
    MLP = "mlp"
    SNN = "snn"


class BoundsMode(Enum):
    OFF = "off"
    BASE = "base"
    EXTENDED = "extended"


class Algorithm(Enum):
    PPO = "ppo"
    A2C = "a2c"


@dataclass
class LearnerConfig:
    algorithm: Algorithm = Algorithm.PPO
    clip_eps: float = 0.2
    epochs: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    bounds_mode: BoundsMode = BoundsMode.OFF
    lr: float = 3e-4
    batch_episodes: int = 8
    minibatch_size: int = 256
    max_grad_norm: float = 0.5
    min_samples: int = cb.MIN_SAMPLES
    swap_history_in_lower: bool = False

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.bounds_mode = BoundsMode(self.bounds_mode)
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("loss coefficients must be nonnegative")
        if self.epochs < 1 or self.batch_episodes < 1 or self.minibatch_size < 1:
            raise ConfigError("epochs, batch_episodes and minibatch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


# ---------------------------------------------------------------------------
# policy

class Policy:
    """Encoder plus separate policy (features -> 2 logits) and value (features -> 1) heads."""

    def __init__(self, kind: EncoderKind, image_side: int, encoder: Network,
                 policy_head: Network, value_head: Network, value_scale: float):
        self.kind = EncoderKind(kind)
        self.image_side = image_side
        self.encoder = encoder
        self.policy_head = policy_head
        self.value_head = value_head
        self.value_scale = float(value_scale)
        expect = self.pixels * (2 if self.kind is EncoderKind.MLP else 1)
        if encoder.in_dim != expect:
            raise DimensionMismatch(f"{self.kind.value} encoder expects {expect} inputs, got {encoder.in_dim}")
        if policy_head.in_dim != encoder.out_dim or value_head.in_dim != encoder.out_dim:
            raise DimensionMismatch("heads must consume the encoder's feature dimension")

    @classmethod
    def create(cls, kind, image_side: int = 16, episode_length: int = N_PAIRS,
               seed: int = 0, feature_dim: int = FEATURE_DIM, hidden: int = 64) -> "Policy":
        rng = np.random.default_rng(seed)
        kind = EncoderKind(kind)
        pixels = image_side * image_side
        in_dim = 2 * pixels if kind is EncoderKind.MLP else pixels
        encoder = Network.build([in_dim, feature_dim], ["tanh"], rng)
        policy_head = Network.build([feature_dim, hidden, 2], ["tanh", "identity"], rng)
        value_head = Network.build([feature_dim, hidden, 1], ["tanh", "tanh"], rng)
        return cls(kind, image_side, encoder, policy_head, value_head, episode_length / 2)

    @property
    def pixels(self) -> int:
        return self.image_side * self.image_side

    @property
    def networks(self) -> tuple[Network, Network, Network]:
        return (self.encoder, self.policy_head, self.value_head)

    def params(self) -> list[np.ndarray]:
        return [p for net in self.networks for p in net.params()]

    def touch(self) -> None:
        for net in self.networks:
            net.touch()

    # -- forward / backward over batches of flattened images ---------------

    def features(self, a: np.ndarray, b: np.ndarray):
        a = np.asarray(a, dtype=np.float64).reshape(-1, self.pixels)
        b = np.asarray(b, dtype=np.float64).reshape(-1, self.pixels)
        if self.kind is EncoderKind.MLP:
            feats, cache = forward(self.encoder, np.concatenate([a, b], axis=1))
            return feats, (cache,)
        n = len(a)
        emb, cache = forward(self.encoder, np.concatenate([a, b], axis=0))
        diff = emb[:n] - emb[n:]
        return np.abs(diff), (cache, np.sign(diff))

    def features_backward(self, enc_cache, g: np.ndarray) -> list[np.ndarray]:
        if self.kind is EncoderKind.MLP:
            return backward(self.encoder, enc_cache[0], g).params
        cache, sign = enc_cache
        gd = g * sign
        # both branches share one parameter set, so their gradients add up
        return backward(self.encoder, cache, np.concatenate([gd, -gd], axis=0)).params

    def evaluate(self, a: np.ndarray, b: np.ndarray):
        """Logits (n, 2), scaled values (n,), and a cache for :meth:`backward`."""
        feats, enc_cache = self.features(a, b)
        logits, pc = forward(self.policy_head, feats)
        raw, vc = forward(self.value_head, feats)
        return logits, raw[:, 0] * self.value_scale, (enc_cache, pc, vc, raw[:, 0])

    def backward(self, cache, dlogits: np.ndarray, draw_value: np.ndarray) -> list[np.ndarray]:
        """Gradients for all parameters given dL/dlogits and dL/d(unscaled tanh value)."""
        enc_cache, pc, vc, _ = cache
        gp = backward(self.policy_head, pc, dlogits)
        gv = backward(self.value_head, vc, draw_value[:, None])
        ge = self.features_backward(enc_cache, gp.input + gv.input)
        return ge + gp.params + gv.params

    def state_arrays(self, state: PairState) -> tuple[np.ndarray, np.ndarray]:
        arr = state.array
        if arr.shape[1:] != (self.image_side, self.image_side):
            raise DimensionMismatch(
                f"policy expects {self.image_side}x{self.image_side} images, got {arr.shape[1:]}")
        return arr[0].reshape(1, -1), arr[1].reshape(1, -1)

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "encoder_kind": self.kind.value,
                "image_side": self.image_side, "value_scale": self.value_scale,
                "encoder": self.encoder.to_dict(), "policy_head": self.policy_head.to_dict(),
                "value_head": self.value_head.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        if d.get("format_version") != FORMAT_VERSION:
            raise CheckpointVersionMismatch(
                f"checkpoint format {d.get('format_version')!r}, expected {FORMAT_VERSION}")
        return cls(EncoderKind(d["encoder_kind"]), int(d["image_side"]),
                   Network.from_dict(d["encoder"]), Network.from_dict(d["policy_head"]),
                   Network.from_dict(d["value_head"]), d["value_scale"])


def encode_mlp(policy: Policy, state: PairState) -> np.ndarray:
    if policy.kind is not EncoderKind.MLP:
        raise ValueError("policy does not use an MLP encoder")
    return policy.features(*policy.state_arrays(state))[0][0]


def encode_snn(policy: Policy, state: PairState) -> np.ndarray:
    if policy.kind is not EncoderKind.SNN:
        raise ValueError("policy does not use a siamese encoder")
    return policy.features(*policy.state_arrays(state))[0][0]


# ---------------------------------------------------------------------------
# bound-clamped action distribution

def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


def clamped_probs(u, lo=None, hi=None):
    """P(action 0) after clamping each action's estimate into its bounds, and d/du.

    The estimate for action z is its softmax probability, i.e. the sigmoid of
    its own logit gap. ``lo``/``hi`` have shape (..., 2); None means no bounds.
    """
    u = np.asarray(u, dtype=np.float64)
    pi0 = _sigmoid(u)
    dpi = pi0 * (1.0 - pi0)
    if lo is None:
        return pi0, dpi
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    est = np.stack([pi0, 1.0 - pi0], axis=-1)
    c = np.clip(est, lo, hi)
    inside = (est > lo) & (est < hi)
    dc0 = np.where(inside[..., 0], dpi, 0.0)
    dc1 = np.where(inside[..., 1], -dpi, 0.0)
    s = c[..., 0] + c[..., 1]
    degenerate = s <= _EPS
    s_safe = np.where(degenerate, 1.0, s)
    p0 = np.where(degenerate, 0.5, c[..., 0] / s_safe)
    dp0 = np.where(degenerate, 0.0, (dc0 * c[..., 1] - c[..., 0] * dc1) / (s_safe * s_safe))
    return p0, dp0


def resolve_bounds(candidates: Sequence[cb.BoundPair]) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Pick, per action, the first non-crossed interval from a fallback chain."""
    if not candidates:
        return None, None
    lo = np.zeros(2)
    hi = np.ones(2)
    for z in (0, 1):
        for bp in candidates:
            try:
                # a crossed interval is rejected here and the next candidate tried
                cb.clamp_estimate(0.5, bp[z])
            except CrossedInterval:
                continue
            lo[z], hi[z] = bp[z].lower, bp[z].upper
            break
    return lo, hi


def _as_candidates(bounds) -> list:
    if bounds is None:
        return []
    if isinstance(bounds, cb.BoundPair):
        return [bounds]
    return list(bounds)


def act(policy: Policy, state: PairState, bounds=None, rng=None):
    """Sample an action; returns (action, log_prob, value).

    ``bounds`` is None, a BoundPair, or a fallback chain of BoundPairs
    (e.g. extended then base).
    """
    rng = np.random.default_rng() if rng is None else rng
    a, b = policy.state_arrays(state)
    logits, values, _ = policy.evaluate(a, b)
    lo, hi = resolve_bounds(_as_candidates(bounds))
    p0, _ = clamped_probs(logits[0, 0] - logits[0, 1], lo, hi)
    p0 = float(p0)
    action = SAME if rng.random() < p0 else DIFFERENT
    prob = p0 if action == SAME else 1.0 - p0
    return action, math.log(max(prob, _EPS)), float(values[0])


def action_distribution(policy: Policy, state: PairState, bounds=None) -> np.ndarray:
    a, b = policy.state_arrays(state)
    logits, _, _ = policy.evaluate(a, b)
    lo, hi = resolve_bounds(_as_candidates(bounds))
    p0 = float(clamped_probs(logits[0, 0] - logits[0, 1], lo, hi)[0])
    return np.array([p0, 1.0 - p0])


# ---------------------------------------------------------------------------
# bounds bookkeeping across episodes

class BoundsSource:
    """Joint (action, reward) counts pooled over finished episodes of earlier problems."""

    def __init__(self, mode=BoundsMode.OFF, min_samples: int = cb.MIN_SAMPLES,
                 swap_history_in_lower: bool = False):
        self.mode = BoundsMode(mode)
        self.min_samples = min_samples
        self.swap = swap_history_in_lower
        self.pooled = cb.JointCounts()
        self.current = cb.JointCounts()
        self._joint: Optional[cb.JointDistribution] = None
        self._base: Optional[cb.BoundPair] = None

    def begin_episode(self) -> None:
        self.current = cb.JointCounts()
        try:
            self._joint = cb.estimate_joint(self.pooled, self.min_samples)
            self._base = cb.base_bounds(self._joint)
        except InsufficientData:
            self._joint, self._base = None, None

    def candidates(self, stats: Optional[cb.HistoryClassStats] = None) -> list:
        if self.mode is BoundsMode.OFF or self._base is None:
            return []
        if self.mode is BoundsMode.BASE or stats is None or stats.total == 0:
            return [self._base]
        h0, h1 = cb.history_prob(stats, 0), cb.history_prob(stats, 1)
        return [cb.extended_bounds(self._joint, h0, h1, self.swap), self._base]

    def record(self, action: int, reward: int) -> None:
        self.current.add(action, reward)

    def end_episode(self) -> None:
        self.pooled.merge(self.current)
        self.current = cb.JointCounts()


# ---------------------------------------------------------------------------
# rollouts

@dataclass
class Trajectory:
    images: np.ndarray          # (12, pixels) downsampled images of the episode's problem
    first: np.ndarray           # image index of channel 0, per step
    second: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    lo: Optional[np.ndarray]    # (T, 2) active bounds per step, None when unclamped
    hi: Optional[np.ndarray]
    returns: np.ndarray = field(default=None)
    bounds_active: bool = False

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def _episode_images(episode: EpisodeState) -> np.ndarray:
    return np.stack([img.grid.reshape(-1) for img in episode.bp.images]).astype(np.float64)


def collect_episode(episode: EpisodeState, policy: Policy, bounds_source: Optional[BoundsSource],
                    rng, action_fn=None) -> Trajectory:
    """Play ``episode`` to the end with ``policy``.

    ``action_fn(pair, rng) -> action`` replaces the policy's choice (used for
    baselines and label replay); log-probabilities then refer to that choice.
    """
    images = _episode_images(episode)
    cfg = episode.config
    steps = cfg.episode_length - episode.cursor
    idx = episode.order[episode.cursor: cfg.episode_length]
    pi, pj, same = pair_index_arrays()
    first, second = pi[idx], pj[idx]
    logits, values, _ = policy.evaluate(images[first], images[second])
    u = logits[:, 0] - logits[:, 1]

    source = bounds_source
    if source is not None:
        source.begin_episode()
    actions = np.empty(steps, dtype=np.int64)
    logp = np.empty(steps)
    rewards = np.empty(steps)
    lo_arr = np.zeros((steps, 2))
    hi_arr = np.ones((steps, 2))
    any_bounds = False
    remaining_same, remaining_diff = N_PAIRS // 2, N_PAIRS // 2
    for rec in episode.records:
        if same[rec.pair]:
            remaining_same -= 1
        else:
            remaining_diff -= 1
    for t in range(steps):
        cands = []
        if source is not None:
            cands = source.candidates(cb.HistoryClassStats(remaining_same, remaining_diff))
        lo, hi = resolve_bounds(cands)
        p0, _ = clamped_probs(u[t], lo, hi)
        p0 = float(p0)
        if lo is not None:
            any_bounds = True
            lo_arr[t], hi_arr[t] = lo, hi
            est = np.clip([_sigmoid(u[t]), 1.0 - _sigmoid(u[t])], lo, hi)
            assert np.all(est >= lo - 1e-12) and np.all(est <= hi + 1e-12)
        if action_fn is None:
            a = SAME if rng.random() < p0 else DIFFERENT
        else:
            a = int(action_fn(episode.current, rng))
        prob = p0 if a == SAME else 1.0 - p0
        _, r, _ = step(episode, a)
        if source is not None:
            source.record(a, r)
        # the agent infers the pair's label from its action and reward
        if (a == SAME) == bool(r):
            remaining_same -= 1
        else:
            remaining_diff -= 1
        actions[t], logp[t], rewards[t] = a, math.log(max(prob, _EPS)), r
    if source is not None:
        source.end_episode()
    traj = Trajectory(images, first, second, actions, logp, rewards, values,
                      lo_arr if any_bounds else None, hi_arr if any_bounds else None,
                      bounds_active=any_bounds)
    traj.returns = discounted_returns(rewards, cfg.gamma)
    return traj


def random_action(pair, rng) -> int:
    return int(rng.integers(2))


def oracle_action(pair, rng) -> int:
    return pair.correct_action


# ---------------------------------------------------------------------------
# updates

@dataclass
class Batch:
    a: np.ndarray
    b: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    lo: Optional[np.ndarray]
    hi: Optional[np.ndarray]

    def __len__(self):
        return len(self.actions)

    def subset(self, idx) -> "Batch":
        pick = lambda x: None if x is None else x[idx]
        return Batch(self.a[idx], self.b[idx], self.actions[idx], self.old_log_probs[idx],
                     self.returns[idx], self.advantages[idx], pick(self.lo), pick(self.hi))


def make_batch(trajectories: Sequence[Trajectory]) -> Batch:
    trajectories = list(trajectories)
    if not trajectories or sum(len(t) for t in trajectories) == 0:
        raise EmptyBatch("no transitions to learn from")
    a = np.concatenate([t.images[t.first] for t in trajectories])
    b = np.concatenate([t.images[t.second] for t in trajectories])
    returns = np.concatenate([t.returns for t in trajectories])
    values = np.concatenate([t.values for t in trajectories])
    adv = returns - values
    std = adv.std()
    adv = (adv - adv.mean()) / (std + 1e-8)
    if any(t.lo is not None for t in trajectories):
        lo = np.concatenate([t.lo if t.lo is not None else np.zeros((len(t), 2)) for t in trajectories])
        hi = np.concatenate([t.hi if t.hi is not None else np.ones((len(t), 2)) for t in trajectories])
    else:
        lo = hi = None
    return Batch(a, b, np.concatenate([t.actions for t in trajectories]),
                 np.concatenate([t.log_probs for t in trajectories]), returns, adv, lo, hi)


def _log_prob_terms(u, actions, lo, hi):
    """log pi(a), its derivative in u, entropy and its derivative in u."""
    p0, dp0 = clamped_probs(u, lo, hi)
    p0 = np.clip(p0, _EPS, 1.0 - _EPS)
    p1 = 1.0 - p0
    is0 = actions == SAME
    logp = np.where(is0, np.log(p0), np.log(p1))
    dlogp = np.where(is0, dp0 / p0, -dp0 / p1)
    ent = -(p0 * np.log(p0) + p1 * np.log(p1))
    dent = np.log(p1 / p0) * dp0
    return logp, dlogp, ent, dent


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_fraction: float


def _clip_global_norm(grads: list, max_norm: float) -> list:
    if max_norm is None or max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads


def loss_and_grads(policy: Policy, mb: Batch, config: LearnerConfig, clip: bool):
    """Surrogate loss on a minibatch and gradients for every policy parameter."""
    logits, _, cache = policy.evaluate(mb.a, mb.b)
    raw_v = cache[3]
    u = logits[:, 0] - logits[:, 1]
    logp, dlogp, ent, dent = _log_prob_terms(u, mb.actions, mb.lo, mb.hi)
    n = len(mb)
    adv = mb.advantages
    if clip:
        ratio = np.exp(logp - mb.old_log_probs)
        clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
        surr = np.minimum(ratio * adv, clipped * adv)
        # gradient flows only where the unclipped term attains the minimum
        live = ratio * adv <= clipped * adv
        dsurr_dlogp = np.where(live, adv * ratio, 0.0)
        clip_frac = float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))
    else:
        ratio = np.ones(n)
        surr = logp * adv
        dsurr_dlogp = adv
        clip_frac = 0.0
    policy_loss = -float(surr.mean())
    target = mb.returns / policy.value_scale
    verr = raw_v - target
    value_loss = float((verr * verr).mean())
    entropy = float(ent.mean())

    du = (-dsurr_dlogp * dlogp - config.entropy_coef * dent) / n
    dlogits = np.stack([du, -du], axis=1)
    draw = config.value_coef * 2.0 * verr / n
    grads = policy.backward(cache, dlogits, draw)
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    stats = UpdateStats(policy_loss, value_loss, entropy, float(ratio.mean()), clip_frac)
    return total, grads, stats, ratio


def _apply(policy: Policy, optimizer: OptimizerState, grads, config: LearnerConfig) -> None:
    grads = _clip_global_norm(grads, config.max_grad_norm)
    optimize_step(optimizer, policy.params(), grads)
    policy.touch()


def _mean_stats(stats: list[UpdateStats]) -> UpdateStats:
    return UpdateStats(*(float(np.mean([getattr(s, f) for s in stats]))
                         for f in UpdateStats.__dataclass_fields__))


def ppo_update(policy: Policy, trajectories: Sequence[Trajectory], config: LearnerConfig,
               optimizer: OptimizerState, rng) -> UpdateStats:
    batch = make_batch(trajectories)
    stats = []
    for _ in range(config.epochs):
        perm = rng.permutation(len(batch))
        for start in range(0, len(batch), config.minibatch_size):
            mb = batch.subset(perm[start: start + config.minibatch_size])
            _, grads, s, _ = loss_and_grads(policy, mb, config, clip=True)
            _apply(policy, optimizer, grads, config)
            stats.append(s)
    return _mean_stats(stats)


def a2c_update(policy: Policy, trajectories: Sequence[Trajectory], config: LearnerConfig,
               optimizer: OptimizerState, rng=None) -> UpdateStats:
    batch = make_batch(trajectories)
    _, grads, s, _ = loss_and_grads(policy, batch, config, clip=False)
    _apply(policy, optimizer, grads, config)
    return s


def update(policy, trajectories, config: LearnerConfig, optimizer, rng) -> UpdateStats:
    if config.algorithm is Algorithm.PPO:
        return ppo_update(policy, trajectories, config, optimizer, rng)
    return a2c_update(policy, trajectories, config, optimizer, rng)


def greedy_action(policy: Policy, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    logits, _, _ = policy.evaluate(a, b)
    # ties go to "same group"
    return np.where(logits[:, 0] >= logits[:, 1], SAME, DIFFERENT)
