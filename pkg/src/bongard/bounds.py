"""Bounds on E[Y | do(z)] for a confounded two-armed Bernoulli bandit.

X is the action and Y the binary reward; ``p[i][j] = P(X=i, Y=j)`` is the
observational joint pooled from earlier problems. The history-extended
bounds additionally use the chance that a random decision is right given
how many same/different pairs remain in the current episode.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CrossedInterval, EmptyHistoryDomain, InfeasibleDistribution, InsufficientData

MIN_SAMPLES = 100


@dataclass
class JointCounts:
    n00: int = 0
    n01: int = 0
    n10: int = 0
    n11: int = 0

    def add(self, action: int, reward: int, n: int = 1) -> None:
        name = f"n{int(action)}{int(reward)}"
        setattr(self, name, getattr(self, name) + n)

    def merge(self, other: "JointCounts") -> None:
        self.n00 += other.n00
        self.n01 += other.n01
        self.n10 += other.n10
        self.n11 += other.n11

    @property
    def total(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n00, self.n01, self.n10, self.n11)


@dataclass(frozen=True)
class JointDistribution:
    p00: float
    p01: float
    p10: float
    p11: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)) or vals.min() < 0 or vals.max() > 1:
            raise InfeasibleDistribution(f"probabilities outside [0,1]: {vals}")
        if abs(vals.sum() - 1.0) > 1e-12:
            raise InfeasibleDistribution(f"probabilities sum to {vals.sum()!r}")

    @classmethod
    def from_array(cls, p) -> "JointDistribution":
        p = np.asarray(p, dtype=np.float64).ravel()
        return cls(*map(float, p))

    def as_array(self) -> np.ndarray:
        return np.array([self.p00, self.p01, self.p10, self.p11])

    def p_action(self, z: int) -> float:
        return self.p00 + self.p01 if z == 0 else self.p10 + self.p11


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    @property
    def crossed(self) -> bool:
        return self.lower > self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= v <= self.upper + tol

    def within(self, other: "Interval", tol: float = 0.0) -> bool:
        return other.lower - tol <= self.lower and self.upper <= other.upper + tol


@dataclass(frozen=True)
class BoundPair:
    """One interval per action; a crossed interval is kept as-is, never repaired."""

    do0: Interval
    do1: Interval

    def __getitem__(self, z: int) -> Interval:
        if z == 0:
            return self.do0
        if z == 1:
            return self.do1
        raise IndexError(z)

    def crossed(self, z: int) -> bool:
        return self[z].crossed

    @property
    def any_crossed(self) -> bool:
        return self.do0.crossed or self.do1.crossed


FULL = BoundPair(Interval(0.0, 1.0), Interval(0.0, 1.0))


@dataclass(frozen=True)
class HistoryClassStats:
    remaining_same: int
    remaining_diff: int

    def __post_init__(self):
        if self.remaining_same < 0 or self.remaining_diff < 0:
            raise ValueError("remaining counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.remaining_same + self.remaining_diff


def estimate_joint(counts: JointCounts, min_samples: int = MIN_SAMPLES) -> JointDistribution:
    n = counts.total
    if n < max(min_samples, 1):
        raise InsufficientData(f"{n} samples, need at least {max(min_samples, 1)}")
    return JointDistribution(*(c / n for c in counts.as_tuple()))


def base_bounds(p: JointDistribution) -> BoundPair:
    return BoundPair(
        Interval(p.p01, p.p01 + p.p10 + p.p11),
        Interval(p.p11, p.p11 + p.p00 + p.p01),
    )


def history_prob(stats: HistoryClassStats, z: int) -> float:
    """Chance that a random decision z is right given the unconsumed pairs."""
    if stats.total <= 0:
        raise EmptyHistoryDomain("no pairs remain in this episode")
    if z == 0:
        return stats.remaining_same / stats.total
    if z == 1:
        return stats.remaining_diff / stats.total
    raise ValueError(f"action must be 0 or 1, got {z!r}")


def extended_bounds(p: JointDistribution, h0: float, h1: float,
                    swap_history_in_lower: bool = False) -> BoundPair:
    """History-tightened bounds; each upper is capped by the action's own history probability.

    By default the lower bound for do(z) uses the *other* action's history
    probability; ``swap_history_in_lower`` uses the matching one instead.
    """
    if not (0.0 <= h0 <= 1.0 and 0.0 <= h1 <= 1.0):
        raise ValueError("history probabilities must lie in [0, 1]")
    base = base_bounds(p)
    low0, low1 = (h0, h1) if swap_history_in_lower else (h1, h0)
    return BoundPair(
        Interval(max(base.do0.lower, low0), min(base.do0.upper, h0)),
        Interval(max(base.do1.lower, low1), min(base.do1.upper, h1)),
    )


def clamp_estimate(v: float, interval) -> float:
    lower, upper = (interval.lower, interval.upper) if isinstance(interval, Interval) else interval
    if lower > upper:
        raise CrossedInterval(f"lower {lower} exceeds upper {upper}")
    return min(max(v, lower), upper)


# ---------------------------------------------------------------------------
# response-type oracle
#
# Canonical SCM: a type fixes the value X takes and the response function
# f: X -> Y, one of (0, x, 1-x, 1). Eight types in total.

RESPONSES = ((0, 0), (0, 1), (1, 0), (1, 1))  # (f(0), f(1))
TYPES = tuple((x, f) for x in (0, 1) for f in RESPONSES)


def _observation_matrix() -> np.ndarray:
    a = np.zeros((4, len(TYPES)))
    for k, (x, f) in enumerate(TYPES):
        a[2 * x + f[x], k] = 1.0
    return a


OBS_MATRIX = _observation_matrix()
# E[Y | do(z)] as a linear functional of the type distribution
DO_VECTORS = np.array([[f[z] for _, f in TYPES] for z in (0, 1)], dtype=np.float64)


def _basis_inverses() -> tuple[np.ndarray, np.ndarray]:
    cols, invs = [], []
    for subset in itertools.combinations(range(len(TYPES)), 4):
        b = OBS_MATRIX[:, subset]
        if abs(np.linalg.det(b)) > 1e-9:
            cols.append(subset)
            invs.append(np.linalg.inv(b))
    return np.array(cols), np.array(invs)


_BASES, _BASIS_INV = _basis_inverses()


def polytope_vertices(p: JointDistribution, tol: float = 1e-12) -> np.ndarray:
    """Every basic feasible type distribution consistent with the joint."""
    pv = p.as_array()
    sols = _BASIS_INV @ pv  # (n_bases, 4)
    feasible = (sols >= -tol).all(axis=1)
    verts = np.zeros((int(feasible.sum()), len(TYPES)))
    for row, (cols, q) in enumerate(zip(_BASES[feasible], sols[feasible])):
        verts[row, cols] = np.clip(q, 0.0, None)
    return verts


def lp_oracle_bounds(p: JointDistribution) -> BoundPair:
    """Exact extremes of E[Y|do(z)] over all confounded SCMs reproducing ``p``."""
    if not isinstance(p, JointDistribution):
        p = JointDistribution.from_array(p)
    verts = polytope_vertices(p)
    if len(verts) == 0:
        raise InfeasibleDistribution("no type distribution reproduces this joint")
    vals = verts @ DO_VECTORS.T  # (n_verts, 2)
    lo, hi = vals.min(axis=0), vals.max(axis=0)
    return BoundPair(Interval(float(lo[0]), float(hi[0])), Interval(float(lo[1]), float(hi[1])))


def scm_observational(q: np.ndarray) -> np.ndarray:
    """Joint (p00, p01, p10, p11) induced by type distribution(s) ``q``."""
    return np.asarray(q) @ OBS_MATRIX.T


def scm_interventional(q: np.ndarray) -> np.ndarray:
    """(E[Y|do(0)], E[Y|do(1)]) under type distribution(s) ``q``."""
    return np.asarray(q) @ DO_VECTORS.T


def verify_bounds(trials: int, seed: int) -> dict:
    """Monte-Carlo containment over random SCMs plus oracle endpoint comparison."""
    rng = np.random.default_rng(seed)
    violations = 0
    max_gap = 0.0
    for _ in range(trials):
        q = rng.dirichlet(np.ones(len(TYPES)))
        joint = scm_observational(q)
        joint = JointDistribution.from_array(joint / joint.sum())
        truth = scm_interventional(q)
        bounds = base_bounds(joint)
        violations += sum(not bounds[z].contains(truth[z], tol=1e-12) for z in (0, 1))

        p = JointDistribution.from_array(_normalise(rng.dirichlet(np.ones(4))))
        b, o = base_bounds(p), lp_oracle_bounds(p)
        for z in (0, 1):
            max_gap = max(max_gap, abs(b[z].lower - o[z].lower), abs(b[z].upper - o[z].upper))
    return {"trials": trials, "containment_violations": int(violations),
            "max_endpoint_gap": float(max_gap)}


def _normalise(p: np.ndarray) -> np.ndarray:
    return p / p.sum()
