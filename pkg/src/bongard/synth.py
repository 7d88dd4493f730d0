"""Seeded synthetic Bongard problems with machine-readable ground truth.

Scenes are lists of circles, squares and triangles. A :class:`Concept` is a
conjunction of factor predicates; the left group satisfies it and the right
group violates it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .bp_model import GROUP_SIZE, BongardProblem, Image
from .errors import ConfigError, NoGroundTruth, OutOfCanvas, UnsatisfiableConcept

KINDS = ("circle", "square", "triangle")
RETRY_BUDGET = 1000
OUTLINE_THICKNESS = 2
# free-standing shapes keep this many pixels between bounding boxes
SHAPE_GAP = 2
# clearance between an enclosed shape and its container's boundary
NEST_MARGIN = OUTLINE_THICKNESS + 1


class Factor(Enum):
    NUMEROSITY = "numerosity"
    SHAPE_CLASS = "shape_class"
    FILL = "fill"
    SIZE = "size"
    ENCLOSURE = "enclosure"


# ---------------------------------------------------------------------------
# scenes

@dataclass(frozen=True)
class Shape:
    """A primitive centred at (cx, cy) spanning ``size`` pixels each way."""

    kind: str
    cx: float
    cy: float
    size: int
    filled: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("shape size must be positive")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        h = self.size / 2
        return (self.cx - h, self.cy - h, self.cx + h, self.cy + h)

    def vertices(self) -> list[tuple[float, float]]:
        x0, y0, x1, y1 = self.bbox
        if self.kind == "square":
            return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        if self.kind == "triangle":
            return [(self.cx, y0), (x1, y1), (x0, y1)]
        raise ValueError("circles have no vertices")

    def contains_point(self, x: float, y: float, margin: float = 0.0) -> bool:
        """True if (x, y) lies inside the shape at least ``margin`` from its boundary."""
        if self.kind == "circle":
            return math.hypot(x - self.cx, y - self.cy) <= self.size / 2 - margin
        if self.kind == "square":
            h = self.size / 2 - margin
            return abs(x - self.cx) <= h and abs(y - self.cy) <= h
        return all(d >= margin for d in _edge_distances(self.vertices(), x, y))

    def with_(self, **changes) -> "Shape":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": [self.cx, self.cy],
                "size": self.size, "filled": self.filled}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Shape":
        cx, cy = d["center"]
        return cls(d["kind"], cx, cy, int(d["size"]), bool(d["filled"]))


def _edge_distances(verts, x, y):
    # signed distance to each edge; positive inside for clockwise-in-image-coords polygons
    out = []
    n = len(verts)
    for k in range(n):
        (ax, ay), (bx, by) = verts[k], verts[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        out.append(((x - ax) * ey - (y - ay) * ex) / math.hypot(ex, ey) * -1.0)
    return out


def encloses(outer: Shape, inner: Shape, margin: float = NEST_MARGIN) -> bool:
    """Bounding-box strict containment plus centre-inside test."""
    if inner.size >= outer.size:
        return False
    if not outer.contains_point(inner.cx, inner.cy):
        return False
    x0, y0, x1, y1 = inner.bbox
    return all(outer.contains_point(px, py, margin)
               for px, py in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def _bbox_gap_ok(a: Shape, b: Shape, gap: float = SHAPE_GAP) -> bool:
    ax0, ay0, ax1, ay1 = a.bbox
    bx0, by0, bx1, by1 = b.bbox
    return ax1 + gap <= bx0 or bx1 + gap <= ax0 or ay1 + gap <= by0 or by1 + gap <= ay0


@dataclass(frozen=True)
class SceneDescription:
    shapes: tuple[Shape, ...]
    containment: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        pairs = tuple((o, i) for o, a in enumerate(self.shapes)
                      for i, b in enumerate(self.shapes) if o != i and encloses(a, b))
        object.__setattr__(self, "containment", pairs)

    def fits(self, w: int, h: int) -> bool:
        return all(x0 >= 1 and y0 >= 1 and x1 <= w - 1 and y1 <= h - 1
                   for x0, y0, x1, y1 in (s.bbox for s in self.shapes))

    def is_well_formed(self, w: int, h: int) -> bool:
        """Fits the canvas; every pair of shapes is either nested or well separated."""
        if not self.fits(w, h):
            return False
        nested = set(self.containment)
        for o, i in nested:
            if self.shapes[o].filled:
                return False  # a filled container would hide its content
        n = len(self.shapes)
        for a in range(n):
            for b in range(a + 1, n):
                if (a, b) in nested or (b, a) in nested:
                    continue
                if not _bbox_gap_ok(self.shapes[a], self.shapes[b]):
                    return False
        return True

    def to_dict(self) -> dict:
        return {"shapes": [s.to_dict() for s in self.shapes],
                "containment": [list(p) for p in self.containment]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneDescription":
        return cls(tuple(Shape.from_dict(s) for s in d["shapes"]))


# ---------------------------------------------------------------------------
# rasterisation

def _fill_mask(shape: Shape, w: int, h: int) -> np.ndarray:
    """Scanline fill sampling pixel centres."""
    mask = np.zeros((h, w), dtype=np.uint8)
    x0, y0, x1, y1 = shape.bbox
    for y in range(max(0, math.floor(y0)), min(h, math.ceil(y1) + 1)):
        py = y + 0.5
        if shape.kind == "circle":
            r = shape.size / 2
            dy = py - shape.cy
            if abs(dy) > r:
                continue
            half = math.sqrt(r * r - dy * dy)
            lo, hi = shape.cx - half, shape.cx + half
            xa, xb = math.ceil(lo - 0.5), math.floor(hi - 0.5)
        elif shape.kind == "square":
            if not (y0 <= py < y1):
                continue
            # half-open span: exactly ``size`` pixels per row for integral bounds
            xa, xb = math.ceil(x0 - 0.5), math.ceil(x1 - 0.5) - 1
        else:
            xs = _polygon_row_crossings(shape.vertices(), py)
            if len(xs) < 2:
                continue
            xa, xb = math.ceil(xs[0] - 0.5), math.floor(xs[-1] - 0.5)
        xa, xb = max(xa, 0), min(xb, w - 1)
        if xa <= xb:
            mask[y, xa:xb + 1] = 1
    return mask


def _polygon_row_crossings(verts, py: float) -> list[float]:
    xs = []
    n = len(verts)
    for k in range(n):
        (ax, ay), (bx, by) = verts[k], verts[(k + 1) % n]
        if ay == by:
            continue
        if min(ay, by) <= py < max(ay, by):
            xs.append(ax + (py - ay) * (bx - ax) / (by - ay))
    return sorted(xs)


def _erode(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1)
    return (p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]).astype(np.uint8)


def shape_mask(shape: Shape, w: int, h: int, thickness: int = OUTLINE_THICKNESS) -> np.ndarray:
    mask = _fill_mask(shape, w, h)
    if shape.filled:
        return mask
    core = mask
    for _ in range(thickness):
        core = _erode(core)
    return mask & (1 - core)


def render_scene(scene: SceneDescription, w: int, h: int) -> Image:
    if not scene.fits(w, h):
        raise OutOfCanvas(f"scene does not fit a {w}x{h} canvas with a 1-pixel margin")
    canvas = np.zeros((h, w), dtype=np.uint8)
    for shape in scene.shapes:
        canvas |= shape_mask(shape, w, h)
    return Image(canvas)


# ---------------------------------------------------------------------------
# concepts

@dataclass(frozen=True, eq=False)
class FactorPredicate:
    factor: Factor
    params: Mapping[str, Any] = field(default_factory=dict)

    def _key(self):
        return (self.factor.value, tuple(sorted(self.params.items())))

    def __eq__(self, other):
        return isinstance(other, FactorPredicate) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def holds(self, scene: SceneDescription) -> bool:
        shapes = scene.shapes
        p = self.params
        if self.factor is Factor.NUMEROSITY:
            n, op = len(shapes), p.get("op", "eq")
            count = int(p["count"])
            return {"eq": n == count, "ge": n >= count, "le": n <= count}[op]
        if self.factor is Factor.SHAPE_CLASS:
            kind = p["kind"]
            if p.get("mode", "present") == "all":
                return bool(shapes) and all(s.kind == kind for s in shapes)
            return any(s.kind == kind for s in shapes)
        if self.factor is Factor.FILL:
            return all(s.filled == bool(p.get("filled", True)) for s in shapes)
        if self.factor is Factor.SIZE:
            t = int(p["threshold"])
            if p.get("mode", "large") == "large":
                return all(s.size >= t for s in shapes)
            return all(s.size < t for s in shapes)
        if self.factor is Factor.ENCLOSURE:
            return bool(scene.containment) == bool(p.get("present", True))
        raise ValueError(self.factor)

    def to_dict(self) -> dict:
        return {"factor": self.factor.value, **dict(self.params)}


@dataclass(frozen=True)
class Concept:
    """The active factor set K; left images satisfy every predicate."""

    factors: tuple[FactorPredicate, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ConfigError("a concept needs at least one factor")
        kinds = [f.factor for f in self.factors]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("each factor may appear at most once in a concept")

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def factor_set(self) -> frozenset[Factor]:
        return frozenset(f.factor for f in self.factors)

    def to_dict(self) -> dict:
        return {"factors": [f.to_dict() for f in self.factors], "k": self.k}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Concept":
        preds = []
        for f in d["factors"]:
            f = dict(f)
            preds.append(FactorPredicate(Factor(f.pop("factor")), f))
        return cls(tuple(preds))

    @classmethod
    def single(cls, factor: Factor, **params) -> "Concept":
        return cls((FactorPredicate(factor, params),))


def concept_predicate(concept: Concept, scene: SceneDescription) -> bool:
    return all(f.holds(scene) for f in concept.factors)


_DEFAULT_PARAMS = {
    Factor.NUMEROSITY: {"count": 2},
    Factor.SHAPE_CLASS: {"kind": "triangle"},
    Factor.FILL: {"filled": True},
    Factor.SIZE: {"mode": "large", "threshold": 16},
    Factor.ENCLOSURE: {"present": True},
}


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    try:
        return int(value)
    except ValueError:
        return value


def parse_concept(text: str) -> Concept:
    """Parse ``factor[:k=v,...][+factor...]``, e.g. ``shape_class:kind=circle+enclosure``."""
    preds = []
    for part in text.split("+"):
        name, _, rest = part.strip().partition(":")
        try:
            factor = Factor(name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown factor {name!r}; choose from "
                              f"{', '.join(f.value for f in Factor)}") from None
        params = dict(_DEFAULT_PARAMS[factor])
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"bad concept parameter {item!r}")
            params[key.strip()] = _coerce(value.strip())
        preds.append(FactorPredicate(factor, params))
    return Concept(tuple(preds))


# ---------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class SynthConfig:
    canvas_w: int = 64
    canvas_h: int = 64
    max_shapes: int = 3
    seed: int = 0
    leading_pairs: bool = False
    min_size: Optional[int] = None
    max_size: Optional[int] = None
    nest_prob: float = 0.3

    def __post_init__(self):
        if self.canvas_w < 16 or self.canvas_h < 16:
            raise ConfigError("canvas dimensions must be at least 16")
        if self.max_shapes < 1:
            raise ConfigError("max_shapes must be at least 1")

    @property
    def size_range(self) -> tuple[int, int]:
        side = min(self.canvas_w, self.canvas_h)
        lo = self.min_size if self.min_size is not None else max(4, side // 8)
        hi = self.max_size if self.max_size is not None else max(lo, side // 2)
        return lo, hi


def _random_shape(rng, cfg: SynthConfig, size=None, filled=None, kind=None) -> Shape:
    lo, hi = cfg.size_range
    size = int(rng.integers(lo, hi + 1)) if size is None else size
    # bounding box edges stay on the pixel grid
    x0 = int(rng.integers(1, cfg.canvas_w - size))
    y0 = int(rng.integers(1, cfg.canvas_h - size))
    return Shape(kind or KINDS[int(rng.integers(len(KINDS)))], x0 + size / 2, y0 + size / 2, size,
                 bool(rng.integers(2)) if filled is None else filled)


def _place_free(rng, cfg: SynthConfig, shapes: list[Shape], shape: Shape, tries: int = 30):
    for _ in range(tries):
        cand = _random_shape(rng, cfg, size=shape.size, filled=shape.filled, kind=shape.kind)
        if all(_bbox_gap_ok(cand, s) for s in shapes):
            return cand
    return None


def _nested_pair(rng, cfg: SynthConfig) -> Optional[tuple[Shape, Shape]]:
    lo, hi = cfg.size_range
    outer_lo = max(lo, 3 * NEST_MARGIN + 4)
    if outer_lo > hi:
        return None
    outer = _random_shape(rng, cfg, size=int(rng.integers(outer_lo, hi + 1)), filled=False)
    # largest inner that survives the worst case (triangle container)
    room = int(outer.size * 0.3) - NEST_MARGIN
    if room < 2:
        return None
    inner_size = int(rng.integers(max(2, min(lo // 2, room)), room + 1))
    # triangles have their widest room below the centre
    cy = outer.cy + (outer.size * 0.15 if outer.kind == "triangle" else 0.0)
    ix0 = round(outer.cx - inner_size / 2)
    iy0 = round(cy - inner_size / 2)
    inner = Shape(KINDS[int(rng.integers(len(KINDS)))], ix0 + inner_size / 2, iy0 + inner_size / 2,
                  inner_size, bool(rng.integers(2)))
    if not encloses(outer, inner):
        return None
    return outer, inner


def sample_scene(rng, cfg: SynthConfig) -> Optional[SceneDescription]:
    """One proposal for rejection sampling; None when placement failed."""
    n = int(rng.integers(1, cfg.max_shapes + 1))
    shapes: list[Shape] = []
    if n >= 2 and rng.random() < cfg.nest_prob:
        pair = _nested_pair(rng, cfg)
        if pair is None:
            return None
        shapes.extend(pair)
    while len(shapes) < n:
        placed = _place_free(rng, cfg, shapes, _random_shape(rng, cfg))
        if placed is None:
            return None
        shapes.append(placed)
    order = rng.permutation(len(shapes))
    scene = SceneDescription(tuple(shapes[k] for k in order))
    if not scene.is_well_formed(cfg.canvas_w, cfg.canvas_h):
        return None
    return scene


def _mutate(rng, cfg: SynthConfig, scene: SceneDescription, pred: FactorPredicate):
    shapes = list(scene.shapes)
    n = len(shapes)
    pick = rng.permutation(n)[: int(rng.integers(1, n + 1))]
    if pred.factor is Factor.FILL:
        for k in pick:
            shapes[k] = shapes[k].with_(filled=not shapes[k].filled)
    elif pred.factor is Factor.SHAPE_CLASS:
        for k in pick:
            others = [c for c in KINDS if c != shapes[k].kind]
            shapes[k] = shapes[k].with_(kind=others[int(rng.integers(len(others)))])
    elif pred.factor is Factor.SIZE:
        lo, hi = cfg.size_range
        for k in pick:
            size = int(rng.integers(lo, hi + 1))
            shift = 0.5 * ((size - shapes[k].size) % 2)
            shapes[k] = shapes[k].with_(size=size, cx=shapes[k].cx + shift, cy=shapes[k].cy + shift)
    elif pred.factor is Factor.NUMEROSITY:
        # add or drop look-alike copies so the other factors keep their values
        traits = [(s.kind, s.size, s.filled) for s in shapes]
        twins = [k for k in range(n) if traits.count(traits[k]) > 1 and
                 not any(k in pair for pair in scene.containment)]
        if twins and rng.random() < 0.5:
            del shapes[twins[int(rng.integers(len(twins)))]]
        else:
            for _ in range(int(rng.integers(1, 3))):
                model = shapes[int(rng.integers(n))]
                placed = _place_free(rng, cfg, shapes, model)
                if placed is None:
                    return None
                shapes.append(placed)
    elif pred.factor is Factor.ENCLOSURE:
        if scene.containment:
            # release every enclosed shape to a free position
            inner_idx = sorted({i for _, i in scene.containment}, reverse=True)
            freed = [shapes.pop(i) for i in inner_idx]
            for s in freed:
                placed = _place_free(rng, cfg, shapes, s)
                if placed is None:
                    return None
                shapes.append(placed)
        else:
            # nest an existing smaller shape inside an existing outline shape
            options = [(o, i) for o in range(n) for i in range(n)
                       if o != i and not shapes[o].filled and shapes[i].size < shapes[o].size]
            for k in rng.permutation(len(options)):
                o, i = options[k]
                outer, inner = shapes[o], shapes[i]
                cy = outer.cy + (outer.size / 6 if outer.kind == "triangle" else 0.0)
                ix0 = round(outer.cx - inner.size / 2)
                iy0 = round(cy - inner.size / 2)
                moved = inner.with_(cx=ix0 + inner.size / 2, cy=iy0 + inner.size / 2)
                if encloses(outer, moved):
                    shapes[i] = moved
                    break
            else:
                return None
    out = SceneDescription(tuple(shapes))
    return out if out.is_well_formed(cfg.canvas_w, cfg.canvas_h) else None


def _sample_matching(rng, cfg, concept, want: bool, budget: int) -> tuple[SceneDescription, int]:
    for attempt in range(1, budget + 1):
        scene = sample_scene(rng, cfg)
        if scene is not None and concept_predicate(concept, scene) == want:
            return scene, attempt
    raise UnsatisfiableConcept(
        f"no scene with predicate={want} for {concept.to_dict()} within {budget} attempts")


def _leading_counterpart(rng, cfg, concept, left: SceneDescription, tries: int = 20):
    allowed = concept.factor_set
    for _ in range(tries):
        scene = left
        for pred in concept.factors:
            scene = _mutate(rng, cfg, scene, pred)
            if scene is None:
                break
        if scene is None or concept_predicate(concept, scene):
            continue
        va, vb = factor_values(left), factor_values(scene)
        if {f for f in Factor if va[f] != vb[f]} <= allowed:
            return scene
    return None


def generate_scenes(concept: Concept, config: SynthConfig) -> tuple[list, list]:
    rng = np.random.default_rng(config.seed)
    left: list[SceneDescription] = []
    right: list[SceneDescription] = []
    if not config.leading_pairs:
        for want, out in ((True, left), (False, right)):
            while len(out) < GROUP_SIZE:
                scene, _ = _sample_matching(rng, config, concept, want, RETRY_BUDGET)
                out.append(scene)
        return left, right
    while len(left) < GROUP_SIZE:
        spent = 0
        while True:
            scene, used = _sample_matching(rng, config, concept, True, RETRY_BUDGET - spent)
            spent += used
            partner = _leading_counterpart(rng, config, concept, scene)
            if partner is not None:
                left.append(scene)
                right.append(partner)
                break
            if spent >= RETRY_BUDGET:
                raise UnsatisfiableConcept(
                    f"no leading counterpart for {concept.to_dict()} within {RETRY_BUDGET} attempts")
    return left, right


def generate_bp(concept: Concept, config: SynthConfig, bp_id: int = 0) -> BongardProblem:
    left, right = generate_scenes(concept, config)
    scenes = left + right
    for k, scene in enumerate(scenes):
        # group separation is part of the contract, so check it on every call
        if concept_predicate(concept, scene) != (k < GROUP_SIZE):
            raise AssertionError(f"scene {k} breaks group separation")
    images = [render_scene(s, config.canvas_w, config.canvas_h) for s in scenes]
    return BongardProblem(bp_id, images[:GROUP_SIZE], images[GROUP_SIZE:],
                          concept=concept, scenes=tuple(scenes))


# ---------------------------------------------------------------------------
# factor bookkeeping

def factor_values(scene: SceneDescription) -> dict[Factor, Any]:
    """Ground-truth value of every factor in the vocabulary for one scene."""
    return {
        Factor.NUMEROSITY: len(scene.shapes),
        Factor.SHAPE_CLASS: frozenset(s.kind for s in scene.shapes),
        Factor.FILL: frozenset(s.filled for s in scene.shapes),
        Factor.SIZE: frozenset(s.size for s in scene.shapes),
        Factor.ENCLOSURE: bool(scene.containment),
    }


def scene_factor_count(a: SceneDescription, b: SceneDescription) -> int:
    va, vb = factor_values(a), factor_values(b)
    return sum(va[f] != vb[f] for f in Factor)


def factor_count(bp: BongardProblem, i: int, j: int) -> int:
    """Number of factors whose ground-truth value differs between images i and j."""
    if bp.scenes is None:
        raise NoGroundTruth(f"BP {bp.id} has no scene descriptions")
    return scene_factor_count(bp.scenes[i], bp.scenes[j])


def differing_factors(bp: BongardProblem, i: int, j: int) -> set[Factor]:
    if bp.scenes is None:
        raise NoGroundTruth(f"BP {bp.id} has no scene descriptions")
    va, vb = factor_values(bp.scenes[i]), factor_values(bp.scenes[j])
    return {f for f in Factor if va[f] != vb[f]}


def iter_concepts(specs: Iterable[str]) -> list[Concept]:
    return [parse_concept(s) for s in specs]


# one parameterization per factor value; the default generation suite
SINGLE_FACTOR_SUITE = (
    "fill:filled=true", "fill:filled=false",
    "shape_class:kind=circle", "shape_class:kind=square", "shape_class:kind=triangle",
    "size:mode=large,threshold=20", "size:mode=small,threshold=16",
    "numerosity:count=1", "numerosity:count=2", "numerosity:count=3",
    "enclosure:present=true", "enclosure:present=false",
)
