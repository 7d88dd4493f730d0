"""Core Bongard problem types and the plain-PBM directory loader.

A problem on disk is a directory holding ``00.pbm`` .. ``11.pbm``; files
00-05 form the left group, 06-11 the right group. Pixel value 1 is ink.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidTarget, MalformedFormat, MissingFile

GROUP_SIZE = 6
N_IMAGES = 2 * GROUP_SIZE


class Image:
    """Immutable binary raster; ``grid`` has shape (height, width)."""

    __slots__ = ("grid",)

    def __init__(self, grid):
        arr = np.array(grid, dtype=np.uint8, copy=True)
        if arr.ndim != 2:
            raise DimensionMismatch(f"image grid must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("image must be at least 1x1")
        if arr.size and arr.max() > 1:
            raise MalformedFormat("pixels must be 0 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels: Sequence[int]) -> "Image":
        if len(pixels) != width * height:
            raise DimensionMismatch(
                f"expected {width * height} pixels, got {len(pixels)}")
        return cls(np.asarray(pixels, dtype=np.int64).reshape(height, width))

    @classmethod
    def blank(cls, width: int, height: int) -> "Image":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return int(self.grid.shape[1])

    @property
    def height(self) -> int:
        return int(self.grid.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def pixels(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.grid.ravel())

    def ink(self) -> int:
        return int(self.grid.sum())

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool(np.array_equal(self.grid, other.grid))

    def __hash__(self):
        return hash((self.grid.shape, self.grid.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height}, ink={self.ink()})"


class GroupLabel(Enum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True, eq=False)
class BongardProblem:
    """Two groups of six equally sized images.

    ``concept`` and ``scenes`` are only present for synthetic problems;
    ``scenes`` is ordered like :attr:`images` (left group first).
    """

    id: int
    left: tuple[Image, ...]
    right: tuple[Image, ...]
    concept: Optional[Any] = None
    scenes: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "right", tuple(self.right))
        if len(self.left) != GROUP_SIZE or len(self.right) != GROUP_SIZE:
            raise DimensionMismatch(
                f"each group needs {GROUP_SIZE} images, got {len(self.left)} and {len(self.right)}")
        dims = {img.shape for img in self.images}
        if len(dims) != 1:
            raise DimensionMismatch(f"images disagree on dimensions: {sorted(dims)}")
        if self.scenes is not None:
            object.__setattr__(self, "scenes", tuple(self.scenes))
            if len(self.scenes) != N_IMAGES:
                raise DimensionMismatch("scene list must cover all 12 images")

    @property
    def images(self) -> tuple[Image, ...]:
        return self.left + self.right

    @property
    def width(self) -> int:
        return self.left[0].width

    @property
    def height(self) -> int:
        return self.left[0].height

    def group_of(self, index: int) -> GroupLabel:
        if not 0 <= index < N_IMAGES:
            raise IndexError(index)
        return GroupLabel.LEFT if index < GROUP_SIZE else GroupLabel.RIGHT

    def __eq__(self, other):
        if not isinstance(other, BongardProblem):
            return NotImplemented
        return self.id == other.id and self.images == other.images


@dataclass(frozen=True, eq=False)
class PairState:
    """Ordered image pair; channel 0 is ``first``, channel 1 is ``second``."""

    first: Image
    second: Image

    @property
    def array(self) -> np.ndarray:
        """The pair as a (2, height, width) array."""
        return np.stack([self.first.grid, self.second.grid])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.first.height, self.first.width)

    def swapped(self) -> "PairState":
        return PairState(self.second, self.first)

    def __eq__(self, other):
        if not isinstance(other, PairState):
            return NotImplemented
        return self.first == other.first and self.second == other.second

    def __hash__(self):
        return hash((self.first, self.second))


def make_state(a: Image, b: Image) -> PairState:
    if a.shape != b.shape:
        raise DimensionMismatch(f"pair images differ: {a.shape} vs {b.shape}")
    return PairState(a, b)


def _block_edges(n: int, k: int) -> np.ndarray:
    return (np.arange(k + 1) * n) // k


def downsample(img: Image, target_w: int, target_h: int) -> Image:
    """Block-average pooling followed by a >= 0.5 threshold."""
    if target_w < 1 or target_h < 1:
        raise InvalidTarget("target dimensions must be positive")
    if target_w > img.width or target_h > img.height:
        raise InvalidTarget(
            f"cannot upscale {img.width}x{img.height} to {target_w}x{target_h}")
    if (target_w, target_h) == img.shape:
        return img
    grid = img.grid.astype(np.float64)
    rows = _block_edges(img.height, target_h)
    cols = _block_edges(img.width, target_w)
    # row sums per block, then column sums per block
    sums = np.add.reduceat(np.add.reduceat(grid, rows[:-1], axis=0), cols[:-1], axis=1)
    areas = np.outer(np.diff(rows), np.diff(cols))
    return Image((sums / areas >= 0.5).astype(np.uint8))


# -- plain PBM (P1) ------------------------------------------------------

def _pbm_tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        yield from line.split()


def parse_pbm(text: str) -> Image:
    tokens = _pbm_tokens(text)
    if next(tokens, None) != "P1":
        raise MalformedFormat("not a plain PBM (missing P1 magic)")
    try:
        width = int(next(tokens))
        height = int(next(tokens))
    except (StopIteration, ValueError) as exc:
        raise MalformedFormat("bad PBM header") from exc
    if width < 1 or height < 1:
        raise MalformedFormat("PBM dimensions must be positive")
    # plain PBM allows pixels without separating whitespace
    digits = "".join(tokens)
    if len(digits) != width * height:
        raise MalformedFormat(f"expected {width * height} pixels, found {len(digits)}")
    if set(digits) - {"0", "1"}:
        raise MalformedFormat("PBM pixel outside {0,1}")
    return Image.from_pixels(width, height, [int(c) for c in digits])


def format_pbm(img: Image) -> str:
    lines = ["P1", f"{img.width} {img.height}"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in img.grid)
    return "\n".join(lines) + "\n"


def read_pbm(path) -> Image:
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise MalformedFormat(f"{path}: not an ASCII PBM") from exc
    try:
        return parse_pbm(text)
    except MalformedFormat as exc:
        raise MalformedFormat(f"{path}: {exc}") from None


def write_pbm(path, img: Image) -> None:
    Path(path).write_text(format_pbm(img), encoding="ascii")


def load_bp(directory, bp_id: Optional[int] = None) -> BongardProblem:
    """Load a problem from ``directory/00.pbm`` .. ``11.pbm``.

    The id defaults to the directory name when it is an integer, else 0.
    """
    directory = Path(directory)
    paths = [directory / f"{n:02d}.pbm" for n in range(N_IMAGES)]
    missing = [p.name for p in paths if not p.is_file()]
    if missing:
        raise MissingFile(f"{directory}: missing {', '.join(missing)}")
    images = [read_pbm(p) for p in paths]
    if len({img.shape for img in images}) != 1:
        raise DimensionMismatch(f"{directory}: images disagree on dimensions")
    if bp_id is None:
        try:
            bp_id = int(directory.name)
        except ValueError:
            bp_id = 0
    return BongardProblem(bp_id, images[:GROUP_SIZE], images[GROUP_SIZE:])


def save_bp(bp: BongardProblem, directory) -> Path:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    for n, img in enumerate(bp.images):
        write_pbm(directory / f"{n:02d}.pbm", img)
    return directory
