"""Layered parameter container and the arithmetic the optimizers need.

Parameters are an ordered list of named layer blocks of float64 scalars.
Values are immutable once constructed; every operation returns a new value,
so sharing across threads is safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import LengthMismatch, ShapeMismatch

__all__ = [
    "LayerId",
    "LayeredParams",
    "LayerMask",
    "flatten",
    "unflatten",
    "sample_masked_direction",
    "axpy",
]


class LayerId(NamedTuple):
    index: int
    name: str


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64).reshape(-1).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayeredParams:
    """Ordered, named, non-empty float64 blocks."""

    names: tuple[str, ...]
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.names) != len(self.blocks):
            raise LengthMismatch("names and blocks differ in length")
        if len(self.blocks) == 0:
            raise LengthMismatch("empty parameter structure (need >= 1 layer)")
        for b in self.blocks:
            if b.size == 0:
                raise LengthMismatch("empty layer block")

    @staticmethod
    def from_blocks(blocks: Sequence[np.ndarray], names: Sequence[str] | None = None) -> "LayeredParams":
        blocks = tuple(_freeze(b) for b in blocks)
        if names is None:
            names = tuple(f"layer{i}" for i in range(len(blocks)))
        return LayeredParams(tuple(str(n) for n in names), blocks)

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def layer_ids(self) -> tuple[LayerId, ...]:
        return tuple(LayerId(i, n) for i, n in enumerate(self.names))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.blocks)

    def same_structure(self, other: "LayeredParams") -> bool:
        return self.names == other.names and self.sizes == other.sizes

    def norm(self) -> float:
        return float(np.sqrt(sum(float(b @ b) for b in self.blocks)))

    def allclose(self, other: "LayeredParams", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return self.same_structure(other) and all(
            np.allclose(a, b, atol=atol, rtol=rtol) for a, b in zip(self.blocks, other.blocks)
        )


def flatten(params: LayeredParams) -> np.ndarray:
    """Concatenate blocks in layer-index order."""
    return np.concatenate(params.blocks)


def unflatten(vec: np.ndarray, template: LayeredParams) -> LayeredParams:
    """Rebuild the template's layer structure from a flat vector."""
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.size != template.total_dim:
        raise LengthMismatch(f"vector length {vec.size} != template dim {template.total_dim}")
    blocks = []
    pos = 0
    for size in template.sizes:
        blocks.append(vec[pos : pos + size])
        pos += size
    return LayeredParams.from_blocks(blocks, template.names)


@dataclass(frozen=True)
class LayerMask:
    """Subset of a template's layers; masked_dim is the selected size total."""

    selected: frozenset[int]
    masked_dim: int
    num_layers: int

    @staticmethod
    def for_params(template: LayeredParams, selected: Iterable[int]) -> "LayerMask":
        sel = frozenset(int(i) for i in selected)
        bad = [i for i in sel if not (0 <= i < template.num_layers)]
        if bad:
            raise ShapeMismatch(f"mask indices {bad} outside layers 0..{template.num_layers - 1}")
        dim = sum(template.sizes[i] for i in sel)
        return LayerMask(sel, dim, template.num_layers)

    @staticmethod
    def full(template: LayeredParams) -> "LayerMask":
        return LayerMask.for_params(template, range(template.num_layers))

    @staticmethod
    def empty(template: LayeredParams) -> "LayerMask":
        return LayerMask.for_params(template, ())

    def covers(self, index: int) -> bool:
        return index in self.selected

    def indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.selected))


def _check_bound(template: LayeredParams, mask: LayerMask) -> None:
    if mask.num_layers != template.num_layers:
        raise ShapeMismatch("mask was built for a different layer structure")


def sample_masked_direction(
    template: LayeredParams, mask: LayerMask, rng: np.random.Generator
) -> LayeredParams:
    """Standard-normal entries on selected layers, exact zeros elsewhere.

    Selected blocks are drawn in layer-index order, so the result is fully
    determined by the rng state regardless of downstream evaluation order.
    """
    _check_bound(template, mask)
    blocks = []
    for i, size in enumerate(template.sizes):
        if mask.covers(i):
            blocks.append(rng.standard_normal(size))
        else:
            blocks.append(np.zeros(size))
    return LayeredParams.from_blocks(blocks, template.names)


def axpy(params: LayeredParams, direction: LayeredParams, scale: float) -> LayeredParams:
    """params + scale * direction, per coordinate."""
    if not params.same_structure(direction):
        raise ShapeMismatch("params and direction have different layer structures")
    blocks = [p + scale * d for p, d in zip(params.blocks, direction.blocks)]
    return LayeredParams.from_blocks(blocks, params.names)
