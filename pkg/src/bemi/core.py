"""Domain types shared by the builder, trainer, inference and ensemble code."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from bemi.errors import InvalidArgument

UNCLASSIFIED = None


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``[n_0, ..., n_L]`` and the weight magnitude bound ``P``."""

    layer_sizes: tuple[int, ...]
    weight_bound: int = 1

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise InvalidArgument("an architecture needs at least an input and an output layer")
        if any(n < 1 for n in sizes):
            raise InvalidArgument(f"layer widths must be positive, got {sizes}")
        if int(self.weight_bound) != self.weight_bound or self.weight_bound < 1:
            raise InvalidArgument(f"weight bound must be a positive integer, got {self.weight_bound}")
        object.__setattr__(self, "weight_bound", int(self.weight_bound))

    @classmethod
    def parse(cls, text: str, weight_bound: int = 1) -> "Architecture":
        return cls(tuple(int(tok) for tok in text.split(",") if tok.strip()), weight_bound)

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def width(self, layer: int) -> int:
        return self.layer_sizes[layer]

    def layer_shape(self, layer: int) -> tuple[int, int]:
        """Shape ``(n_{l-1}, n_l)`` of the weight matrix entering ``layer`` (1-based)."""
        if not 1 <= layer <= self.depth:
            raise InvalidArgument(f"layer {layer} outside 1..{self.depth}")
        return self.layer_sizes[layer - 1], self.layer_sizes[layer]

    @property
    def total_links(self) -> int:
        return sum(a * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def total_neurons(self) -> int:
        return sum(self.layer_sizes[1:])

    def links(self) -> Iterable[tuple[int, int, int]]:
        """Yield every link as ``(layer, source, target)``."""
        for layer in range(1, self.depth + 1):
            n_in, n_out = self.layer_shape(layer)
            for i in range(n_in):
                for j in range(n_out):
                    yield layer, i, j


def var_name(role: str, index: Iterable[int]) -> str:
    """Model variable name, e.g. ``w_1_0_2`` for role ``w`` and index ``(1, 0, 2)``."""
    return "_".join([role, *(str(i) for i in index)])


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightAssignment:
    """Integer weights, one ``(n_{l-1}, n_l)`` matrix per layer ``l = 1..L``."""

    arch: Architecture
    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.layers) != self.arch.depth:
            raise InvalidArgument(f"expected {self.arch.depth} weight matrices, got {len(self.layers)}")
        P = self.arch.weight_bound
        frozen = []
        for layer, mat in enumerate(self.layers, start=1):
            a = np.asarray(mat)
            if a.shape != self.arch.layer_shape(layer):
                raise InvalidArgument(
                    f"layer {layer} weights have shape {a.shape}, expected {self.arch.layer_shape(layer)}"
                )
            if not np.all(np.equal(np.round(a), a)):
                raise InvalidArgument(f"layer {layer} weights are not integral")
            a = a.astype(np.int64)
            if a.size and np.abs(a).max() > P:
                raise InvalidArgument(f"layer {layer} weights exceed the bound P={P}")
            frozen.append(_frozen(a))
        object.__setattr__(self, "layers", tuple(frozen))

    @classmethod
    def zeros(cls, arch: Architecture) -> "WeightAssignment":
        return cls(arch, tuple(np.zeros(arch.layer_shape(l), dtype=np.int64) for l in range(1, arch.depth + 1)))

    @classmethod
    def from_flat(cls, arch: Architecture, values: Sequence[int]) -> "WeightAssignment":
        """Build from a flat vector in :meth:`Architecture.links` order."""
        values = np.asarray(values, dtype=np.int64)
        if values.size != arch.total_links:
            raise InvalidArgument(f"expected {arch.total_links} weights, got {values.size}")
        mats, pos = [], 0
        for layer in range(1, arch.depth + 1):
            shape = arch.layer_shape(layer)
            size = shape[0] * shape[1]
            mats.append(values[pos:pos + size].reshape(shape))
            pos += size
        return cls(arch, tuple(mats))

    def flat(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.layers])

    def weight(self, layer: int, i: int, j: int) -> int:
        return int(self.layers[layer - 1][i, j])

    def nonzero_count(self) -> int:
        return int(sum(np.count_nonzero(m) for m in self.layers))

    def histogram(self) -> dict[int, int]:
        """Count of links per weight value over ``{-P, ..., P}``."""
        flat = self.flat()
        P = self.arch.weight_bound
        counts = np.bincount(flat + P, minlength=2 * P + 1)
        return {value - P: int(n) for value, n in enumerate(counts)}

    def __eq__(self, other):
        if not isinstance(other, WeightAssignment):
            return NotImplemented
        return self.arch == other.arch and all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers))

    def __hash__(self):
        return hash((self.arch, self.flat().tobytes()))


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One training point: raw features and the ``{-1, +1}`` target bits."""

    features: np.ndarray
    target: tuple[int, ...]
    label: Hashable = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.asarray(self.features)))
        target = tuple(int(b) for b in self.target)
        if any(b not in (-1, 1) for b in target):
            raise InvalidArgument(f"target bits must be +-1, got {target}")
        object.__setattr__(self, "target", target)

    def check(self, arch: Architecture) -> None:
        if self.features.shape != (arch.n_inputs,):
            raise InvalidArgument(f"sample has {self.features.shape} features, architecture expects {arch.n_inputs}")
        if len(self.target) != arch.n_outputs:
            raise InvalidArgument(f"sample has {len(self.target)} target bits, architecture expects {arch.n_outputs}")


def compute_data_bound(samples: Sequence[LabeledSample]):
    """Largest absolute feature value over all samples."""
    if len(samples) == 0:
        raise InvalidArgument("cannot compute a data bound of an empty sample list")
    bound = max(np.abs(s.features).max(initial=0) for s in samples)
    return bound.item() if hasattr(bound, "item") else bound


def bit_width(n_classes: int) -> int:
    return max(1, math.ceil(math.log2(n_classes)))


@dataclass(frozen=True)
class ClassEncoding:
    """Bijection between classes and ``{-1, +1}`` output patterns.

    Patterns not assigned to a class decode to ``UNCLASSIFIED`` (``None``).
    """

    classes: tuple
    patterns: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def bit_width(self) -> int:
        return len(self.patterns[0])

    def encode(self, cls) -> tuple[int, ...]:
        try:
            return self.patterns[self.classes.index(cls)]
        except ValueError:
            raise InvalidArgument(f"class {cls!r} not in encoding {self.classes}") from None

    def decode(self, bits):
        bits = tuple(int(b) for b in bits)
        if len(bits) != self.bit_width:
            raise InvalidArgument(f"expected {self.bit_width} bits, got {len(bits)}")
        try:
            return self.classes[self.patterns.index(bits)]
        except ValueError:
            return UNCLASSIFIED

    def unassigned_patterns(self) -> list[tuple[int, ...]]:
        taken = set(self.patterns)
        return [p for p in all_patterns(self.bit_width) if p not in taken]


def all_patterns(width: int) -> list[tuple[int, ...]]:
    """All ``{-1,+1}`` patterns, lexicographically descending (all-plus first)."""
    return [tuple(p) for p in itertools.product((1, -1), repeat=width)]


def make_encoding(class_set: Sequence) -> ClassEncoding:
    classes = tuple(class_set)
    if len(classes) < 2:
        raise InvalidArgument("a class encoding needs at least two classes")
    if len(set(classes)) != len(classes):
        raise InvalidArgument(f"duplicate classes in {classes}")
    patterns = all_patterns(bit_width(len(classes)))[: len(classes)]
    return ClassEncoding(classes, tuple(patterns))
