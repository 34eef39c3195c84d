"""Flat parameter vectors with a named segment table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ShapeMismatchError


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def stop(self) -> int:
        return self.offset + self.size


def make_layout(shapes: Iterable[tuple[str, tuple[int, ...]]]) -> tuple[Segment, ...]:
    """Contiguous segment table from ``(name, shape)`` pairs, in order."""
    segs, offset = [], 0
    names = set()
    for name, shape in shapes:
        if name in names:
            raise ShapeMismatchError(f"duplicate segment name {name!r}", segment=name)
        names.add(name)
        seg = Segment(name, tuple(int(s) for s in shape), offset)
        segs.append(seg)
        offset = seg.stop
    return tuple(segs)


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """All trainable weights as one float64 vector plus the layout to slice it.

    ``values`` is stored read-only; arithmetic goes through :meth:`with_values`.
    """

    segments: tuple[Segment, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "segments", tuple(self.segments))
        expect = 0
        for seg in self.segments:
            if seg.offset != expect:
                raise ShapeMismatchError(
                    f"segment {seg.name!r} starts at {seg.offset}, expected {expect}",
                    segment=seg.name)
            expect = seg.stop
        if expect != vals.size:
            raise ShapeMismatchError(
                f"segment table covers {expect} values but vector has {vals.size}")

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.segments == other.segments and np.array_equal(self.values, other.values)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.segments]

    def segment(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def view(self, name: str) -> np.ndarray:
        s = self.segment(name)
        return self.values[s.offset:s.stop].reshape(s.shape)

    def with_values(self, values: np.ndarray) -> ParameterVector:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != self.values.size:
            raise ShapeMismatchError(
                f"expected {self.values.size} values, got {values.size}")
        return ParameterVector(self.segments, values)

    def zeros_like(self) -> ParameterVector:
        return self.with_values(np.zeros_like(self.values))

    def same_layout(self, other: ParameterVector) -> bool:
        return self.segments == other.segments


def flatten(weights: Mapping[str, np.ndarray], layout: tuple[Segment, ...] | None = None
            ) -> ParameterVector:
    """Pack named arrays into a :class:`ParameterVector`.

    Without ``layout`` the mapping's iteration order defines the segments.
    """
    if layout is None:
        layout = make_layout((k, np.shape(v)) for k, v in weights.items())
    missing = [s.name for s in layout if s.name not in weights]
    if missing:
        raise ShapeMismatchError(f"missing segment {missing[0]!r}", segment=missing[0])
    extra = set(weights) - {s.name for s in layout}
    if extra:
        name = sorted(extra)[0]
        raise ShapeMismatchError(f"unexpected segment {name!r}", segment=name)
    parts = []
    for seg in layout:
        arr = np.asarray(weights[seg.name], dtype=np.float64)
        if arr.shape != seg.shape:
            raise ShapeMismatchError(
                f"segment {seg.name!r} has shape {arr.shape}, expected {seg.shape}",
                segment=seg.name)
        parts.append(arr.reshape(-1))
    values = np.concatenate(parts) if parts else np.zeros(0)
    return ParameterVector(layout, values)


def unflatten(pv: ParameterVector) -> dict[str, np.ndarray]:
    """Named, writable copies of every segment."""
    return {s.name: pv.values[s.offset:s.stop].reshape(s.shape).copy() for s in pv.segments}
