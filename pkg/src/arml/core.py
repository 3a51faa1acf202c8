"""Parameter vectors with named segments and deterministic RNG substreams.

Everything downstream runs in float64. A parameter vector is a flat array
partitioned into one contiguous ``shared`` segment plus zero or more
per-task ``head`` segments; weight-learning only ever looks at the shared
segment, so the layout is carried alongside the raw values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHARED = "shared"
HEAD = "head"


@dataclass(frozen=True)
class Segment:
    kind: str
    task_id: int | None
    offset: int
    length: int

    def __post_init__(self):
        if self.kind not in (SHARED, HEAD):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == HEAD and self.task_id is None:
            raise ValueError("head segment requires a task_id")
        if self.offset < 0 or self.length <= 0:
            raise ValueError("segment offset/length out of range")

    @property
    def stop(self) -> int:
        return self.offset + self.length


class SegmentLayout:
    """Partition of ``[0, dim)`` into one shared segment and task heads."""

    def __init__(self, segments):
        segments = sorted(segments, key=lambda s: s.offset)
        cursor = 0
        shared = [s for s in segments if s.kind == SHARED]
        if len(shared) != 1:
            raise ValueError("layout must contain exactly one shared segment")
        seen_heads = set()
        for seg in segments:
            if seg.offset != cursor:
                raise ValueError("segments must partition the vector without gaps")
            cursor = seg.stop
            if seg.kind == HEAD:
                if seg.task_id in seen_heads:
                    raise ValueError(f"duplicate head for task {seg.task_id}")
                seen_heads.add(seg.task_id)
        self.segments = tuple(segments)
        self.dim = cursor
        self._shared = shared[0]
        self._heads = {s.task_id: s for s in segments if s.kind == HEAD}

    @classmethod
    def single_shared(cls, dim: int) -> "SegmentLayout":
        return cls([Segment(SHARED, None, 0, dim)])

    @classmethod
    def shared_with_heads(cls, shared_dim: int, head_dims) -> "SegmentLayout":
        """Build ``[shared, head(t1), head(t2), ...]`` from an ordered mapping."""
        segs = [Segment(SHARED, None, 0, shared_dim)]
        offset = shared_dim
        for task_id, length in head_dims.items():
            segs.append(Segment(HEAD, task_id, offset, length))
            offset += length
        return cls(segs)

    @property
    def shared(self) -> Segment:
        return self._shared

    def head(self, task_id) -> Segment:
        try:
            return self._heads[task_id]
        except KeyError:
            raise KeyError(f"layout has no head for task {task_id}") from None

    @property
    def head_ids(self):
        return tuple(self._heads)

    def shared_slice(self, values: np.ndarray) -> np.ndarray:
        """View of the shared segment of a layout-aligned vector."""
        values = np.asarray(values)
        if values.shape != (self.dim,):
            raise ValueError(f"vector length {values.shape} != layout dim {self.dim}")
        return values[self._shared.offset:self._shared.stop]

    def head_slice(self, values: np.ndarray, task_id) -> np.ndarray:
        seg = self.head(task_id)
        values = np.asarray(values)
        if values.shape != (self.dim,):
            raise ValueError(f"vector length {values.shape} != layout dim {self.dim}")
        return values[seg.offset:seg.stop]

    def __eq__(self, other):
        return isinstance(other, SegmentLayout) and self.segments == other.segments

    def __repr__(self):
        parts = ", ".join(
            f"{s.kind}" + (f"({s.task_id})" if s.kind == HEAD else "") +
            f"[{s.offset}:{s.stop}]" for s in self.segments)
        return f"SegmentLayout({parts})"


class ParamVector:
    """Flat float64 parameter vector tied to a segment layout."""

    def __init__(self, values, layout: SegmentLayout):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (layout.dim,):
            raise ValueError(
                f"values length {values.shape} does not match layout dim {layout.dim}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite entries")
        self.values = values
        self.layout = layout

    @classmethod
    def zeros(cls, layout: SegmentLayout) -> "ParamVector":
        return cls(np.zeros(layout.dim), layout)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def shared(self) -> np.ndarray:
        return self.layout.shared_slice(self.values)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)


def shared_slice(layout: SegmentLayout, values: np.ndarray) -> np.ndarray:
    """Shared-segment view of a gradient/parameter array under ``layout``."""
    return layout.shared_slice(values)


class RngState:
    """Deterministic substream: (seed, stream_id) fully determines the draws."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def fresh(self) -> "RngState":
        """A pristine copy of this stream (draws restart from the beginning)."""
        return RngState(self.seed, self.stream_id)

    def __repr__(self):
        return f"RngState(seed={self.seed}, stream_id={self.stream_id})"


def sample_gaussian_vector(rng: RngState, dim: int, mean: float = 0.0,
                           std: float = 1.0) -> np.ndarray:
    """``dim`` i.i.d. draws from N(mean, std^2); advances ``rng`` in place."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not np.isfinite(std) or std < 0:
        raise ValueError(f"std must be finite and >= 0, got {std}")
    # mean + std * z keeps the std == 0 case exact and the draw path explicit.
    return mean + std * rng.generator.standard_normal(dim)
