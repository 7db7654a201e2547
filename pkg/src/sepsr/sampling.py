"""Domain boxes, grid and Latin-hypercube sampling, anchor selection.

All randomness flows through numpy's PCG64 generator. Callers pass either a
64-bit integer seed or a `numpy.random.SeedSequence`; derived streams for
sub-tasks are produced with `derive_seed`, which is deterministic in the
master seed and the key tuple regardless of execution order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError

#: documented PRNG algorithm recorded in reports
PRNG_ALGORITHM = "pcg64"

GRID_CAP = 10**6


def derive_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Deterministic child seed for a sub-task identified by an integer key."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned closed box: per-dimension intervals [lo_i, hi_i]."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise InputError("box needs matching, non-empty bound tuples")
        for a, b in zip(self.lo, self.hi):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise InputError(f"interval [{a}, {b}] is not a finite a < b interval")

    @classmethod
    def from_intervals(cls, intervals: Sequence[Sequence[float]]) -> "DomainBox":
        return cls(tuple(float(a) for a, _ in intervals),
                   tuple(float(b) for _, b in intervals))

    @property
    def n(self) -> int:
        return len(self.lo)

    def subbox(self, dims: Sequence[int]) -> "DomainBox":
        dims = list(dims)
        return DomainBox(tuple(self.lo[i] for i in dims),
                         tuple(self.hi[i] for i in dims))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def to_json(self) -> list[list[float]]:
        return [[a, b] for a, b in zip(self.lo, self.hi)]


@dataclass
class SampleSet:
    """Point matrix with optional paired target values."""

    points: np.ndarray          # (N, n)
    values: np.ndarray | None = field(default=None)  # (N,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise InputError("points must be (N, n)")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != (self.points.shape[0],):
                raise InputError("values length must match point count")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]

    def with_values(self, values: np.ndarray) -> "SampleSet":
        return SampleSet(self.points, values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = [f"x{i + 1}" for i in range(self.n_dims)]
        if self.values is not None:
            cols.append("f")
        buf.write(",".join(cols) + "\n")
        for i in range(self.n_points):
            row = [repr(float(v)) for v in self.points[i]]
            if self.values is not None:
                row.append(repr(float(self.values[i])))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SampleSet":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise InputError("empty CSV")
        header = [h.strip() for h in lines[0].split(",")]
        has_f = header[-1] == "f"
        xcols = header[:-1] if has_f else header
        if xcols != [f"x{i + 1}" for i in range(len(xcols))]:
            raise InputError(f"CSV header must be x1..xn[,f], got {header}")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        if data.shape[1] != len(header):
            raise InputError("CSV row width does not match header")
        if has_f:
            return cls(data[:, :-1], data[:, -1])
        return cls(data)


def grid_sample(box: DomainBox, counts: Sequence[int], cap: int = GRID_CAP) -> SampleSet:
    """Cartesian product of per-dimension equally spaced values.

    Each dimension contributes `counts[i]` points including both interval
    endpoints; a count of 1 yields the interval midpoint. The last dimension
    varies fastest.
    """
    counts = [int(c) for c in counts]
    if len(counts) != box.n:
        raise InputError("counts length must equal box dimension")
    if any(c < 1 for c in counts):
        raise InputError("counts must be >= 1")
    total = int(np.prod([np.int64(c) for c in counts]))
    if total > cap:
        raise InputError(f"grid of {total} points exceeds cap {cap}")
    axes = []
    for (a, b), c in zip(zip(box.lo, box.hi), counts):
        axes.append(np.array([(a + b) / 2.0]) if c == 1 else np.linspace(a, b, c))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return SampleSet(pts)


def lhs_sample(box: DomainBox, n_points: int, seed) -> SampleSet:
    """Latin hypercube sample: one point per equal-width stratum per dimension."""
    if n_points < 1:
        raise InputError("need at least one sample point")
    rng = make_rng(seed)
    cols = []
    for a, b in zip(box.lo, box.hi):
        strata = rng.permutation(n_points)
        u = rng.uniform(size=n_points)
        cols.append(a + (b - a) * (strata + u) / n_points)
    return SampleSet(np.stack(cols, axis=1))


def anchor_points(box: DomainBox, dims: Sequence[int], k: int, seed) -> np.ndarray:
    """K pairwise-distinct fixed-value vectors in the sub-box spanned by dims.

    Drawn by LHS so the anchors are spread out; returns shape (k, len(dims)).
    """
    if k < 2:
        raise InputError("need at least two anchor points")
    sub = box.subbox(dims)
    return lhs_sample(sub, k, seed).points
