"""Subset separability testing via paired complementary correlation tests.

A variable subset S is declared separable when two families of function-value
vectors are each pairwise linearly related:

  test 1: sample S, freeze the complement at K distinct anchor vectors;
  test 2: sample the complement, freeze S at K distinct anchor vectors.

Either family alone can pass for a non-separable target; the conjunction of
both is the decision rule. The binary operator joining the detected block to
the rest of the model is inferred from the Pearson line fits of test 1: pure
shifts (slope 1) indicate an additive combination, anything else indicates a
multiplicative one (possibly with a shared constant offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import EvaluationDomainError, IndeterminateError, InputError
from .sampling import DomainBox, anchor_points, derive_seed, grid_sample, lhs_sample

#: vectors with sample standard deviation below this are treated as constant
FLAT_STD = 1e-12


class OperatorClass(str, Enum):
    TIMES = "times"
    PLUS_MINUS = "plus_minus"
    NONE = "none"
    UNKNOWN = "unknown"

    def __str__(self) -> str:  # keep report strings plain
        return self.value


# sentinel returned by operator inference when every anchor pair was
# uninformative (slope ~ 1 and intercept ~ 0); callers should redraw anchors
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    slope: float
    intercept: float
    method: str
    n: int
    #: mean of the reference vector, kept for scale-relative thresholds
    xi_mean: float = 0.0

    def to_json(self) -> dict:
        return {"r": self.r, "slope": self.slope, "intercept": self.intercept,
                "method": self.method, "n": self.n}


def correlation(xs, ys, method: str = "pearson") -> CorrelationResult:
    """Sample correlation of two equal-length vectors.

    Pearson also reports the least-squares line ys ~ intercept + slope*xs;
    spearman is Pearson on ranks; kendall is tau-b. Raises IndeterminateError
    when either vector is numerically constant.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InputError("correlation needs two equal-length vectors")
    n = xs.size
    if n < 3:
        raise InputError("need at least 3 observations")
    sx = float(np.std(xs, ddof=1))
    sy = float(np.std(ys, ddof=1))
    if sx < FLAT_STD or sy < FLAT_STD:
        raise IndeterminateError("correlation undefined for a constant vector")
    if method == "pearson":
        xc = xs - xs.mean()
        yc = ys - ys.mean()
        sxy = float(xc @ yc)
        sxx = float(xc @ xc)
        r = sxy / math.sqrt(sxx * float(yc @ yc))
        slope = sxy / sxx
        intercept = float(ys.mean() - slope * xs.mean())
        return CorrelationResult(r, slope, intercept, method, n, float(xs.mean()))
    if method == "spearman":
        rx = stats.rankdata(xs)
        ry = stats.rankdata(ys)
        inner = correlation(rx, ry, "pearson")
        return CorrelationResult(inner.r, math.nan, math.nan, method, n, float(xs.mean()))
    if method == "kendall":
        tau = stats.kendalltau(xs, ys, variant="b").statistic
        return CorrelationResult(float(tau), math.nan, math.nan, method, n, float(xs.mean()))
    raise InputError(f"unknown correlation method {method!r}")


@dataclass(frozen=True)
class SepTestConfig:
    n_samples: int = 50
    n_anchors: int = 3
    eps_r: float = 1e-6
    eps_op: float = 1e-6
    method: str = "pearson"
    sampler: str = "lhs"            # "lhs" | "grid"
    max_invalid_fraction: float = 0.2
    max_anchor_redraws: int = 10
    seed: int = 0

    def to_json(self) -> dict:
        return {"n_samples": self.n_samples, "n_anchors": self.n_anchors,
                "eps_r": self.eps_r, "eps_op": self.eps_op, "method": self.method,
                "sampler": self.sampler, "seed": self.seed}


@dataclass
class SubsetVerdict:
    subset: tuple[int, ...]                 # 0-based
    separable: bool
    operator: OperatorClass
    test1: list[CorrelationResult] = field(default_factory=list)
    test2: list[CorrelationResult] = field(default_factory=list)
    anchors_complement: np.ndarray | None = None
    anchors_subset: np.ndarray | None = None
    indeterminate: bool = False
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "subset": [i + 1 for i in self.subset],
            "separable": self.separable,
            "operator": str(self.operator),
            "indeterminate": self.indeterminate,
            "test1": [c.to_json() for c in self.test1],
            "test2": [c.to_json() for c in self.test2],
            "anchors_complement": None if self.anchors_complement is None
            else [[float(v) for v in row] for row in self.anchors_complement],
            "anchors_subset": None if self.anchors_subset is None
            else [[float(v) for v in row] for row in self.anchors_subset],
            "seed": self.seed,
        }


def infer_operator(fits: Sequence[CorrelationResult], eps_op: float = 1e-6):
    """Classify the combining operator from test-1 Pearson line fits.

    A pure shift (slope ~ 1, intercept away from 0) across all informative
    pairs means the block combines additively; slopes away from 1 mean it
    combines multiplicatively (a shared constant offset shows up as a nonzero
    intercept and is tolerated). Pairs with slope ~ 1 *and* intercept ~ 0 are
    uninformative; if every pair is, returns DEGENERATE so the caller can
    redraw anchors. Mixed signals return UNKNOWN.
    """
    kinds = []
    for c in fits:
        if math.isnan(c.slope):
            return OperatorClass.UNKNOWN
        scale = max(abs(c.xi_mean), 1.0)
        shiftish = abs(c.slope - 1.0) <= eps_op
        zero_a = abs(c.intercept) <= eps_op * scale
        if shiftish and zero_a:
            kinds.append("degenerate")
        elif shiftish:
            kinds.append("shift")
        else:
            kinds.append("scale")
    informative = [k for k in kinds if k != "degenerate"]
    if not informative:
        return DEGENERATE
    if all(k == "shift" for k in informative):
        return OperatorClass.PLUS_MINUS
    if all(k == "scale" for k in informative):
        return OperatorClass.TIMES
    return OperatorClass.UNKNOWN


def _slice_vectors(oracle, box: DomainBox, varied: Sequence[int], frozen: Sequence[int],
                   cfg: SepTestConfig, seed_key: tuple[int, ...], master: int):
    """Function-value vectors for `varied` sampled and `frozen` anchored.

    Redraws any anchor whose slice is numerically flat, up to
    cfg.max_anchor_redraws times. Returns (vectors, anchors, sample_points)
    or None when no usable anchor set could be found.
    """
    varied = list(varied)
    frozen = list(frozen)
    n = box.n
    if cfg.sampler == "grid":
        # grid mode is per-dimension: n_samples points along each varied axis
        base = grid_sample(box.subbox(varied), [cfg.n_samples] * len(varied)).points
    else:
        base = lhs_sample(box.subbox(varied), cfg.n_samples,
                          derive_seed(master, *seed_key, 0)).points
    n_pts = base.shape[0]

    def evaluate_at(anchor: np.ndarray) -> np.ndarray:
        pts = np.empty((n_pts, n))
        pts[:, varied] = base
        pts[:, frozen] = anchor
        return np.asarray(oracle(pts), dtype=np.float64)

    vectors: list[np.ndarray] = []
    anchors: list[np.ndarray] = []
    pool = anchor_points(box, frozen, cfg.n_anchors + cfg.max_anchor_redraws,
                         derive_seed(master, *seed_key, 1))
    invalid = 0
    total = 0
    for anchor in pool:
        values = evaluate_at(anchor)
        total += n_pts
        invalid += int(np.count_nonzero(~np.isfinite(values)))
        finite = values[np.isfinite(values)]
        if finite.size >= 3 and np.std(finite, ddof=1) >= FLAT_STD:
            vectors.append(values)
            anchors.append(anchor)
        if len(vectors) == cfg.n_anchors:
            break
    if total and invalid / total > cfg.max_invalid_fraction:
        raise EvaluationDomainError(
            f"oracle invalid on {invalid}/{total} points while testing subset")
    if len(vectors) < cfg.n_anchors:
        return None
    return vectors, np.array(anchors), base


def _pairwise(vectors: list[np.ndarray], method: str) -> list[CorrelationResult]:
    out = []
    for i, j in combinations(range(len(vectors)), 2):
        a, b = vectors[i], vectors[j]
        ok = np.isfinite(a) & np.isfinite(b)
        if np.count_nonzero(ok) < 3:
            raise IndeterminateError("fewer than 3 jointly valid points")
        out.append(correlation(b[ok], a[ok], method))
    return out


def subset_separability(oracle: Callable[[np.ndarray], np.ndarray], box: DomainBox,
                        subset: Sequence[int], cfg: SepTestConfig) -> SubsetVerdict:
    """Run both complementary correlation tests for one variable subset.

    The oracle maps an (N, n) point matrix to N values, with nan marking
    invalid points. Deterministic in cfg.seed.
    """
    subset = tuple(sorted(int(i) for i in subset))
    complement = tuple(i for i in range(box.n) if i not in subset)
    if not subset or not complement:
        raise InputError("subset must be nonempty and proper")
    if len(set(subset)) != len(subset) or subset[0] < 0 or subset[-1] >= box.n:
        raise InputError(f"subset {subset} out of range for dimension {box.n}")

    master = cfg.seed
    key = (len(subset), *subset)

    def run(attempt: int):
        one = _slice_vectors(oracle, box, subset, complement, cfg,
                             (1, attempt, *key), master)
        two = _slice_vectors(oracle, box, complement, subset, cfg,
                             (2, attempt, *key), master)
        return one, two

    one, two = run(0)
    if one is None or two is None:
        return SubsetVerdict(subset, False, OperatorClass.UNKNOWN,
                             indeterminate=True, seed=master)
    vec1, anchors_c, _ = one
    vec2, anchors_s, _ = two
    try:
        test1 = _pairwise(vec1, cfg.method)
        test2 = _pairwise(vec2, cfg.method)
    except IndeterminateError:
        return SubsetVerdict(subset, False, OperatorClass.UNKNOWN,
                             indeterminate=True, seed=master)
    passed = all(1.0 - abs(c.r) <= cfg.eps_r for c in test1 + test2)
    operator = OperatorClass.UNKNOWN
    if passed:
        if cfg.method == "pearson":
            fits = test1
        else:
            fits = _pairwise(vec1, "pearson")
        inferred = infer_operator(fits, cfg.eps_op)
        attempt = 1
        while inferred is DEGENERATE and attempt <= cfg.max_anchor_redraws:
            redraw = _slice_vectors(oracle, box, subset, complement, cfg,
                                    (1, attempt, *key), master)
            if redraw is None:
                break
            fits = _pairwise(redraw[0], "pearson")
            if all(1.0 - abs(c.r) <= cfg.eps_r for c in fits):
                inferred = infer_operator(fits, cfg.eps_op)
            attempt += 1
        if isinstance(inferred, OperatorClass):
            operator = inferred
    return SubsetVerdict(subset, passed, operator, test1, test2,
                         anchors_c, anchors_s, seed=master)


def with_seed(cfg: SepTestConfig, seed: int) -> SepTestConfig:
    return replace(cfg, seed=int(seed))
