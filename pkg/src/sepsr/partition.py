"""Search over variable subsets for the full separability partition.

Phase 1 tests every singleton; confirmed singletons become blocks. Phase 2
works on the unresolved remainder: subsets of size 2, 3, ... are tried in
lexicographic order, each against the union of *all* other variables. When a
subset passes it is fixed as a block and the scan restarts on the shrunken
remainder; if no proper subset passes, the remainder itself is the final
block. For the paper-scale dimensions used here (n <= 5) the scan is exact.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations

from .errors import InputError
from .sampling import DomainBox
from .septest import (OperatorClass, SepTestConfig, SubsetVerdict,
                      subset_separability)


def max_workers() -> int:
    """Worker cap from SEPSR_THREADS; defaults to sequential execution."""
    try:
        return max(1, int(os.environ.get("SEPSR_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class DetectConfig:
    septest: SepTestConfig = field(default_factory=SepTestConfig)
    max_subset_size: int | None = None   # None: up to n-1 (exact search)
    seed: int = 0

    def to_json(self) -> dict:
        return {"septest": self.septest.to_json(),
                "max_subset_size": self.max_subset_size, "seed": self.seed}


@dataclass
class SeparabilityReport:
    n: int
    blocks: list[tuple[int, ...]]            # 0-based, disjoint, covering
    operator_class: OperatorClass
    evidence: dict[tuple[int, ...], SubsetVerdict]
    seed: int
    t1_seconds: float = 0.0
    evaluations: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.blocks)

    def validate(self):
        flat = sorted(i for b in self.blocks for i in b)
        if flat != list(range(self.n)):
            raise AssertionError(f"blocks {self.blocks} are not a partition of 0..{self.n - 1}")

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "blocks": [[i + 1 for i in b] for b in self.blocks],
            "operator_class": str(self.operator_class),
            "seed": self.seed,
            "prng": "pcg64",
            "t1_seconds": self.t1_seconds,
            "evaluations": self.evaluations,
            "warnings": list(self.warnings),
            "evidence": [v.to_json() for _, v in sorted(self.evidence.items())],
        }


def _subset_seed(master: int, subset: tuple[int, ...]) -> int:
    # stable per-subset stream independent of test order
    seed = master
    for i in subset:
        seed = (seed * 1000003 + 2 * i + 1) % (2**63)
    return seed


def detect_partition(oracle, box: DomainBox, cfg: DetectConfig) -> SeparabilityReport:
    """Detect the separability partition of `oracle` over `box`."""
    n = box.n
    if n < 1:
        raise InputError("dimension must be >= 1")
    start = time.perf_counter()
    evidence: dict[tuple[int, ...], SubsetVerdict] = {}
    warnings: list[str] = []

    if n == 1:
        return SeparabilityReport(1, [(0,)], OperatorClass.NONE, {}, cfg.seed,
                                  time.perf_counter() - start)

    def test(subset: tuple[int, ...]) -> SubsetVerdict:
        if subset in evidence:
            return evidence[subset]
        sub_cfg = replace(cfg.septest, seed=_subset_seed(cfg.seed, subset))
        v = subset_separability(oracle, box, subset, sub_cfg)
        evidence[subset] = v
        return v

    blocks: list[tuple[int, ...]] = []
    operator = OperatorClass.NONE

    def admit(subset: tuple[int, ...], verdict: SubsetVerdict) -> bool:
        """Fix a passing subset as a block unless its operator conflicts."""
        nonlocal operator
        op = verdict.operator
        if operator in (OperatorClass.NONE, OperatorClass.UNKNOWN):
            if op in (OperatorClass.TIMES, OperatorClass.PLUS_MINUS):
                operator = op
            blocks.append(subset)
            return True
        if op in (OperatorClass.TIMES, OperatorClass.PLUS_MINUS) and op != operator:
            warnings.append(
                f"subset {[i + 1 for i in subset]} passed with operator {op} but the "
                f"partition operator is {operator}; kept unsplit (coarsest consistent)")
            return False
        blocks.append(subset)
        return True

    # phase 1: singletons (independent; may run concurrently)
    singles = [(i,) for i in range(n)]
    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sub_cfgs = [replace(cfg.septest, seed=_subset_seed(cfg.seed, s)) for s in singles]
            results = list(pool.map(lambda sc: subset_separability(oracle, box, sc[0], sc[1]),
                                    zip(singles, sub_cfgs)))
        for s, v in zip(singles, results):
            evidence[s] = v
    remainder = []
    for s in singles:
        v = test(s)
        if v.separable and admit(s, v):
            continue
        remainder.extend(s)

    # phase 2: grow combinations inside the remainder
    cap = cfg.max_subset_size if cfg.max_subset_size is not None else n - 1
    capped = False
    progress = True
    while len(remainder) >= 2 and progress:
        progress = False
        for size in range(2, len(remainder)):
            if size > cap:
                capped = True
                break
            for subset in combinations(remainder, size):
                v = test(subset)
                if v.separable and admit(subset, v):
                    remainder = [i for i in remainder if i not in subset]
                    progress = True
                    break
            if progress:
                break
    if remainder:
        blocks.append(tuple(remainder))
    if capped:
        warnings.append(
            f"combination search capped at size {cap}; the final block may be divisible")

    blocks.sort(key=lambda b: b[0])
    if len(blocks) == 1:
        operator = OperatorClass.NONE
    elif operator not in (OperatorClass.TIMES, OperatorClass.PLUS_MINUS):
        operator = OperatorClass.UNKNOWN
        warnings.append("blocks found but no operator class could be inferred")

    report = SeparabilityReport(n, blocks, operator, evidence, cfg.seed,
                                time.perf_counter() - start, warnings=warnings)
    report.validate()
    return report
