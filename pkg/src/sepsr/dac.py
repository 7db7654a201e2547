"""Divide-and-conquer driver: per-block fits, recovery regression, timing.

The pipeline detects the separability partition (timed as t1), fits each
block's sub-function on a slice with the complement frozen at an anchor
point (t2, budget split across blocks), and recombines the fitted pieces by
regression over the full data set (t3).

Recovery models:
  additive class:        y ~ c0 + sum_i beta_i * g_i(x)
  multiplicative class:  y ~ c0 + b * prod_i (g_i(x) - gamma)

Each multiplicative slice equals (target offset) + scale * phi_i, with the
same offset in every block, so subtracting one shared gamma recovers the pure
factors; gamma = 0 falls out naturally for offset-free products. Coefficients
come from least squares; gamma from a closed form pairwise estimate refined
by a bounded scalar search.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize as sciopt

from .errors import (BlockFitError, DegenerateTargetError, EvaluationDomainError,
                     InputError, RankDeficiencyError)
from .expr import Binary, Const, Expr, eval_batch, remap_variables, simplify, to_infix
from .gp import EvolveResult, FitnessMetrics, GPConfig, _score_values, evolve
from .partition import DetectConfig, SeparabilityReport, detect_partition, max_workers
from .sampling import (DomainBox, SampleSet, anchor_points, derive_seed, grid_sample,
                       lhs_sample)
from .septest import FLAT_STD, OperatorClass

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace


def fold_seed(master: int, *key: int) -> int:
    """Deterministic 63-bit child seed for a keyed sub-task."""
    return int(derive_seed(master, *key).generate_state(1)[0]) & (2**63 - 1)


class CountingOracle:
    """Wraps an oracle; counts batch calls and points (thread-safe enough
    for CPython's atomic int operations under the GIL)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn
        self.batches = 0
        self.points = 0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        self.batches += 1
        self.points += int(np.atleast_2d(pts).shape[0])
        return self.fn(pts)


@dataclass
class DacConfig:
    detect: DetectConfig = field(default_factory=DetectConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    block_samples: int = 100
    block_sampler: str = "lhs"        # "lhs" | "grid"
    #: sub-problems are small: lean populations, quick stagnation restarts
    block_pop: int = 16
    block_offspring: int = 32
    block_stagnation: int = 8
    direct_height: int = 9            # genome height when structure is unknown
    full_samples: int = 400           # fallback full-data size when none given
    max_anchor_retries: int = 10
    seed: int = 0

    def to_json(self) -> dict:
        return {"detect": self.detect.to_json(), "gp": self.gp.to_json(),
                "block_samples": self.block_samples,
                "block_sampler": self.block_sampler,
                "direct_height": self.direct_height,
                "full_samples": self.full_samples, "seed": self.seed}


@dataclass
class SubFunctionFit:
    block: tuple[int, ...]            # global variable indices
    complement: tuple[int, ...]
    anchor: np.ndarray                # complement values frozen during the fit
    expression: Expr                  # over block-local variables x1..x_k
    metrics: FitnessMetrics
    evaluations: int
    seconds: float
    seed: int
    converged: bool
    slice_points: np.ndarray
    slice_values: np.ndarray
    #: relative non-constancy of slice/g (multiplicative) or slice-g (additive)
    ratio_deviation: float | None = None
    difference_deviation: float | None = None

    def global_expression(self) -> Expr:
        mapping = {local: g for local, g in enumerate(self.block)}
        return remap_variables(self.expression, mapping)

    def to_json(self) -> dict:
        return {
            "block": [i + 1 for i in self.block],
            "anchor": [float(v) for v in self.anchor],
            "expression": to_infix(self.expression),
            "metrics": self.metrics.to_json(),
            "evaluations": self.evaluations,
            "seconds": self.seconds,
            "seed": self.seed,
            "converged": self.converged,
            "ratio_deviation": self.ratio_deviation,
            "difference_deviation": self.difference_deviation,
        }


@dataclass
class TimingBreakdown:
    t1: float
    t2: float
    t3: float
    total: float

    def to_json(self) -> dict:
        return {"t1_seconds": self.t1, "t2_seconds": self.t2,
                "t3_seconds": self.t3, "total_seconds": self.total}


@dataclass
class RecoveredModel:
    n: int
    mode: str                          # "dac" | "direct"
    operator_class: OperatorClass
    blocks: list[tuple[int, ...]]
    fits: list[SubFunctionFit]
    intercept: float                   # c0
    coefficients: list[float]          # per block (additive) or [scale] (times)
    gamma: float                       # shared slice offset (times class only)
    combined: Expr
    metrics: FitnessMetrics
    timing: TimingBreakdown
    evaluations: dict
    seed: int
    detection: SeparabilityReport | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mode": self.mode,
            "operator_class": str(self.operator_class),
            "blocks": [[i + 1 for i in b] for b in self.blocks],
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "gamma": self.gamma,
            "combined_expression": to_infix(self.combined),
            "metrics": self.metrics.to_json(),
            "timing": self.timing.to_json(),
            "evaluations": self.evaluations,
            "seed": self.seed,
            "prng": "pcg64",
            "sub_fits": [f.to_json() for f in self.fits],
            "detection": None if self.detection is None else self.detection.to_json(),
            "warnings": list(self.warnings),
        }


def _slice_diagnostics(fit: SubFunctionFit, operator: OperatorClass) -> None:
    """Record how constant slice/g (times) or slice-g (additive) is."""
    g, ok = eval_batch(fit.expression, fit.slice_points)
    y = fit.slice_values
    if not bool(np.all(ok)):
        fit.ratio_deviation = math.inf
        fit.difference_deviation = math.inf
        return
    diff = y - g
    dmean = float(diff.mean())
    scale = max(abs(dmean), float(np.max(np.abs(y))), 1e-300)
    fit.difference_deviation = float(np.max(np.abs(diff - dmean))) / scale
    usable = np.abs(g) > 1e-12 * max(1.0, float(np.max(np.abs(g))))
    if np.count_nonzero(usable) < max(3, 0.5 * g.size):
        fit.ratio_deviation = math.inf
        return
    ratio = y[usable] / g[usable]
    rmean = float(ratio.mean())
    if abs(rmean) < 1e-300:
        fit.ratio_deviation = math.inf
        return
    fit.ratio_deviation = float(np.max(np.abs(ratio - rmean))) / abs(rmean)


def fit_subfunction(oracle, box: DomainBox, block: Sequence[int],
                    anchor: np.ndarray | None, cfg: DacConfig,
                    budget: int | None = None,
                    threshold: float | None = None) -> SubFunctionFit:
    """Fit one block's sub-function on a slice with the complement frozen.

    When `anchor` is None (or yields a flat slice) fresh anchors are drawn,
    up to cfg.max_anchor_retries times, before the block fails.
    """
    block = tuple(sorted(int(i) for i in block))
    complement = tuple(i for i in range(box.n) if i not in block)
    seed = fold_seed(cfg.seed, 3, *block)
    sub_box = box.subbox(block)
    if cfg.block_sampler == "grid":
        per_dim = max(2, round(cfg.block_samples ** (1.0 / len(block))))
        base = grid_sample(sub_box, [per_dim] * len(block)).points
    else:
        base = lhs_sample(sub_box, cfg.block_samples, derive_seed(seed, 0)).points

    candidates: list[np.ndarray] = []
    if anchor is not None:
        candidates.append(np.asarray(anchor, dtype=float))
    if complement:
        pool = anchor_points(box, complement, max(2, cfg.max_anchor_retries),
                             derive_seed(seed, 1))
        candidates.extend(pool)
    else:
        candidates.append(np.empty(0))

    start = time.perf_counter()
    slice_values = None
    used_anchor = None
    for cand in candidates[: cfg.max_anchor_retries + 1]:
        pts = np.empty((base.shape[0], box.n))
        pts[:, list(block)] = base
        if complement:
            pts[:, list(complement)] = cand
        values = np.asarray(oracle(pts), dtype=float)
        finite = np.isfinite(values)
        if np.count_nonzero(~finite) > 0.2 * values.size:
            continue
        vals = values[finite]
        if vals.size >= 3 and np.std(vals, ddof=1) >= FLAT_STD:
            slice_values = values[finite]
            base = base[finite]
            used_anchor = cand
            break
    if slice_values is None:
        raise BlockFitError(
            f"no usable anchor for block {[i + 1 for i in block]}: "
            "every slice was flat or mostly invalid")

    data = SampleSet(base, slice_values)
    gp_cfg = replace(cfg.gp, seed=seed, pop_size=cfg.block_pop,
                     offspring=cfg.block_offspring,
                     stagnation_gens=cfg.block_stagnation, readout="trace")
    if budget is not None:
        gp_cfg = replace(gp_cfg, budget=max(budget, gp_cfg.pop_size))
    if threshold is not None:
        gp_cfg = replace(gp_cfg, threshold=threshold)
    result: EvolveResult = evolve(data, gp_cfg)
    return SubFunctionFit(
        block=block, complement=complement, anchor=used_anchor,
        expression=result.expression, metrics=result.metrics,
        evaluations=result.evaluations, seconds=time.perf_counter() - start,
        seed=seed, converged=result.converged,
        slice_points=base, slice_values=slice_values)


def _product_expr(terms: list[Expr]) -> Expr:
    out = terms[0]
    for t in terms[1:]:
        out = Binary("times", out, t)
    return out


def _gamma_objective(G: np.ndarray, y: np.ndarray):
    ones = np.ones_like(y)

    def sse_at(gamma: float):
        P = np.prod(G - gamma, axis=1)
        if not np.all(np.isfinite(P)):
            return math.inf, (0.0, 0.0)
        design = np.stack([ones, P], axis=1)
        sol, *_ = np.linalg.lstsq(design, y, rcond=None)
        if not np.all(np.isfinite(sol)):
            return math.inf, (0.0, 0.0)
        resid = y - design @ sol
        return float(resid @ resid), (float(sol[0]), float(sol[1]))

    return sse_at


def _estimate_gamma(G: np.ndarray, y: np.ndarray) -> list[float]:
    """Closed-form gamma candidates from block pairs.

    For two blocks, y ~ a + b*(g_i - gamma)(g_j - gamma) expands into a
    regression on [1, g_i*g_j, g_i + g_j] whose coefficient ratio recovers
    gamma exactly.
    """
    out = [0.0]
    m = G.shape[1]
    ones = np.ones_like(y)
    for i in range(m):
        for j in range(i + 1, m):
            design = np.stack([ones, G[:, i] * G[:, j], G[:, i] + G[:, j]], axis=1)
            sol, *_ = np.linalg.lstsq(design, y, rcond=None)
            if np.all(np.isfinite(sol)) and abs(sol[1]) > 1e-300:
                g_est = -float(sol[2] / sol[1])
                if math.isfinite(g_est):
                    out.append(g_est)
    return out


def recover(fits: list[SubFunctionFit], operator_class: OperatorClass,
            data: SampleSet, count_eval=None) -> tuple[Expr, float, list[float], float,
                                                       FitnessMetrics]:
    """Combine fitted sub-functions into the full model by regression.

    Returns (combined expression, intercept c0, per-block coefficients,
    gamma, metrics on the full data).
    """
    if data.values is None:
        raise InputError("full data has no target values")
    if not fits:
        raise InputError("no sub-function fits to recover from")
    y = data.values
    X = data.points
    cols = []
    for fit in fits:
        g, ok = eval_batch(fit.expression, X[:, list(fit.block)])
        if count_eval is not None:
            count_eval()
        if not bool(np.all(ok)) or not bool(np.all(np.isfinite(g))):
            raise EvaluationDomainError(
                f"sub-function for block {[i + 1 for i in fit.block]} is invalid "
                "on the full sample set")
        cols.append(g)
    G = np.stack(cols, axis=1)
    m = G.shape[1]
    ones = np.ones_like(y)

    if operator_class == OperatorClass.PLUS_MINUS and m > 1:
        design = np.concatenate([ones[:, None], G], axis=1)
        rank = np.linalg.matrix_rank(design)
        if rank < design.shape[1]:
            # identify the first block whose column adds no rank
            for j in range(m):
                reduced = np.delete(design, j + 1, axis=1)
                if np.linalg.matrix_rank(reduced) == rank:
                    raise RankDeficiencyError(
                        f"sub-function values for block "
                        f"{[i + 1 for i in fits[j].block]} are collinear with "
                        "the others", block=fits[j].block)
            raise RankDeficiencyError("recovery design matrix is rank-deficient")
        sol, *_ = np.linalg.lstsq(design, y, rcond=None)
        c0 = float(sol[0])
        coefs = [float(v) for v in sol[1:]]
        combined: Expr = Const(c0)
        for coef, fit in zip(coefs, fits):
            combined = Binary("plus", combined,
                              Binary("times", Const(coef), fit.global_expression()))
        gamma = 0.0
    else:
        # multiplicative (and the single-block case, where the two coincide)
        if m == 1:
            gamma = 0.0
            sse_at = _gamma_objective(G, y)
            _, (c0, b) = sse_at(0.0)
        else:
            sse_at = _gamma_objective(G, y)
            cands = _estimate_gamma(G, y)
            scored = sorted((sse_at(g0)[0], g0) for g0 in cands)
            gamma = scored[0][1]
            span = max(1.0, abs(gamma))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = sciopt.minimize_scalar(
                    lambda t: sse_at(float(t))[0], method="bounded",
                    bounds=(gamma - span, gamma + span),
                    options={"xatol": 1e-13})
            if math.isfinite(res.fun) and res.fun < scored[0][0]:
                gamma = float(res.x)
            _, (c0, b) = sse_at(gamma)
        coefs = [float(b)]
        terms = []
        for fit in fits:
            ge = fit.global_expression()
            terms.append(ge if gamma == 0.0 else
                         Binary("minus", ge, Const(gamma)))
        combined = Binary("plus", Const(c0),
                          Binary("times", Const(b), _product_expr(terms)))

    combined = simplify(combined)
    pred, ok = eval_batch(combined, X)
    if count_eval is not None:
        count_eval()
    sst = float(((y - y.mean()) ** 2).sum())
    if sst < 1e-300:
        raise DegenerateTargetError("full data target values are constant")
    omr, sse = _score_values(pred, ok, y, sst)
    metrics = FitnessMetrics(omr, sse, sst, len(fits) + 1)
    return combined, c0, coefs, gamma, metrics


def dac_fit(oracle, box: DomainBox, cfg: DacConfig,
            data: SampleSet | None = None) -> RecoveredModel:
    """Full pipeline: detect partition, fit blocks, recover, with timing."""
    counting = oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle)
    t_start = time.perf_counter()
    detect_cfg = replace(cfg.detect, seed=cfg.seed)
    report = detect_partition(counting, box, detect_cfg)
    report.evaluations = counting.batches
    t_detect = time.perf_counter()
    detection_evals = counting.batches

    if data is None:
        ss = lhs_sample(box, cfg.full_samples, derive_seed(cfg.seed, 9))
        data = ss.with_values(counting(ss.points))
    if data.values is None:
        data = data.with_values(counting(data.points))

    warnings_list = list(report.warnings)
    blocks = report.blocks

    if report.m == 1:
        # non-separable: plain search over all variables on the full data
        gp_cfg = replace(cfg.gp, seed=fold_seed(cfg.seed, 4),
                         height=cfg.direct_height, readout="registers")
        result = evolve(data, gp_cfg)
        t_fit = time.perf_counter()
        fit = SubFunctionFit(
            block=tuple(range(box.n)), complement=(), anchor=np.empty(0),
            expression=result.expression, metrics=result.metrics,
            evaluations=result.evaluations,
            seconds=t_fit - t_detect, seed=gp_cfg.seed,
            converged=result.converged,
            slice_points=data.points, slice_values=data.values)
        t_end = time.perf_counter()
        timing = TimingBreakdown(t_detect - t_start, t_fit - t_detect,
                                 t_end - t_fit, t_end - t_start)
        evals = {"detection": detection_evals, "subfits": [result.evaluations],
                 "recovery": 0,
                 "total": detection_evals + result.evaluations}
        return RecoveredModel(
            n=box.n, mode="dac", operator_class=OperatorClass.NONE,
            blocks=[fit.block], fits=[fit], intercept=0.0, coefficients=[1.0],
            gamma=0.0, combined=result.expression, metrics=result.metrics,
            timing=timing, evaluations=evals, seed=cfg.seed, detection=report,
            warnings=warnings_list)

    # fit blocks; unspent budget rolls over to the remaining blocks. Each
    # block aims below threshold/(2m) so the recombined model still clears
    # the full threshold after per-block errors compose.
    total_budget = cfg.gp.budget
    block_threshold = cfg.gp.threshold / (2 * report.m)
    fits: list[SubFunctionFit] = []
    workers = max_workers()
    if workers > 1:
        even = max(cfg.gp.pop_size, total_budget // report.m)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(
                lambda blk: fit_subfunction(counting, box, blk, None, cfg, even,
                                            block_threshold),
                blocks))
    else:
        spent = 0
        for i, blk in enumerate(blocks):
            share = max(cfg.gp.pop_size, (total_budget - spent) // (report.m - i))
            fit = fit_subfunction(counting, box, blk, None, cfg, share,
                                  block_threshold)
            spent += fit.evaluations
            fits.append(fit)
    t_fit = time.perf_counter()

    for fit in fits:
        _slice_diagnostics(fit, report.operator_class)
        if not fit.converged:
            warnings_list.append(
                f"block {[i + 1 for i in fit.block]} did not reach the fitness "
                f"threshold (1-R^2 = {fit.metrics.one_minus_r2:.3e})")

    recovery_evals = [0]

    def count_eval():
        recovery_evals[0] += 1

    combined, c0, coefs, gamma, metrics = recover(
        fits, report.operator_class, data, count_eval)
    t_end = time.perf_counter()

    timing = TimingBreakdown(t_detect - t_start, t_fit - t_detect,
                             t_end - t_fit, t_end - t_start)
    sub_evals = [f.evaluations for f in fits]
    evals = {"detection": detection_evals, "subfits": sub_evals,
             "recovery": recovery_evals[0],
             "total": detection_evals + sum(sub_evals) + recovery_evals[0]}
    return RecoveredModel(
        n=box.n, mode="dac", operator_class=report.operator_class,
        blocks=list(blocks), fits=fits, intercept=c0, coefficients=coefs,
        gamma=gamma, combined=combined, metrics=metrics, timing=timing,
        evaluations=evals, seed=cfg.seed, detection=report,
        warnings=warnings_list)


def direct_fit(oracle, box: DomainBox, cfg: DacConfig,
               data: SampleSet | None = None) -> RecoveredModel:
    """Plain whole-function search at the same evaluation accounting."""
    counting = oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle)
    t_start = time.perf_counter()
    if data is None:
        ss = lhs_sample(box, cfg.full_samples, derive_seed(cfg.seed, 9))
        data = ss.with_values(counting(ss.points))
    if data.values is None:
        data = data.with_values(counting(data.points))
    gp_cfg = replace(cfg.gp, seed=fold_seed(cfg.seed, 4), height=cfg.direct_height,
                     readout="registers")
    result = evolve(data, gp_cfg)
    t_end = time.perf_counter()
    fit = SubFunctionFit(
        block=tuple(range(box.n)), complement=(), anchor=np.empty(0),
        expression=result.expression, metrics=result.metrics,
        evaluations=result.evaluations, seconds=t_end - t_start,
        seed=gp_cfg.seed, converged=result.converged,
        slice_points=data.points, slice_values=data.values)
    timing = TimingBreakdown(0.0, t_end - t_start, 0.0, t_end - t_start)
    evals = {"detection": 0, "subfits": [result.evaluations], "recovery": 0,
             "total": counting.batches - 1 + result.evaluations
             if counting.batches else result.evaluations}
    return RecoveredModel(
        n=box.n, mode="direct", operator_class=OperatorClass.NONE,
        blocks=[fit.block], fits=[fit], intercept=0.0, coefficients=[1.0],
        gamma=0.0, combined=result.expression, metrics=result.metrics,
        timing=timing, evaluations=evals, seed=cfg.seed)