"""Genetic programming over integer parse-matrix genomes.

A genome is an h x 4 integer matrix. Each row encodes one instruction:

  column 1 (op, -5..5):      -5 sqrt, -4 ln, -3 cos, -2 /, -1 -, 0 skip,
                              1 +, 2 *, 3 sin, 4 exp, 5 square
  columns 2-3 (operands, -5..d):
                             -5 lam2, -4 lam1, -3 f, -2 f2, -1 f1,
                              0 the constant 1.0, k>=1 the variable x_k
  column 4 (store, -1..1):   -1 keep, 0 copy result to f1, 1 copy to f2

Rows execute top to bottom against three working registers f, f1, f2 (all
initialized to 0); unary operators consume only column 2. The model is the f
register after the last row. Two free coefficient slots (lam1, lam2) are
tuned per candidate: exactly, by linear least squares, when the model is
affine in them, and by Nelder-Mead restarts otherwise.

During search every candidate is additionally scored under its optimal
affine calibration alpha + beta*model. A fitted sub-function is determined
only up to exactly this pair (the recovery regression absorbs scale and
shift), so the search hunts for the right *shape* instead of also having to
evolve scale/shift plumbing rows; the reported expression carries the
calibration explicitly as constant nodes, and its fitness is the plain
SSE/SST of that final tree.

The engine is a (mu+lambda) evolution strategy with per-entry reset mutation,
uniform row crossover, truncation selection over distinct genomes, and a
bounded single-entry hill-climb whenever a new best appears; a full
deterministic scan replaces the strategy when the genome space is small
enough to enumerate outright. Fitness is 1 - R^2 = SSE/SST; candidates that
hit a domain violation or produce non-finite predictions on any sample point
score +inf.

The evaluation budget is counted in model evaluations: each full pass of one
candidate over the data set (including every probe and every objective call
inside the constant optimizer) costs one unit.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import optimize as sciopt

from .errors import DegenerateTargetError, InputError
from .expr import (Binary, Const, DIV_EPS, Expr, Param, Unary, Var, eval_batch,
                   params_used, simplify, substitute_params)
from .sampling import SampleSet, derive_seed, lhs_sample, make_rng, DomainBox
from . import gp_fast

OP_CODES = {
    -5: "sqrt", -4: "ln", -3: "cos", -2: "divide", -1: "minus",
    0: "skip", 1: "plus", 2: "times", 3: "sin", 4: "exp", 5: "square",
}
UNARY_CODES = (-5, -4, -3, 3, 4, 5)
BINARY_CODES = (-2, -1, 1, 2)

#: worst-case fitness assigned to invalid or non-finite candidates
WORST = math.inf


# ---------------------------------------------------------------------------
# genome
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParseMatrix:
    """Validated integer genome of shape (h, 4) for a d-variable problem."""

    entries: np.ndarray
    d: int

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.int64)
        object.__setattr__(self, "entries", a)
        if a.ndim != 2 or a.shape[1] != 4:
            raise InputError("genome must have shape (h, 4)")
        if self.d < 1:
            raise InputError("d must be >= 1")
        if a.size:
            ok = ((a[:, 0] >= -5) & (a[:, 0] <= 5)
                  & (a[:, 1] >= -5) & (a[:, 1] <= self.d)
                  & (a[:, 2] >= -5) & (a[:, 2] <= self.d)
                  & (a[:, 3] >= -1) & (a[:, 3] <= 1))
            if not bool(np.all(ok)):
                bad = int(np.flatnonzero(~ok)[0])
                raise InputError(f"genome row {bad} = {a[bad].tolist()} outside column domains")

    @property
    def h(self) -> int:
        return self.entries.shape[0]

    def key(self) -> bytes:
        return self.entries.tobytes()

    def to_json(self) -> dict:
        return {"d": self.d, "rows": self.entries.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ParseMatrix":
        return cls(np.array(obj["rows"], dtype=np.int64), int(obj["d"]))

    @classmethod
    def random(cls, d: int, h: int, rng: np.random.Generator) -> "ParseMatrix":
        cols = [rng.integers(-5, 6, size=h), rng.integers(-5, d + 1, size=h),
                rng.integers(-5, d + 1, size=h), rng.integers(-1, 2, size=h)]
        return cls(np.stack(cols, axis=1), d)


def _pm_trusted(entries: np.ndarray, d: int) -> ParseMatrix:
    """Construct without domain validation (internal, in-domain by build)."""
    pm = object.__new__(ParseMatrix)
    object.__setattr__(pm, "entries", entries)
    object.__setattr__(pm, "d", d)
    return pm


def search_space_size(d: int, h: int) -> int:
    """Exact number of genomes of height h over d variables."""
    if d < 1 or h < 0:
        raise InputError("need d >= 1 and h >= 0")
    return (11 * (6 + d) * (6 + d) * 3) ** h


def enumerate_genomes(d: int, h: int) -> Iterator[ParseMatrix]:
    """All genomes in deterministic lexicographic order (small spaces only)."""
    row_space = list(itertools.product(range(-5, 6), range(-5, d + 1),
                                       range(-5, d + 1), range(-1, 2)))
    for rows in itertools.product(row_space, repeat=h):
        yield ParseMatrix(np.array(rows, dtype=np.int64).reshape(h, 4), d)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _operand_expr(code: int, regs: dict[str, Expr]) -> Expr:
    if code == -5:
        return Param(1)
    if code == -4:
        return Param(0)
    if code == -3:
        return regs["f"]
    if code == -2:
        return regs["f2"]
    if code == -1:
        return regs["f1"]
    if code == 0:
        return Const(1.0)
    return Var(code - 1)


def decode_rows(genome: ParseMatrix) -> list[Expr | None]:
    """Decode a genome into per-row result trees (None for skip rows)."""
    regs: dict[str, Expr] = {"f": Const(0.0), "f1": Const(0.0), "f2": Const(0.0)}
    out: list[Expr | None] = []
    for row in genome.entries:
        op = int(row[0])
        if op == 0:
            out.append(None)
            continue
        name = OP_CODES[op]
        a = _operand_expr(int(row[1]), regs)
        if op in UNARY_CODES:
            result: Expr = Unary(name, a)
        else:
            result = Binary(name, a, _operand_expr(int(row[2]), regs))
        out.append(result)
        regs["f"] = result
        store = int(row[3])
        if store == 0:
            regs["f1"] = result
        elif store == 1:
            regs["f2"] = result
    return out


def decode(genome: ParseMatrix) -> Expr:
    """Decode a genome into an expression tree (the final f register)."""
    last = Const(0.0)
    for tree in decode_rows(genome):
        if tree is not None:
            last = tree
    return last


# ---------------------------------------------------------------------------
# straight-line evaluator (value-identical to decode + eval_batch)
# ---------------------------------------------------------------------------


class RowProgram:
    """Executes a genome directly on a data matrix, row by row.

    Avoids building a tree per candidate inside the search loop; the
    equivalence with `decode` + `eval_batch` is covered by property tests.
    """

    __slots__ = ("rows", "d", "slots")

    def __init__(self, genome: ParseMatrix):
        self.rows = [tuple(int(v) for v in r) for r in genome.entries]
        self.d = genome.d
        used: set[int] = set()
        for op, a2, a3, _ in self.rows:
            if op == 0:
                continue
            operands = (a2,) if op in UNARY_CODES else (a2, a3)
            for c in operands:
                if c == -4:
                    used.add(0)
                elif c == -5:
                    used.add(1)
        self.slots = frozenset(used)

    def run(self, points: np.ndarray, lam: Sequence[float] = (0.0, 0.0)):
        """Returns (values, valid) for the final f register like `eval_batch`."""
        trace, tvalid, active, f, fv = self.run_trace(points, lam)
        return f, fv

    def run_trace(self, points: np.ndarray, lam: Sequence[float] = (0.0, 0.0)):
        """Returns (trace, tvalid, active, f, fv) like gp_fast.run_rows_trace."""
        n_pts = points.shape[0]
        # numpy scalars, not Python floats: division by zero must yield
        # inf/nan under errstate instead of raising
        zero = np.float64(0.0)
        one = np.float64(1.0)
        f = (zero, True)
        f1 = f
        f2 = f

        def fetch(code: int):
            if code == -5:
                return (np.float64(lam[1]), True)
            if code == -4:
                return (np.float64(lam[0]), True)
            if code == -3:
                return f
            if code == -2:
                return f2
            if code == -1:
                return f1
            if code == 0:
                return (one, True)
            return (points[:, code - 1], True)

        h = len(self.rows)
        trace = np.zeros((h, n_pts))
        tvalid = np.zeros((h, n_pts), dtype=bool)
        active = np.zeros(h, dtype=bool)
        with np.errstate(all="ignore"):
            for r, (op, a2, a3, store) in enumerate(self.rows):
                if op == 0:
                    continue
                active[r] = True
                av, aok = fetch(a2)
                if op in UNARY_CODES:
                    if op == -5:
                        out = (np.sqrt(av), aok & np.greater_equal(av, 0.0))
                    elif op == -4:
                        out = (np.log(av), aok & np.greater(av, 0.0))
                    elif op == -3:
                        out = (np.cos(av), aok)
                    elif op == 3:
                        out = (np.sin(av), aok)
                    elif op == 4:
                        out = (np.exp(av), aok)
                    else:
                        out = (np.square(av), aok)
                else:
                    bv, bok = fetch(a3)
                    ok = aok & bok
                    if op == 1:
                        out = (av + bv, ok)
                    elif op == -1:
                        out = (av - bv, ok)
                    elif op == 2:
                        out = (av * bv, ok)
                    else:
                        out = (av / bv, ok & np.greater_equal(np.abs(bv), DIV_EPS))
                trace[r] = out[0]
                tvalid[r] = out[1]
                f = out
                if store == 0:
                    f1 = out
                elif store == 1:
                    f2 = out
        fvals = np.broadcast_to(np.asarray(f[0], dtype=np.float64), (n_pts,))
        fmask = np.broadcast_to(np.asarray(f[1], dtype=bool), (n_pts,))
        return trace, tvalid, active, fvals, fmask


# ---------------------------------------------------------------------------
# fitness and constant optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitnessMetrics:
    one_minus_r2: float
    sse: float
    sst: float
    evaluations: int = 0

    def to_json(self) -> dict:
        return {"one_minus_r2": self.one_minus_r2, "sse": self.sse,
                "sst": self.sst, "evaluations": self.evaluations}


def _sst(values: np.ndarray) -> float:
    c = values - values.mean()
    return float(c @ c)


def _score_values(pred: np.ndarray, valid: np.ndarray, y: np.ndarray, sst: float):
    if not bool(np.all(valid)):
        return WORST, WORST
    resid = y - pred
    sse = float(resid @ resid)
    if not math.isfinite(sse):
        return WORST, WORST
    return sse / sst, sse


def fitness(e: Expr, data: SampleSet) -> FitnessMetrics:
    """1 - R^2 of a closed expression on a sample set with values."""
    if data.values is None:
        raise InputError("data has no target values")
    if params_used(e):
        raise InputError("expression has unbound coefficient slots")
    y = data.values
    sst = _sst(y)
    if sst < 1e-300:
        raise DegenerateTargetError("target values are constant; R^2 undefined")
    pred, valid = eval_batch(e, data.points)
    omr, sse = _score_values(pred, valid, y, sst)
    return FitnessMetrics(omr, sse, sst, 1)


def _affine_fit(runs: dict, slots: Sequence[int], y: np.ndarray):
    """Least-squares slot values from base/unit-step runs; None if unusable.

    runs maps a lam tuple to its predicted-value vector (all-valid runs only).
    """
    base = runs.get((0.0, 0.0))
    if base is None:
        return None
    cols = []
    for s in slots:
        step = runs.get((1.0, 0.0) if s == 0 else (0.0, 1.0))
        if step is None:
            return None
        cols.append(step - base)
    design = np.stack(cols, axis=1)
    sol, *_ = np.linalg.lstsq(design, y - base, rcond=None)
    if not np.all(np.isfinite(sol)):
        return None
    lam = [0.0, 0.0]
    for s, v in zip(slots, sol):
        lam[s] = float(v)
    predicted = base + design @ sol
    return tuple(lam), predicted


_PROBE_LAMBDAS = ((1.0, 1.0), (2.0, 0.5), (-1.0, 2.0), (0.5, -2.0),
                  (5.0, 1.0), (-3.0, -0.5))


class _Runner:
    """Budget-counted evaluation of one candidate at arbitrary slot values.

    One call = one full pass over the data = one evaluation unit.
    """

    def __init__(self, run_fn, n_points: int, counter: list, budget: int):
        self.run_fn = run_fn
        self.n = n_points
        self.counter = counter
        self.budget = budget

    def __call__(self, lam):
        self.counter[0] += 1
        return self.run_fn(tuple(float(v) for v in lam))

    @property
    def remaining(self) -> int:
        return self.budget - self.counter[0]


def _tune_candidate(runner: _Runner, slots: frozenset[int], y: np.ndarray, sst: float,
                    polish_budget: int = 0, polish_starts: Sequence = (),
                    polish_trigger: float = WORST):
    """Pick slot values for one candidate; returns (fitness, sse, lam, affine).

    Strategy: no slots -> single run. Otherwise probe lam = 0 and unit steps;
    if the candidate responds affinely (verified by an actual run at the
    least-squares optimum) the optimum is exact. Non-affine candidates fall
    back to a fixed probe set, refined with budget-capped Nelder-Mead when the
    probe score is already below `polish_trigger` (so the expensive path runs
    only for promising candidates). Every reported score comes from an actual
    run.
    """
    zero = (0.0, 0.0)
    if not slots:
        v, ok = runner(zero)
        omr, sse = _score_values(v, ok, y, sst)
        return omr, sse, zero, True

    best = (WORST, WORST, zero)
    clean_runs: dict[tuple, np.ndarray] = {}

    def attempt(lam):
        nonlocal best
        lam = (float(lam[0]), float(lam[1]))
        v, ok = runner(lam)
        omr, sse = _score_values(v, ok, y, sst)
        if omr < best[0]:
            best = (omr, sse, lam)
        if bool(np.all(ok)) and np.all(np.isfinite(v)):
            clean_runs[lam] = v
        return omr

    attempt(zero)
    order = sorted(slots)
    for s in order:
        attempt((1.0, 0.0) if s == 0 else (0.0, 1.0))

    affine = False
    fit = _affine_fit(clean_runs, order, y)
    if fit is not None:
        lam_star, predicted = fit
        actual_omr = attempt(lam_star)
        if math.isfinite(actual_omr):
            actual = clean_runs.get(lam_star)
            if actual is not None:
                scale = 1.0 + float(np.max(np.abs(actual)))
                affine = bool(np.max(np.abs(actual - predicted)) <= 1e-8 * scale)

    if not affine:
        for lam in _PROBE_LAMBDAS:
            attempt(lam)
        if polish_budget > 0 and best[0] < polish_trigger:
            maxfev = min(polish_budget, max(0, runner.remaining))
            if maxfev >= 10:
                starts = [best[2], *polish_starts]
                per = max(10, maxfev // max(1, len(starts)))
                dims = max(slots) + 1

                def obj(vec):
                    lam = (float(vec[0]), float(vec[1]) if dims > 1 else 0.0)
                    v, ok = runner(lam)
                    _, sse = _score_values(v, ok, y, sst)
                    return sse

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    for x0 in starts:
                        x0v = np.array(x0[:dims], dtype=float)
                        res = sciopt.minimize(obj, x0v, method="Nelder-Mead",
                                              options={"maxfev": per, "xatol": 1e-12,
                                                       "fatol": 1e-300})
                        lam = (float(res.x[0]), float(res.x[1]) if dims > 1 else 0.0)
                        attempt(lam)
    return best[0], best[1], best[2], affine


def optimize_constants(e: Expr, data: SampleSet, seed: int = 0, restarts: int = 8,
                       maxfev_per_restart: int = 200):
    """Tune the coefficient slots of an expression against data.

    Affine slots are solved in closed form; otherwise Nelder-Mead is run from
    `restarts` seeded starting points in [-10, 10]^k and the best result kept.
    Returns (lam tuple, FitnessMetrics). If every evaluation is invalid the
    metrics carry the worst-case sentinel.
    """
    if data.values is None:
        raise InputError("data has no target values")
    slots = params_used(e)
    y = data.values
    sst = _sst(y)
    if sst < 1e-300:
        raise DegenerateTargetError("target values are constant; R^2 undefined")
    counter = [0]
    runner = _Runner(lambda lam: eval_batch(e, data.points, params=lam),
                     data.n_points, counter, budget=2**62)
    if not slots:
        v, ok = runner((0.0, 0.0))
        omr, sse = _score_values(v, ok, y, sst)
        return (0.0, 0.0), FitnessMetrics(omr, sse, sst, counter[0])
    dims = max(slots) + 1
    box = DomainBox((-10.0,) * dims, (10.0,) * dims)
    pts = lhs_sample(box, restarts, derive_seed(seed, 0xC0)).points
    starts = [tuple(float(v) for v in row) + (0.0,) * (2 - dims) for row in pts]
    omr, sse, lam, affine = _tune_candidate(
        runner, slots, y, sst,
        polish_budget=restarts * maxfev_per_restart, polish_starts=starts)
    return lam, FitnessMetrics(omr, sse, sst, counter[0])


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


@dataclass
class GPConfig:
    height: int = 5
    pop_size: int = 30
    offspring: int = 60
    budget: int = 500_000                   # model evaluations (data passes)
    threshold: float = 1e-10
    mutation_rate: float | None = None      # default 1/(2h): ~2 entries per child
    readout: str = "trace"                  # "trace" | "registers"
    crossover_rate: float = 0.5             # fraction of offspring bred from two parents
    stagnation_gens: int = 30
    exhaustive_limit: int = 5000
    polish_maxfev: int = 160                # screening NM cap for improvements
    climb_sweeps: int = 3                   # single-entry sweeps after improvements
    final_restarts: int = 8
    final_maxfev: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.budget < self.pop_size:
            raise InputError("budget must be at least the population size")
        if self.threshold <= 0:
            raise InputError("threshold must be positive")

    def to_json(self) -> dict:
        return {"height": self.height, "pop_size": self.pop_size,
                "offspring": self.offspring, "budget": self.budget,
                "threshold": self.threshold, "mutation_rate": self.mutation_rate,
                "stagnation_gens": self.stagnation_gens, "seed": self.seed}


@dataclass
class EvolveResult:
    expression: Expr
    genome: ParseMatrix
    lam: tuple[float, float]
    metrics: FitnessMetrics
    evaluations: int
    generations: int
    converged: bool
    restarts: int = 0
    best_history: list[float] = field(default_factory=list)
    #: intercept and per-row weights of the winning linear readout
    readout: tuple[float, tuple[float, ...]] = (0.0, ())


def _register_rows_py(rows) -> tuple[int, int, int]:
    fr = f1r = f2r = -1
    for r, (op, _, _, store) in enumerate(rows):
        if op == 0:
            continue
        fr = r
        if store == 0:
            f1r = r
        elif store == 1:
            f2r = r
    return fr, f1r, f2r


def _usable_rows(rows, active, mode: str):
    if mode == "trace":
        return [r for r in range(len(rows)) if active[r]]
    return sorted({r for r in _register_rows_py(rows) if r >= 0})


def _readout_py(trace, tvalid, usable, y: np.ndarray, sst: float):
    """Python mirror of gp_fast.score_trace: (sse, intercept, coefs[h])."""
    h = trace.shape[0]
    cols = []
    idx = []
    for r in usable:
        if bool(np.all(tvalid[r])) and bool(np.all(np.isfinite(trace[r]))):
            cols.append(trace[r])
            idx.append(r)
    coefs = np.zeros(h)
    design = np.stack([np.ones_like(y)] + cols, axis=1)
    # rcond=None keeps the machine-precision cutoff: columns here can differ
    # in scale by many orders of magnitude and must not be truncated away
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    if not np.all(np.isfinite(sol)):
        return sst, 0.0, coefs
    resid = y - design @ sol
    sse = float(resid @ resid)
    if not math.isfinite(sse):
        return sst, 0.0, coefs
    for j, r in enumerate(idx):
        coefs[r] = float(sol[1 + j])
    return sse, float(sol[0]), coefs


def _screen_py(prog: RowProgram, X: np.ndarray, y: np.ndarray, sst: float,
               mode: str):
    """Reference implementation of gp_fast.screen (used when numba is absent)."""
    runs = [0]

    def run(lam):
        runs[0] += 1
        return prog.run_trace(X, lam)

    h = len(prog.rows)
    best = [WORST, (0.0, 0.0), 0.0, np.zeros(h)]

    def track(lam, got):
        trace, tvalid, active, _, _ = got
        sse, a0, coefs = _readout_py(trace, tvalid, _usable_rows(prog.rows, active, mode),
                                     y, sst)
        if sse < best[0]:
            best[:] = [sse, lam, a0, coefs]
        return sse

    got0 = run((0.0, 0.0))
    track((0.0, 0.0), got0)
    use1 = 0 in prog.slots
    use2 = 1 in prog.slots

    def pack():
        omr = best[0] / sst if math.isfinite(best[0]) else WORST
        return omr, best[0], best[1], (best[2], tuple(best[3]))

    if not prog.slots:
        omr, sse, lam, coefs = pack()
        return omr, sse, lam, coefs, True, runs[0]
    v0, ok0 = got0[3], got0[4]
    clean = bool(np.all(ok0)) and bool(np.all(np.isfinite(v0)))
    steps = {}
    for slot, lam in ((0, (1.0, 0.0)), (1, (0.0, 1.0))):
        if (slot == 0 and not use1) or (slot == 1 and not use2):
            continue
        got = run(lam)
        track(lam, got)
        v, ok = got[3], got[4]
        if clean and bool(np.all(ok)) and bool(np.all(np.isfinite(v))):
            steps[slot] = v - v0
        else:
            clean = False
    affine = False
    if clean:
        design = np.stack([np.ones_like(y), v0] + [steps[s] for s in sorted(steps)],
                          axis=1)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        beta = float(coef[1])
        if abs(beta) > 1e-12 and np.all(np.isfinite(coef)):
            lam = [0.0, 0.0]
            for j, s in enumerate(sorted(steps)):
                lam[s] = float(coef[2 + j] / beta)
            lam = tuple(lam)
            got = run(lam)
            track(lam, got)
            va, oka = got[3], got[4]
            if bool(np.all(oka)) and bool(np.all(np.isfinite(va))):
                pred = v0 + sum(lam[s] * steps[s] for s in steps)
                scale = max(1.0, float(np.max(np.abs(va))))
                affine = bool(np.max(np.abs(va - pred)) <= 1e-8 * scale)
    if not affine:
        for p1, p2 in _PROBE_LAMBDAS:
            lam = (p1 if use1 else 0.0, p2 if use2 else 0.0)
            track(lam, run(lam))
    omr, sse, lam, coefs = pack()
    return omr, sse, lam, coefs, affine, runs[0]


class _Search:
    def __init__(self, data: SampleSet, cfg: GPConfig):
        if data.values is None:
            raise InputError("data has no target values")
        self.X = np.ascontiguousarray(data.points)
        self.y = np.ascontiguousarray(data.values)
        self.n = data.n_points
        self.sst = _sst(self.y)
        if self.sst < 1e-300:
            raise DegenerateTargetError("target values are constant; R^2 undefined")
        self.cfg = cfg
        self.counter = [0]
        # genome bytes -> (omr, lam, readout coefs, affine)
        self.cache: dict[bytes, tuple] = {}
        self.best: tuple | None = None    # (omr, genome, lam, coefs, affine)

    @property
    def evaluations(self) -> int:
        return self.counter[0]

    def exhausted(self) -> bool:
        return self.counter[0] >= self.cfg.budget

    def score(self, genome: ParseMatrix, full_polish: bool = False) -> float:
        key = genome.key()
        hit = self.cache.get(key)
        if hit is not None and not full_polish:
            return hit[0]
        # refine constants only for candidates whose cheap screen already
        # rivals the best seen so far; everything else stays probe-only
        trigger = WORST if full_polish else min(
            0.1, self.best[0] * 1.5 if self.best is not None else WORST)
        if gp_fast.HAVE_NUMBA:
            rows = np.ascontiguousarray(genome.entries)
            omr, sse, l1, l2, a0, rcoefs, affine, runs = gp_fast.screen(
                rows, self.X, self.y, self.sst,
                1 if self.cfg.readout == "trace" else 0)
            self.counter[0] += int(runs)
            lam = (float(l1), float(l2))
            coefs = (float(a0), tuple(float(c) for c in rcoefs))
            run_fn = lambda lm: gp_fast.run_rows_trace(rows, self.X, lm[0], lm[1])
            slots = int(gp_fast.slots_of(rows))
        else:
            prog = RowProgram(genome)
            omr, sse, lam, coefs, affine, runs = _screen_py(
                prog, self.X, self.y, self.sst, self.cfg.readout)
            self.counter[0] += runs
            run_fn = lambda lm: prog.run_trace(self.X, lm)
            slots = (1 if 0 in prog.slots else 0) | (2 if 1 in prog.slots else 0)
        if not affine and math.isfinite(omr) and omr < trigger:
            fev = self.cfg.final_maxfev if full_polish else self.cfg.polish_maxfev
            omr, lam, coefs = self._nm_polish(run_fn, slots, lam, omr, coefs, fev,
                                              genome.entries)
        omr = float(omr)
        if hit is not None and hit[0] <= omr:
            return hit[0]
        self.cache[key] = (omr, lam, coefs, bool(affine))
        if self.best is None or omr < self.best[0]:
            self.best = (omr, genome, lam, coefs, bool(affine))
        return omr

    def _nm_polish(self, run_fn, slots_mask: int, start: tuple, omr0: float,
                   coefs0: tuple, maxfev: int, rows_src=None):
        """Nelder-Mead refinement of non-affine slot values (budget-capped)."""
        dims = 2 if slots_mask == 3 else 1
        maxfev = min(maxfev, max(0, self.cfg.budget - self.counter[0]))
        best = [omr0, start, coefs0]
        if maxfev < 10 or slots_mask == 0:
            return tuple(best)

        def lam_of(vec):
            if slots_mask == 1:
                return (float(vec[0]), 0.0)
            if slots_mask == 2:
                return (0.0, float(vec[0]))
            return (float(vec[0]), float(vec[1]))

        def measure(lam):
            self.counter[0] += 1
            trace, tvalid, active, _, _ = run_fn(lam)
            rows = [tuple(int(v) for v in row) for row in rows_src]
            usable = _usable_rows(rows, np.asarray(active), self.cfg.readout)
            sse, a0, cf = _readout_py(np.asarray(trace), np.asarray(tvalid),
                                      usable, self.y, self.sst)
            omr = sse / self.sst if math.isfinite(sse) else WORST
            if omr < best[0]:
                best[:] = [omr, lam, (a0, tuple(float(c) for c in cf))]
            return sse

        starts = [start, (2.0, -2.0)]
        per = max(10, maxfev // len(starts))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for s in starts:
                vec0 = np.array([s[0], s[1]][:dims] if slots_mask == 3
                                else [s[0] if slots_mask == 1 else s[1]], dtype=float)
                sciopt.minimize(lambda v: measure(lam_of(v)), vec0,
                                method="Nelder-Mead",
                                options={"maxfev": per, "xatol": 1e-12,
                                         "fatol": 1e-300})
        return tuple(best)


def _column_domain(col: int, d: int) -> range:
    if col == 0:
        return range(-5, 6)
    if col == 3:
        return range(-1, 2)
    return range(-5, d + 1)


def _hill_climb(search: "_Search", genome: ParseMatrix, sweeps: int) -> None:
    """First-improvement scan over all single-entry genome edits.

    Restarts the scan from the improved genome after each accepted move;
    total work is capped at `sweeps` neighborhood-sized passes. Scores are
    cached, so revisiting earlier neighbors is free.
    """
    current = genome
    cur_fit = search.score(current)
    h = current.h
    hood = sum(len(_column_domain(j, current.d)) - 1 for j in range(4)) * h
    cap = max(1, sweeps) * hood
    scanned = 0
    moved = True
    while moved and scanned < cap:
        moved = False
        for i in range(h):
            for j in range(4):
                old = int(current.entries[i, j])
                for v in _column_domain(j, current.d):
                    if v == old:
                        continue
                    a = current.entries.copy()
                    a[i, j] = v
                    fit = search.score(_pm_trusted(a, current.d))
                    scanned += 1
                    if search.exhausted() or search.best[0] <= search.cfg.threshold:
                        return
                    if fit < cur_fit:
                        current = _pm_trusted(a, current.d)
                        cur_fit = fit
                        moved = True
                        break
                if moved or scanned >= cap:
                    break
            if moved or scanned >= cap:
                break


def evolve(data: SampleSet, cfg: GPConfig,
           replay_genome: ParseMatrix | None = None) -> EvolveResult:
    """Search genome space for the best-fitting expression.

    Deterministic per cfg.seed. Small spaces are scanned exhaustively; larger
    ones run the (mu+lambda) strategy with stagnation restarts. Passing
    `replay_genome` skips the search and re-scores that genome alone.
    """
    d = data.n_dims
    search = _Search(data, cfg)

    def prune_readout(genome: ParseMatrix, lam: tuple, sse0: float):
        """Backward-eliminate readout terms that do not earn their keep.

        Re-fits the readout on the surviving rows; a term is dropped when
        removing it costs no more than a 1e-9 relative increase in SSE.
        Returns (intercept, coefs) over rows, from one final least-squares.
        """
        prog = RowProgram(genome)
        trace, tvalid, active, _, _ = prog.run_trace(data.points, lam)
        search.counter[0] += 1
        keep = [r for r in _usable_rows(prog.rows, active, cfg.readout)
                if bool(np.all(tvalid[r])) and bool(np.all(np.isfinite(trace[r])))]

        def fit(rows_kept):
            return _readout_py(trace, tvalid, rows_kept, search.y, search.sst)

        sse, a0, coefs = fit(keep)
        # a drop is free when it costs < 1e-9 relative, or when the residual
        # stays at the double-precision noise floor anyway
        budget_sse = max(max(sse, sse0) * (1.0 + 1e-9) + 1e-300,
                         1e-26 * search.sst)
        for r in sorted(keep, key=lambda r: abs(coefs[r])):
            if len(keep) == 1:
                break
            trial = [k for k in keep if k != r]
            sse_t, a0_t, coefs_t = fit(trial)
            if sse_t <= budget_sse:
                keep, sse, a0, coefs = trial, sse_t, a0_t, coefs_t
        return a0, coefs

    def finish(generations: int, restarts: int, history: list[float]) -> EvolveResult:
        if search.best is None:
            raise InputError("no candidate was evaluated (budget too small)")
        omr, genome, lam, (a0, weights), _ = search.best
        if math.isfinite(omr):
            a0, weights = prune_readout(genome, lam, omr * search.sst)
        raw: Expr = Const(float(a0))
        for coef, tree in zip(weights, decode_rows(genome)):
            if coef != 0.0 and tree is not None:
                term = Binary("times", Const(float(coef)),
                              substitute_params(tree, lam))
                raw = Binary("plus", raw, term)
        expr = simplify(raw)
        pred, valid = eval_batch(expr, data.points)
        omr_final, sse = _score_values(pred, valid, search.y, search.sst)
        # simplification must not perturb the model; keep the raw tree if it did
        if not math.isclose(omr_final, omr, rel_tol=1e-6, abs_tol=1e-12) \
                and omr_final > omr:
            expr = raw
            pred, valid = eval_batch(expr, data.points)
            omr_final, sse = _score_values(pred, valid, search.y, search.sst)
        metrics = FitnessMetrics(omr_final, sse, search.sst, search.evaluations)
        return EvolveResult(expr, genome, tuple(lam), metrics, search.evaluations,
                            generations, converged=omr_final <= cfg.threshold,
                            restarts=restarts, best_history=history,
                            readout=(float(a0), tuple(float(c) for c in weights)))

    if replay_genome is not None:
        if replay_genome.d != d:
            raise InputError("replay genome dimension does not match data")
        search.score(replay_genome, full_polish=True)
        return finish(0, 0, [])

    if search_space_size(d, cfg.height) <= cfg.exhaustive_limit:
        for genome in enumerate_genomes(d, cfg.height):
            omr = search.score(genome)
            if omr <= cfg.threshold or search.exhausted():
                break
        return finish(0, 0, [search.best[0]])

    rng = make_rng(derive_seed(cfg.seed, 0xE5))
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / (2 * cfg.height)

    def fresh_population() -> list[tuple[float, int, ParseMatrix]]:
        pop = []
        for i in range(cfg.pop_size):
            g = ParseMatrix.random(d, cfg.height, rng)
            pop.append((search.score(g), i, g))
            if search.exhausted():
                break
        pop.sort(key=lambda t: (t[0], t[1]))
        return pop

    population = fresh_population()
    history = [search.best[0]]
    generations = 0
    restarts = 0
    order = cfg.pop_size
    since_improvement = 0
    climbed_from: bytes | None = None
    h = cfg.height
    while not search.exhausted() and search.best[0] > cfg.threshold:
        generations += 1
        improved = False
        children = []
        # one batch of random draws per generation keeps the loop tight
        k = cfg.offspring
        p1 = rng.integers(0, len(population), size=k)
        do_cross = rng.random(k) < cfg.crossover_rate
        p2 = rng.integers(0, len(population), size=k)
        row_pick = rng.random((k, h)) < 0.5
        mut_mask = rng.random((k, h, 4)) < rate
        fresh = np.empty((k, h, 4), dtype=np.int64)
        fresh[:, :, 0] = rng.integers(-5, 6, size=(k, h))
        fresh[:, :, 1] = rng.integers(-5, d + 1, size=(k, h))
        fresh[:, :, 2] = rng.integers(-5, d + 1, size=(k, h))
        fresh[:, :, 3] = rng.integers(-1, 2, size=(k, h))
        many = len(population) > 1
        for i in range(k):
            base = population[p1[i]][2].entries
            if many and do_cross[i]:
                # uniform row-wise recombination: rows are whole instructions
                base = np.where(row_pick[i][:, None], base, population[p2[i]][2].entries)
            child = _pm_trusted(np.where(mut_mask[i], fresh[i], base), d)
            before = search.best[0]
            omr = search.score(child)
            children.append((omr, order, child))
            order += 1
            if search.best[0] < before:
                improved = True
            if search.exhausted() or search.best[0] <= cfg.threshold:
                break
        if improved and cfg.climb_sweeps > 0 and not search.exhausted() \
                and search.best[0] > cfg.threshold:
            # refine the new champion by local search before breeding on
            key = search.best[1].key()
            if key != climbed_from:
                _hill_climb(search, search.best[1], cfg.climb_sweeps)
                climbed_from = search.best[1].key()
        merged = sorted(population + children, key=lambda t: (t[0], t[1]))
        # truncate to the best distinct genomes; duplicates add no diversity
        population = []
        seen: set[bytes] = set()
        for item in merged:
            k = item[2].key()
            if k in seen:
                continue
            seen.add(k)
            population.append(item)
            if len(population) == cfg.pop_size:
                break
        history.append(search.best[0])
        since_improvement = 0 if improved else since_improvement + 1
        if since_improvement >= cfg.stagnation_gens and not search.exhausted():
            restarts += 1
            since_improvement = 0
            population = fresh_population()
    return finish(generations, restarts, history)


def rescore_genome(genome: ParseMatrix, data: SampleSet, cfg: GPConfig) -> EvolveResult:
    """Re-score a saved genome against data (replay path)."""
    return evolve(data, cfg, replay_genome=genome)
