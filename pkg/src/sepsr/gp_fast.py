"""Numba kernels for the genome-search inner loop.

`screen` scores one genome on a data set. A candidate model is a linear
readout over the outputs of the genome's active rows,

    alpha + sum_r beta_r * row_r(x),

with the coefficients solved in closed form (rows whose values are invalid,
non-finite, or collinear with earlier ones are dropped). A fitted
sub-function is determined only up to the scale/shift the recovery
regression absorbs, and partial structures anywhere in the program stay
visible to selection, so this readout turns the search into a hunt for
constituent shapes rather than for scale/shift/assembly plumbing rows.

Slot coefficients (lam1, lam2) are solved exactly by joint least squares when
the final register responds affinely to them (verified against an actual
run); otherwise a fixed probe set is tried, with Nelder-Mead refinement on
the Python side for promising candidates. Every reported score derives from
an actual program run.

Everything here is optional: `gp` falls back to the NumPy reference
implementations when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a normal install here
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def run_rows_trace(rows, X, lam1, lam2):
    """Execute the row program, recording every active row's output.

    Returns (trace, tvalid, active, f, fv): per-row output values (h, n) and
    validity, an activity mask (False for skip rows), and the final f
    register with its validity.
    """
    h = rows.shape[0]
    n = X.shape[0]
    trace = np.zeros((h, n))
    tvalid = np.zeros((h, n), np.bool_)
    active = np.zeros(h, np.bool_)
    f = np.zeros(n)
    f1 = np.zeros(n)
    f2 = np.zeros(n)
    fv = np.ones(n, np.bool_)
    f1v = np.ones(n, np.bool_)
    f2v = np.ones(n, np.bool_)
    a = np.empty(n)
    av = np.empty(n, np.bool_)
    b = np.empty(n)
    bv = np.empty(n, np.bool_)
    for r in range(h):
        op = rows[r, 0]
        if op == 0:
            continue
        active[r] = True
        unary = op == -5 or op == -4 or op == -3 or op == 3 or op == 4 or op == 5
        for buf in range(2):
            if buf == 1 and unary:
                break
            code = rows[r, 1] if buf == 0 else rows[r, 2]
            if code == -5 or code == -4:
                val = lam2 if code == -5 else lam1
                if buf == 0:
                    for i in range(n):
                        a[i] = val
                        av[i] = True
                else:
                    for i in range(n):
                        b[i] = val
                        bv[i] = True
            elif code == -3:
                if buf == 0:
                    for i in range(n):
                        a[i] = f[i]
                        av[i] = fv[i]
                else:
                    for i in range(n):
                        b[i] = f[i]
                        bv[i] = fv[i]
            elif code == -2:
                if buf == 0:
                    for i in range(n):
                        a[i] = f2[i]
                        av[i] = f2v[i]
                else:
                    for i in range(n):
                        b[i] = f2[i]
                        bv[i] = f2v[i]
            elif code == -1:
                if buf == 0:
                    for i in range(n):
                        a[i] = f1[i]
                        av[i] = f1v[i]
                else:
                    for i in range(n):
                        b[i] = f1[i]
                        bv[i] = f1v[i]
            elif code == 0:
                if buf == 0:
                    for i in range(n):
                        a[i] = 1.0
                        av[i] = True
                else:
                    for i in range(n):
                        b[i] = 1.0
                        bv[i] = True
            else:
                if buf == 0:
                    for i in range(n):
                        a[i] = X[i, code - 1]
                        av[i] = True
                else:
                    for i in range(n):
                        b[i] = X[i, code - 1]
                        bv[i] = True
        if op == -5:
            for i in range(n):
                ok = a[i] >= 0.0
                trace[r, i] = np.sqrt(a[i]) if ok else np.nan
                tvalid[r, i] = av[i] and ok
        elif op == -4:
            for i in range(n):
                ok = a[i] > 0.0
                trace[r, i] = np.log(a[i]) if ok else np.nan
                tvalid[r, i] = av[i] and ok
        elif op == -3:
            for i in range(n):
                trace[r, i] = np.cos(a[i])
                tvalid[r, i] = av[i]
        elif op == 3:
            for i in range(n):
                trace[r, i] = np.sin(a[i])
                tvalid[r, i] = av[i]
        elif op == 4:
            for i in range(n):
                trace[r, i] = np.exp(a[i])
                tvalid[r, i] = av[i]
        elif op == 5:
            for i in range(n):
                trace[r, i] = a[i] * a[i]
                tvalid[r, i] = av[i]
        elif op == 1:
            for i in range(n):
                trace[r, i] = a[i] + b[i]
                tvalid[r, i] = av[i] and bv[i]
        elif op == -1:
            for i in range(n):
                trace[r, i] = a[i] - b[i]
                tvalid[r, i] = av[i] and bv[i]
        elif op == 2:
            for i in range(n):
                trace[r, i] = a[i] * b[i]
                tvalid[r, i] = av[i] and bv[i]
        else:
            for i in range(n):
                ok = np.abs(b[i]) >= 1e-300
                trace[r, i] = a[i] / b[i] if ok else np.nan
                tvalid[r, i] = av[i] and bv[i] and ok
        for i in range(n):
            f[i] = trace[r, i]
            fv[i] = tvalid[r, i]
        store = rows[r, 3]
        if store == 0:
            for i in range(n):
                f1[i] = trace[r, i]
                f1v[i] = tvalid[r, i]
        elif store == 1:
            for i in range(n):
                f2[i] = trace[r, i]
                f2v[i] = tvalid[r, i]
    return trace, tvalid, active, f, fv


@njit(cache=True)
def run_rows(rows, X, lam1, lam2):
    """Final f register and validity mask (decode-equivalent model output)."""
    trace, tvalid, active, f, fv = run_rows_trace(rows, X, lam1, lam2)
    return f, fv


@njit(cache=True)
def slots_of(rows):
    """Bitmask of coefficient slots consumed by the program (1=lam1, 2=lam2)."""
    mask = 0
    for r in range(rows.shape[0]):
        op = rows[r, 0]
        if op == 0:
            continue
        unary = op == -5 or op == -4 or op == -3 or op == 3 or op == 4 or op == 5
        for j in range(1, 3):
            if j == 2 and unary:
                break
            c = rows[r, j]
            if c == -4:
                mask |= 1
            elif c == -5:
                mask |= 2
    return mask


@njit(cache=True)
def readout_lstsq(cols, usable, y, sst):
    """Least squares of y on the usable rows of `cols` plus an intercept.

    cols is (k, n). Modified Gram-Schmidt (two passes) with drop of
    (near-)collinear columns, then coefficient recovery by back-substitution.
    Returns (sse, intercept, coefs[k]); falls back to the mean predictor on
    numerical failure.
    """
    k = cols.shape[0]
    n = cols.shape[1]
    maxq = k + 1
    q = np.zeros((maxq, n))
    rmat = np.zeros((maxq, maxq))
    src = np.full(maxq, -1, np.int64)
    inv = 1.0 / np.sqrt(n)
    for i in range(n):
        q[0, i] = inv
    rmat[0, 0] = np.sqrt(n)
    src[0] = k  # marker for the intercept column
    nq = 1
    for c in range(k):
        if not usable[c]:
            continue
        norm0 = 0.0
        for i in range(n):
            norm0 += cols[c, i] * cols[c, i]
        norm0 = np.sqrt(norm0)
        if not np.isfinite(norm0) or norm0 == 0.0:
            continue
        v = np.empty(n)
        for i in range(n):
            v[i] = cols[c, i]
        rcol = np.zeros(maxq)
        for _pass in range(2):
            for j in range(nq):
                dot = 0.0
                for i in range(n):
                    dot += q[j, i] * v[i]
                rcol[j] += dot
                for i in range(n):
                    v[i] -= dot * q[j, i]
        nrm = 0.0
        for i in range(n):
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        if not np.isfinite(nrm) or nrm <= 1e-10 * norm0:
            continue  # collinear or degenerate: drop
        for j in range(nq):
            rmat[j, nq] = rcol[j]
        rmat[nq, nq] = nrm
        for i in range(n):
            q[nq, i] = v[i] / nrm
        src[nq] = c
        nq += 1
    qy = np.zeros(maxq)
    for j in range(nq):
        dot = 0.0
        for i in range(n):
            dot += q[j, i] * y[i]
        qy[j] = dot
    coefs = np.zeros(k)
    beta = np.zeros(maxq)
    for j in range(nq - 1, -1, -1):
        acc = qy[j]
        for m in range(j + 1, nq):
            acc -= rmat[j, m] * beta[m]
        beta[j] = acc / rmat[j, j]
    for j in range(nq):
        if not np.isfinite(beta[j]):
            return sst, 0.0, np.zeros(k)
    intercept = 0.0
    for j in range(nq):
        if src[j] == k:
            intercept = beta[j]
        else:
            coefs[src[j]] = beta[j]
    # score with the recovered coefficients, not the Q-projection: this is
    # exactly the arithmetic the reported expression will redo, so badly
    # conditioned solutions earn their true (cancellation-ridden) score
    sse = 0.0
    for i in range(n):
        pred = intercept
        for c in range(k):
            if coefs[c] != 0.0:
                pred += coefs[c] * cols[c, i]
        r = y[i] - pred
        sse += r * r
    if not np.isfinite(sse):
        return sst, 0.0, np.zeros(k)
    return sse, intercept, coefs


@njit(cache=True)
def register_rows(rows):
    """Indices of the rows holding the final f, f1, f2 contents (-1: none)."""
    fr = -1
    f1r = -1
    f2r = -1
    for r in range(rows.shape[0]):
        if rows[r, 0] == 0:
            continue
        fr = r
        if rows[r, 3] == 0:
            f1r = r
        elif rows[r, 3] == 1:
            f2r = r
    return fr, f1r, f2r


@njit(cache=True)
def score_trace(trace, tvalid, active, rows, y, sst, mode):
    """Readout score for one run: (sse, intercept, coefs[h]).

    mode 0 reads out the final register contents (f, f1, f2) only; mode 1
    reads out every active row. A column participates only when valid and
    finite on every point.
    """
    h = trace.shape[0]
    n = trace.shape[1]
    usable = np.zeros(h, np.bool_)
    if mode == 0:
        fr, f1r, f2r = register_rows(rows)
        for r in (fr, f1r, f2r):
            if r >= 0:
                usable[r] = True
    else:
        for r in range(h):
            usable[r] = active[r]
    for r in range(h):
        if not usable[r]:
            continue
        for i in range(n):
            if not tvalid[r, i] or not np.isfinite(trace[r, i]):
                usable[r] = False
                break
    return readout_lstsq(trace, usable, y, sst)


_PROBES = np.array([[1.0, 1.0], [2.0, 0.5], [-1.0, 2.0], [0.5, -2.0],
                    [5.0, 1.0], [-3.0, -0.5]])


@njit(cache=True)
def screen(rows, X, y, sst, mode):
    """Score one genome; returns

    (omr, sse, lam1, lam2, intercept, coefs[h], affine_flag, n_runs).
    """
    h = rows.shape[0]
    slots = slots_of(rows)
    runs = 0
    best_sse = np.inf
    bl1 = 0.0
    bl2 = 0.0
    ba0 = 0.0
    bcoefs = np.zeros(h)

    trace, tvalid, active, v0, v0ok = run_rows_trace(rows, X, 0.0, 0.0)
    runs += 1
    s, a0, coefs = score_trace(trace, tvalid, active, rows, y, sst, mode)
    if s < best_sse:
        best_sse, ba0, bcoefs = s, a0, coefs
    if slots == 0:
        return best_sse / sst, best_sse, 0.0, 0.0, ba0, bcoefs, True, runs

    use1 = (slots & 1) != 0
    use2 = (slots & 2) != 0
    n = y.shape[0]
    clean0 = True
    for i in range(n):
        if not v0ok[i] or not np.isfinite(v0[i]):
            clean0 = False
            break
    bcol = np.zeros(n)
    ccol = np.zeros(n)
    clean1 = not use1
    clean2 = not use2
    if use1:
        tr, tv, ac, g, gok = run_rows_trace(rows, X, 1.0, 0.0)
        runs += 1
        s, a0, coefs = score_trace(tr, tv, ac, rows, y, sst, mode)
        if s < best_sse:
            best_sse, bl1, bl2, ba0, bcoefs = s, 1.0, 0.0, a0, coefs
        okrun = True
        for i in range(n):
            if not gok[i] or not np.isfinite(g[i]):
                okrun = False
                break
        if okrun and clean0:
            clean1 = True
            for i in range(n):
                bcol[i] = g[i] - v0[i]
    if use2:
        tr, tv, ac, g, gok = run_rows_trace(rows, X, 0.0, 1.0)
        runs += 1
        s, a0, coefs = score_trace(tr, tv, ac, rows, y, sst, mode)
        if s < best_sse:
            best_sse, bl1, bl2, ba0, bcoefs = s, 0.0, 1.0, a0, coefs
        okrun = True
        for i in range(n):
            if not gok[i] or not np.isfinite(g[i]):
                okrun = False
                break
        if okrun and clean0:
            clean2 = True
            for i in range(n):
                ccol[i] = g[i] - v0[i]

    affine = False
    if clean0 and clean1 and clean2:
        # joint least squares on [1, v0, bcol, ccol]: the family
        # alpha + beta*(v0 + l1*bcol + l2*ccol) spans it when beta != 0
        cols = np.zeros((3, n))
        usable = np.zeros(3, np.bool_)
        for i in range(n):
            cols[0, i] = v0[i]
        usable[0] = True
        if use1:
            for i in range(n):
                cols[1, i] = bcol[i]
            usable[1] = True
        if use2:
            for i in range(n):
                cols[2, i] = ccol[i]
            usable[2] = True
        _, _, lcoef = readout_lstsq(cols, usable, y, sst)
        beta = lcoef[0]
        if np.abs(beta) > 1e-12 and np.isfinite(beta):
            l1 = lcoef[1] / beta if use1 else 0.0
            l2 = lcoef[2] / beta if use2 else 0.0
            if np.isfinite(l1) and np.isfinite(l2):
                tr, tv, ac, g, gok = run_rows_trace(rows, X, l1, l2)
                runs += 1
                s, a0, coefs = score_trace(tr, tv, ac, rows, y, sst, mode)
                if s < best_sse:
                    best_sse, bl1, bl2, ba0, bcoefs = s, l1, l2, a0, coefs
                okrun = True
                dev = 0.0
                scale = 1.0
                for i in range(n):
                    if not gok[i] or not np.isfinite(g[i]):
                        okrun = False
                        break
                    pred = v0[i] + l1 * bcol[i] + l2 * ccol[i]
                    d = np.abs(g[i] - pred)
                    if d > dev:
                        dev = d
                    m = np.abs(g[i])
                    if m > scale:
                        scale = m
                affine = okrun and dev <= 1e-8 * scale

    if not affine:
        for p in range(_PROBES.shape[0]):
            l1 = _PROBES[p, 0] if use1 else 0.0
            l2 = _PROBES[p, 1] if use2 else 0.0
            tr, tv, ac, g, gok = run_rows_trace(rows, X, l1, l2)
            runs += 1
            s, a0, coefs = score_trace(tr, tv, ac, rows, y, sst, mode)
            if s < best_sse:
                best_sse, bl1, bl2, ba0, bcoefs = s, l1, l2, a0, coefs

    return best_sse / sst, best_sse, bl1, bl2, ba0, bcoefs, affine, runs
