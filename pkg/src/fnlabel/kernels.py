"""Hot numeric kernels with two interchangeable implementations.

Every kernel here exists twice: a loop-oriented version compiled with
numba's @njit, and a vectorized pure-numpy version. The environment
variable FNLABEL_JIT picks the path at import time:

    FNLABEL_JIT=0   force the pure-numpy implementations
    FNLABEL_JIT=1   require numba (ImportError if unavailable)
    unset / auto    use numba when importable, numpy otherwise

``USING_NUMBA`` records the outcome. Both paths implement the same
arithmetic; integer kernels agree exactly, float kernels agree to summation
order. ``benchmarks/bench_kernels.py`` times one against the other.
"""

import math
import os

import numpy as np

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_STEP = np.uint64(0xD1B54A32D192ED03)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_flag = os.environ.get("FNLABEL_JIT", "auto").strip().lower()
if _flag in ("0", "off", "false", "no"):
    _nb = None
elif _flag in ("1", "on", "true", "yes"):
    import numba as _nb
else:
    try:
        import numba as _nb
    except ImportError:
        _nb = None

USING_NUMBA = _nb is not None


def _jit(fn):
    if _nb is None:
        return fn
    return _nb.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# splitmix64-style finalizer, scalar (numba) and vectorized (numpy)

@_jit
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


# ---------------------------------------------------------------------------
# L1-regularized logistic separator, coordinate descent.
#
# Majorize-minimize updates with the fixed curvature bound 0.25 * sum(sw*x^2)
# per coordinate, soft-thresholded by l1. Margins m_i = y_i*(w.x_i + b) are
# maintained incrementally. Runs at most `epochs` sweeps, stops early when
# the largest coordinate move in a sweep is <= tol.

def _cd_logistic_py(X, y, sw, l1, epochs, tol):
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    m = np.zeros(n)
    hb = 0.0
    for i in range(n):
        hb += 0.25 * sw[i]
    hj = np.zeros(d)
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += 0.25 * sw[i] * X[i, j] * X[i, j]
        hj[j] = s
    for _ in range(epochs):
        biggest = 0.0
        for j in range(d):
            if hj[j] <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += sw[i] * (-y[i] * X[i, j]) / (1.0 + math.exp(m[i]))
            u = w[j] - g / hj[j]
            thr = l1 / hj[j]
            if u > thr:
                nw = u - thr
            elif u < -thr:
                nw = u + thr
            else:
                nw = 0.0
            delta = nw - w[j]
            if delta != 0.0:
                w[j] = nw
                for i in range(n):
                    m[i] += y[i] * X[i, j] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if hb > 0.0:
            g = 0.0
            for i in range(n):
                g += sw[i] * (-y[i]) / (1.0 + math.exp(m[i]))
            delta = -g / hb
            if delta != 0.0:
                b += delta
                for i in range(n):
                    m[i] += y[i] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if biggest <= tol:
            break
    return w, b


_cd_logistic_nb = _jit(_cd_logistic_py)


def _cd_logistic_np(X, y, sw, l1, epochs, tol):
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    m = np.zeros(n)
    swy = sw * y
    hb = 0.25 * sw.sum()
    hj = 0.25 * (sw[:, None] * X * X).sum(axis=0)
    with np.errstate(over="ignore"):
        for _ in range(epochs):
            biggest = 0.0
            for j in range(d):
                if hj[j] <= 0.0:
                    continue
                g = -(swy * X[:, j] / (1.0 + np.exp(m))).sum()
                u = w[j] - g / hj[j]
                thr = l1 / hj[j]
                nw = math.copysign(max(abs(u) - thr, 0.0), u)
                delta = nw - w[j]
                if delta != 0.0:
                    w[j] = nw
                    m += y * X[:, j] * delta
                    biggest = max(biggest, abs(delta))
            if hb > 0.0:
                g = -(swy / (1.0 + np.exp(m))).sum()
                delta = -g / hb
                if delta != 0.0:
                    b += delta
                    m += y * delta
                    biggest = max(biggest, abs(delta))
            if biggest <= tol:
                break
    return w, b


cd_logistic = _cd_logistic_nb if USING_NUMBA else _cd_logistic_np


# ---------------------------------------------------------------------------
# Tree routing. Internal nodes are flattened CSR-style: node j holds sparse
# weights w_indptr[j]:w_indptr[j+1] over (w_idx, w_val), a bias, and child
# slots where a negative value -(leaf+1) terminates at that leaf. A tree
# with no internal nodes routes everything to leaf 0. Points go right on
# score > 0.

def _route_py(X, w_indptr, w_idx, w_val, bias, left, right, out):
    n = X.shape[0]
    nn = bias.shape[0]
    for i in range(n):
        if nn == 0:
            out[i] = 0
            continue
        node = 0
        while True:
            s = bias[node]
            for t in range(w_indptr[node], w_indptr[node + 1]):
                s += w_val[t] * X[i, w_idx[t]]
            nxt = right[node] if s > 0.0 else left[node]
            if nxt < 0:
                out[i] = -nxt - 1
                break
            node = nxt


_route_nb = _jit(_route_py)


def _route_np(X, w_indptr, w_idx, w_val, bias, left, right, out):
    # same walk, one point at a time; dots vectorized per node visit
    n = X.shape[0]
    if bias.shape[0] == 0:
        out[:] = 0
        return
    for i in range(n):
        node = 0
        while True:
            lo, hi = w_indptr[node], w_indptr[node + 1]
            s = bias[node] + float(X[i, w_idx[lo:hi]] @ w_val[lo:hi])
            nxt = right[node] if s > 0.0 else left[node]
            if nxt < 0:
                out[i] = -nxt - 1
                break
            node = nxt


route_points = _route_nb if USING_NUMBA else _route_np


# ---------------------------------------------------------------------------
# MinHash signatures. Each of the m hash draws is the affine permutation
# x -> a*x + b over Z_2^64 (a odd), so min over a shingle set is an exact
# permutation-minhash. Wrapping uint64 arithmetic in both paths.

def _minhash_py(shingles, a, b, out):
    m = a.shape[0]
    ns = shingles.shape[0]
    for k in range(m):
        best = np.uint64(0xFFFFFFFFFFFFFFFF)
        for i in range(ns):
            h = a[k] * shingles[i] + b[k]
            if h < best:
                best = h
        out[k] = best


_minhash_nb = _jit(_minhash_py)


def _minhash_np(shingles, a, b, out):
    h = shingles[None, :] * a[:, None] + b[:, None]
    out[:] = h.min(axis=1)


minhash_sig = _minhash_nb if USING_NUMBA else _minhash_np


# ---------------------------------------------------------------------------
# Seeded sign projection: out[e] += val_j * s(j,e) / sqrt(E) where the sign
# s(j,e) is bit (e mod 64) of _mix64(seed + (idx_j+1)*GOLD + (e//64)*STEP).
# The +-1/sqrt(E) matrix is realized from the hash stream and never stored.

def _project_py(idx, val, E, seed, out):
    inv = 1.0 / math.sqrt(E)
    nwords = (E + 63) // 64
    for j in range(idx.shape[0]):
        base = seed + (np.uint64(idx[j]) + np.uint64(1)) * _GOLD
        v = val[j] * inv
        for t in range(nwords):
            word = _mix64(base + np.uint64(t) * _STEP)
            e0 = t * 64
            emax = min(64, E - e0)
            for bit in range(emax):
                if (word >> np.uint64(bit)) & np.uint64(1):
                    out[e0 + bit] += v
                else:
                    out[e0 + bit] -= v


_project_nb = _jit(_project_py)


def _project_np(idx, val, E, seed, out):
    if idx.shape[0] == 0:
        return
    nwords = (E + 63) // 64
    base = seed + (idx.astype(np.uint64) + np.uint64(1)) * _GOLD
    t = np.arange(nwords, dtype=np.uint64) * _STEP
    words = _mix64_np(base[:, None] + t[None, :])
    bits = np.unpackbits(words.view(np.uint8).reshape(idx.shape[0], -1),
                         axis=1, bitorder="little")[:, :E]
    signs = bits.astype(np.float64) * 2.0 - 1.0
    out += (signs * val[:, None]).sum(axis=0) / math.sqrt(E)


project_signed = _project_nb if USING_NUMBA else _project_np


# ---------------------------------------------------------------------------
# Alternating-minimization side assignment. Point label sets come in CSR
# form (y_indptr, y_ids). posL/posR give each label's 0-based position in
# the side's current top-k ranking, -1 when unranked; disc[r] = 1/log2(r+2).
# A point moves to the side whose ranking scores its labels higher
# (inverse-propensity weighted DCG gain); exact ties stay put. Returns the
# number of points that moved.

def _assign_py(y_indptr, y_ids, inv_p, posL, posR, disc, side):
    changed = 0
    n = y_indptr.shape[0] - 1
    for i in range(n):
        gl = 0.0
        gr = 0.0
        for t in range(y_indptr[i], y_indptr[i + 1]):
            lab = y_ids[t]
            pl = posL[lab]
            if pl >= 0:
                gl += inv_p[lab] * disc[pl]
            pr = posR[lab]
            if pr >= 0:
                gr += inv_p[lab] * disc[pr]
        if gl > gr:
            if side[i] != 0:
                side[i] = 0
                changed += 1
        elif gr > gl:
            if side[i] != 1:
                side[i] = 1
                changed += 1
    return changed


_assign_nb = _jit(_assign_py)


def _assign_np(y_indptr, y_ids, inv_p, posL, posR, disc, side):
    n = y_indptr.shape[0] - 1
    if y_ids.shape[0] == 0:
        return 0
    gain = np.where(posL >= 0, inv_p * disc[np.clip(posL, 0, None)], 0.0)
    gl_flat = gain[y_ids]
    gain = np.where(posR >= 0, inv_p * disc[np.clip(posR, 0, None)], 0.0)
    gr_flat = gain[y_ids]
    counts = np.diff(y_indptr)
    starts = y_indptr[:-1]
    gl = np.zeros(n)
    gr = np.zeros(n)
    nz = counts > 0
    gl[nz] = np.add.reduceat(gl_flat, starts[nz])
    gr[nz] = np.add.reduceat(gr_flat, starts[nz])
    want = np.where(gl > gr, 0, np.where(gr > gl, 1, side)).astype(side.dtype)
    changed = int((want != side).sum())
    side[:] = want
    return changed


assign_sides = _assign_nb if USING_NUMBA else _assign_np


# kernel name -> (jitted impl or None, numpy impl); the benchmark walks this
PAIRS = {
    "cd_logistic": (_cd_logistic_nb if USING_NUMBA else None, _cd_logistic_np),
    "route_points": (_route_nb if USING_NUMBA else None, _route_np),
    "minhash_sig": (_minhash_nb if USING_NUMBA else None, _minhash_np),
    "project_signed": (_project_nb if USING_NUMBA else None, _project_np),
    "assign_sides": (_assign_nb if USING_NUMBA else None, _assign_np),
}


def warmup():
    """Trigger JIT compilation of every kernel on toy inputs."""
    X = np.zeros((2, 3))
    cd_logistic(X, np.array([1.0, -1.0]), np.ones(2), 0.1, 2, 1e-6)
    out = np.zeros(2, dtype=np.int64)
    route_points(X, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                 np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64),
                 np.zeros(0, dtype=np.int64), out)
    sig = np.zeros(4, dtype=np.uint64)
    minhash_sig(np.arange(3, dtype=np.uint64),
                np.arange(1, 9, 2, dtype=np.uint64),
                np.arange(4, dtype=np.uint64), sig)
    acc = np.zeros(8)
    project_signed(np.arange(2, dtype=np.int64), np.ones(2), 8,
                   np.uint64(7), acc)
    side = np.zeros(2, dtype=np.int8)
    assign_sides(np.array([0, 1, 2], dtype=np.int64),
                 np.zeros(2, dtype=np.int64), np.ones(1),
                 np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
                 np.ones(5), side)
