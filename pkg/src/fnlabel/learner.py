"""Propensity-scored tree-ensemble ranker over the label space.

An ensemble of T trees is grown independently (tree t seeds its RNG with
seed ^ t, so results do not depend on scheduling). Each internal node is
built by alternating minimization: points start on a random side, each point
then moves to the side whose current top-k label ranking scores its own
labels higher under inverse-propensity weighted DCG, and side rankings are
recomputed until no point moves (or max_split_iters passes). A sparse
L1-regularized logistic separator is then fit to reproduce the assignment;
recursion follows the assignment, prediction follows the separator. Leaves
hold the propensity-weighted empirical label distribution of their points,
truncated to the top LEAF_TOP_K entries.

Labels rarer than rarity_cutoff additionally get one-vs-all linear scorers
whose positive examples are weighted by (1/p_l)^gamma; at prediction time
their tree-average score is blended as alpha*tree + (1-alpha)*sigmoid(c(x)).
"""

import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import MODEL_FORMAT_VERSION
from . import kernels
from .labelspace import LabelSpace
from .metrics import ndcg_at_k, relevance

log = logging.getLogger(__name__)

DEFAULT_T = 50
DEFAULT_MAX_LEAF = 10
DEFAULT_K = 5
DEFAULT_ALPHA = 0.8
DEFAULT_GAMMA = 30.0
DEFAULT_MAX_SPLIT_ITERS = 20
DEFAULT_RARITY_CUTOFF = 10
LEAF_TOP_K = 100
GRID_NDCG_K = 5

MODEL_MAGIC = b"FNXM"

# separator fit: fixed sweep budget, L1 strength mild enough that tiny
# nodes (down to two points) still get a working hyperplane
_SEPARATOR_L1 = 0.1
_SEPARATOR_EPOCHS = 100
_SEPARATOR_TOL = 1e-6


@dataclass(frozen=True)
class XflHyperParams:
    """Training knobs; validated on construction."""

    T: int = DEFAULT_T
    max_leaf: int = DEFAULT_MAX_LEAF
    k: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    max_split_iters: int = DEFAULT_MAX_SPLIT_ITERS
    rarity_cutoff: int = DEFAULT_RARITY_CUTOFF
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.max_leaf < 1:
            raise ValueError("max_leaf must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.max_split_iters < 1:
            raise ValueError("max_split_iters must be at least 1")
        if self.rarity_cutoff < 0:
            raise ValueError("rarity_cutoff must be non-negative")

    def to_dict(self):
        return {
            "T": self.T, "max_leaf": self.max_leaf, "k": self.k,
            "alpha": self.alpha, "gamma": self.gamma,
            "max_split_iters": self.max_split_iters,
            "rarity_cutoff": self.rarity_cutoff, "seed": self.seed,
        }


@dataclass
class Tree:
    """One routing tree in flattened form.

    Internal node j carries the sparse separator rows
    w_indptr[j]:w_indptr[j+1] of (w_idx, w_val) plus bias[j]; left/right
    hold the child node index, or -(leaf+1) to terminate at that leaf.
    Leaf distributions live in (leaf_indptr, leaf_ids, leaf_vals), each
    leaf's entries stored by descending value.
    """

    w_indptr: np.ndarray
    w_idx: np.ndarray
    w_val: np.ndarray
    bias: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_indptr: np.ndarray
    leaf_ids: np.ndarray
    leaf_vals: np.ndarray

    @property
    def n_leaves(self):
        return self.leaf_indptr.shape[0] - 1


@dataclass
class XflModel:
    trees: list
    rare: dict  # label id -> (idx array, val array, bias)
    label_space: LabelSpace
    hp: XflHyperParams
    width: int
    p_t: float = None
    format_version: int = MODEL_FORMAT_VERSION

    # adapter methods so evaluation code can treat the model as a ranker
    def predict(self, x, k=None):
        ids = [lab for lab, _ in predict(self, x)]
        return ids if k is None else ids[:k]

    def predict_set(self, x):
        return predict_set(self, x)


def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _cat(arrs, dtype):
    return np.concatenate(arrs).astype(dtype) if arrs else np.zeros(0, dtype)


def _csr_rows(indptr, ids, pts):
    """Slice rows `pts` out of a CSR (indptr, ids) pair."""
    cnt = indptr[pts + 1] - indptr[pts]
    sub_indptr = np.zeros(pts.size + 1, np.int64)
    np.cumsum(cnt, out=sub_indptr[1:])
    total = int(sub_indptr[-1])
    if total == 0:
        return sub_indptr, np.zeros(0, np.int64)
    flat = np.arange(total, dtype=np.int64)
    flat += np.repeat(indptr[pts] - sub_indptr[:-1], cnt)
    return sub_indptr, ids[flat]


def _top_positions(ids, inv_p, k, L):
    """0-based rank of each label in the side's top-k mass ranking, -1 off.

    Mass is the summed inverse propensity of a label over the side's
    points; ties rank the smaller label id first. Only labels with
    positive mass are ranked, so an empty side ranks nothing.
    """
    pos = np.full(L, -1, np.int64)
    if ids.size == 0:
        return pos
    mass = np.bincount(ids, weights=inv_p[ids], minlength=L)
    nz = np.flatnonzero(mass)
    top = nz[np.lexsort((nz, -mass[nz]))][:k]
    pos[top] = np.arange(top.size, dtype=np.int64)
    return pos


def _split_node(X, pts, sub_indptr, sub_ids, inv_p, hp, rng, L, disc):
    """Alternate assignment and ranking, then fit the separator.

    Returns (side, w_idx, w_val, bias), or None when the node is
    degenerate (all points identical, or every point settles on one side).
    """
    m = pts.size
    Xn = np.ascontiguousarray(X[pts])
    if bool(np.all(Xn == Xn[0])):
        return None
    # a proper node needs two non-empty children; redraw degenerate inits
    side = rng.integers(0, 2, size=m, dtype=np.int8)
    for _ in range(64):
        if side.min() != side.max():
            break
        side = rng.integers(0, 2, size=m, dtype=np.int8)
    else:
        return None
    cnt = np.diff(sub_indptr)
    flat_pt = np.repeat(np.arange(m, dtype=np.int64), cnt)
    for _ in range(hp.max_split_iters):
        pos_l = _top_positions(sub_ids[side[flat_pt] == 0], inv_p, hp.k, L)
        pos_r = _top_positions(sub_ids[side[flat_pt] == 1], inv_p, hp.k, L)
        changed = kernels.assign_sides(
            sub_indptr, sub_ids, inv_p, pos_l, pos_r, disc, side)
        if changed == 0:
            break
    if side.min() == side.max():
        return None
    yv = np.where(side == 1, 1.0, -1.0)
    sw = np.ones(m)
    w, b = kernels.cd_logistic(
        Xn, yv, sw, _SEPARATOR_L1, _SEPARATOR_EPOCHS, _SEPARATOR_TOL)
    nzw = np.flatnonzero(w)
    return side, nzw.astype(np.int64), w[nzw], float(b)


def _leaf_dist(pts, y_indptr, y_ids, w_point, L):
    """Propensity-weighted label fractions of a leaf, truncated descending.

    dist[l] = sum of weights of leaf points carrying l, over the total
    leaf weight; a point's weight is the largest inverse propensity among
    its labels (1 when it has none).
    """
    sub_indptr, sub_ids = _csr_rows(y_indptr, y_ids, pts)
    wts = w_point[pts]
    denom = wts.sum()
    if sub_ids.size == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    flat_w = np.repeat(wts, np.diff(sub_indptr))
    mass = np.bincount(sub_ids, weights=flat_w, minlength=L)
    nz = np.flatnonzero(mass)
    vals = mass[nz] / denom
    order = np.lexsort((nz, -vals))[:LEAF_TOP_K]
    return nz[order].astype(np.int64), vals[order]


def _grow_tree(X, y_indptr, y_ids, inv_p, w_point, hp, seed, L, disc):
    rng = np.random.Generator(np.random.PCG64(seed))
    n = X.shape[0]
    int_w = []
    int_bias = []
    int_left = []
    int_right = []
    leaf_ids = []
    leaf_vals = []
    root = None

    def place(parent, which, ref):
        nonlocal root
        if parent < 0:
            root = ref
        elif which == 0:
            int_left[parent] = ref
        else:
            int_right[parent] = ref

    # pre-order, left child first; processing order fixes node numbering
    # and the RNG draw sequence
    stack = [(np.arange(n, dtype=np.int64), -1, 0)]
    while stack:
        pts, parent, which = stack.pop()
        split = None
        if pts.size > hp.max_leaf:
            sub_indptr, sub_ids = _csr_rows(y_indptr, y_ids, pts)
            split = _split_node(
                X, pts, sub_indptr, sub_ids, inv_p, hp, rng, L, disc)
        if split is None:
            ids, vals = _leaf_dist(pts, y_indptr, y_ids, w_point, L)
            ref = -(len(leaf_ids) + 1)
            leaf_ids.append(ids)
            leaf_vals.append(vals)
            place(parent, which, ref)
            continue
        side, widx, wval, b = split
        node = len(int_bias)
        int_w.append((widx, wval))
        int_bias.append(b)
        int_left.append(0)
        int_right.append(0)
        place(parent, which, node)
        stack.append((pts[side == 1], node, 1))
        stack.append((pts[side == 0], node, 0))

    n_int = len(int_bias)
    w_indptr = np.zeros(n_int + 1, np.int64)
    for j, (widx, _) in enumerate(int_w):
        w_indptr[j + 1] = w_indptr[j] + widx.size
    leaf_indptr = np.zeros(len(leaf_ids) + 1, np.int64)
    for j, ids in enumerate(leaf_ids):
        leaf_indptr[j + 1] = leaf_indptr[j] + ids.size
    assert root is not None
    return Tree(
        w_indptr=w_indptr,
        w_idx=_cat([w for w, _ in int_w], np.int64),
        w_val=_cat([v for _, v in int_w], np.float64),
        bias=np.array(int_bias, np.float64),
        left=np.array(int_left, np.int64),
        right=np.array(int_right, np.int64),
        leaf_indptr=leaf_indptr,
        leaf_ids=_cat(leaf_ids, np.int64),
        leaf_vals=_cat(leaf_vals, np.float64),
    )


def train(X, Y, ls, hp):
    """Fit the ensemble plus rare-label scorers.

    X maps function id to its embedding, Y maps function id to its label
    ids; both must cover the same functions.
    """
    if set(X) != set(Y):
        raise ValueError("embeddings and ground truth cover different functions")
    n = len(X)
    if n < hp.max_leaf:
        raise ValueError(
            f"need at least {hp.max_leaf} training points, got {n}")
    fids = sorted(X)
    X_mat = np.ascontiguousarray(
        np.stack([np.asarray(X[f], dtype=np.float64) for f in fids]))
    L = len(ls)
    y_indptr = np.zeros(n + 1, np.int64)
    chunks = []
    for i, f in enumerate(fids):
        ids = sorted(set(Y[f]))
        if ids and (ids[0] < 0 or ids[-1] >= L):
            raise ValueError(f"label id out of range for function {f!r}")
        y_indptr[i + 1] = y_indptr[i] + len(ids)
        chunks.append(np.array(ids, np.int64))
    y_ids = (np.concatenate(chunks) if chunks else np.zeros(0, np.int64))
    inv_p = 1.0 / np.asarray(ls.propensities, dtype=np.float64)
    w_point = np.ones(n)
    for i in range(n):
        lo, hi = y_indptr[i], y_indptr[i + 1]
        if hi > lo:
            w_point[i] = inv_p[y_ids[lo:hi]].max()
    disc = 1.0 / np.log2(np.arange(hp.k, dtype=np.float64) + 2.0)

    def grow(t):
        return _grow_tree(X_mat, y_indptr, y_ids, inv_p, w_point,
                          hp, hp.seed ^ t, L, disc)

    workers = min(hp.T, os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            trees = list(ex.map(grow, range(hp.T)))
    else:
        trees = [grow(t) for t in range(hp.T)]

    pt_of = np.repeat(np.arange(n, dtype=np.int64), np.diff(y_indptr))
    rare = {}
    for lab in range(L):
        if ls.counts[lab] > hp.rarity_cutoff:
            continue
        sel = pt_of[y_ids == lab]
        if sel.size == 0:
            log.warning("label %r has no positive training points; "
                        "rare-label classifier skipped", ls.labels[lab])
            continue
        yv = np.full(n, -1.0)
        yv[sel] = 1.0
        sw = np.ones(n)
        sw[sel] = inv_p[lab] ** hp.gamma
        w, b = kernels.cd_logistic(
            X_mat, yv, sw, _SEPARATOR_L1, _SEPARATOR_EPOCHS, _SEPARATOR_TOL)
        nz = np.flatnonzero(w)
        rare[lab] = (nz.astype(np.int64), w[nz], float(b))

    return XflModel(trees=trees, rare=rare, label_space=ls, hp=hp,
                    width=X_mat.shape[1])


def _tree_scores(model, X2):
    """Average leaf distribution over all trees, one row per point."""
    n = X2.shape[0]
    L = len(model.label_space)
    s = np.zeros((n, L))
    out = np.empty(n, np.int64)
    for tree in model.trees:
        kernels.route_points(X2, tree.w_indptr, tree.w_idx, tree.w_val,
                             tree.bias, tree.left, tree.right, out)
        for i in range(n):
            lo = tree.leaf_indptr[out[i]]
            hi = tree.leaf_indptr[out[i] + 1]
            s[i, tree.leaf_ids[lo:hi]] += tree.leaf_vals[lo:hi]
    s /= len(model.trees)
    return s


def _mix_rare(model, x, s):
    alpha = model.hp.alpha
    for lab in sorted(model.rare):
        idx, val, b = model.rare[lab]
        # sequential accumulation keeps scores reproducible bit for bit
        z = b
        for i, v in zip(idx.tolist(), val.tolist()):
            z += v * float(x[i])
        s[lab] = alpha * s[lab] + (1.0 - alpha) * _sigmoid(z)


def _check_width(model, x):
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != model.width:
        got = x.shape[0] if x.ndim == 1 else x.shape
        raise ValueError(
            f"embedding width {got} does not match model width {model.width}")
    return x


def predict(model, x):
    """Full descending (label id, score) ranking for one embedding."""
    x = _check_width(model, x)
    s = _tree_scores(model, x[None, :])[0]
    _mix_rare(model, x, s)
    L = len(model.label_space)
    order = np.lexsort((np.arange(L), -s))
    return [(int(lab), float(s[lab])) for lab in order]


def predict_set(model, x):
    """Labels scoring strictly above the calibrated threshold; may be empty."""
    if model.p_t is None:
        raise ValueError("model is not calibrated; run calibrate_threshold first")
    return {lab for lab, sc in predict(model, x) if sc > model.p_t}


def _score_matrix(model, X_valid, Y_valid):
    fids = sorted(Y_valid)
    for f in fids:
        if f not in X_valid:
            raise KeyError(f"no embedding for function {f!r}")
    X2 = np.ascontiguousarray(
        np.stack([_check_width(model, X_valid[f]) for f in fids]))
    S = _tree_scores(model, X2)
    for i, f in enumerate(fids):
        _mix_rare(model, X2[i], S[i])
    return fids, S


def calibrate_threshold(model, X_valid, Y_valid):
    """Pick the micro-F1-maximizing threshold on a validation split.

    Candidates are the distinct predicted scores; ties go to the larger
    threshold (higher precision). The chosen value is stored on the model
    and clamped into the open interval (0, 1).
    """
    if not Y_valid:
        raise ValueError("cannot calibrate on an empty validation set")
    fids, S = _score_matrix(model, X_valid, Y_valid)
    G = np.zeros(S.shape, dtype=bool)
    for i, f in enumerate(fids):
        ids = list(Y_valid[f])
        if ids:
            G[i, ids] = True
    cands = np.unique(S)
    if cands.size == 1:
        c = float(cands[0])
        log.warning("all predicted scores identical (%g); "
                    "setting threshold just below it", c)
        p_t = c - np.finfo(np.float64).eps
    else:
        best_f1 = -1.0
        p_t = float(cands[0])
        for t in cands:
            P = S > t
            tp = int((P & G).sum())
            fp = int((P & ~G).sum())
            fn = int((G & ~P).sum())
            denom = 2 * tp + fp + fn
            f1 = (2.0 * tp / denom) if denom else 0.0
            if f1 >= best_f1:
                best_f1, p_t = f1, float(t)
    if p_t <= 0.0:
        p_t = float(np.nextafter(0.0, 1.0))
    elif p_t >= 1.0:
        p_t = float(np.nextafter(1.0, 0.0))
    model.p_t = p_t
    return p_t


def grid_search(hp_grid, train_data, valid_data, ls):
    """Mean-nDCG@5 model selection over a hyper-parameter grid.

    train_data and valid_data are (X, Y) pairs. The grid is walked in the
    given order; ties keep the earlier configuration.
    """
    grid = list(hp_grid)
    if not grid:
        raise ValueError("hyper-parameter grid is empty")
    Xt, Yt = train_data
    Xv, Yv = valid_data
    if not Yv:
        raise ValueError("validation split is empty")
    best = None
    best_score = -math.inf
    for hp in grid:
        model = train(Xt, Yt, ls, hp)
        fids, S = _score_matrix(model, Xv, Yv)
        total = 0.0
        for i, f in enumerate(fids):
            order = np.lexsort((np.arange(S.shape[1]), -S[i]))
            rel = relevance([int(v) for v in order[:GRID_NDCG_K]], Yv[f])
            total += ndcg_at_k(rel, len(set(Yv[f])), GRID_NDCG_K)
        score = total / len(fids) if fids else 0.0
        if score > best_score:
            best, best_score = hp, score
    return best


# ---------------------------------------------------------------------------
# serialization: magic, format version, JSON header, then raw little-endian
# arrays in the order the header lists them

def _model_arrays(model):
    arrays = {}
    for t, tree in enumerate(model.trees):
        arrays[f"t{t}.w_indptr"] = (tree.w_indptr, "<i8")
        arrays[f"t{t}.w_idx"] = (tree.w_idx, "<i8")
        arrays[f"t{t}.w_val"] = (tree.w_val, "<f8")
        arrays[f"t{t}.bias"] = (tree.bias, "<f8")
        arrays[f"t{t}.left"] = (tree.left, "<i8")
        arrays[f"t{t}.right"] = (tree.right, "<i8")
        arrays[f"t{t}.leaf_indptr"] = (tree.leaf_indptr, "<i8")
        arrays[f"t{t}.leaf_ids"] = (tree.leaf_ids, "<i8")
        arrays[f"t{t}.leaf_vals"] = (tree.leaf_vals, "<f8")
    rare_labels = sorted(model.rare)
    r_indptr = np.zeros(len(rare_labels) + 1, np.int64)
    r_idx, r_val, r_bias = [], [], []
    for j, lab in enumerate(rare_labels):
        idx, val, b = model.rare[lab]
        r_indptr[j + 1] = r_indptr[j] + idx.size
        r_idx.append(idx)
        r_val.append(val)
        r_bias.append(b)
    arrays["rare.labels"] = (np.array(rare_labels, np.int64), "<i8")
    arrays["rare.indptr"] = (r_indptr, "<i8")
    arrays["rare.idx"] = (_cat(r_idx, np.int64), "<i8")
    arrays["rare.val"] = (_cat(r_val, np.float64), "<f8")
    arrays["rare.bias"] = (np.array(r_bias, np.float64), "<f8")
    return arrays


def save_model(model, path):
    """Write the versioned binary model container."""
    ls = model.label_space
    arrays = _model_arrays(model)
    header = {
        "digest": ls.digest(),
        "hp": model.hp.to_dict(),
        "label_space": {
            "total_points": ls.total_points, "A": ls.A, "B": ls.B,
            "C": ls.C, "labels": ls.labels, "counts": ls.counts,
            "propensities": ls.propensities,
        },
        "n_trees": len(model.trees),
        "p_t": model.p_t,
        "width": model.width,
        "arrays": [[name, dt, int(arr.size)]
                   for name, (arr, dt) in arrays.items()],
    }
    hjson = json.dumps(header, sort_keys=True,
                       separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_FORMAT_VERSION, len(hjson)))
        fh.write(hjson)
        for name, (arr, dt) in arrays.items():
            fh.write(np.ascontiguousarray(arr).astype(dt).tobytes())


def read_model_header(path):
    """Header dict of a saved model, with magic and version checked."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MODEL_MAGIC:
            raise ValueError(f"not a model file: {path!r}")
        version, hlen = struct.unpack("<II", head[4:])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unrecognized model format version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        header["format_version"] = version
        return header


def load_model(path, ls=None):
    """Read a model container back; verifies the label-space digest.

    When a label space is passed it must hash to the digest the model was
    trained against.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise ValueError(f"not a model file: {path!r}")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unrecognized model format version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    lsdoc = header["label_space"]
    embedded = LabelSpace(
        labels=list(lsdoc["labels"]), counts=list(lsdoc["counts"]),
        total_points=int(lsdoc["total_points"]),
        A=float(lsdoc["A"]), B=float(lsdoc["B"]), C=float(lsdoc["C"]),
        propensities=[float(p) for p in lsdoc["propensities"]])
    if embedded.digest() != header["digest"]:
        raise ValueError("label-space digest mismatch")
    if ls is not None:
        if ls.digest() != header["digest"]:
            raise ValueError("label-space digest mismatch")
        embedded = ls

    offset = 12 + hlen
    loaded = {}
    for name, dt, size in header["arrays"]:
        arr = np.frombuffer(data, dtype=np.dtype(dt), count=size,
                            offset=offset).copy()
        offset += arr.nbytes
        loaded[name] = arr
    trees = []
    for t in range(int(header["n_trees"])):
        trees.append(Tree(
            w_indptr=loaded[f"t{t}.w_indptr"],
            w_idx=loaded[f"t{t}.w_idx"],
            w_val=loaded[f"t{t}.w_val"],
            bias=loaded[f"t{t}.bias"],
            left=loaded[f"t{t}.left"],
            right=loaded[f"t{t}.right"],
            leaf_indptr=loaded[f"t{t}.leaf_indptr"],
            leaf_ids=loaded[f"t{t}.leaf_ids"],
            leaf_vals=loaded[f"t{t}.leaf_vals"],
        ))
    rare = {}
    r_labels = loaded["rare.labels"]
    r_indptr = loaded["rare.indptr"]
    for j, lab in enumerate(r_labels):
        lo, hi = r_indptr[j], r_indptr[j + 1]
        rare[int(lab)] = (loaded["rare.idx"][lo:hi].copy(),
                          loaded["rare.val"][lo:hi].copy(),
                          float(loaded["rare.bias"][j]))
    hp = XflHyperParams(**header["hp"])
    p_t = header["p_t"]
    return XflModel(trees=trees, rare=rare, label_space=embedded, hp=hp,
                    width=int(header["width"]),
                    p_t=(None if p_t is None else float(p_t)))
