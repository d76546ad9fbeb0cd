"""Engineered function features and fixed-width embeddings.

Every function gets f = [q, c]: a dense quantitative vector q of width Q
(fixed slot layout below) and a sparse signed-hash categorical vector c of
width D. Context vectors g (mean f over resolved callers and callees) and
h (mean f over the whole binary) extend it to f_hat = [f, g, h], which is
projected to an E-wide embedding by a seeded, never-materialized +-1/sqrt(E)
sign matrix. Everything is a pure function of (record, corpus, seed).

Quantitative slot layout (version 1), all raw counts, unset slots 0:

     0  size in bytes           1  instruction count
  2..9  branch-class counts (jmp, eq, signed, unsigned, flag, loop,
        call, ret)
    10  callers                11  callees
    12  dynamic callees        13  transitively reachable (BFS depth 32)
    14  cfg nodes              15  cfg edges
    16  mean degree 2E/N       17  cyclomatic complexity E-N+2
    18  stack bytes            19  heap bytes
    20  tls bytes              21  argument count
    22  local bytes            23  constants
    24  distinct opcodes
 25..32  taint register one-hot
    33  taint heap bytes       34  taint stack bytes
    35  taint arg bytes        36  taint cond jumps
    37  taint flows
"""

import hashlib
import math
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

from .kernels import minhash_sig, project_signed

FEATURE_LAYOUT_VERSION = 1

DEFAULT_Q = 512
DEFAULT_D = 1 << 18
DEFAULT_E = 512
DEFAULT_MINHASHES = 64
DEFAULT_SHINGLE = 4
REACH_DEPTH = 32

_MASK64 = (1 << 64) - 1

Q_SLOTS = {
    "size": 0, "insn_count": 1, "branch0": 2,
    "callers": 10, "callees": 11, "dynamic_callees": 12, "reachable": 13,
    "cfg_nodes": 14, "cfg_edges": 15, "mean_degree": 16, "cyclomatic": 17,
    "stack_bytes": 18, "heap_bytes": 19, "tls_bytes": 20, "num_args": 21,
    "local_bytes": 22, "constants": 23, "distinct_opcodes": 24,
    "taint_reg0": 25, "taint_heap": 33, "taint_stack": 34, "taint_arg": 35,
    "taint_cond_jumps": 36, "taint_flows": 37,
}

_JCC_EQ = frozenset(("je", "jz", "jne", "jnz"))
_JCC_SIGNED = frozenset(("jg", "jge", "jl", "jle",
                         "jng", "jnge", "jnl", "jnle"))
_JCC_UNSIGNED = frozenset(("ja", "jae", "jb", "jbe",
                           "jna", "jnae", "jnb", "jnbe"))


def _branch_class(op):
    op = op.lower()
    if op.startswith("ret"):
        return 7
    if op.startswith("call"):
        return 6
    if op.startswith("loop") or op in ("jecxz", "jrcxz", "jcxz"):
        return 5
    if op.startswith("jmp") or op == "ljmp":
        return 0
    if op in _JCC_EQ:
        return 1
    if op in _JCC_SIGNED:
        return 2
    if op in _JCC_UNSIGNED:
        return 3
    if op.startswith("j"):
        return 4
    return -1


@dataclass
class SparseVec:
    """Width-D sparse vector: strictly ascending indices, nonzero values."""
    indices: np.ndarray
    values: np.ndarray
    width: int

    @property
    def nnz(self):
        return len(self.indices)

    def to_dense(self):
        out = np.zeros(self.width)
        out[self.indices] = self.values
        return out

    @classmethod
    def empty(cls, width):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), width)

    @classmethod
    def from_counts(cls, counts, width):
        idx = np.array(sorted(k for k, v in counts.items() if v), np.int64)
        vals = np.array([counts[int(i)] for i in idx], np.float64)
        return cls(idx, vals, width)


def sparse_mean(vecs, width):
    vecs = [v for v in vecs]
    if not vecs:
        return SparseVec.empty(width)
    idx = np.concatenate([v.indices for v in vecs])
    vals = np.concatenate([v.values for v in vecs])
    uniq, inverse = np.unique(idx, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inverse, vals)
    keep = summed != 0.0
    return SparseVec(uniq[keep], summed[keep] / len(vecs), width)


@dataclass
class FunctionFeatures:
    """f = (q, c) plus context means g and h in the same layout."""
    q: np.ndarray
    c: SparseVec
    gq: np.ndarray
    gc: SparseVec
    hq: np.ndarray
    hc: SparseVec

    def __post_init__(self):
        assert self.q.shape == self.gq.shape == self.hq.shape
        assert self.c.width == self.gc.width == self.hc.width


def _h64(data):
    return int.from_bytes(
        hashlib.blake2b(data, digest_size=8).digest(), "little")


def _seed_bytes(seed):
    return (int(seed) & _MASK64).to_bytes(8, "little")


def reachable_fids(corpus, rec, depth=REACH_DEPTH):
    """Fids reachable from rec over resolved static callees, root excluded."""
    seen = {rec.fid}
    frontier = deque([(rec, 0)])
    out = set()
    while frontier:
        cur, d = frontier.popleft()
        if d == depth:
            continue
        for name in cur.callees:
            callee = corpus.resolve_callee(cur, name)
            if callee is not None and callee.fid not in seen:
                seen.add(callee.fid)
                out.add(callee.fid)
                frontier.append((callee, d + 1))
    return out


def quantitative_features(rec, corpus=None, Q=DEFAULT_Q):
    """Dense layout fill per the module docstring.

    The reachable-count slot needs the corpus for callee resolution and
    stays 0 when none is given.
    """
    q = np.zeros(Q)
    q[0] = rec.size
    q[1] = len(rec.opcodes)
    for op in rec.opcodes:
        cls = _branch_class(op)
        if cls >= 0:
            q[2 + cls] += 1
    q[10] = len(rec.callers)
    q[11] = len(rec.callees)
    q[12] = len(rec.dynamic_callees)
    if corpus is not None:
        q[13] = len(reachable_fids(corpus, rec))
    q[14] = rec.cfg_nodes
    q[15] = rec.cfg_edges
    if rec.cfg_nodes > 0:
        q[16] = 2.0 * rec.cfg_edges / rec.cfg_nodes
        q[17] = rec.cfg_edges - rec.cfg_nodes + 2
    q[18] = rec.stack_bytes
    q[19] = rec.heap_bytes
    q[20] = rec.tls_bytes
    q[21] = rec.num_args
    q[22] = rec.local_bytes
    q[23] = len(rec.constants)
    q[24] = len(set(rec.opcodes))
    for i, bit in enumerate(rec.taint.reg_onehot[:8]):
        q[25 + i] = bit
    q[33] = rec.taint.heap_bytes
    q[34] = rec.taint.stack_bytes
    q[35] = rec.taint.arg_bytes
    q[36] = rec.taint.cond_jumps
    q[37] = rec.taint.flows
    return q


def _minhash_params(seed, m):
    rng = random.Random(_h64(_seed_bytes(seed) + b"mh-params"))
    a = np.array([rng.getrandbits(64) | 1 for _ in range(m)], np.uint64)
    b = np.array([rng.getrandbits(64) for _ in range(m)], np.uint64)
    return a, b


def opcode_shingles(opcodes, seed, shingle_len=DEFAULT_SHINGLE):
    """Distinct hashed shingles; short sequences give one whole-sequence
    shingle, empty sequences none."""
    sb = _seed_bytes(seed)
    if not opcodes:
        return np.zeros(0, dtype=np.uint64)
    if len(opcodes) < shingle_len:
        windows = [opcodes]
    else:
        windows = [opcodes[i:i + shingle_len]
                   for i in range(len(opcodes) - shingle_len + 1)]
    hashes = {_h64(sb + b"sh|" + "\x1f".join(w).encode()) for w in windows}
    return np.array(sorted(hashes), dtype=np.uint64)


def minhash_signature(opcodes, seed, m=DEFAULT_MINHASHES,
                      shingle_len=DEFAULT_SHINGLE):
    shingles = opcode_shingles(opcodes, seed, shingle_len)
    if len(shingles) == 0:
        return None
    a, b = _minhash_params(seed, m)
    sig = np.zeros(m, dtype=np.uint64)
    minhash_sig(shingles, a, b, sig)
    return sig


def categorical_features(rec, D=DEFAULT_D, seed=0, corpus=None,
                         m=DEFAULT_MINHASHES, shingle_len=DEFAULT_SHINGLE):
    """Signed feature hashing of the record's categorical evidence.

    Tokens: the exact opcode-sequence digest, m MinHash band values, one
    token per constant, dynamic callee, reachable resolved function name,
    and a taint marker per dynamic callee when taint flows exist. Reach
    tokens need the corpus and are omitted without one.
    """
    if D < 1 or D & (D - 1):
        raise ValueError(f"D must be a power of two, got {D}")
    sb = _seed_bytes(seed)
    tokens = []
    tokens.append("opdig:" + hashlib.blake2b(
        "\x1f".join(rec.opcodes).encode(), digest_size=16).hexdigest())
    sig = minhash_signature(rec.opcodes, seed, m, shingle_len)
    if sig is not None:
        tokens.extend(f"mh:{i}:{int(v)}" for i, v in enumerate(sig))
    tokens.extend(f"const:{c}" for c in rec.constants)
    tokens.extend(f"dyn:{name}" for name in rec.dynamic_callees)
    if corpus is not None:
        by_fid = corpus.by_fid
        tokens.extend(sorted(
            f"reach:{by_fid[f].name}" for f in reachable_fids(corpus, rec)))
    if rec.taint.flows > 0:
        tokens.extend(f"taintdyn:{name}" for name in rec.dynamic_callees)
    counts = {}
    for tok in tokens:
        h = _h64(sb + tok.encode())
        bucket = h & (D - 1)
        sign = 1 if (h >> 63) & 1 == 0 else -1
        counts[bucket] = counts.get(bucket, 0) + sign
    return SparseVec.from_counts(counts, D)


def context_vectors(corpus, fmap):
    """(g, h) per function: g averages f over resolved callers and callees
    (zero when there are none), h over every function of the binary."""
    h_by_binary = {}
    for binary, recs in corpus.by_binary.items():
        hq = np.mean([fmap[r.fid][0] for r in recs], axis=0)
        hc = sparse_mean([fmap[r.fid][1] for r in recs],
                         fmap[recs[0].fid][1].width)
        h_by_binary[binary] = (hq, hc)
    out = {}
    for rec in corpus:
        q, c = fmap[rec.fid]
        neighbors = set()
        for name in list(rec.callers) + list(rec.callees):
            other = corpus.resolve_callee(rec, name)
            if other is not None:
                neighbors.add(other.fid)
        if neighbors:
            ordered = sorted(neighbors)
            gq = np.mean([fmap[f][0] for f in ordered], axis=0)
            gc = sparse_mean([fmap[f][1] for f in ordered], c.width)
        else:
            gq = np.zeros_like(q)
            gc = SparseVec.empty(c.width)
        hq, hc = h_by_binary[rec.binary_id]
        out[rec.fid] = (gq, gc, hq, hc)
    return out


def featurize_corpus(corpus, Q=DEFAULT_Q, D=DEFAULT_D, seed=0,
                     m=DEFAULT_MINHASHES, shingle_len=DEFAULT_SHINGLE):
    fmap = {}
    for rec in corpus:
        fmap[rec.fid] = (quantitative_features(rec, corpus, Q),
                         categorical_features(rec, D, seed, corpus, m,
                                              shingle_len))
    ctx = context_vectors(corpus, fmap)
    out = {}
    for rec in corpus:
        q, c = fmap[rec.fid]
        gq, gc, hq, hc = ctx[rec.fid]
        out[rec.fid] = FunctionFeatures(q=q, c=c, gq=gq, gc=gc, hq=hq, hc=hc)
    return out


def _part_seed(seed, tag):
    return np.uint64(_h64(_seed_bytes(seed) + b"proj" + bytes([tag])))


def embed(features, E, seed):
    """Project f_hat = [q, c, g, h] to width E.

    Each of the six segments gets its own seeded sign stream, so the
    combined map stays linear in f_hat and the projection matrix is never
    stored.
    """
    if E < 1:
        raise ValueError("embedding width must be >= 1")
    out = np.zeros(E)
    parts = ((0, features.q), (1, features.c), (2, features.gq),
             (3, features.gc), (4, features.hq), (5, features.hc))
    for tag, part in parts:
        if isinstance(part, SparseVec):
            idx, val = part.indices, part.values
        else:
            idx = np.nonzero(part)[0].astype(np.int64)
            val = part[idx]
        if len(idx):
            project_signed(idx, np.ascontiguousarray(val, np.float64),
                           E, _part_seed(seed, tag), out)
    return out


def embed_corpus(corpus, E=DEFAULT_E, Q=DEFAULT_Q, D=DEFAULT_D, seed=0,
                 m=DEFAULT_MINHASHES, shingle_len=DEFAULT_SHINGLE):
    feats = featurize_corpus(corpus, Q, D, seed, m, shingle_len)
    return {fid: embed(f, E, seed) for fid, f in sorted(feats.items())}


def save_embeddings(embeddings, path):
    """One line per function: fid then E reals, exact-round-trip floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for fid in sorted(embeddings):
            vec = embeddings[fid]
            fh.write(fid + " " + " ".join(repr(float(x)) for x in vec)
                     + "\n")


def load_external_embeddings(path, E, known_fids=None):
    """Parse an embedding file, enforcing width E for every function."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            fid, vals = parts[0], parts[1:]
            if len(vals) != E:
                raise ValueError(
                    f"line {lineno}: function {fid!r} has width "
                    f"{len(vals)}, expected {E}")
            if fid in out:
                raise ValueError(
                    f"line {lineno}: duplicate function {fid!r}")
            if known_fids is not None and fid not in known_fids:
                raise ValueError(
                    f"line {lineno}: unknown function {fid!r}")
            out[fid] = np.array([float(v) for v in vals])
    return out
