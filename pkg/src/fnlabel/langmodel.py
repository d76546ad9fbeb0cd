"""Trigram language model over label sequences, and set-to-name ordering.

Training uses modified Kneser-Ney smoothing: per-order discounts D1/D2/D3+
estimated from count-of-count statistics, continuation counts at the lower
orders, and a final interpolation with the uniform distribution over the
vocabulary plus an unknown-token class. Contexts are padded with a start
marker; the end-of-sequence transition is deliberately not scored, which
makes every extension of a sequence strictly less likely than the sequence
itself.

order_labels searches permutations of a predicted label set for the highest
scoring sequence: a greedy most-likely-next seed, then depth-first branch
and bound whose admissible bound adds, for every unplaced token, the best
transition log-probability it could ever receive.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from . import LM_FORMAT_VERSION

log = logging.getLogger(__name__)

BOS = "<s>"
UNK = "<unk>"

DEFAULT_STEP_CAP = 1_000_000
MAX_ORDER_LABELS = 32

# pruning slack: branches whose float upper bound lands a hair under the
# incumbent can still hold a mathematically tied ordering, and the
# lexicographic tie rule needs them explored
BOUND_SLACK = 1e-9
_FALLBACK_DISCOUNT = 0.75


def _discounts(counts):
    """(D1, D2, D3+) per Chen-Goodman from count-of-counts, with a flat
    0.75 fallback when the statistics are degenerate."""
    n = Counter()
    for c in counts:
        if c <= 4:
            n[c] += 1
    n1, n2, n3, n4 = n[1], n[2], n[3], n[4]
    if min(n1, n2, n3, n4) > 0:
        y = n1 / (n1 + 2 * n2)
        d1 = 1.0 - 2.0 * y * n2 / n1
        d2 = 2.0 - 3.0 * y * n3 / n2
        d3 = 3.0 - 4.0 * y * n4 / n3
        if 0.0 <= d1 <= 1.0 and 0.0 <= d2 <= 2.0 and 0.0 <= d3 <= 3.0:
            return d1, d2, d3
    return (_FALLBACK_DISCOUNT,) * 3


def _d_for(count, d):
    if count >= 3:
        return d[2]
    if count == 2:
        return d[1]
    if count == 1:
        return d[0]
    return 0.0


@dataclass
class TrigramLm:
    vocab: tuple
    tri: dict
    tri_total: dict = field(repr=False, default=None)
    tri_n: dict = field(repr=False, default=None)
    bi: dict = field(repr=False, default=None)
    bi_total: dict = field(repr=False, default=None)
    bi_n: dict = field(repr=False, default=None)
    uni: dict = field(repr=False, default=None)
    uni_total: int = 0
    uni_n: tuple = (0, 0, 0)
    d_tri: tuple = (0.0,) * 3
    d_bi: tuple = (0.0,) * 3
    d_uni: tuple = (0.0,) * 3

    def __post_init__(self):
        if self.tri_total is None:
            self._build()

    def _build(self):
        tri_total, tri_n = {}, {}
        bi = Counter()
        for (u, v, w), c in self.tri.items():
            tri_total[(u, v)] = tri_total.get((u, v), 0) + c
            ns = tri_n.setdefault((u, v), [0, 0, 0])
            ns[min(c, 3) - 1] += 1
            bi[(v, w)] += 1
        bi_total, bi_n = {}, {}
        uni = Counter()
        for (v, w), c in bi.items():
            bi_total[v] = bi_total.get(v, 0) + c
            ns = bi_n.setdefault(v, [0, 0, 0])
            ns[min(c, 3) - 1] += 1
            uni[w] += 1
        uni_n = [0, 0, 0]
        for c in uni.values():
            uni_n[min(c, 3) - 1] += 1
        self.tri_total, self.tri_n = tri_total, tri_n
        self.bi, self.bi_total, self.bi_n = dict(bi), bi_total, bi_n
        self.uni, self.uni_total = dict(uni), sum(uni.values())
        self.uni_n = tuple(uni_n)
        self.d_tri = _discounts(self.tri.values())
        self.d_bi = _discounts(self.bi.values())
        self.d_uni = _discounts(self.uni.values())

    # -- interpolated probabilities -------------------------------------
    def p_uni(self, w):
        c = self.uni.get(w, 0)
        d = self.d_uni
        gamma = (d[0] * self.uni_n[0] + d[1] * self.uni_n[1]
                 + d[2] * self.uni_n[2]) / self.uni_total
        base = gamma / (len(self.vocab) + 1)
        return max(c - _d_for(c, d), 0.0) / self.uni_total + base

    def p_bi(self, w, v):
        total = self.bi_total.get(v)
        if not total:
            return self.p_uni(w)
        c = self.bi.get((v, w), 0)
        d = self.d_bi
        n = self.bi_n[v]
        gamma = (d[0] * n[0] + d[1] * n[1] + d[2] * n[2]) / total
        return max(c - _d_for(c, d), 0.0) / total + gamma * self.p_uni(w)

    def p_tri(self, w, u, v):
        total = self.tri_total.get((u, v))
        if not total:
            return self.p_bi(w, v)
        c = self.tri.get((u, v, w), 0)
        d = self.d_tri
        n = self.tri_n[(u, v)]
        gamma = (d[0] * n[0] + d[1] * n[1] + d[2] * n[2]) / total
        return max(c - _d_for(c, d), 0.0) / total + gamma * self.p_bi(w, v)

    def map_token(self, tok):
        return tok if tok in self.uni else UNK


def train_lm(sequences):
    """Modified-KN trigram model from token sequences."""
    seqs = [list(s) for s in sequences if s]
    if not seqs:
        raise ValueError("cannot train a language model on an empty corpus")
    vocab = sorted({t for s in seqs for t in s})
    if len(vocab) < 2:
        raise ValueError(
            "language model needs at least 2 distinct tokens; smoothing "
            "statistics are undefined below that")
    tri = Counter()
    for s in seqs:
        padded = [BOS, BOS] + s
        for i in range(2, len(padded)):
            tri[(padded[i - 2], padded[i - 1], padded[i])] += 1
    return TrigramLm(vocab=tuple(vocab), tri=dict(tri))


def score(lm, sequence):
    """Sum of interpolated trigram log probabilities, start-padded."""
    if not sequence:
        raise ValueError("cannot score an empty sequence")
    u, v = BOS, BOS
    total = 0.0
    for tok in sequence:
        w = lm.map_token(tok)
        total += math.log(lm.p_tri(w, u, v))
        u, v = v, w
    return total


@dataclass
class OrderingResult:
    sequence: list
    log_score: float
    steps: int
    optimal: bool


def order_labels(lm, labels, step_cap=DEFAULT_STEP_CAP):
    """Highest-score ordering of a label set under the model.

    Exact via branch and bound unless the step cap fires, in which case
    the best sequence found so far comes back with optimal=False. Ties in
    score resolve to the lexicographically smaller sequence.
    """
    labels = sorted(set(labels))
    if not 1 <= len(labels) <= MAX_ORDER_LABELS:
        raise ValueError(
            f"can order between 1 and {MAX_ORDER_LABELS} labels, "
            f"got {len(labels)}")
    n = len(labels)
    # labels are sorted, so the integer ids used below compare the same way
    # the token strings do; tuple-of-id comparisons implement the tie rule
    toks = [lm.map_token(t) for t in labels] + [BOS]

    # transition log-probs for every context the search can reach, indexed
    # trans[a][b][t] with id n standing in for the start padding
    trans = [[[math.log(lm.p_tri(toks[t], toks[a], toks[b]))
               for t in range(n)]
              for b in range(n + 1)]
             for a in range(n + 1)]

    ctx_pairs = [(n, n)] + [(n, b) for b in range(n)]
    ctx_pairs += [(a, b) for a in range(n) for b in range(n)]
    best_in = [max(trans[a][b][t] for a, b in ctx_pairs) for t in range(n)]
    # past the second position every context is a pair of distinct labels,
    # both different from the token placed; that bound is much tighter than
    # the BOS-inclusive one
    if n >= 3:
        best_mid = [max(trans[a][b][t]
                        for a in range(n) for b in range(n)
                        if a != b and a != t and b != t)
                    for t in range(n)]
    else:
        best_mid = best_in
    total_mid = sum(best_mid)

    def greedy():
        u = v = n
        out, total, m = [], 0.0, (1 << n) - 1
        while m:
            row = trans[u][v]
            best_t, mm = -1, m
            while mm:
                low = mm & -mm
                t = low.bit_length() - 1
                mm ^= low
                if best_t < 0 or row[t] > row[best_t]:
                    best_t = t
            # strict > walks ids in ascending order, keeping ties on the
            # lexicographically smaller token
            total += row[best_t]
            out.append(best_t)
            m ^= 1 << best_t
            u, v = v, best_t
        return tuple(out), total

    best_seq, best_score = greedy()
    steps = 0
    capped = False
    # stack of (partial ids, partial score, remaining bitmask, last two
    # context ids, remaining's summed per-token bound); children pushed in
    # reverse preference order so better ones pop first
    slack = BOUND_SLACK
    stack = [((), 0.0, (1 << n) - 1, n, n, sum(best_in))]
    while stack:
        if steps >= step_cap:
            capped = True
            break
        partial, got, mask, u, v, rem_best = stack.pop()
        steps += 1
        if not mask:
            if got > best_score or (got == best_score
                                    and partial < best_seq):
                best_seq, best_score = partial, got
            continue
        cut = best_score - slack
        if got + rem_best < cut:
            continue
        depth = len(partial)
        row = trans[u][v]
        children = []
        m = mask
        while m:
            low = m & -m
            t = low.bit_length() - 1
            m ^= low
            child_score = got + row[t]
            if depth >= 2:
                child_rem = rem_best - best_mid[t]
            elif depth == 1:
                child_rem = total_mid - best_mid[partial[0]] - best_mid[t]
            else:
                child_rem = rem_best - best_in[t]
            if child_score + child_rem < cut:
                continue
            children.append((child_score, -t, child_rem))
        children.sort()
        for child_score, negt, child_rem in children:
            t = -negt
            stack.append((partial + (t,), child_score, mask ^ (1 << t),
                          v, t, child_rem))
    seq = [labels[i] for i in best_seq]
    return OrderingResult(sequence=seq, log_score=best_score,
                          steps=steps, optimal=not capped)


def render_name(sequence, convention="snake"):
    if not sequence:
        raise ValueError("cannot render an empty sequence")
    toks = [t.lower() for t in sequence]
    if convention == "snake":
        return "_".join(toks)
    if convention == "camel":
        return toks[0] + "".join(t[0].upper() + t[1:] for t in toks[1:])
    raise ValueError(f"unknown naming convention {convention!r}")


def save_lm(lm, path):
    doc = {
        "format_version": LM_FORMAT_VERSION,
        "vocab": list(lm.vocab),
        "trigrams": sorted([u, v, w, c] for (u, v, w), c in lm.tri.items()),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_lm(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != LM_FORMAT_VERSION:
        raise ValueError(
            f"unrecognized language-model format in {path!r}: "
            f"{doc.get('format_version')!r}")
    tri = {(u, v, w): int(c) for u, v, w, c in doc["trigrams"]}
    return TrigramLm(vocab=tuple(doc["vocab"]), tri=tri)
