"""Ranking and set metrics for multi-label name prediction.

Rank metrics (CG, DCG, nDCG, PSDCG at k) score a ranked label list against
a ground-truth set; functions with empty ground truth are skipped there but
still feed the micro-averaged set metrics, where every predicted label on
such a point is a false positive.
"""

import logging
import math
from dataclasses import dataclass, field

from .labelspace import propensity

log = logging.getLogger(__name__)

DEFAULT_K = 5


def relevance(ranked_ids, gt):
    gt = set(gt)
    return [1 if i in gt else 0 for i in ranked_ids]


def cg_at_k(rel, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(sum(rel[:k]))


def dcg_at_k(rel, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(r / math.log2(i + 2) for i, r in enumerate(rel[:k]))


def ndcg_at_k(rel, n, k):
    """DCG normalized by the ideal DCG of an n-label ground truth.

    A point with no ground-truth labels scores 0 by convention.
    """
    if n == 0:
        return 0.0
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, n)))
    return dcg_at_k(rel, k) / ideal


def psdcg_at_k(ranked_ids, gt, ls, k):
    gt = set(gt)
    total = 0.0
    for i, lab in enumerate(ranked_ids[:k]):
        if lab in gt:
            total += 1.0 / (propensity(ls, lab) * math.log2(i + 2))
    return total


def psndcg_at_k(ranked_ids, gt, ls, k):
    """PSDCG against the best achievable on this point's own labels."""
    gt = sorted(set(gt))
    if not gt:
        return 0.0
    inv = sorted((1.0 / propensity(ls, lab) for lab in gt), reverse=True)
    ideal = sum(w / math.log2(i + 2) for i, w in enumerate(inv[:k]))
    return psdcg_at_k(ranked_ids, gt, ls, k) / ideal


@dataclass
class MicroCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, predicted, actual):
        predicted, actual = set(predicted), set(actual)
        self.tp += len(predicted & actual)
        self.fp += len(predicted - actual)
        self.fn += len(actual - predicted)


def micro_prf(counts):
    """(precision, recall, f1) from pooled counts; 0/0 ratios are 0."""
    p_den = counts.tp + counts.fp
    r_den = counts.tp + counts.fn
    p = counts.tp / p_den if p_den else 0.0
    r = counts.tp / r_den if r_den else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvalReport:
    k: int
    label_space_size: int
    n_points: int
    n_ranked_points: int
    means: dict
    micro: tuple
    unseen: "EvalReport | None" = None
    per_point: dict = field(default_factory=dict, repr=False)

    def rows(self):
        out = [(f"cg@{self.k}", self.label_space_size, self.means["cg"]),
               (f"dcg@{self.k}", self.label_space_size, self.means["dcg"]),
               (f"ndcg@{self.k}", self.label_space_size, self.means["ndcg"]),
               (f"psdcg@{self.k}", self.label_space_size,
                self.means["psdcg"]),
               ("micro_p", self.label_space_size, self.micro[0]),
               ("micro_r", self.label_space_size, self.micro[1]),
               ("micro_f1", self.label_space_size, self.micro[2])]
        if self.unseen is not None:
            out += [(f"unseen_{m}", s, v) for m, s, v in self.unseen.rows()]
        return out


def pad_ranking(ranked, ls, k):
    """Extend a short ranking to k ids by descending global frequency."""
    if len(ranked) >= k:
        return list(ranked[:k])
    out = list(ranked)
    have = set(out)
    order = sorted(range(len(ls.labels)), key=lambda i: (-ls.counts[i], i))
    for i in order:
        if len(out) == k:
            break
        if i not in have:
            out.append(i)
            have.add(i)
    return out


def _evaluate_points(model, points, embeddings, ls, k, keep_per_point):
    sums = {"cg": 0.0, "dcg": 0.0, "ndcg": 0.0, "psdcg": 0.0}
    per_point = {m: [] for m in sums} if keep_per_point else None
    counts = MicroCounts()
    ranked_points = 0
    for fid, gt in points:
        if fid not in embeddings:
            raise KeyError(f"no embedding for function {fid!r}")
        x = embeddings[fid]
        ranked = pad_ranking(model.predict(x, k), ls, k)
        counts.add(model.predict_set(x), gt)
        if not gt:
            continue
        ranked_points += 1
        rel = relevance(ranked, gt)
        vals = {"cg": cg_at_k(rel, k), "dcg": dcg_at_k(rel, k),
                "ndcg": ndcg_at_k(rel, len(gt), k),
                "psdcg": psdcg_at_k(ranked, gt, ls, k)}
        for m, v in vals.items():
            sums[m] += v
            if keep_per_point:
                per_point[m].append((fid, v))
    means = {m: (s / ranked_points if ranked_points else 0.0)
             for m, s in sums.items()}
    return EvalReport(
        k=k, label_space_size=len(ls.labels), n_points=len(points),
        n_ranked_points=ranked_points, means=means,
        micro=micro_prf(counts), per_point=per_point or {})


def evaluate(model, ground_truth, embeddings, ls, k=DEFAULT_K,
             train_names=None, fid_names=None, keep_per_point=False):
    """Score a predictor over a split.

    ground_truth maps fid to a list of label ids; train_names (with
    fid_names mapping fid to its function name) additionally carves out
    an unseen-name slice scored on its own.
    """
    if not ground_truth:
        raise ValueError("cannot evaluate an empty split")
    points = sorted(ground_truth.items())
    report = _evaluate_points(model, points, embeddings, ls, k,
                              keep_per_point)
    if train_names is not None:
        if fid_names is None:
            raise ValueError("train_names requires fid_names")
        unseen = [(f, g) for f, g in points
                  if fid_names[f] not in train_names]
        if unseen:
            report.unseen = _evaluate_points(
                model, unseen, embeddings, ls, k, keep_per_point)
        else:
            log.warning("unseen-name slice is empty; every evaluated "
                        "name also occurs in training")
    return report
