"""Bounded label spaces over canonical token sets, with propensities.

The label space L_n is the n most frequent tokens over the training names
(a token counts once per function name containing it). Each label carries a
propensity p_l = 1 / (1 + C * exp(-A * ln(N_l + B))) with
C = (ln N - 1) * (B + 1)^A, N = number of training functions; rare labels
get small propensities and therefore large inverse-propensity weights.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

from . import LABELSPACE_FORMAT_VERSION
from .tokenizer import canonical_tokens

log = logging.getLogger(__name__)

DEFAULT_A = 0.5
DEFAULT_B = 0.425


@dataclass
class LabelSpace:
    labels: list
    counts: list
    total_points: int
    A: float
    B: float
    C: float
    propensities: list
    _ids: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ids:
            self._ids = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def label_id(self, label):
        return self._ids.get(label)

    def digest(self):
        blob = json.dumps(
            {"labels": self.labels, "A": self.A, "B": self.B,
             "N": self.total_points},
            sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _propensity_value(count, A, B, C):
    if C <= 0.0:
        return 1.0
    p = 1.0 / (1.0 + C * math.exp(-A * math.log(count + B)))
    return min(max(p, 5e-324), 1.0)


def build_label_space(train, cfg, n, A=DEFAULT_A, B=DEFAULT_B):
    """Top-n token vocabulary of a training corpus with propensities."""
    if n < 1:
        raise ValueError("label space size must be >= 1")
    if len(train) == 0:
        raise ValueError("cannot build a label space from an empty corpus")
    counts = {}
    for rec in train:
        for tok in canonical_tokens(rec.name, cfg):
            counts[tok] = counts.get(tok, 0) + 1
    if n > len(counts):
        log.warning("requested %d labels but corpus has only %d distinct "
                    "tokens; keeping all", n, len(counts))
        n = len(counts)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    N = len(train)
    C = (math.log(N) - 1.0) * (B + 1.0) ** A
    if C <= 0.0:
        log.warning("degenerate propensity normalizer C=%g for N=%d; "
                    "propensities clamped to 1", C, N)
    props = [_propensity_value(c, A, B, C) for _, c in ranked]
    return LabelSpace(
        labels=[t for t, _ in ranked],
        counts=[c for _, c in ranked],
        total_points=N, A=A, B=B, C=C, propensities=props)


def propensity(ls, label_id):
    if not 0 <= label_id < len(ls.labels):
        raise IndexError(f"label id {label_id} out of range 0..{len(ls)-1}")
    return ls.propensities[label_id]


def project_ground_truth(corpus, ls, cfg):
    """Per-function sorted label-id lists (L_c intersected with L_n)."""
    out = {}
    empties = 0
    for rec in corpus:
        ids = sorted(i for tok in canonical_tokens(rec.name, cfg)
                     if (i := ls.label_id(tok)) is not None)
        if not ids:
            empties += 1
        out[rec.fid] = ids
    if empties:
        log.info("%d of %d functions project to an empty label set",
                 empties, len(corpus))
    return out


def fit_propensity_params(counts, total, A_grid=None, B_grid=None):
    """Grid-search (A, B) so the model sigmoid tracks the empirical
    popularity curve p_hat = N_l / max(N_l) over log counts."""
    if A_grid is None:
        A_grid = [round(0.1 * i, 2) for i in range(1, 16)]
    if B_grid is None:
        B_grid = [round(0.05 + 0.05 * i, 2) for i in range(0, 40)]
    peak = max(counts)
    best = None
    for A in A_grid:
        for B in B_grid:
            C = (math.log(total) - 1.0) * (B + 1.0) ** A
            sse = 0.0
            for c in counts:
                err = _propensity_value(c, A, B, C) - c / peak
                sse += err * err
            if best is None or sse < best[0] - 1e-15:
                best = (sse, A, B)
    return best[1], best[2]


def save_label_space(ls, path):
    doc = {
        "format_version": LABELSPACE_FORMAT_VERSION,
        "total_points": ls.total_points,
        "A": ls.A, "B": ls.B, "C": ls.C,
        "labels": ls.labels,
        "counts": ls.counts,
        "propensities": ls.propensities,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_label_space(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != LABELSPACE_FORMAT_VERSION:
        raise ValueError(
            f"unrecognized label-space format in {path!r}: "
            f"{doc.get('format_version')!r}")
    return LabelSpace(
        labels=list(doc["labels"]), counts=list(doc["counts"]),
        total_points=int(doc["total_points"]),
        A=float(doc["A"]), B=float(doc["B"]), C=float(doc["C"]),
        propensities=[float(p) for p in doc["propensities"]])
