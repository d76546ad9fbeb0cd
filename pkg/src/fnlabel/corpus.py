"""Canonical on-disk corpus of function records, validation, splitting.

A corpus file holds one JSON object per line (UTF-8). Field names are fixed
by FunctionRecord; unknown fields are ignored with a warning so adapters can
carry extra data without breaking older readers.
"""

import json
import logging
import math
import random
from dataclasses import dataclass, field, asdict

log = logging.getLogger(__name__)

TAINT_REG_KINDS = 8

_REQUIRED = ("binary_id", "name", "vaddr", "size", "opcodes")
_OPTIONAL_INTS = ("stack_bytes", "heap_bytes", "tls_bytes", "num_args",
                  "local_bytes", "cfg_nodes", "cfg_edges")
_LIST_FIELDS = ("callers", "callees", "dynamic_callees", "constants")


class CorpusError(Exception):
    """Raised on unreadable/malformed corpora; carries per-line diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics) or "corpus error")


@dataclass
class TaintInfo:
    reg_onehot: list = field(default_factory=lambda: [0] * TAINT_REG_KINDS)
    heap_bytes: int = 0
    stack_bytes: int = 0
    arg_bytes: int = 0
    cond_jumps: int = 0
    flows: int = 0


@dataclass
class FunctionRecord:
    binary_id: str
    name: str
    vaddr: int
    size: int
    opcodes: list
    operand_kinds: list = None
    callers: list = field(default_factory=list)
    callees: list = field(default_factory=list)
    dynamic_callees: list = field(default_factory=list)
    constants: list = field(default_factory=list)
    stack_bytes: int = 0
    heap_bytes: int = 0
    tls_bytes: int = 0
    num_args: int = 0
    local_bytes: int = 0
    taint: TaintInfo = field(default_factory=TaintInfo)
    cfg_nodes: int = 0
    cfg_edges: int = 0

    @property
    def fid(self):
        """Identifier unique within a corpus: binary_id + symbol name."""
        return f"{self.binary_id}:{self.name}"

    def to_dict(self):
        d = asdict(self)
        if self.operand_kinds is None:
            del d["operand_kinds"]
        return d


def _record_from_dict(obj, lineno, problems):
    known = set(_REQUIRED) | set(_OPTIONAL_INTS) | set(_LIST_FIELDS) | {
        "operand_kinds", "taint"}
    for key in sorted(set(obj) - known):
        log.warning("line %d: unknown field %r ignored", lineno, key)
    for key in _REQUIRED:
        if key not in obj:
            problems.append(f"line {lineno}: missing required field {key!r}")
            return None
    name = str(obj["name"]).strip()
    if not name:
        problems.append(f"line {lineno}: empty function name")
        return None
    try:
        vaddr = int(obj["vaddr"])
        size = int(obj["size"])
    except (TypeError, ValueError):
        problems.append(f"line {lineno}: vaddr/size not integers")
        return None
    if size <= 0:
        problems.append(
            f"line {lineno}: function {name!r} has size {size}; "
            "zero-size pseudo functions are excluded")
        return None
    if vaddr < 0:
        problems.append(f"line {lineno}: negative vaddr")
        return None
    opcodes = obj["opcodes"]
    if not isinstance(opcodes, list):
        problems.append(f"line {lineno}: opcodes must be a list")
        return None
    operand_kinds = obj.get("operand_kinds")
    if operand_kinds is not None and len(operand_kinds) != len(opcodes):
        problems.append(
            f"line {lineno}: operand_kinds length {len(operand_kinds)} != "
            f"opcodes length {len(opcodes)}")
        return None
    taint = obj.get("taint") or {}
    if not isinstance(taint, dict):
        problems.append(f"line {lineno}: taint must be an object")
        return None
    reg = list(taint.get("reg_onehot", [])) or [0] * TAINT_REG_KINDS
    if len(reg) != TAINT_REG_KINDS:
        reg = (reg + [0] * TAINT_REG_KINDS)[:TAINT_REG_KINDS]
    rec = FunctionRecord(
        binary_id=str(obj["binary_id"]),
        name=name,
        vaddr=vaddr,
        size=size,
        opcodes=[str(x) for x in opcodes],
        operand_kinds=operand_kinds,
        taint=TaintInfo(
            reg_onehot=[int(x) for x in reg],
            heap_bytes=int(taint.get("heap_bytes", 0)),
            stack_bytes=int(taint.get("stack_bytes", 0)),
            arg_bytes=int(taint.get("arg_bytes", 0)),
            cond_jumps=int(taint.get("cond_jumps", 0)),
            flows=int(taint.get("flows", 0)),
        ),
    )
    for key in _LIST_FIELDS:
        setattr(rec, key, [v if key == "constants" else str(v)
                           for v in obj.get(key, [])])
    for key in _OPTIONAL_INTS:
        setattr(rec, key, int(obj.get(key, 0)))
    return rec


class Corpus:
    """Immutable bag of FunctionRecords with binary_id and fid indexes."""

    def __init__(self, records):
        self.records = list(records)
        self.by_binary = {}
        self.by_fid = {}
        for rec in self.records:
            self.by_binary.setdefault(rec.binary_id, []).append(rec)
            self.by_fid[rec.fid] = rec

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve_callee(self, rec, callee_name):
        """Record for a static callee within the same binary, else None
        (external)."""
        return self.by_fid.get(f"{rec.binary_id}:{callee_name}")


def load_corpus(path):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CorpusError([f"unreadable corpus file: {exc}"]) from exc
    problems = []
    parsed = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: malformed record: {exc.msg}")
            continue
        rec = _record_from_dict(obj, lineno, problems)
        if rec is not None:
            parsed.append((lineno, rec))
    seen = {}
    for lineno, rec in parsed:
        if rec.fid in seen:
            problems.append(
                f"line {lineno}: duplicate function identifier {rec.fid!r} "
                f"(first seen at line {seen[rec.fid]})")
        else:
            seen[rec.fid] = lineno
    if problems:
        raise CorpusError(problems)
    kept = _drop_overlaps(parsed)
    return Corpus(kept)


def _drop_overlaps(parsed):
    """Drop records whose [vaddr, vaddr+size) overlaps an already accepted
    record of the same binary (kept record = lower vaddr, then file order)."""
    by_bin = {}
    for lineno, rec in parsed:
        by_bin.setdefault(rec.binary_id, []).append((lineno, rec))
    dropped = set()
    for recs in by_bin.values():
        ordered = sorted(recs, key=lambda lr: (lr[1].vaddr, lr[0]))
        end = -1
        for lineno, rec in ordered:
            if rec.vaddr < end:
                log.warning(
                    "line %d: %s overlaps another function in %s; dropped",
                    lineno, rec.name, rec.binary_id)
                dropped.add(id(rec))
            else:
                end = rec.vaddr + rec.size
    return [rec for _, rec in parsed if id(rec) not in dropped]


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False,
                                separators=(",", ":")) + "\n")


@dataclass
class SplitSpec:
    ratios: tuple = (0.9, 0.05, 0.05)
    grouping: str = "by_function"
    seed: int = 0


def _partition_sizes(total, ratios):
    # largest-remainder apportionment; exact when ratios*total are integral
    raw = [r * total for r in ratios]
    base = [math.floor(x) for x in raw]
    short = total - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def split(corpus, spec):
    """Partition a corpus into (train, valid, test) per SplitSpec."""
    if len(corpus) == 0:
        raise ValueError("cannot split an empty corpus")
    if any(r <= 0 for r in spec.ratios) or len(spec.ratios) != 3:
        raise ValueError("split needs three positive ratios")
    if abs(sum(spec.ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios sum to {sum(spec.ratios)!r}, expected 1.0")
    if spec.grouping not in ("by_function", "by_binary"):
        raise ValueError(f"unknown grouping {spec.grouping!r}")
    rng = random.Random(spec.seed)
    n = len(corpus)
    if spec.grouping == "by_function":
        sizes = _partition_sizes(n, spec.ratios)
        idx = list(range(n))
        rng.shuffle(idx)
        parts, start = [], 0
        for s in sizes:
            chosen = sorted(idx[start:start + s])
            parts.append(Corpus([corpus.records[i] for i in chosen]))
            start += s
        return tuple(parts)
    binaries = sorted(corpus.by_binary)
    if len(binaries) < 3:
        raise ValueError(
            f"by_binary split needs >= 3 binaries, corpus has {len(binaries)}")
    rng.shuffle(binaries)
    targets = _partition_sizes(n, spec.ratios)
    filled = [0, 0, 0]
    assignment = {}
    for b in binaries:
        # relative deficit keeps small partitions from starving at desk scale
        deficits = [(targets[p] - filled[p]) / max(targets[p], 1)
                    for p in range(3)]
        p = max(range(3), key=lambda q: (deficits[q], -q))
        assignment[b] = p
        filled[p] += len(corpus.by_binary[b])
    parts = [[], [], []]
    for rec in corpus.records:
        parts[assignment[rec.binary_id]].append(rec)
    return tuple(Corpus(p) for p in parts)
