"""Regenerate the committed test fixtures.

Writes tests/fixtures/corpus200.jsonl (200 synthetic functions across 10
binaries whose features correlate with their name tokens) and
tests/fixtures/names500.txt (500 names for language model training).
Deterministic: rerunning produces byte-identical files. The last binary,
bin09, only uses names that never occur in bin00..bin08 while drawing all
tokens from the shared vocabulary, so a by-binary split has a guaranteed
unseen-name test slice.
"""

import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"

VERBS = ["get", "set", "read", "write", "open", "close", "init", "free",
         "alloc", "copy", "send", "load", "save", "find", "make", "check"]
NOUNS = ["file", "buffer", "string", "list", "node", "table", "hash",
         "socket", "packet", "header", "index", "cache", "queue", "tree",
         "map", "key", "value", "path", "name", "size", "count", "state",
         "config", "error"]
QUALS = ["fast", "safe", "local", "global", "next", "last", "deep", "wide"]
VOCAB = VERBS + NOUNS + QUALS

OP_POOL = ["mov", "lea", "add", "sub", "xor", "and", "or", "shl", "shr",
           "cmp", "test", "push", "pop", "call", "jmp", "je", "jne", "jle",
           "jg", "imul", "inc", "dec", "movzx", "movsx", "nop", "xchg",
           "neg", "not", "sar", "adc"]


def token_ops(tok):
    """Characteristic 8-opcode block for one token."""
    rng = random.Random(f"ops:{tok}")
    return [rng.choice(OP_POOL) for _ in range(8)]


def token_const(tok):
    rng = random.Random(f"const:{tok}")
    return rng.randrange(1 << 16)


def build_combos():
    """Train-pool combos (full vocab coverage) and 20 held-out ones."""
    covered = [(VERBS[i % len(VERBS)], NOUNS[i]) for i in range(len(NOUNS))]
    covered += [(VERBS[(i + 3) % len(VERBS)], NOUNS[(i * 5) % len(NOUNS)],
                 QUALS[i]) for i in range(len(QUALS))]
    rng = random.Random("combos")
    pairs = [(v, n) for v in VERBS for n in NOUNS]
    triples = [(v, n, q) for v in VERBS for n in NOUNS for q in QUALS]
    rng.shuffle(pairs)
    rng.shuffle(triples)
    rest = [c for c in pairs + triples[:200] if c not in set(covered)]
    rng.shuffle(rest)
    train_pool = covered + rest[:120 - len(covered)]
    held_out = [c for c in rest[120 - len(covered):] if c not in
                set(train_pool)][:20]
    return train_pool, held_out


def make_record(binary, name, combo, vaddr, peers, rng):
    ops = ["push", "mov", "sub"]
    for tok in combo:
        ops.extend(token_ops(tok))
    # jitter only between the epilogue and the token blocks so the
    # characteristic shingles survive intact
    ops += ["nop"] * rng.randrange(4)
    ops += ["add", "pop", "ret"]
    cond = sum(1 for op in ops if op in ("je", "jne", "jle", "jg"))
    others = [p for p in peers if p != name]
    callees = sorted(rng.sample(others, min(2, len(others))))
    size = 4 * len(ops)
    imports = sorted(f"ext_{t}{i}" for t in combo for i in (1, 2))
    consts = [token_const(t) + i for t in combo for i in (0, 1, 2)]
    rec = {
        "binary_id": binary,
        "name": name,
        "vaddr": vaddr,
        "size": size,
        "opcodes": ops,
        "callees": callees,
        "dynamic_callees": imports,
        "constants": consts + [f"{name}: done"],
        "stack_bytes": 8 * len(combo) + len(ops) % 32,
        "num_args": len(combo),
        "local_bytes": 16 * len(combo),
        "cfg_nodes": cond + 2,
        "cfg_edges": 2 * cond + 1,
    }
    return rec, size


def make_corpus():
    train_pool, held_out = build_combos()
    rng = random.Random("corpus200")
    n_cover = len(NOUNS) + len(QUALS)
    records = []
    for b in range(10):
        binary = f"bin{b:02d}"
        if b < 9:
            # full-coverage combos are pinned round-robin so every vocab
            # token occurs in bin00..bin08; the rest is sampled
            pinned = [train_pool[i] for i in range(n_cover) if i % 9 == b]
            extra = [c for c in train_pool if c not in set(pinned)]
            combos = pinned + rng.sample(extra, 20 - len(pinned))
        else:
            combos = held_out
        names = ["_".join(c) for c in combos]
        vaddr = 0x1000
        for name, combo in zip(names, combos):
            rec, size = make_record(binary, name, combo, vaddr, names, rng)
            records.append(rec)
            vaddr += size + 16
    return records


def make_names():
    rng = random.Random("names500")
    verb_w = [1.0 / (i + 1) for i in range(len(VERBS))]
    noun_w = [1.0 / (i + 1) for i in range(len(NOUNS))]
    out = []
    for _ in range(500):
        roll = rng.random()
        verb = rng.choices(VERBS, weights=verb_w)[0]
        noun = rng.choices(NOUNS, weights=noun_w)[0]
        if roll < 0.05:
            out.append(rng.choice(["main", "usage", "cleanup", "run"]))
        elif roll < 0.65:
            out.append(f"{verb}_{noun}")
        elif roll < 0.90:
            out.append(f"{verb}_{noun}_{rng.choice(QUALS)}")
        else:
            noun2 = rng.choices(NOUNS, weights=noun_w)[0]
            out.append(f"{verb}_{noun}_{noun2}")
    return out


def check(records):
    from fnlabel.corpus import load_corpus
    from fnlabel.tokenizer import canonical_tokens, load_config

    cfg = load_config()
    train_names = {r["name"] for r in records if r["binary_id"] != "bin09"}
    held_names = {r["name"] for r in records if r["binary_id"] == "bin09"}
    assert not train_names & held_names
    vocab = set(VOCAB)
    for rec in records:
        toks = canonical_tokens(rec["name"], cfg)
        assert toks == set(rec["name"].split("_")), rec["name"]
        assert toks <= vocab, rec["name"]
    got = load_corpus(FIXTURES / "corpus200.jsonl")
    assert len(got) == len(records) == 200


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    records = make_corpus()
    with open(FIXTURES / "corpus200.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(FIXTURES / "names500.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(make_names()) + "\n")
    check(records)
    print(f"wrote {FIXTURES / 'corpus200.jsonl'} and names500.txt")


if __name__ == "__main__":
    main()
