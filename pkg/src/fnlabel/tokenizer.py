"""Function-name tokenization into canonical token sets.

Five stages: strip library decorations, split along separators and
camel-case boundaries, expand curated abbreviations, best-split glued
segments against a dictionary ("best split of the rod"), then collapse
into a set of lowercase alphabetic tokens.
"""

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_ALNUM_RUN = re.compile(r"[A-Za-z]+|[0-9]+")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


@dataclass(frozen=True)
class TokenizerConfig:
    patterns: tuple          # compiled decoration regexes, in config order
    abbreviation_map: dict   # token -> list of expansion tokens
    dictionary: frozenset    # lowercase words for best_split
    min_word_len: int = 2


def load_config(path=None):
    """Load a tokenizer config; the bundled default when path is None."""
    if path is None:
        root = resources.files("fnlabel").joinpath("data")
        raw = json.loads(root.joinpath("tokenizer.json").read_text("utf-8"))
        dict_text = root.joinpath(raw["dictionary_path"]).read_text("utf-8")
    else:
        path = Path(path)
        raw = json.loads(path.read_text("utf-8"))
        dict_path = Path(raw["dictionary_path"])
        if not dict_path.is_absolute():
            dict_path = path.parent / dict_path
        dict_text = dict_path.read_text("utf-8")
    abbrev = {}
    for key, expansion in raw.get("abbreviations", {}).items():
        exp = list(expansion)
        if not exp or any(not t.isalpha() or t != t.lower() for t in exp):
            raise ValueError(
                f"abbreviation {key!r}: expansions must be lowercase alphabetic")
        abbrev[key] = exp
    words = frozenset(w.strip() for w in dict_text.splitlines() if w.strip())
    if not words:
        raise ValueError("tokenizer dictionary is empty")
    patterns = tuple(re.compile(p) for p in raw.get("patterns", []))
    return TokenizerConfig(
        patterns=patterns,
        abbreviation_map=abbrev,
        dictionary=words,
        min_word_len=int(raw.get("min_word_len", 2)),
    )


def strip_decorations(name, cfg):
    """Remove decoration-pattern matches until none remain, longest first."""
    while True:
        best = None
        for pat in cfg.patterns:
            m = pat.search(name)
            if m and m.end() > m.start():
                span = m.end() - m.start()
                key = (-span, m.start())
                if best is None or key < best[0]:
                    best = (key, m)

        if best is None:
            return name
        m = best[1]
        name = name[:m.start()] + name[m.end():]


def split_segments(name):
    """Split on non-alphanumerics, digit/alpha boundaries, and camel case."""
    out = []
    for run in _ALNUM_RUN.findall(name):
        if run.isdigit():
            out.append(run)
        else:
            out.extend(p.lower() for p in _CAMEL.split(run))
    return out


def expand_abbreviations(tokens, cfg):
    out = []
    for tok in tokens:
        out.extend(cfg.abbreviation_map.get(tok, (tok,)))
    return out


def best_split(segment, cfg):
    """Best dictionary-word cover of a glued segment.

    Dynamic program over all segmentations maximizing covered characters,
    then preferring fewer (hence longer) words; at equal value the
    leftmost-longest choice wins. Characters not covered by any chosen word
    stay together as residue tokens.
    """
    n = len(segment)
    words = cfg.dictionary
    minlen = cfg.min_word_len
    # best[i] = (covered, -nwords) achievable on segment[i:], choice[i] = word
    # length taken at i (0 = skip one char)
    best = [(0, 0)] * (n + 1)
    choice = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        top = None
        pick = 0
        for length in range(n - i, minlen - 1, -1):
            if segment[i:i + length] in words:
                after = best[i + length]
                cand = (length + after[0], after[1] - 1)
                if top is None or cand > top:
                    top = cand
                    pick = length
        skip = best[i + 1]
        if top is None or skip > top:
            top = skip
            pick = 0
        best[i] = top
        choice[i] = pick
    out = []
    residue = []
    i = 0
    while i < n:
        length = choice[i]
        if length == 0:
            residue.append(segment[i])
            i += 1
        else:
            if residue:
                out.append("".join(residue))
                residue = []
            out.append(segment[i:i + length])
            i += length
    if residue:
        out.append("".join(residue))
    return out


def token_sequence(name, cfg):
    """Ordered token list for a name (duplicates kept, digits dropped)."""
    segments = split_segments(strip_decorations(name, cfg))
    out = []
    for tok in expand_abbreviations(segments, cfg):
        if tok.isdigit():
            continue
        out.extend(best_split(tok, cfg))
    return out


def canonical_tokens(name, cfg):
    """The canonical token set of a function name."""
    return set(token_sequence(name, cfg))
