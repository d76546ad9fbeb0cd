import json
import re

import pytest

from fnlabel.corpus import Corpus, FunctionRecord
from fnlabel.tokenizer import TokenizerConfig, load_config


@pytest.fixture(scope="session")
def default_cfg():
    return load_config()


def make_cfg(words, abbrev=None, patterns=(), min_word_len=2):
    return TokenizerConfig(
        patterns=tuple(re.compile(p) for p in patterns),
        abbreviation_map=dict(abbrev or {}),
        dictionary=frozenset(words),
        min_word_len=min_word_len)


def record_dict(name, binary="b0", vaddr=0x1000, size=16, **kw):
    d = {"binary_id": binary, "name": name, "vaddr": vaddr, "size": size,
         "opcodes": ["push", "mov", "ret"]}
    d.update(kw)
    return d


def write_corpus_file(path, dicts):
    with open(path, "w", encoding="utf-8") as fh:
        for d in dicts:
            fh.write(json.dumps(d) + "\n")
    return path


def corpus_of_names(names, binary="b0"):
    recs = [FunctionRecord(binary_id=binary, name=n, vaddr=0x1000 + 32 * i,
                           size=16, opcodes=["ret"])
            for i, n in enumerate(names)]
    return Corpus(recs)
