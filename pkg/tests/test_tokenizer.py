import functools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnlabel.tokenizer import (best_split, canonical_tokens, load_config,
                               split_segments, strip_decorations,
                               token_sequence, expand_abbreviations)

from conftest import make_cfg

FIXTURES = [
    ("__libxyz_init", {"lib", "xyz", "init"}),
    ("IsWindowOpen", {"is", "window", "open"}),
    ("mkdirs", {"make", "directories"}),
    ("foreach", {"for", "each"}),
    ("background", {"background"}),
    ("make_smooth_colormap", {"make", "smooth", "color", "map"}),
    ("mcxRealloc", {"mcx", "realloc"}),
    ("check_audio_range", {"check", "audio", "range"}),
    ("HIDSetItemValue", {"hid", "set", "item", "value"}),
]


@pytest.mark.parametrize("name,expected", FIXTURES)
def test_canonical_fixtures(name, expected, default_cfg):
    assert canonical_tokens(name, default_cfg) == expected


def test_strip_decorations(default_cfg):
    assert strip_decorations("foo.constp", default_cfg) == "foo"
    assert strip_decorations("bar.avx2", default_cfg) == "bar"
    assert strip_decorations("qux.isra.0.cold.1", default_cfg) == "qux"
    assert strip_decorations("plain_name", default_cfg) == "plain_name"


def test_strip_is_fixpoint(default_cfg):
    for name in ("a.constp.isra.3", "sub_40.part.0", "b.lto_priv.77.avx512"):
        once = strip_decorations(name, default_cfg)
        assert strip_decorations(once, default_cfg) == once


def test_fully_stripped_name_yields_empty_set(default_cfg):
    assert token_sequence("sub_401000", default_cfg) == []
    assert canonical_tokens("sub_401000", default_cfg) == set()


def test_split_segments_camel_and_digits():
    assert split_segments("HTTPServerReply") == ["http", "server", "reply"]
    assert split_segments("x86_64timer") == ["x", "86", "64", "timer"]
    assert split_segments("parseJSON2Str") == ["parse", "json", "2", "str"]
    assert split_segments("__leading__") == ["leading"]


def test_digits_dropped_from_tokens():
    cfg = make_cfg({"crc"}, min_word_len=2)
    assert token_sequence("crc32", cfg) == ["crc"]


def test_sequence_keeps_duplicates_canonical_does_not():
    cfg = make_cfg({"get"})
    assert token_sequence("get_get", cfg) == ["get", "get"]
    assert canonical_tokens("get_get", cfg) == {"get"}


def test_abbreviations_expand_once():
    cfg = make_cfg({"file", "descriptor", "floppy"},
                   abbrev={"fd": ["file", "descriptor"],
                           "file": ["floppy"]})
    assert expand_abbreviations(["fd"], cfg) == ["file", "descriptor"]
    assert expand_abbreviations(["file"], cfg) == ["floppy"]


def test_abbreviation_override_init():
    # site-specific config where init expands to its full word
    cfg = make_cfg({"buffer", "initialization"},
                   abbrev={"init": ["initialization"], "buf": ["buffer"]})
    assert token_sequence("buf_init", cfg) == ["buffer", "initialization"]


def test_best_split_prefers_cover_then_fewer_words():
    cfg = make_cfg({"back", "ground", "background"})
    assert best_split("background", cfg) == ["background"]
    cfg = make_cfg({"for", "each", "reach"})
    assert best_split("foreach", cfg) == ["for", "each"]


def test_best_split_leftmost_longest_tie():
    cfg = make_cfg({"aa", "ab"})
    assert best_split("aab", cfg) == ["aa", "b"]


def test_best_split_residue_runs_stay_together():
    cfg = make_cfg({"open"})
    assert best_split("lkfopen", cfg) == ["lkf", "open"]
    assert best_split("zzz", cfg) == ["zzz"]


def _oracle_split(seg, words, minlen):
    @functools.lru_cache(maxsize=None)
    def go(i):
        if i == len(seg):
            return (0, 0, ())
        best = None
        for length in range(len(seg) - i, minlen - 1, -1):
            w = seg[i:i + length]
            if w in words:
                c, nw, toks = go(i + length)
                cand = (c + length, nw - 1, (("w", w),) + toks)
                if best is None or cand[:2] > best[:2]:
                    best = cand
        c, nw, toks = go(i + 1)
        cand = (c, nw, (("r", seg[i]),) + toks)
        if best is None or cand[:2] > best[:2]:
            best = cand
        return best

    out = []
    for kind, text in go(0)[2]:
        if kind == "r" and out and out[-1][0] == "r":
            out[-1] = ("r", out[-1][1] + text)
        else:
            out.append((kind, text))
    return [text for _, text in out]


ORACLE_WORDS = frozenset({"aa", "ab", "bb", "aba", "abab", "baa"})


@settings(max_examples=200, derandomize=True, deadline=None)
@given(st.text(alphabet="ab", min_size=0, max_size=10))
def test_best_split_matches_bruteforce(seg):
    cfg = make_cfg(ORACLE_WORDS)
    assert best_split(seg, cfg) == _oracle_split(seg, ORACLE_WORDS, 2)


@settings(max_examples=100, derandomize=True, deadline=None)
@given(seg=st.text(alphabet="abcdefg_0", min_size=0, max_size=16))
def test_token_sequence_total_and_lowercase(seg, default_cfg):
    toks = token_sequence(seg, default_cfg)
    for tok in toks:
        assert tok == tok.lower()
        assert tok and not tok.isdigit()


def test_min_word_len_respected():
    cfg = make_cfg({"a", "ab"}, min_word_len=2)
    # single chars never match even though the dictionary lists one
    assert best_split("aab", cfg) == ["a", "ab"]


def test_load_config_rejects_bad_abbreviation(tmp_path):
    (tmp_path / "words.txt").write_text("alpha\n")
    cfg_file = tmp_path / "tok.json"
    cfg_file.write_text(
        '{"dictionary_path": "words.txt", '
        '"abbreviations": {"x": ["Bad"]}}')
    with pytest.raises(ValueError, match="lowercase alphabetic"):
        load_config(cfg_file)


def test_load_config_rejects_empty_dictionary(tmp_path):
    (tmp_path / "words.txt").write_text("\n")
    cfg_file = tmp_path / "tok.json"
    cfg_file.write_text('{"dictionary_path": "words.txt"}')
    with pytest.raises(ValueError, match="dictionary is empty"):
        load_config(cfg_file)


def test_more_real_world_names(default_cfg):
    assert canonical_tokens("cmdline_parser_init", default_cfg) == \
        {"cmd", "line", "parser", "init"}
    assert canonical_tokens("mcxTingRelease", default_cfg) == \
        {"mcx", "ting", "release"}
