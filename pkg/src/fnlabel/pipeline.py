"""End-to-end orchestration with content-addressed artifact reuse.

Stages run in dependency order: split, labelspace, featurize, lm, train
(which also calibrates the threshold on the validation split), predict,
evaluate, names. Each stage derives a key from the hashes of its input
files plus its parameters; when the key matches the previous run and the
outputs still exist, the stage is skipped. Randomized stages never consume
the top-level seed directly; per-stage seeds are hashed from (seed, stage
name) so adding or removing a stage cannot shift another stage's stream.
"""

import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from . import langmodel
from . import learner
from .featurizer import (DEFAULT_D, DEFAULT_E, embed_corpus,
                         load_external_embeddings, save_embeddings)
from .labelspace import (DEFAULT_A, DEFAULT_B, build_label_space,
                         load_label_space, project_ground_truth,
                         save_label_space)
from .metrics import evaluate
from .tokenizer import load_config, token_sequence

log = logging.getLogger(__name__)

DEFAULT_N_LABELS = 512
DEFAULT_K = 5


class PipelineError(Exception):
    """A stage failed; the message carries the stage name."""


@dataclass
class PipelineConfig:
    corpus: str = None
    out_dir: str = None
    n_labels: int = DEFAULT_N_LABELS
    A: float = DEFAULT_A
    B: float = DEFAULT_B
    E: int = DEFAULT_E
    D: int = DEFAULT_D
    k: int = DEFAULT_K
    seed: int = 0
    ratios: tuple = (0.9, 0.05, 0.05)
    grouping: str = "by_function"
    hp: dict = field(default_factory=dict)
    convention: str = "snake"
    tokenizer_config: str = None
    labelspace_path: str = None
    model_path: str = None
    lm_path: str = None


_CONFIG_FIELDS = {
    "corpus", "out_dir", "n_labels", "A", "B", "E", "D", "k", "seed",
    "ratios", "grouping", "hp", "convention", "tokenizer_config",
    "labelspace_path", "model_path", "lm_path",
}


def load_pipeline_config(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path!r} must hold a JSON object")
    known = {}
    for key, value in doc.items():
        if key not in _CONFIG_FIELDS:
            log.warning("unknown config field %r ignored", key)
            continue
        known[key] = value
    if "ratios" in known:
        known["ratios"] = tuple(known["ratios"])
    return PipelineConfig(**known)


def stage_seed(seed, stage):
    """Stable per-stage seed derived from the top-level one."""
    h = hashlib.blake2b(f"{seed}:{stage}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(stage, params, inputs):
    doc = {"stage": stage, "params": params,
           "inputs": {name: _file_hash(p) for name, p in inputs.items()}}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"stage {name!r}: {exc}") from exc


class _Workspace:
    """Tracks stage keys in out_dir/meta.json."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta_path = self.dir / "meta.json"
        if self.meta_path.exists():
            self.meta = json.loads(self.meta_path.read_text(encoding="utf-8"))
        else:
            self.meta = {}

    def fresh(self, stage, key, outputs):
        entry = self.meta.get(stage)
        if entry and entry.get("key") == key \
                and all(Path(p).exists() for p in outputs):
            log.info("stage %s: up to date, skipped", stage)
            return False
        return True

    def done(self, stage, key, outputs):
        self.meta[stage] = {"key": key, "outputs": [str(p) for p in outputs]}
        self.meta_path.write_text(
            json.dumps(self.meta, sort_keys=True, indent=1) + "\n",
            encoding="utf-8")
        log.info("stage %s: done", stage)


def _check_config(cfg):
    if not cfg.corpus:
        raise ValueError("corpus path missing from config")
    if not Path(cfg.corpus).exists():
        raise ValueError(f"corpus file {cfg.corpus!r} does not exist")
    if not cfg.out_dir:
        raise ValueError("out_dir missing from config")
    if cfg.convention not in ("snake", "camel"):
        raise ValueError(f"unknown naming convention {cfg.convention!r}")


def _tok_cfg(cfg):
    return load_config(cfg.tokenizer_config)


def _tok_cfg_tag(cfg):
    if cfg.tokenizer_config:
        return _file_hash(cfg.tokenizer_config)
    return "builtin"


def run_pipeline(cfg):
    """Execute all stages; returns 0, or 1 after a stage-qualified error."""
    try:
        _run_stages(cfg)
        return 0
    except PipelineError as exc:
        log.error("%s", exc)
        return 1


def _run_stages(cfg):
    with _stage("config"):
        _check_config(cfg)
        ws = _Workspace(cfg.out_dir)
    out = ws.dir
    parts = ("train", "valid", "test")
    split_paths = {p: out / f"split.{p}.jsonl" for p in parts}
    emb_paths = {p: out / f"embeddings.{p}.txt" for p in parts}
    ls_path = Path(cfg.labelspace_path or out / "labelspace.json")
    lm_path = Path(cfg.lm_path or out / "lm.json")
    model_path = Path(cfg.model_path or out / "model.bin")
    rankings_path = out / "rankings.tsv"
    report_path = out / "report.tsv"
    names_path = out / "names.tsv"

    with _stage("split"):
        seed = stage_seed(cfg.seed, "split")
        key = _key("split", {"ratios": list(cfg.ratios),
                             "grouping": cfg.grouping, "seed": seed},
                   {"corpus": cfg.corpus})
        outs = [split_paths[p] for p in parts]
        if ws.fresh("split", key, outs):
            full = corpus_mod.load_corpus(cfg.corpus)
            spec = corpus_mod.SplitSpec(ratios=cfg.ratios,
                                        grouping=cfg.grouping, seed=seed)
            for part, sub in zip(parts, corpus_mod.split(full, spec)):
                corpus_mod.save_corpus(sub, split_paths[part])
            ws.done("split", key, outs)

    with _stage("labelspace"):
        key = _key("labelspace",
                   {"n": cfg.n_labels, "A": cfg.A, "B": cfg.B,
                    "tokenizer": _tok_cfg_tag(cfg)},
                   {"train": split_paths["train"]})
        if ws.fresh("labelspace", key, [ls_path]):
            train_c = corpus_mod.load_corpus(split_paths["train"])
            ls = build_label_space(train_c, _tok_cfg(cfg), cfg.n_labels,
                                   A=cfg.A, B=cfg.B)
            save_label_space(ls, ls_path)
            ws.done("labelspace", key, [ls_path])

    with _stage("featurize"):
        seed = stage_seed(cfg.seed, "featurize")
        key = _key("featurize", {"E": cfg.E, "D": cfg.D, "seed": seed},
                   {"corpus": cfg.corpus,
                    **{p: split_paths[p] for p in parts}})
        outs = [emb_paths[p] for p in parts]
        if ws.fresh("featurize", key, outs):
            full = corpus_mod.load_corpus(cfg.corpus)
            embs = embed_corpus(full, E=cfg.E, D=cfg.D, seed=seed)
            for part in parts:
                sub = corpus_mod.load_corpus(split_paths[part])
                keep = {rec.fid for rec in sub}
                save_embeddings({f: embs[f] for f in keep}, emb_paths[part])
            ws.done("featurize", key, outs)

    with _stage("lm"):
        key = _key("lm", {"tokenizer": _tok_cfg_tag(cfg)},
                   {"train": split_paths["train"]})
        if ws.fresh("lm", key, [lm_path]):
            train_c = corpus_mod.load_corpus(split_paths["train"])
            tok = _tok_cfg(cfg)
            seqs = [token_sequence(rec.name, tok) for rec in train_c]
            lm = langmodel.train_lm(seqs)
            langmodel.save_lm(lm, lm_path)
            ws.done("lm", key, [lm_path])

    with _stage("train"):
        seed = stage_seed(cfg.seed, "train")
        hp_dict = {"seed": seed, **cfg.hp}
        key = _key("train", {"hp": hp_dict, "tokenizer": _tok_cfg_tag(cfg)},
                   {"labelspace": ls_path,
                    "train_corpus": split_paths["train"],
                    "valid_corpus": split_paths["valid"],
                    "emb_train": emb_paths["train"],
                    "emb_valid": emb_paths["valid"]})
        if ws.fresh("train", key, [model_path]):
            ls = load_label_space(ls_path)
            tok = _tok_cfg(cfg)
            hp = learner.XflHyperParams(**hp_dict)
            train_c = corpus_mod.load_corpus(split_paths["train"])
            valid_c = corpus_mod.load_corpus(split_paths["valid"])
            Y_train = project_ground_truth(train_c, ls, tok)
            Y_valid = project_ground_truth(valid_c, ls, tok)
            X_train = load_external_embeddings(emb_paths["train"], cfg.E)
            X_valid = load_external_embeddings(emb_paths["valid"], cfg.E)
            model = learner.train(X_train, Y_train, ls, hp)
            learner.calibrate_threshold(model, X_valid, Y_valid)
            learner.save_model(model, model_path)
            ws.done("train", key, [model_path])

    with _stage("predict"):
        key = _key("predict", {"k": cfg.k},
                   {"model": model_path, "emb_test": emb_paths["test"]})
        if ws.fresh("predict", key, [rankings_path]):
            model = learner.load_model(model_path)
            X_test = load_external_embeddings(emb_paths["test"], cfg.E)
            write_rankings(model, X_test, cfg.k, rankings_path)
            ws.done("predict", key, [rankings_path])

    with _stage("evaluate"):
        key = _key("evaluate", {"k": cfg.k, "tokenizer": _tok_cfg_tag(cfg)},
                   {"model": model_path,
                    "emb_test": emb_paths["test"],
                    "test_corpus": split_paths["test"],
                    "train_corpus": split_paths["train"]})
        if ws.fresh("evaluate", key, [report_path]):
            model = learner.load_model(model_path)
            ls = model.label_space
            tok = _tok_cfg(cfg)
            test_c = corpus_mod.load_corpus(split_paths["test"])
            train_c = corpus_mod.load_corpus(split_paths["train"])
            Y_test = project_ground_truth(test_c, ls, tok)
            X_test = load_external_embeddings(emb_paths["test"], cfg.E)
            report = evaluate(
                model, Y_test, X_test, ls, k=cfg.k,
                train_names={rec.name for rec in train_c},
                fid_names={rec.fid: rec.name for rec in test_c})
            write_report(report, report_path)
            ws.done("evaluate", key, [report_path])

    with _stage("names"):
        key = _key("names", {"convention": cfg.convention, "k": cfg.k},
                   {"model": model_path, "lm": lm_path,
                    "emb_test": emb_paths["test"]})
        if ws.fresh("names", key, [names_path]):
            model = learner.load_model(model_path)
            lm = langmodel.load_lm(lm_path)
            X_test = load_external_embeddings(emb_paths["test"], cfg.E)
            write_names(model, lm, X_test, cfg.convention, cfg.k, names_path)
            ws.done("names", key, [names_path])


def _pair_text(ls, ranking, k):
    return "\t".join(f"{ls.labels[lab]}:{score!r}"
                     for lab, score in ranking[:k])


def write_rankings(model, X, k, path):
    """Tab separated: function id, then the top-k label:score pairs."""
    ls = model.label_space
    with open(path, "w", encoding="utf-8") as fh:
        for fid in sorted(X):
            ranking = learner.predict(model, X[fid])
            fh.write(f"{fid}\t{_pair_text(ls, ranking, k)}\n")


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        for metric, size, value in report.rows():
            fh.write(f"{metric}\t{size}\t{value!r}\n")


def write_names(model, lm, X, convention, k, path):
    """Synthesized name plus ranked labels per function.

    Labels above the calibrated threshold (at most the LM ordering cap)
    are ordered by the language model and rendered; functions with no
    label above threshold get an empty name.
    """
    if model.p_t is None:
        raise ValueError(
            "model is not calibrated; run calibrate_threshold first")
    ls = model.label_space
    with open(path, "w", encoding="utf-8") as fh:
        for fid in sorted(X):
            ranking = learner.predict(model, X[fid])
            chosen = [lab for lab, score in ranking if score > model.p_t]
            chosen = chosen[:langmodel.MAX_ORDER_LABELS]
            if chosen:
                tokens = [ls.labels[lab] for lab in chosen]
                result = langmodel.order_labels(lm, tokens)
                name = langmodel.render_name(result.sequence, convention)
            else:
                name = ""
            fh.write(f"{fid}\t{name}\t{_pair_text(ls, ranking, k)}\n")
