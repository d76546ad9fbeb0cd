"""Command line front end.

Subcommands mirror the pipeline stages (corpus, tokenize, labelspace,
featurize, train, predict, evaluate, lm, pipeline) plus a version probe.
Global flags before the subcommand: --seed, --config, --quiet.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import MODEL_FORMAT_VERSION, __version__
from . import corpus as corpus_mod
from . import langmodel, learner, pipeline
from .corpus import CorpusError
from .featurizer import (DEFAULT_D, DEFAULT_E, embed_corpus,
                         load_external_embeddings, save_embeddings)
from .labelspace import (DEFAULT_A, DEFAULT_B, build_label_space,
                         load_label_space, project_ground_truth,
                         save_label_space)
from .metrics import DEFAULT_K, evaluate
from .tokenizer import canonical_tokens, load_config, token_sequence

log = logging.getLogger(__name__)


def _ratios(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            "expected three comma separated ratios")
    return tuple(parts)


def _effective_seed(args, local=None):
    if local is not None:
        return local
    return args.seed if args.seed is not None else 0


def _parse_hp(text, seed):
    """--hp 'T=10,alpha=0.7' against XflHyperParams field types."""
    defaults = learner.XflHyperParams()
    settings = {"seed": seed}
    for item in (text or "").split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ValueError(
                f"bad hyper-parameter setting {item!r}; expected name=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if not hasattr(defaults, key):
            raise ValueError(f"unknown hyper-parameter {key!r}")
        settings[key] = type(getattr(defaults, key))(value.strip())
    return learner.XflHyperParams(**settings)


def _load_embeddings(path, expect=None):
    """Load a whitespace embeddings table, inferring width from line one."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split()
    if len(first) < 2:
        raise ValueError(f"embeddings file {str(path)!r} is empty")
    width = len(first) - 1
    if expect is not None and width != expect:
        raise ValueError(
            f"embeddings in {str(path)!r} have width {width}, "
            f"expected {expect}")
    return load_external_embeddings(path, width)


def cmd_corpus_validate(args):
    try:
        corp = corpus_mod.load_corpus(args.path)
    except CorpusError as exc:
        for line in exc.diagnostics:
            print(line, file=sys.stderr)
        return 1
    print(f"ok: {len(corp)} records")
    return 0


def cmd_corpus_split(args):
    corp = corpus_mod.load_corpus(args.path)
    spec = corpus_mod.SplitSpec(
        ratios=args.ratios,
        grouping="by_binary" if args.by_binary else "by_function",
        seed=_effective_seed(args, args.split_seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part, sub in zip(("train", "valid", "test"),
                         corpus_mod.split(corp, spec)):
        path = out / f"{part}.jsonl"
        corpus_mod.save_corpus(sub, path)
        log.info("%s: %d records", path, len(sub))
    return 0


def cmd_tokenize(args):
    cfg = load_config(args.tokenizer_config)
    for tok in sorted(canonical_tokens(args.name, cfg)):
        print(tok)
    return 0


def cmd_labelspace_build(args):
    corp = corpus_mod.load_corpus(args.corpus)
    cfg = load_config(args.tokenizer_config)
    ls = build_label_space(corp, cfg, args.n, A=args.A, B=args.B)
    save_label_space(ls, args.out)
    log.info("%s: %d labels over %d functions", args.out, len(ls.labels),
             ls.total_points)
    return 0


def cmd_featurize(args):
    corp = corpus_mod.load_corpus(args.corpus)
    embs = embed_corpus(corp, E=args.E, D=args.D,
                        seed=_effective_seed(args, args.feat_seed))
    save_embeddings(embs, args.out)
    log.info("%s: %d embeddings of width %d", args.out, len(embs), args.E)
    return 0


def cmd_train(args):
    if (args.valid_corpus is None) != (args.valid_embeddings is None):
        raise ValueError(
            "--valid-corpus and --valid-embeddings go together")
    hp = _parse_hp(args.hp, _effective_seed(args))
    ls = load_label_space(args.labelspace)
    cfg = load_config(args.tokenizer_config)
    corp = corpus_mod.load_corpus(args.corpus)
    X = _load_embeddings(args.embeddings)
    Y = project_ground_truth(corp, ls, cfg)
    model = learner.train(X, Y, ls, hp)
    if args.valid_corpus is not None:
        valid = corpus_mod.load_corpus(args.valid_corpus)
        X_valid = _load_embeddings(args.valid_embeddings, model.width)
        Y_valid = project_ground_truth(valid, ls, cfg)
        p_t = learner.calibrate_threshold(model, X_valid, Y_valid)
        log.info("calibrated threshold %r", p_t)
    learner.save_model(model, args.out)
    log.info("%s: %d trees, %d rare-label classifiers", args.out,
             len(model.trees), len(model.rare))
    return 0


def cmd_predict(args):
    model = learner.load_model(args.model)
    X = _load_embeddings(args.embeddings, model.width)
    pipeline.write_rankings(model, X, args.topk, args.out)
    log.info("%s: rankings for %d functions", args.out, len(X))
    return 0


def cmd_evaluate(args):
    model = learner.load_model(args.model)
    ls = model.label_space
    cfg = load_config(args.tokenizer_config)
    corp = corpus_mod.load_corpus(args.corpus)
    X = _load_embeddings(args.embeddings, model.width)
    Y = project_ground_truth(corp, ls, cfg)
    train_names = None
    fid_names = None
    if args.train_corpus is not None:
        train_names = {rec.name
                       for rec in corpus_mod.load_corpus(args.train_corpus)}
        fid_names = {rec.fid: rec.name for rec in corp}
    report = evaluate(model, Y, X, ls, k=args.k, train_names=train_names,
                      fid_names=fid_names,
                      keep_per_point=args.emit_plot_data is not None)
    for metric, size, value in report.rows():
        print(f"{metric}\t{size}\t{value!r}")
    if args.emit_plot_data is not None:
        with open(args.emit_plot_data, "w", encoding="utf-8") as fh:
            for metric in sorted(report.per_point):
                for fid, value in report.per_point[metric]:
                    fh.write(f"{metric}\t{fid}\t{value!r}\n")
    return 0


def cmd_lm_train(args):
    cfg = load_config(args.tokenizer_config)
    with open(args.names, encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    lm = langmodel.train_lm([token_sequence(n, cfg) for n in names])
    langmodel.save_lm(lm, args.out)
    log.info("%s: trained on %d names", args.out, len(names))
    return 0


def cmd_lm_order(args):
    lm = langmodel.load_lm(args.model)
    labels = [t.strip() for t in args.labels.split(",") if t.strip()]
    result = langmodel.order_labels(lm, labels)
    print(langmodel.render_name(result.sequence, args.convention))
    return 0


def cmd_pipeline(args):
    if args.config is None:
        raise ValueError("pipeline requires --config")
    cfg = pipeline.load_pipeline_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return pipeline.run_pipeline(cfg)


def cmd_version(args):
    print(f"fnlabel {__version__}")
    print(f"model format {MODEL_FORMAT_VERSION}")
    if args.config is not None:
        digest = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    else:
        digest = "-"
    print(f"config digest {digest}")
    if args.model is not None:
        try:
            header = learner.read_model_header(args.model)
        except ValueError as exc:
            raise ValueError(f"unrecognized format: {exc}") from exc
        print(f"model file format {header['format_version']}")
    return 0


def _parser():
    top = argparse.ArgumentParser(
        prog="fnlabel",
        description="Ranked token labels and synthesized names for "
                    "binary functions.")
    top.add_argument("--seed", type=int, default=None,
                     help="top-level random seed (default 0)")
    top.add_argument("--config", default=None,
                     help="pipeline config file (JSON)")
    top.add_argument("--quiet", action="store_true",
                     help="only warnings and errors on stderr")
    sub = top.add_subparsers(dest="command", required=True)

    corpus_p = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = corpus_p.add_subparsers(dest="corpus_command", required=True)
    val = corpus_sub.add_parser("validate", help="check a corpus file")
    val.add_argument("path")
    val.set_defaults(func=cmd_corpus_validate)
    spl = corpus_sub.add_parser("split", help="write train/valid/test files")
    spl.add_argument("path")
    spl.add_argument("--ratios", type=_ratios, default=(0.9, 0.05, 0.05))
    spl.add_argument("--by-binary", action="store_true",
                     help="group whole binaries instead of functions")
    spl.add_argument("--seed", dest="split_seed", type=int, default=None)
    spl.add_argument("--out-dir", required=True)
    spl.set_defaults(func=cmd_corpus_split)

    tok = sub.add_parser("tokenize", help="print a name's sorted token set")
    tok.add_argument("name")
    tok.add_argument("--tokenizer-config", default=None)
    tok.set_defaults(func=cmd_tokenize)

    ls_p = sub.add_parser("labelspace", help="label space utilities")
    ls_sub = ls_p.add_subparsers(dest="labelspace_command", required=True)
    build = ls_sub.add_parser("build", help="build and save a label space")
    build.add_argument("--corpus", required=True)
    build.add_argument("--n", type=int, default=1024)
    build.add_argument("--A", type=float, default=DEFAULT_A)
    build.add_argument("--B", type=float, default=DEFAULT_B)
    build.add_argument("--tokenizer-config", default=None)
    build.add_argument("--out", required=True)
    build.set_defaults(func=cmd_labelspace_build)

    feat = sub.add_parser("featurize", help="embed a corpus")
    feat.add_argument("corpus")
    feat.add_argument("--E", type=int, default=DEFAULT_E)
    feat.add_argument("--D", type=int, default=DEFAULT_D)
    feat.add_argument("--seed", dest="feat_seed", type=int, default=None)
    feat.add_argument("--out", required=True)
    feat.set_defaults(func=cmd_featurize)

    train = sub.add_parser("train", help="train a label ranking model")
    train.add_argument("--labelspace", required=True)
    train.add_argument("--embeddings", required=True)
    train.add_argument("--corpus", required=True)
    train.add_argument("--hp", default="",
                       help="comma separated name=value hyper-parameters")
    train.add_argument("--valid-corpus", default=None)
    train.add_argument("--valid-embeddings", default=None)
    train.add_argument("--tokenizer-config", default=None)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    pred = sub.add_parser("predict", help="write ranked labels per function")
    pred.add_argument("--model", required=True)
    pred.add_argument("--embeddings", required=True)
    pred.add_argument("--topk", type=int, default=DEFAULT_K)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="score a model over a split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--embeddings", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--k", type=int, default=DEFAULT_K)
    ev.add_argument("--train-corpus", default=None,
                    help="adds the unseen-name slice")
    ev.add_argument("--emit-plot-data", default=None,
                    help="write per-point metric values to this file")
    ev.add_argument("--tokenizer-config", default=None)
    ev.set_defaults(func=cmd_evaluate)

    lm_p = sub.add_parser("lm", help="name ordering language model")
    lm_sub = lm_p.add_subparsers(dest="lm_command", required=True)
    lmt = lm_sub.add_parser("train", help="train from a names file")
    lmt.add_argument("names", help="one function name per line")
    lmt.add_argument("--tokenizer-config", default=None)
    lmt.add_argument("--out", required=True)
    lmt.set_defaults(func=cmd_lm_train)
    lmo = lm_sub.add_parser("order", help="order labels into a name")
    lmo.add_argument("--model", required=True)
    lmo.add_argument("--labels", required=True,
                     help="comma separated label tokens")
    lmo.add_argument("--convention", default="snake",
                     choices=("snake", "camel"))
    lmo.set_defaults(func=cmd_lm_order)

    pipe = sub.add_parser("pipeline", help="run all stages from a config")
    pipe.set_defaults(func=cmd_pipeline)

    ver = sub.add_parser("version", help="print version and format info")
    ver.add_argument("--model", default=None)
    ver.set_defaults(func=cmd_version)
    return top


def main(argv=None):
    args = _parser().parse_args(argv)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
