"""Command-line interface.

Stages compose via files: ``gen`` and ``fuse`` emit feature matrices with
identity sidecars, ``split`` emits a fold plan, ``pca``/``train``/``cca``/
``dcca``/``cdcca`` consume them and emit model containers, ``retrieve``
and ``report`` emit CSV/text.  ``run`` executes the whole pipeline.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numerical failure.  Set AUDIOEEG_LOG=DEBUG|INFO|WARNING for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classifiers, corr, dataset, linalg, pipeline, retrieval
from .errors import ConfigurationError, DataFormatError, NumericalError

log = logging.getLogger("audioeeg")


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}") from exc


def _load_folds(path: str) -> dataset.FoldPlan:
    return dataset.FoldPlan.from_json_dict(json.loads(Path(path).read_text()))


def _maybe_split(features: dataset.FeatureSet, args):
    """Train/test split when --folds/--fold are given, else (all, None)."""
    if args.folds_file is None:
        return features, None
    plan = _load_folds(args.folds_file)
    return dataset.split(features, plan, args.fold)


def _add_fold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--folds-file", help="fold plan JSON (from `split`)")
    p.add_argument("--fold", type=int, default=0, help="test fold index")


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_gen(args) -> int:
    cfg = pipeline.ExperimentConfig() if args.config is None else pipeline.load_config(args.config)
    seed = args.seed if args.seed is not None else pipeline.derive_seed(
        cfg.master_seed, pipeline.STAGE_GEN)
    audio, eeg = dataset.generate_synthetic(cfg.manifest, replace(cfg.gen, seed=seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(cfg.manifest.to_json_dict(), indent=2))
    dataset.write_features(out / "audio.fmtx", audio)
    dataset.write_features(out / "eeg.fmtx", eeg)
    print(f"wrote {len(audio)} audio and {len(eeg)} EEG records to {out}")
    return 0


def cmd_split(args) -> int:
    manifest = dataset.DatasetManifest.from_json_dict(
        json.loads((Path(args.features_dir) / "manifest.json").read_text()))
    plan = dataset.stratified_folds(manifest, args.folds, args.seed)
    Path(args.out).write_text(json.dumps(plan.to_json_dict(), indent=2))
    print(f"wrote {args.folds}-fold plan for {manifest.n_segments} segments to {args.out}")
    return 0


def cmd_pca(args) -> int:
    features = dataset.load_features(args.features)
    if args.model:
        model = linalg.PcaModel.load(args.model)
        if not args.transform_out:
            raise ConfigurationError("--model requires --transform-out")
    else:
        if args.dim is None:
            raise ConfigurationError("either --model (apply) or --dim (fit) is required")
        model = linalg.pca_fit(features.matrix, args.dim)
        if args.model_out:
            model.save(args.model_out)
            print(f"wrote PCA model ({model.components.shape[1]} components) "
                  f"to {args.model_out}")
    if args.transform_out:
        reduced = dataset.FeatureSet(
            modality=features.modality,
            matrix=linalg.pca_transform(model, features.matrix),
            segment_ids=features.segment_ids,
            category_ids=features.category_ids,
            subject_ids=features.subject_ids,
            repetition_ids=features.repetition_ids,
        )
        dataset.write_features(args.transform_out, reduced)
        print(f"wrote transformed features to {args.transform_out}")
    return 0


def cmd_train(args) -> int:
    features = dataset.load_features(args.features)
    train, test = _maybe_split(features, args)
    n_classes = int(features.category_ids.max()) + 1
    if args.classifier == "svm":
        cfg = classifiers.SvmConfig(
            kernel=classifiers.KernelSpec(kind=args.kernel, gamma=args.gamma),
            c_reg=args.c_reg, tol=args.tol, seed=args.seed)
        model = classifiers.svm_fit(train.matrix, train.category_ids, cfg)
    else:
        cfg = classifiers.SoftmaxConfig(epochs=args.epochs, learning_rate=args.lr,
                                        l2=args.l2, seed=args.seed)
        model = classifiers.softmax_fit(train.matrix, train.category_ids, cfg)
    model.save(args.model_out)
    print(f"wrote {args.classifier} model to {args.model_out}")
    if test is not None:
        acc, cm = classifiers.evaluate(
            test.category_ids, classifiers.predict(model, test.matrix), n_classes)
        print(f"fold {args.fold} test accuracy: {acc:.4f}")
        if args.confusion_out:
            cm.to_csv(args.confusion_out)
            print(f"wrote confusion matrix to {args.confusion_out}")
    return 0


def cmd_fuse(args) -> int:
    audio = dataset.load_features(args.audio)
    eeg = dataset.load_features(args.eeg)
    fused = pipeline.fuse_features(audio, eeg)
    dataset.write_features(args.out, fused)
    print(f"wrote {len(fused)} fused records ({fused.dim} dims) to {args.out}")
    return 0


def _cmd_corr(args, method: str) -> int:
    audio = dataset.load_features(args.audio)
    eeg = dataset.load_features(args.eeg)
    audio_train, _ = _maybe_split(audio, args)
    eeg_train, _ = _maybe_split(eeg, args)
    x, y, labels = pipeline.paired_training_rows(audio_train, eeg_train)
    if method == "cca":
        head = corr.cca_fit(x, y, k=args.k,
                            rx=args.ridge * float(x.var(axis=0).mean()),
                            ry=args.ridge * float(y.var(axis=0).mean()))
        space = corr.SharedSpace(head=head)
    else:
        cfg = corr.DccaConfig(
            hidden=tuple(args.hidden), out_dim=args.out_dim, ridge=args.ridge,
            epochs=args.epochs, learning_rate=args.lr, momentum=args.momentum,
            seed=args.seed, category_pair_prob=args.pair_prob)
        enc_x, enc_y, head, trace = corr.dcca_fit(
            x, y, cfg, labels=labels if cfg.category_pair_prob > 0 else None)
        space = corr.SharedSpace(head, enc_x, enc_y)
        if args.log_out:
            corr.write_training_log(args.log_out, trace)
        print(f"final epoch loss: {trace[-1]:.6f}")
    space.save(args.model_out)
    print(f"wrote {method} shared space to {args.model_out}")
    return 0


def cmd_retrieve(args) -> int:
    space = corr.SharedSpace.load(args.model)
    audio = dataset.load_features(args.audio)
    eeg = dataset.load_features(args.eeg)
    if args.folds_file is not None:
        _, audio = _maybe_split(audio, args)
        _, eeg = _maybe_split(eeg, args)
    data = pipeline.fold_retrieval_data(audio, eeg)
    report = retrieval.sweep_components([space], [data], args.ks, args.metric)
    report.to_csv(args.out)
    for i, k in enumerate(report.ks):
        print(f"k={k:3d}  MRR1={report.mrr1_mean[i]:.4f}  MAP={report.map_mean[i]:.4f}")
    print(f"wrote retrieval sweep to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = pipeline.ExperimentConfig() if args.config is None else pipeline.load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.folds is not None:
        overrides["n_folds"] = args.folds
    if args.eval_folds is not None:
        overrides["eval_folds"] = tuple(args.eval_folds)
    if args.classifier is not None:
        overrides["classifier"] = args.classifier
    if args.pca_dim is not None:
        overrides["pca_dim"] = args.pca_dim
    if args.ks is not None:
        overrides["ks"] = tuple(args.ks)
    if args.methods is not None:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.epochs is not None:
        overrides["dcca"] = replace(cfg.dcca, epochs=args.epochs)
        overrides["cdcca"] = replace(cfg.cdcca, epochs=args.epochs)
    if overrides:
        cfg = replace(cfg, **overrides)
    bundle = pipeline.run_pipeline(cfg, args.out, features_dir=args.features_dir)
    if all(m in bundle.retrieval for m in pipeline.METHODS):
        print(pipeline.make_report(bundle))
    else:  # a methods subset cannot fill the three-column tables
        for scenario in pipeline.SCENARIOS:
            print(f"{scenario:>5s} accuracy: {bundle.accuracies[scenario]:.4f}")
        for method, report in bundle.retrieval.items():
            cells = "  ".join(f"k={k}:{report.mrr1_mean[i]:.3f}"
                              for i, k in enumerate(report.ks))
            print(f"{method} MRR1  {cells}")
    print(f"artifacts in {args.out}")
    return 0


def cmd_report(args) -> int:
    try:
        summary = json.loads(Path(args.summary).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"summary {args.summary} is not valid JSON: {exc}") from exc
    print(pipeline.make_report(pipeline.ReportBundle.from_json_dict(summary)))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audioeeg",
        description="Audio-event classification and audio/EEG cross-modal retrieval.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic paired corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="generator seed override")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", help="build a stratified fold plan")
    p.add_argument("--features-dir", required=True, help="directory with manifest.json")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="fold plan JSON path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pca", help="fit or apply a PCA model")
    p.add_argument("--features", required=True, help="input feature file")
    p.add_argument("--dim", type=int, help="component count (fit mode)")
    p.add_argument("--model", help="existing model to apply")
    p.add_argument("--model-out", help="where to save a fitted model")
    p.add_argument("--transform-out", help="write transformed features here")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", choices=("svm", "softmax"), default="svm")
    p.add_argument("--model-out", required=True)
    p.add_argument("--confusion-out", help="test confusion CSV (needs --folds-file)")
    _add_fold_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", choices=("linear", "rbf"), default="rbf")
    p.add_argument("--gamma", type=float, help="rbf width (default: auto)")
    p.add_argument("--c-reg", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200, help="softmax epochs")
    p.add_argument("--lr", type=float, default=0.5, help="softmax learning rate")
    p.add_argument("--l2", type=float, default=1e-4, help="softmax weight decay")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="concatenate EEG and audio features per record")
    p.add_argument("--audio", required=True)
    p.add_argument("--eeg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("cca", help="fit a linear CCA shared space")
    p.add_argument("--audio", required=True)
    p.add_argument("--eeg", required=True)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--ridge", type=float, default=16.0,
                   help="ridge relative to the mean per-feature variance")
    p.add_argument("--model-out", required=True)
    _add_fold_args(p)
    p.set_defaults(func=lambda a: _cmd_corr(a, "cca"))

    for name, prob in (("dcca", 0.0), ("cdcca", 0.5)):
        p = sub.add_parser(name, help=f"fit a {name.upper()} shared space")
        p.add_argument("--audio", required=True)
        p.add_argument("--eeg", required=True)
        p.add_argument("--hidden", type=_int_list, default=[256, 128])
        p.add_argument("--out-dim", type=int, default=40)
        p.add_argument("--ridge", type=float, default=1e-4)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--lr", type=float, default=1e-2)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--pair-prob", type=float, default=prob,
                       help="same-category re-pairing probability")
        p.add_argument("--model-out", required=True)
        p.add_argument("--log-out", help="training loss JSON")
        _add_fold_args(p)
        p.set_defaults(func=lambda a, name=name: _cmd_corr(a, name))

    p = sub.add_parser("retrieve", help="cross-modal retrieval sweep")
    p.add_argument("--model", required=True, help="shared-space container")
    p.add_argument("--audio", required=True)
    p.add_argument("--eeg", required=True)
    p.add_argument("--ks", type=_int_list, default=[10, 15, 20, 25, 30, 35, 40])
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--out", required=True, help="sweep CSV path")
    _add_fold_args(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("run", help="full pipeline: gen, split, classify, retrieve")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--features-dir",
                   help="ingest existing feature files instead of generating")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--folds", type=int, help="fold count override")
    p.add_argument("--eval-folds", type=_int_list, help="subset of folds to run")
    p.add_argument("--classifier", choices=("svm", "softmax"))
    p.add_argument("--pca-dim", type=int)
    p.add_argument("--ks", type=_int_list)
    p.add_argument("--methods", help="comma-separated subset of cca,dcca,cdcca")
    p.add_argument("--epochs", type=int, help="epoch override for both deep methods")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render tables from a run summary")
    p.add_argument("--summary", required=True, help="summary.json from `run`")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("AUDIOEEG_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
