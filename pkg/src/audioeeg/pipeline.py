"""End-to-end experiment orchestration.

A run executes, per cross-validation fold: PCA + classifier on three
scenarios (audio only, EEG only, fused), then shared-space training for
each correlation method and the component-count retrieval sweep.  Every
stage seed derives deterministically from the master seed, so reruns with
the same config produce byte-identical numeric outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classifiers, corr, dataset, linalg, retrieval
from .errors import ConfigurationError, DataFormatError

log = logging.getLogger("audioeeg")

SCENARIOS = ("audio", "eeg", "fused")
METHODS = ("cca", "dcca", "cdcca")

# stage tags mixed into the master seed
STAGE_GEN = 1
STAGE_FOLDS = 2
STAGE_CLASSIFY = 3
STAGE_CCA = 4
STAGE_DCCA = 5
STAGE_CDCCA = 6

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Mix stage indices into the master seed with splitmix64 steps, so any
    stage is reproducible in isolation."""
    z = master & _MASK
    for idx in indices:
        z = _splitmix64(z ^ _splitmix64(idx & _MASK))
    return z


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one pipeline run needs.

    Seed fields inside sub-configs are ignored: the pipeline overwrites them
    with values derived from ``master_seed``.
    """

    manifest: dataset.DatasetManifest = dataset.DatasetManifest()
    gen: dataset.GenConfig = dataset.GenConfig()
    n_folds: int = 10
    pca_dim: int = 20
    classifier: str = "svm"  # "svm" or "softmax"
    svm: classifiers.SvmConfig = classifiers.SvmConfig(tol=1e-2)
    softmax: classifiers.SoftmaxConfig = classifiers.SoftmaxConfig()
    cca_ridge: float = 16.0  # relative to the mean per-feature variance
    dcca: corr.DccaConfig = corr.DccaConfig(
        hidden=(96,), epochs=100, learning_rate=0.1, category_pair_prob=0.0)
    cdcca: corr.DccaConfig = corr.DccaConfig(
        hidden=(96,), epochs=100, learning_rate=0.1, category_pair_prob=0.5)
    ks: tuple[int, ...] = (10, 15, 20, 25, 30, 35, 40)
    metric: str = "cosine"
    methods: tuple[str, ...] = METHODS
    eval_folds: tuple[int, ...] | None = None  # None = all folds
    master_seed: int = 7

    def __post_init__(self):
        if self.classifier not in ("svm", "softmax"):
            raise ConfigurationError(f"unknown classifier {self.classifier!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown correlation methods: {sorted(unknown)}")
        if max(self.ks) > min(self.dcca.out_dim, self.cdcca.out_dim):
            raise ConfigurationError("ks exceed the encoder output dimension")

    def folds_to_eval(self) -> tuple[int, ...]:
        if self.eval_folds is None:
            return tuple(range(self.n_folds))
        bad = [f for f in self.eval_folds if not 0 <= f < self.n_folds]
        if bad:
            raise ConfigurationError(f"eval_folds outside [0, {self.n_folds}): {bad}")
        return tuple(self.eval_folds)

    def to_json_dict(self) -> dict:
        return {
            "manifest": self.manifest.to_json_dict(),
            "gen": self.gen.to_json_dict(),
            "n_folds": self.n_folds,
            "pca_dim": self.pca_dim,
            "classifier": self.classifier,
            "svm": {"kernel": self.svm.kernel.kind, "gamma": self.svm.kernel.gamma,
                    "c_reg": self.svm.c_reg, "tol": self.svm.tol,
                    "max_passes": self.svm.max_passes},
            "softmax": {"epochs": self.softmax.epochs,
                        "learning_rate": self.softmax.learning_rate,
                        "l2": self.softmax.l2},
            "cca_ridge": self.cca_ridge,
            "dcca": self.dcca.to_json_dict(),
            "cdcca": self.cdcca.to_json_dict(),
            "ks": list(self.ks),
            "metric": self.metric,
            "methods": list(self.methods),
            "eval_folds": None if self.eval_folds is None else list(self.eval_folds),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        kw = {}
        if "manifest" in d:
            kw["manifest"] = dataset.DatasetManifest.from_json_dict(d["manifest"])
        if "gen" in d:
            gen = dict(d["gen"])
            gen.setdefault("seed", 0)
            kw["gen"] = dataset.GenConfig.from_json_dict(gen)
        if "svm" in d:
            s = d["svm"]
            kw["svm"] = classifiers.SvmConfig(
                kernel=classifiers.KernelSpec(kind=s.get("kernel", "rbf"),
                                              gamma=s.get("gamma")),
                c_reg=s.get("c_reg", 1.0), tol=s.get("tol", 1e-3),
                max_passes=s.get("max_passes", 200))
        if "softmax" in d:
            kw["softmax"] = classifiers.SoftmaxConfig(**d["softmax"])
        for key in ("dcca", "cdcca"):
            if key in d:
                sub = dict(d[key])
                sub.setdefault("seed", 0)
                kw[key] = corr.DccaConfig.from_json_dict(sub)
        for key in ("n_folds", "pca_dim", "classifier", "cca_ridge",
                    "metric", "master_seed"):
            if key in d:
                kw[key] = d[key]
        if "ks" in d:
            kw["ks"] = tuple(d["ks"])
        if "methods" in d:
            kw["methods"] = tuple(d["methods"])
        if d.get("eval_folds") is not None:
            kw["eval_folds"] = tuple(d["eval_folds"])
        return cls(**kw)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_json_dict(raw)


@dataclass
class ReportBundle:
    """Per-scenario accuracies + confusion matrices, retrieval reports per
    method, and run metadata."""

    accuracies: dict[str, float]
    per_fold_accuracies: dict[str, list[float]]
    confusions: dict[str, classifiers.ConfusionMatrix]
    retrieval: dict[str, retrieval.RetrievalReport]
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "per_fold_accuracies": self.per_fold_accuracies,
            "confusions": {s: cm.counts.tolist() for s, cm in self.confusions.items()},
            "retrieval": {m: r.to_json_dict() for m, r in self.retrieval.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ReportBundle":
        try:
            return cls(
                accuracies=dict(d["accuracies"]),
                per_fold_accuracies={k: list(v)
                                     for k, v in d["per_fold_accuracies"].items()},
                confusions={s: classifiers.ConfusionMatrix(
                    np.asarray(m, dtype=np.int64))
                    for s, m in d["confusions"].items()},
                retrieval={m: retrieval.RetrievalReport.from_json_dict(r)
                           for m, r in d["retrieval"].items()},
                meta=d.get("meta", {}),
            )
        except KeyError as exc:
            raise DataFormatError(f"summary JSON missing key {exc}") from exc


def fuse_features(audio: dataset.FeatureSet,
                  eeg: dataset.FeatureSet) -> dataset.FeatureSet:
    """Concatenate each EEG record with its segment's audio vector
    (EEG block first)."""
    seg_to_row = {int(s): i for i, s in enumerate(audio.segment_ids)}
    try:
        rows = np.array([seg_to_row[int(s)] for s in eeg.segment_ids])
    except KeyError as exc:
        raise DataFormatError(f"EEG segment {exc} has no audio record") from exc
    return dataset.FeatureSet(
        modality="fused",
        matrix=np.concatenate([eeg.matrix, audio.matrix[rows]], axis=1),
        segment_ids=eeg.segment_ids.copy(),
        category_ids=eeg.category_ids.copy(),
        subject_ids=None if eeg.subject_ids is None else eeg.subject_ids.copy(),
        repetition_ids=None if eeg.repetition_ids is None else eeg.repetition_ids.copy(),
    )


def paired_training_rows(audio: dataset.FeatureSet, eeg: dataset.FeatureSet):
    """(audio row per EEG record, EEG matrix, category labels) for CCA-family
    training; the audio vector of a segment repeats across its recordings."""
    seg_to_row = {int(s): i for i, s in enumerate(audio.segment_ids)}
    rows = np.array([seg_to_row[int(s)] for s in eeg.segment_ids])
    return audio.matrix[rows], eeg.matrix, eeg.category_ids


def classify_fold(features: dataset.FeatureSet, plan: dataset.FoldPlan,
                  fold: int, cfg: ExperimentConfig, seed: int):
    """PCA + classifier on one fold; returns (accuracy, confusion matrix)."""
    train, test = dataset.split(features, plan, fold)
    pca = linalg.pca_fit(train.matrix, cfg.pca_dim)
    z_train = linalg.pca_transform(pca, train.matrix)
    z_test = linalg.pca_transform(pca, test.matrix)
    if cfg.classifier == "svm":
        model = classifiers.svm_fit(z_train, train.category_ids,
                                    replace(cfg.svm, seed=seed))
    else:
        model = classifiers.softmax_fit(z_train, train.category_ids,
                                        replace(cfg.softmax, seed=seed))
    y_pred = classifiers.predict(model, z_test)
    return classifiers.evaluate(test.category_ids, y_pred,
                                cfg.manifest.n_categories,
                                categories=cfg.manifest.categories)


def train_shared_space(method: str, audio_train: dataset.FeatureSet,
                       eeg_train: dataset.FeatureSet, cfg: ExperimentConfig,
                       seed: int) -> tuple[corr.SharedSpace, np.ndarray | None]:
    """Fit one correlation method on a fold's training pairs.

    Returns the shared space and, for the deep methods, the loss trace.
    """
    x_pairs, y_pairs, labels = paired_training_rows(audio_train, eeg_train)
    k_max = max(cfg.ks)
    if method == "cca":
        head = corr.cca_fit(
            x_pairs, y_pairs, k=k_max,
            rx=cfg.cca_ridge * float(x_pairs.var(axis=0).mean()),
            ry=cfg.cca_ridge * float(y_pairs.var(axis=0).mean()))
        return corr.SharedSpace(head=head), None
    if method == "dcca":
        dcfg = replace(cfg.dcca, seed=seed, category_pair_prob=0.0)
        enc_x, enc_y, head, trace = corr.dcca_fit(x_pairs, y_pairs, dcfg)
        return corr.SharedSpace(head, enc_x, enc_y), trace
    if method == "cdcca":
        dcfg = replace(cfg.cdcca, seed=seed)
        if dcfg.category_pair_prob <= 0:
            raise ConfigurationError("cdcca requires category_pair_prob > 0")
        enc_x, enc_y, head, trace = corr.dcca_fit(x_pairs, y_pairs, dcfg,
                                                  labels=labels)
        return corr.SharedSpace(head, enc_x, enc_y), trace
    raise ConfigurationError(f"unknown method {method!r}")


def fold_retrieval_data(audio_test: dataset.FeatureSet,
                        eeg_test: dataset.FeatureSet) -> retrieval.FoldRetrievalData:
    return retrieval.FoldRetrievalData(
        audio=audio_test.matrix, audio_segments=audio_test.segment_ids,
        eeg=eeg_test.matrix, eeg_segments=eeg_test.segment_ids)


def _load_features_dir(features_dir: Path):
    manifest = dataset.DatasetManifest.from_json_dict(
        json.loads((features_dir / "manifest.json").read_text()))
    audio = dataset.load_features(features_dir / "audio.fmtx",
                                  expected_dim=manifest.audio_dim)
    eeg = dataset.load_features(features_dir / "eeg.fmtx",
                                expected_dim=manifest.eeg_dim)
    return manifest, audio, eeg


def run_pipeline(cfg: ExperimentConfig, out_dir: str | Path,
                 features_dir: str | Path | None = None) -> ReportBundle:
    """Execute every scenario and correlation method over the folds and
    write confusion CSVs, retrieval CSVs, training logs and a summary JSON.
    """
    t_start = time.time()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "logs").mkdir(exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory: {exc}") from exc

    if features_dir is not None:
        manifest, audio, eeg = _load_features_dir(Path(features_dir))
        cfg = replace(cfg, manifest=manifest)
        log.info("ingested features from %s", features_dir)
    else:
        manifest = cfg.manifest
        gen_cfg = replace(cfg.gen, seed=derive_seed(cfg.master_seed, STAGE_GEN))
        audio, eeg = dataset.generate_synthetic(manifest, gen_cfg)
        log.info("generated synthetic corpus: %d audio, %d EEG records",
                 len(audio), len(eeg))

    plan = dataset.stratified_folds(manifest, cfg.n_folds,
                                    derive_seed(cfg.master_seed, STAGE_FOLDS))
    folds = cfg.folds_to_eval()
    scenario_sets = {"audio": audio, "eeg": eeg, "fused": fuse_features(audio, eeg)}

    accuracies: dict[str, float] = {}
    per_fold: dict[str, list[float]] = {}
    confusions: dict[str, classifiers.ConfusionMatrix] = {}
    for si, scenario in enumerate(SCENARIOS):
        fold_accs, fold_cms = [], []
        for fold in folds:
            seed = derive_seed(cfg.master_seed, STAGE_CLASSIFY, si, fold)
            try:
                acc, cm = classify_fold(scenario_sets[scenario], plan, fold, cfg, seed)
            except Exception as exc:
                raise type(exc)(
                    f"stage classify/{scenario}, fold {fold}: {exc}") from exc
            fold_accs.append(acc)
            fold_cms.append(cm)
            log.info("scenario %-5s fold %d: accuracy %.4f", scenario, fold, acc)
        per_fold[scenario] = fold_accs
        accuracies[scenario] = float(np.mean(fold_accs))
        confusions[scenario] = sum(fold_cms[1:], fold_cms[0])
        confusions[scenario].to_csv(out_dir / f"confusion_{scenario}.csv")

    method_stage = {"cca": STAGE_CCA, "dcca": STAGE_DCCA, "cdcca": STAGE_CDCCA}
    reports: dict[str, retrieval.RetrievalReport] = {}
    for method in cfg.methods:
        spaces, fold_data = [], []
        for fold in folds:
            audio_train, audio_test = dataset.split(audio, plan, fold)
            eeg_train, eeg_test = dataset.split(eeg, plan, fold)
            seed = derive_seed(cfg.master_seed, method_stage[method], fold)
            try:
                space, trace = train_shared_space(method, audio_train, eeg_train,
                                                  cfg, seed)
            except Exception as exc:
                raise type(exc)(f"stage {method}, fold {fold}: {exc}") from exc
            if trace is not None:
                corr.write_training_log(
                    out_dir / "logs" / f"{method}_fold{fold}.json", trace)
            spaces.append(space)
            fold_data.append(fold_retrieval_data(audio_test, eeg_test))
            log.info("method %-5s fold %d trained", method, fold)
        reports[method] = retrieval.sweep_components(spaces, fold_data,
                                                     list(cfg.ks), cfg.metric)
        reports[method].to_csv(out_dir / f"retrieval_{method}.csv")

    bundle = ReportBundle(
        accuracies=accuracies,
        per_fold_accuracies=per_fold,
        confusions=confusions,
        retrieval=reports,
        meta={
            "master_seed": cfg.master_seed,
            "config_hash": cfg.config_hash(),
            "config": cfg.to_json_dict(),
            "folds_evaluated": list(folds),
            "runtime_seconds": round(time.time() - t_start, 3),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "output_files": sorted(
                str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file()),
        },
    )
    summary = dict(bundle.to_json_dict())
    summary["meta"] = dict(summary["meta"])
    summary["meta"]["output_files"] = sorted(
        summary["meta"]["output_files"] + ["summary.json"])
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return bundle


# ---------------------------------------------------------------------------
# text report

def _fmt_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    def line(cells):
        return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def make_report(bundle: ReportBundle) -> str:
    """Aligned text tables: the 3-scenario accuracy row and the per-method
    MRR1 / MAP sweeps."""
    missing = [s for s in SCENARIOS if s not in bundle.accuracies]
    if missing:
        raise ConfigurationError(f"incomplete bundle: missing scenarios {missing}")
    missing = [m for m in METHODS if m not in bundle.retrieval]
    if missing:
        raise ConfigurationError(f"incomplete bundle: missing methods {missing}")

    acc = bundle.accuracies
    parts = ["Audio event classification accuracy"]
    parts.append(_fmt_table(
        ["Audio only", "EEG only", "Audio & EEG"],
        [[f"{acc['audio']:.1%}", f"{acc['eeg']:.1%}", f"{acc['fused']:.1%}"]]))

    ks = bundle.retrieval["cca"].ks
    for title, attr in (("MRR1 of audio retrieval with EEG queries", "mrr1_mean"),
                        ("MAP of EEG retrieval with audio queries", "map_mean")):
        rows = []
        for i, k in enumerate(ks):
            rows.append([k] + [f"{getattr(bundle.retrieval[m], attr)[i]:.3f}"
                               for m in METHODS])
        parts.append(title)
        parts.append(_fmt_table(["Components", "CCA", "DCCA", "C-DCCA"], rows))
    return "\n\n".join(parts) + "\n"
