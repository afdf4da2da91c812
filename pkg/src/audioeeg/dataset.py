"""Paired audio/EEG corpus: data model, synthetic generator, folds, file I/O.

The corpus geometry is fixed by the manifest: ``n_segments`` audio clips
grouped into equally sized category blocks, each clip heard by
``n_subjects`` subjects ``n_reps`` times, so there is one audio feature
vector per segment and ``n_subjects * n_reps`` EEG feature vectors per
segment.  Records are ordered segment-major, then subject, then repetition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigurationError, DataFormatError

DEFAULT_CATEGORIES = (
    "Chant",
    "Child singing",
    "Choir",
    "Female singing",
    "Male singing",
    "Rapping",
    "Synthetic singing",
    "Yodeling",
)

# Default latent geometry for the synthetic generator: how far apart
# category means sit (per latent block) and how widely segments scatter
# around their category mean.  GenConfig can override these per corpus.
CATEGORY_SCALE_SHARED = 0.4
CATEGORY_SCALE_PRIVATE = 1.15
SEGMENT_SPREAD = 1.0


@dataclass(frozen=True)
class DatasetManifest:
    """Shape of the paired corpus."""

    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    n_segments: int = 160
    n_subjects: int = 9
    n_reps: int = 5
    audio_dim: int = 1152
    eeg_dim: int = 512

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 1:
            raise ConfigurationError("at least one category is required")
        for name, value in (("n_segments", self.n_segments),
                            ("n_subjects", self.n_subjects),
                            ("n_reps", self.n_reps),
                            ("audio_dim", self.audio_dim),
                            ("eeg_dim", self.eeg_dim)):
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.n_segments % len(self.categories) != 0:
            raise ConfigurationError(
                f"n_segments={self.n_segments} is not divisible by "
                f"{len(self.categories)} categories"
            )

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def segments_per_category(self) -> int:
        return self.n_segments // self.n_categories

    @property
    def n_eeg_records(self) -> int:
        return self.n_segments * self.n_subjects * self.n_reps

    def category_of(self, segment_id: int) -> int:
        """Deterministic block assignment: contiguous equal category blocks."""
        return int(segment_id) // self.segments_per_category

    def segment_categories(self) -> np.ndarray:
        return np.arange(self.n_segments) // self.segments_per_category

    def to_json_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "n_segments": self.n_segments,
            "n_subjects": self.n_subjects,
            "n_reps": self.n_reps,
            "audio_dim": self.audio_dim,
            "eeg_dim": self.eeg_dim,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetManifest":
        return cls(categories=tuple(d["categories"]),
                   n_segments=int(d["n_segments"]),
                   n_subjects=int(d["n_subjects"]),
                   n_reps=int(d["n_reps"]),
                   audio_dim=int(d["audio_dim"]),
                   eeg_dim=int(d["eeg_dim"]))


def build_manifest(categories, n_segments, n_subjects, n_reps,
                   audio_dim, eeg_dim) -> DatasetManifest:
    """Validated manifest with block category assignment."""
    return DatasetManifest(tuple(categories), n_segments, n_subjects, n_reps,
                           audio_dim, eeg_dim)


@dataclass(frozen=True)
class GenConfig:
    """Synthetic generator settings.

    The latent vector of a segment splits into a shared part seen by both
    modalities and two modality-private parts, which keeps the information
    carried by audio and EEG partially complementary.
    """

    latent_dim_shared: int = 4
    latent_dim_audio_only: int = 6
    latent_dim_eeg_only: int = 3
    sigma_audio: float = 2.5
    sigma_eeg: float = 1.6
    sigma_subject: float = 1.1
    category_scale_shared: float = CATEGORY_SCALE_SHARED
    category_scale_private: float = CATEGORY_SCALE_PRIVATE
    segment_spread: float = SEGMENT_SPREAD
    seed: int = 42

    def __post_init__(self):
        for name in ("latent_dim_shared", "latent_dim_audio_only", "latent_dim_eeg_only"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("sigma_audio", "sigma_eeg", "sigma_subject",
                     "category_scale_shared", "category_scale_private",
                     "segment_spread"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "latent_dim_shared", "latent_dim_audio_only", "latent_dim_eeg_only",
            "sigma_audio", "sigma_eeg", "sigma_subject",
            "category_scale_shared", "category_scale_private",
            "segment_spread", "seed")}

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


@dataclass(frozen=True)
class FeatureRecord:
    """One modality vector with its identity."""

    segment_id: int
    subject_id: int | None
    repetition_id: int | None
    category_id: int
    modality: str
    vector: np.ndarray


@dataclass
class FeatureSet:
    """A matrix of feature vectors plus parallel identity columns.

    Audio sets carry ``subject_ids``/``repetition_ids`` as None.
    """

    modality: str
    matrix: np.ndarray
    segment_ids: np.ndarray
    category_ids: np.ndarray
    subject_ids: np.ndarray | None = None
    repetition_ids: np.ndarray | None = None

    def __post_init__(self):
        n = self.matrix.shape[0]
        for name in ("segment_ids", "category_ids"):
            ids = getattr(self, name)
            if len(ids) != n:
                raise DataFormatError(f"{name} length {len(ids)} != {n} rows")
        if self.modality not in ("audio", "eeg", "fused"):
            raise DataFormatError(f"unknown modality {self.modality!r}")

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def record(self, i: int) -> FeatureRecord:
        return FeatureRecord(
            segment_id=int(self.segment_ids[i]),
            subject_id=None if self.subject_ids is None else int(self.subject_ids[i]),
            repetition_id=None if self.repetition_ids is None else int(self.repetition_ids[i]),
            category_id=int(self.category_ids[i]),
            modality=self.modality,
            vector=self.matrix[i],
        )

    def subset(self, mask: np.ndarray) -> "FeatureSet":
        return FeatureSet(
            modality=self.modality,
            matrix=self.matrix[mask],
            segment_ids=self.segment_ids[mask],
            category_ids=self.category_ids[mask],
            subject_ids=None if self.subject_ids is None else self.subject_ids[mask],
            repetition_ids=None if self.repetition_ids is None else self.repetition_ids[mask],
        )


def generate_synthetic(manifest: DatasetManifest,
                       cfg: GenConfig) -> tuple[FeatureSet, FeatureSet]:
    """Generate one audio record per segment and one EEG record per
    (segment, subject, repetition).

    Construction: each category gets a latent mean (block separation set by
    the cfg category scales; the defaults separate categories weakly on the
    shared block and strongly on the modality-private blocks); each segment
    draws a latent z = [z_sh, z_a, z_e] around its category mean; then
    audio = A.[z_sh; z_a] + noise and eeg = B.[z_sh; z_e] + subject offset
    + noise with fixed mixing maps A, B drawn once from the seed.
    Deterministic for a given config.
    """
    rng = np.random.default_rng(cfg.seed)
    d_sh, d_a, d_e = (cfg.latent_dim_shared, cfg.latent_dim_audio_only,
                      cfg.latent_dim_eeg_only)
    d_total = d_sh + d_a + d_e
    m_audio = d_sh + d_a
    m_eeg = d_sh + d_e

    # Fixed draw order; changing it would silently change every corpus.
    mix_audio = rng.normal(size=(manifest.audio_dim, m_audio)) / np.sqrt(m_audio)
    mix_eeg = rng.normal(size=(manifest.eeg_dim, m_eeg)) / np.sqrt(m_eeg)
    scales = np.concatenate([
        np.full(d_sh, cfg.category_scale_shared),
        np.full(d_a + d_e, cfg.category_scale_private),
    ])
    cat_means = rng.normal(size=(manifest.n_categories, d_total)) * scales
    subject_offsets = cfg.sigma_subject * rng.normal(
        size=(manifest.n_subjects, manifest.eeg_dim))

    seg_cats = manifest.segment_categories()
    latents = cat_means[seg_cats] + cfg.segment_spread * rng.normal(
        size=(manifest.n_segments, d_total))
    z_audio = latents[:, :m_audio]
    z_eeg = np.concatenate([latents[:, :d_sh], latents[:, m_audio:]], axis=1)

    audio = z_audio @ mix_audio.T + cfg.sigma_audio * rng.normal(
        size=(manifest.n_segments, manifest.audio_dim))

    per_seg = manifest.n_subjects * manifest.n_reps
    eeg_core = z_eeg @ mix_eeg.T
    eeg = np.repeat(eeg_core, per_seg, axis=0)
    subj_col = np.tile(np.repeat(np.arange(manifest.n_subjects), manifest.n_reps),
                       manifest.n_segments)
    eeg += subject_offsets[subj_col]
    eeg += cfg.sigma_eeg * rng.normal(size=eeg.shape)

    audio_set = FeatureSet(
        modality="audio",
        matrix=audio,
        segment_ids=np.arange(manifest.n_segments, dtype=np.int64),
        category_ids=seg_cats.astype(np.int64),
    )
    eeg_seg = np.repeat(np.arange(manifest.n_segments, dtype=np.int64), per_seg)
    eeg_set = FeatureSet(
        modality="eeg",
        matrix=eeg,
        segment_ids=eeg_seg,
        category_ids=seg_cats[eeg_seg].astype(np.int64),
        subject_ids=subj_col.astype(np.int64),
        repetition_ids=np.tile(np.arange(manifest.n_reps, dtype=np.int64),
                               manifest.n_segments * manifest.n_subjects),
    )
    return audio_set, eeg_set


@dataclass
class FoldPlan:
    """Assignment of segments to cross-validation folds."""

    n_folds: int
    assignment: np.ndarray  # segment_id -> fold index

    def test_mask(self, segment_ids: np.ndarray, fold: int) -> np.ndarray:
        if not 0 <= fold < self.n_folds:
            raise ConfigurationError(f"fold {fold} out of range [0, {self.n_folds})")
        return self.assignment[segment_ids] == fold

    def to_json_dict(self) -> dict:
        return {"n_folds": self.n_folds, "assignment": self.assignment.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FoldPlan":
        return cls(n_folds=int(d["n_folds"]),
                   assignment=np.asarray(d["assignment"], dtype=np.int64))


def stratified_folds(manifest: DatasetManifest, n_folds: int, seed: int) -> FoldPlan:
    """Shuffle segments within each category and deal them round-robin,
    so every category is equally represented in every fold.
    """
    if n_folds < 2:
        raise ConfigurationError(f"n_folds must be >= 2, got {n_folds}")
    if manifest.segments_per_category < n_folds:
        raise ConfigurationError(
            f"{manifest.segments_per_category} segments per category cannot "
            f"fill {n_folds} folds"
        )
    rng = np.random.default_rng(seed)
    assignment = np.empty(manifest.n_segments, dtype=np.int64)
    spc = manifest.segments_per_category
    for c in range(manifest.n_categories):
        segs = np.arange(c * spc, (c + 1) * spc)
        rng.shuffle(segs)
        assignment[segs] = np.arange(spc) % n_folds
    return FoldPlan(n_folds=n_folds, assignment=assignment)


def split(features: FeatureSet, plan: FoldPlan,
          test_fold: int) -> tuple[FeatureSet, FeatureSet]:
    """Disjoint train/test partition; all records of a segment stay together."""
    mask = plan.test_mask(features.segment_ids, test_fold)
    return features.subset(~mask), features.subset(mask)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".ids.csv")


def write_features(path: str | Path, features: FeatureSet) -> None:
    """Write the matrix file plus its identity sidecar CSV."""
    path = Path(path)
    fileio.write_matrix(path, features.matrix)
    with open(_sidecar_path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "segment_id", "subject_id", "repetition_id",
                    "category_id", "modality"])
        for i in range(len(features)):
            subj = "" if features.subject_ids is None else int(features.subject_ids[i])
            rep = "" if features.repetition_ids is None else int(features.repetition_ids[i])
            w.writerow([i, int(features.segment_ids[i]), subj, rep,
                        int(features.category_ids[i]), features.modality])


def load_features(path: str | Path,
                  expected_dim: int | None = None) -> FeatureSet:
    """Load a matrix file and its identity sidecar back into a FeatureSet."""
    path = Path(path)
    matrix = fileio.read_matrix(path, expected_cols=expected_dim)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise DataFormatError(f"identity sidecar {sidecar} not found")
    seg, subj, rep, cat, modality = [], [], [], [], set()
    with open(sidecar, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            seg.append(int(row["segment_id"]))
            subj.append(None if row["subject_id"] == "" else int(row["subject_id"]))
            rep.append(None if row["repetition_id"] == "" else int(row["repetition_id"]))
            cat.append(int(row["category_id"]))
            modality.add(row["modality"])
    if len(seg) != matrix.shape[0]:
        raise DataFormatError(
            f"sidecar lists {len(seg)} records but matrix has {matrix.shape[0]} rows"
        )
    if len(modality) != 1:
        raise DataFormatError(f"sidecar mixes modalities: {sorted(modality)}")
    has_subj = subj[0] is not None
    return FeatureSet(
        modality=modality.pop(),
        matrix=matrix,
        segment_ids=np.asarray(seg, dtype=np.int64),
        category_ids=np.asarray(cat, dtype=np.int64),
        subject_ids=np.asarray(subj, dtype=np.int64) if has_subj else None,
        repetition_ids=np.asarray(rep, dtype=np.int64) if has_subj else None,
    )
