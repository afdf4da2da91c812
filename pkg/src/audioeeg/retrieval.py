"""Cross-modal retrieval in the shared space: ranking, MRR1 and MAP, and the
component-count sweep.

EEG records query the fold's audio gallery (one relevant audio each, scored
by MRR1); audio records query the fold's EEG gallery (all recordings of the
segment are relevant, scored by MAP).  Ranks start at 1 and ties break by
ascending gallery id so results are deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corr import SharedSpace
from .errors import ConfigurationError, DataFormatError

METRICS = ("cosine", "euclidean")


@dataclass
class RankedList:
    query_id: int
    gallery_ids: np.ndarray  # best first
    scores: np.ndarray       # nonincreasing

    def rank_of(self, gallery_id: int) -> int:
        """1-based rank of a gallery item."""
        pos = np.flatnonzero(self.gallery_ids == gallery_id)
        if pos.size == 0:
            raise ConfigurationError(
                f"gallery id {gallery_id} absent from ranking of query {self.query_id}"
            )
        return int(pos[0]) + 1


def similarity_scores(query: np.ndarray, gallery: np.ndarray,
                      metric: str = "cosine") -> np.ndarray:
    if metric == "cosine":
        qn = float(np.linalg.norm(query))
        gn = np.linalg.norm(gallery, axis=1)
        scores = np.full(gallery.shape[0], -1.0)
        ok = gn > 0
        if qn > 0:
            scores[ok] = gallery[ok] @ query / (gn[ok] * qn)
        return scores
    if metric == "euclidean":
        return -np.linalg.norm(gallery - query, axis=1)
    raise ConfigurationError(f"metric must be one of {METRICS}, got {metric!r}")


def rank_gallery(query: np.ndarray, gallery: np.ndarray,
                 metric: str = "cosine", query_id: int = 0,
                 gallery_ids: np.ndarray | None = None) -> RankedList:
    """Full gallery ordering by descending similarity, ids ascending on ties.

    Zero-norm rows (or a zero-norm query) score -1 under cosine.
    """
    query = np.asarray(query, dtype=np.float64).ravel()
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if gallery.shape[0] == 0:
        raise ConfigurationError("gallery is empty")
    if gallery.shape[1] != query.size:
        raise DataFormatError(
            f"dimension mismatch: query has {query.size} entries, "
            f"gallery rows have {gallery.shape[1]}"
        )
    if gallery_ids is None:
        gallery_ids = np.arange(gallery.shape[0])
    scores = similarity_scores(query, gallery, metric)
    order = np.lexsort((gallery_ids, -scores))
    return RankedList(query_id=query_id,
                      gallery_ids=np.asarray(gallery_ids)[order],
                      scores=scores[order])


def mrr1(ranked_lists: list[RankedList], relevant: dict[int, int]) -> float:
    """Mean reciprocal rank of the single relevant item per query."""
    if not ranked_lists:
        raise ConfigurationError("no queries to score")
    total = 0.0
    for rl in ranked_lists:
        total += 1.0 / rl.rank_of(relevant[rl.query_id])
    return total / len(ranked_lists)


def map_score(ranked_lists: list[RankedList],
              relevance: dict[int, set[int]]) -> float:
    """Mean average precision; AP averages precision-at-rank over all
    relevant items of a query."""
    if not ranked_lists:
        raise ConfigurationError("no queries to score")
    total = 0.0
    for rl in ranked_lists:
        relevant = relevance[rl.query_id]
        if not relevant:
            raise ConfigurationError(f"empty relevance set for query {rl.query_id}")
        hits = np.isin(rl.gallery_ids, list(relevant))
        if hits.sum() != len(relevant):
            raise ConfigurationError(
                f"relevance set of query {rl.query_id} not contained in gallery"
            )
        ranks = np.flatnonzero(hits) + 1
        precision_at = np.arange(1, len(ranks) + 1) / ranks
        total += precision_at.mean()
    return total / len(ranked_lists)


# ---------------------------------------------------------------------------
# component sweep

@dataclass
class FoldRetrievalData:
    """Test-fold feature matrices with segment identities."""

    audio: np.ndarray            # (m, dx)
    audio_segments: np.ndarray   # (m,)
    eeg: np.ndarray              # (q, dy)
    eeg_segments: np.ndarray     # (q,)


@dataclass
class RetrievalReport:
    ks: list[int]
    mrr1_per_fold: np.ndarray  # (n_folds, n_k)
    map_per_fold: np.ndarray   # (n_folds, n_k)

    @property
    def mrr1_mean(self) -> np.ndarray:
        return self.mrr1_per_fold.mean(axis=0)

    @property
    def mrr1_std(self) -> np.ndarray:
        return self.mrr1_per_fold.std(axis=0)

    @property
    def map_mean(self) -> np.ndarray:
        return self.map_per_fold.mean(axis=0)

    @property
    def map_std(self) -> np.ndarray:
        return self.map_per_fold.std(axis=0)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mrr1_mean", "mrr1_std", "map_mean", "map_std"])
            for i, k in enumerate(self.ks):
                w.writerow([k, repr(float(self.mrr1_mean[i])),
                            repr(float(self.mrr1_std[i])),
                            repr(float(self.map_mean[i])),
                            repr(float(self.map_std[i]))])

    def to_json_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "mrr1_per_fold": self.mrr1_per_fold.tolist(),
            "map_per_fold": self.map_per_fold.tolist(),
            "mrr1_mean": self.mrr1_mean.tolist(),
            "map_mean": self.map_mean.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RetrievalReport":
        return cls(ks=[int(k) for k in d["ks"]],
                   mrr1_per_fold=np.asarray(d["mrr1_per_fold"], dtype=np.float64),
                   map_per_fold=np.asarray(d["map_per_fold"], dtype=np.float64))


def fold_metrics(space: SharedSpace, data: FoldRetrievalData, k: int,
                 metric: str = "cosine") -> tuple[float, float]:
    """(MRR1 of EEG->audio, MAP of audio->EEG) at k shared components."""
    audio_z = space.project(data.audio, "x", k)
    eeg_z = space.project(data.eeg, "y", k)

    ranked = [rank_gallery(eeg_z[q], audio_z, metric, query_id=q)
              for q in range(eeg_z.shape[0])]
    seg_to_audio = {int(s): i for i, s in enumerate(data.audio_segments)}
    relevant = {q: seg_to_audio[int(data.eeg_segments[q])]
                for q in range(eeg_z.shape[0])}
    mrr = mrr1(ranked, relevant)

    ranked_a = [rank_gallery(audio_z[q], eeg_z, metric, query_id=q)
                for q in range(audio_z.shape[0])]
    relevance = {
        q: set(np.flatnonzero(data.eeg_segments == data.audio_segments[q]).tolist())
        for q in range(audio_z.shape[0])
    }
    return mrr, map_score(ranked_a, relevance)


def sweep_components(spaces: list[SharedSpace], folds: list[FoldRetrievalData],
                     ks: list[int], metric: str = "cosine") -> RetrievalReport:
    """Evaluate every fold's shared space at each component count."""
    if len(spaces) != len(folds):
        raise ConfigurationError(
            f"{len(spaces)} models but {len(folds)} fold datasets"
        )
    for k in ks:
        for space in spaces:
            if k > space.n_components:
                raise ConfigurationError(
                    f"k={k} exceeds model dimension {space.n_components}"
                )
    mrr_vals = np.zeros((len(folds), len(ks)))
    map_vals = np.zeros((len(folds), len(ks)))
    for fi, (space, data) in enumerate(zip(spaces, folds)):
        for ki, k in enumerate(ks):
            mrr_vals[fi, ki], map_vals[fi, ki] = fold_metrics(space, data, k, metric)
    return RetrievalReport(ks=list(ks), mrr1_per_fold=mrr_vals,
                           map_per_fold=map_vals)
