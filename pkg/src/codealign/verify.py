"""Enrollment, pair scoring and verification metrics.

Scores are similarities: larger means "more likely the same identity". The
default is the negative squared Euclidean distance; cosine is optional. A
pair is accepted at threshold ``t`` when ``score >= t``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from codealign import kernels
from codealign.errors import CompatibilityError, InputError, MetricError, ProtocolError

SCORE_KINDS = ("negative_l2", "cosine")


@dataclass(frozen=True)
class GalleryTemplateSet:
    identities: np.ndarray  # (n,)
    templates: np.ndarray  # (n, D)

    def __len__(self) -> int:
        return len(self.identities)


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray  # (n,)
    genuine: np.ndarray  # (n,) bool
    kind: str = "negative_l2"

    @property
    def genuine_scores(self) -> np.ndarray:
        return self.scores[self.genuine]

    @property
    def impostor_scores(self) -> np.ndarray:
        return self.scores[~self.genuine]

    def require_both(self) -> None:
        if len(self.scores) == 0:
            raise MetricError("empty score set")
        if not self.genuine.any():
            raise MetricError("score set has no genuine scores")
        if self.genuine.all():
            raise MetricError("score set has no impostor scores")


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    far_at_threshold: float
    frr_at_threshold: float
    crossing_gap: float  # |FAR - FRR| at the nearest swept threshold


def _features(model, raw) -> np.ndarray:
    values = getattr(raw, "values", raw)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] == 0:
        raise InputError("no samples")
    if values.shape[1] != model.backbone.raw_dim:
        raise CompatibilityError(
            f"sample dim {values.shape[1]} != model input dim {model.backbone.raw_dim}"
        )
    return model.features(values)


def enroll(model, gallery_samples) -> GalleryTemplateSet:
    """Embed (and align, for bridged models) every gallery sample."""
    feats = _features(model, gallery_samples)
    if not np.all(np.isfinite(feats)):
        raise InputError("non-finite template")
    return GalleryTemplateSet(np.asarray(gallery_samples.identities).copy(), feats)


def similarity_matrix(query_feats, templates, kind: str = "negative_l2") -> np.ndarray:
    if kind == "negative_l2":
        return -kernels.pairwise_sqdist(query_feats, templates)
    if kind == "cosine":
        qn = query_feats / np.linalg.norm(query_feats, axis=1, keepdims=True)
        tn = templates / np.linalg.norm(templates, axis=1, keepdims=True)
        return qn @ tn.T
    raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def score_pairs(model, gallery: GalleryTemplateSet, query_samples,
                kind: str = "negative_l2") -> ScoreSet:
    """Score every (query, gallery template) pair, query-major order."""
    if len(gallery) == 0:
        raise InputError("empty gallery")
    q = _features(model, query_samples)
    S = similarity_matrix(q, gallery.templates, kind)
    same = np.asarray(query_samples.identities)[:, None] == gallery.identities[None, :]
    return ScoreSet(S.ravel(), same.ravel(), kind)


def _far_frr_table(scores: ScoreSet):
    """FAR/FRR at every distinct score plus one threshold above the maximum."""
    s = scores.scores
    thresholds = np.unique(s)
    top = thresholds[-1]
    thresholds = np.append(thresholds, top + max(1.0, abs(top)))
    gen = np.sort(scores.genuine_scores)
    imp = np.sort(scores.impostor_scores)
    # accepted when score >= t
    far = 1.0 - np.searchsorted(imp, thresholds, side="left") / len(imp)
    frr = np.searchsorted(gen, thresholds, side="left") / len(gen)
    return thresholds, far, frr


def compute_eer(scores: ScoreSet) -> EerResult:
    """Equal error rate with linear interpolation between bracketing thresholds."""
    scores.require_both()
    t, far, frr = _far_frr_table(scores)
    d = far - frr  # non-increasing in t, from +1 (t = min) to -1 (t > max)
    i = int(np.nonzero(d >= 0)[0][-1])
    j = int(np.argmin(np.abs(d)))
    at = (float(far[j]), float(frr[j]), float(abs(d[j])))
    if d[i] == 0:
        return EerResult(float(far[i]), float(t[i]), *at)
    lam = d[i] / (d[i] - d[i + 1])
    eer = far[i] + lam * (far[i + 1] - far[i])
    thr = t[i] + lam * (t[i + 1] - t[i])
    return EerResult(float(eer), float(thr), *at)


def rates_at(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """``(far, frr)`` at one threshold."""
    scores.require_both()
    far = float(np.mean(scores.impostor_scores >= threshold))
    frr = float(np.mean(scores.genuine_scores < threshold))
    return far, frr


def compute_roc(scores: ScoreSet, n_points: int = 101) -> tuple[np.ndarray, np.ndarray]:
    """GAR on an even FAR grid over [0, 1].

    At each grid FAR the best GAR among thresholds whose FAR does not exceed
    it is reported, so the curve is non-decreasing and ends at (1, 1).
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    scores.require_both()
    _, far, frr = _far_frr_table(scores)
    gar = 1.0 - frr
    # far is non-increasing along thresholds; flip to increasing
    far, gar = far[::-1], gar[::-1]
    grid = np.linspace(0.0, 1.0, n_points)
    best = np.maximum.accumulate(gar)
    pos = np.searchsorted(far, grid, side="right") - 1
    return grid, best[pos]


def rank1_accuracy(model, gallery: GalleryTemplateSet, query_samples,
                   kind: str = "negative_l2") -> float:
    """Share of queries whose best-matching gallery identity is their own.

    A gallery identity scores as the best of its templates. A tie for first
    place counts as a miss.
    """
    q_ids = np.asarray(query_samples.identities)
    g_ids = np.unique(gallery.identities)
    missing = set(q_ids.tolist()) - set(g_ids.tolist())
    if missing:
        raise ProtocolError(f"query identities missing from gallery: {sorted(missing)[:5]}")
    q = _features(model, query_samples)
    S = similarity_matrix(q, gallery.templates, kind)
    per_id = np.full((len(q_ids), len(g_ids)), -np.inf)
    col = np.searchsorted(g_ids, gallery.identities)
    for c in range(len(g_ids)):
        per_id[:, c] = S[:, col == c].max(axis=1)
    top = per_id.max(axis=1)
    n_top = np.sum(per_id == top[:, None], axis=1)
    winner = g_ids[np.argmax(per_id, axis=1)]
    return float(np.mean((winner == q_ids) & (n_top == 1)))


def gi_histogram(scores: ScoreSet, n_bins: int = 50):
    """Genuine and impostor counts over shared bin edges.

    Returns ``(edges, genuine_counts, impostor_counts)``.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    scores.require_both()
    lo, hi = float(scores.scores.min()), float(scores.scores.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    g, _ = np.histogram(scores.genuine_scores, bins=edges)
    i, _ = np.histogram(scores.impostor_scores, bins=edges)
    return edges, g, i


def write_roc_csv(path, far, gar) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["far", "gar"])
        for a, b in zip(far, gar):
            w.writerow([repr(float(a)), repr(float(b))])


def write_gi_csv(path, edges, genuine_counts, impostor_counts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "genuine_count", "impostor_count"])
        for k in range(len(genuine_counts)):
            w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])),
                        int(genuine_counts[k]), int(impostor_counts[k])])


def metrics_dict(eer: EerResult, acc: float, scores: ScoreSet) -> dict:
    return {
        "eer": eer.eer,
        "acc": acc,
        "threshold": eer.threshold,
        "n_genuine": int(scores.genuine.sum()),
        "n_impostor": int((~scores.genuine).sum()),
    }


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
