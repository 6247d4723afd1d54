"""Empirical checks of how the codebook partitions feature space.

* assignment consistency: share of same-identity pairs mapped to one codeword,
* collision rate: share of different-identity pairs mapped to one codeword,
* contraction: inside one cell, alignment scales pair differences by
  ``1 - alpha``, i.e. squared distances by ``(1 - alpha)**2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from codealign import bridge
from codealign.backbone import embed
from codealign.bridge import BlendingCoefficients, Codebook
from codealign.errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentStats:
    p_same: float | None = None
    p_collide: float | None = None
    n_genuine_pairs: int = 0
    n_impostor_pairs: int = 0


@dataclass(frozen=True)
class ContractionReport:
    max_abs_deviation_exact: float  # vs (1 - alpha)**2
    stated_factor_deviation: float  # vs (1 - alpha), signed mean
    mean_ratio: float
    n_same_cell_pairs: int
    warning: str | None = None


def sample_pairs(identities, genuine: bool, n_pairs: int, rng) -> np.ndarray:
    """Uniformly sampled index pairs ``(i, j)``, ``i < j``, of one kind.

    Returns an ``(m, 2)`` array with ``m = min(n_pairs, #eligible)``; when fewer
    pairs exist than requested, all of them are returned.
    """
    ids = np.asarray(identities)
    iu, ju = np.triu_indices(len(ids), 1)
    keep = (ids[iu] == ids[ju]) if genuine else (ids[iu] != ids[ju])
    iu, ju = iu[keep], ju[keep]
    if len(iu) == 0:
        raise InputError(f"no {'genuine' if genuine else 'impostor'} pairs available")
    if len(iu) > n_pairs:
        pick = np.sort(rng.choice(len(iu), size=n_pairs, replace=False))
        iu, ju = iu[pick], ju[pick]
    return np.stack([iu, ju], axis=1)


def _agreement(model, raw_a, raw_b) -> np.ndarray:
    a = np.atleast_2d(getattr(raw_a, "values", raw_a))
    b = np.atleast_2d(getattr(raw_b, "values", raw_b))
    if a.shape[0] == 0:
        raise InputError("empty pair list")
    if a.shape != b.shape:
        raise InputError("pair members must have matching shapes")
    return model.assignments(a) == model.assignments(b)


def estimate_p_same(model, pairs_a, pairs_b) -> AssignmentStats:
    """Frequency of equal assignments over same-identity pairs ``(a[i], b[i])``."""
    eq = _agreement(model, pairs_a, pairs_b)
    return AssignmentStats(p_same=float(np.mean(eq)), n_genuine_pairs=len(eq))


def estimate_p_collide(model, pairs_a, pairs_b) -> AssignmentStats:
    """Frequency of equal assignments over different-identity pairs."""
    eq = _agreement(model, pairs_a, pairs_b)
    return AssignmentStats(p_collide=float(np.mean(eq)), n_impostor_pairs=len(eq))


def assignment_stats(model, observations, n_pairs: int = 1000, rng=None) -> AssignmentStats:
    """Both probabilities on one labeled set, pairs drawn with a seeded rng."""
    rng = np.random.default_rng(0) if rng is None else rng
    vals = observations.values
    g = sample_pairs(observations.identities, True, n_pairs, rng)
    i = sample_pairs(observations.identities, False, n_pairs, rng)
    s = estimate_p_same(model, vals[g[:, 0]], vals[g[:, 1]])
    c = estimate_p_collide(model, vals[i[:, 0]], vals[i[:, 1]])
    return AssignmentStats(s.p_same, c.p_collide, s.n_genuine_pairs, c.n_impostor_pairs)


def contraction_from_features(z1, z2, codebook: Codebook, alpha: float) -> ContractionReport:
    """Compare aligned vs raw squared distances over same-cell pairs.

    Pairs whose members fall in different cells are skipped; if none remain a
    report with a warning (and NaN deviations) is returned.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    z2 = np.atleast_2d(np.asarray(z2, dtype=np.float64))
    i1, _ = bridge.assign(z1, codebook)
    i2, _ = bridge.assign(z2, codebook)
    raw_d2 = np.sum((z1 - z2) ** 2, axis=1)
    same = (i1 == i2) & (raw_d2 > 0)
    n = int(same.sum())
    if n == 0:
        log.warning("no same-cell pairs among %d pairs", len(z1))
        return ContractionReport(float("nan"), float("nan"), float("nan"), 0,
                                 warning="no same-cell pairs")
    coeffs = BlendingCoefficients.from_alpha(alpha)
    t1 = bridge.align(z1[same], codebook, coeffs)
    t2 = bridge.align(z2[same], codebook, coeffs)
    ratio = np.sum((t1 - t2) ** 2, axis=1) / raw_d2[same]
    return ContractionReport(
        max_abs_deviation_exact=float(np.max(np.abs(ratio - (1.0 - alpha) ** 2))),
        stated_factor_deviation=float(np.mean(ratio) - (1.0 - alpha)),
        mean_ratio=float(np.mean(ratio)),
        n_same_cell_pairs=n,
    )


def verify_contraction(model, pairs_a, pairs_b, alpha: float) -> ContractionReport:
    """Contraction check on genuine raw-observation pairs through ``model``."""
    za = embed(model.backbone, np.atleast_2d(getattr(pairs_a, "values", pairs_a)))
    zb = embed(model.backbone, np.atleast_2d(getattr(pairs_b, "values", pairs_b)))
    return contraction_from_features(za, zb, model.codebook, alpha)


def same_cell_pairs(codebook: Codebook, n_pairs: int, rng, spread: float = 1.0):
    """Random pairs guaranteed to share a Voronoi cell.

    A point ``x`` is drawn around a random codeword and its cell ``k`` found;
    a second point is drawn the same way and pulled towards ``p_k`` along the
    segment until it lands in cell ``k``. Cells are convex and contain their
    codeword, so this terminates.
    """
    P = codebook.vectors
    K, D = P.shape
    a = np.empty((n_pairs, D))
    b = np.empty((n_pairs, D))
    filled = 0
    while filled < n_pairs:
        m = n_pairs - filled
        base = P[rng.integers(0, K, size=m)]
        x = base + spread * rng.standard_normal((m, D))
        k, _ = bridge.assign(x, codebook)
        y = base + spread * rng.standard_normal((m, D))
        t = np.ones(m)
        for _ in range(60):
            cand = P[k] + t[:, None] * (y - P[k])
            ky, _ = bridge.assign(cand, codebook)
            bad = ky != k
            if not bad.any():
                break
            t[bad] *= 0.5
        cand = P[k] + t[:, None] * (y - P[k])
        ky, _ = bridge.assign(cand, codebook)
        ok = (ky == k) & np.any(cand != x, axis=1)
        n_ok = int(ok.sum())
        a[filled:filled + n_ok] = x[ok]
        b[filled:filled + n_ok] = cand[ok]
        filled += n_ok
    return a, b


@dataclass(frozen=True)
class Utilization:
    counts: np.ndarray  # (K,)
    dead: int

    @property
    def dead_fraction(self) -> float:
        return self.dead / len(self.counts)


def codebook_utilization(model, batch) -> Utilization:
    """Assignment counts per codeword over ``batch`` (raw observations)."""
    idx = model.assignments(getattr(batch, "values", batch))
    counts = np.bincount(idx, minlength=model.codebook.K)
    return Utilization(counts, int(np.sum(counts == 0)))


def diagnostics_dict(stats: AssignmentStats, contraction: ContractionReport,
                     util: Utilization, extra: dict | None = None) -> dict:
    out = {
        "p_same": stats.p_same,
        "p_collide": stats.p_collide,
        "n_genuine_pairs": stats.n_genuine_pairs,
        "n_impostor_pairs": stats.n_impostor_pairs,
        "contraction": {
            "exact_dev": _finite_or_none(contraction.max_abs_deviation_exact),
            "stated_dev": _finite_or_none(contraction.stated_factor_deviation),
            "mean_ratio": _finite_or_none(contraction.mean_ratio),
            "n_same_cell_pairs": contraction.n_same_cell_pairs,
            "warning": contraction.warning,
        },
        "utilization": [int(c) for c in util.counts],
        "dead_fraction": util.dead_fraction,
    }
    if extra:
        out.update(extra)
    return out


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None
