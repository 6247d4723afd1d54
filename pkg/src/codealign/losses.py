"""Training objectives for the codebook and backbone.

All gradients are hand-derived. Stop-gradient (``sg``) means a quantity is a
constant for differentiation, so each consistency term updates one side only:

* ``||p - sg(z)||^2`` moves codewords towards features,
* ``lam * ||sg(p) - z||^2`` moves features towards their codewords.

``surrogate_objective`` re-evaluates the same objective with every ``sg``
quantity frozen at an anchor point; its plain derivative at the anchor is the
routed gradient, which is what :func:`finite_difference_check` compares with.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from codealign import bridge
from codealign.backbone import BackboneParams, embed, embed_backward, task_loss_and_grad
from codealign.bridge import BlendingCoefficients, Codebook
from codealign.errors import ConfigError, DegenerateCodebookError, DimensionError, OracleError

LOG_FIELDS = ("epoch", "step", "task", "consistency", "orthogonality", "total")


@dataclass(frozen=True)
class LossWeights:
    lambda_con_inner: float = 0.25
    alpha_con: float = 1.0
    beta_orth: float = 1.0

    def __post_init__(self):
        for name in ("lambda_con_inner", "alpha_con", "beta_orth"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


class ConsistencyResult(NamedTuple):
    value: float
    grad_z: np.ndarray
    grad_p_rows: np.ndarray


def consistency_loss(z_batch, assigned, lam: float, codebook_term: bool = True) -> ConsistencyResult:
    """Symmetric feature/codeword consistency with stop-gradients.

    ``assigned[i]`` is the codeword selected for ``z_batch[i]``. ``grad_p_rows``
    must be scatter-added into the codebook by assignment index.
    """
    z = np.asarray(z_batch, dtype=np.float64)
    p = np.asarray(assigned, dtype=np.float64)
    if z.shape != p.shape or z.ndim != 2:
        raise DimensionError(f"shape mismatch {z.shape} vs {p.shape}")
    B = z.shape[0]
    diff = p - z
    sq = np.sum(diff * diff, axis=1)
    c = 1.0 if codebook_term else 0.0
    value = float(np.sum(c * sq + lam * sq) / B)
    grad_z = (-2.0 * lam / B) * diff
    grad_p = (2.0 * c / B) * diff
    return ConsistencyResult(value, grad_z, grad_p)


def orthogonality_loss(vectors) -> tuple[float, np.ndarray]:
    """Mean squared deviation of the cosine-similarity matrix from identity.

    The gradient is with respect to the unnormalized rows.
    """
    V = np.asarray(getattr(vectors, "vectors", vectors), dtype=np.float64)
    K = V.shape[0]
    norms = np.sqrt(np.sum(V * V, axis=1, keepdims=True))
    if np.any(norms == 0):
        raise DegenerateCodebookError("codebook has a zero-norm row")
    W = V / norms
    R = W @ W.T
    R[np.diag_indices(K)] -= 1.0
    value = float(np.sum(R * R) / K**2)
    gW = (4.0 / K**2) * (R @ W)
    # d(v/|v|) = (I - w w^T) / |v|
    gV = (gW - W * np.sum(gW * W, axis=1, keepdims=True)) / norms
    return value, gV


@dataclass
class LossReport:
    total: float
    task: float
    consistency: float
    orthogonality: float
    grad_codebook: np.ndarray | None
    grad_features: np.ndarray
    grad_backbone: BackboneParams
    index: np.ndarray | None = None

    def row(self, epoch: int, step: int) -> dict:
        return {"epoch": epoch, "step": step, "task": self.task, "consistency": self.consistency,
                "orthogonality": self.orthogonality, "total": self.total}


def total_loss(params: BackboneParams, raw, labels, codebook: Codebook | None,
               coeffs: BlendingCoefficients, weights: LossWeights,
               straight_through: bool = True) -> LossReport:
    """Forward pass and routed gradients for one batch.

    With ``codebook=None`` this is plain task training on ``z``. Otherwise the
    head sees the blended feature; ``straight_through`` controls how the task
    gradient crosses the mapped branch: when on, ``z`` receives it unscaled
    and the selected codewords receive ``w_map`` times it; when off, ``z``
    receives ``w_ori`` times it and the codebook receives nothing.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    z = embed(params, raw)

    if codebook is None:
        task, tg = task_loss_and_grad(params, z, labels)
        gw, gb = embed_backward(raw, tg.features)
        return LossReport(
            total=task, task=task, consistency=0.0, orthogonality=0.0, grad_codebook=None,
            grad_features=tg.features,
            grad_backbone=BackboneParams(gw, gb, tg.classifier_weight, tg.classifier_bias),
        )

    m = bridge.map_batch(z, codebook)
    z_hat = bridge.blend(z, m.mapped, coeffs)
    task, tg = task_loss_and_grad(params, z_hat, labels)

    grad_cb = np.zeros_like(codebook.vectors)
    if straight_through:
        grad_z = (coeffs.w_ori + coeffs.w_map) * tg.features
        np.add.at(grad_cb, m.index, coeffs.w_map * tg.features)
    else:
        grad_z = coeffs.w_ori * tg.features

    con = consistency_loss(z, m.mapped, weights.lambda_con_inner)
    grad_z = grad_z + weights.alpha_con * con.grad_z
    np.add.at(grad_cb, m.index, weights.alpha_con * con.grad_p_rows)

    orth_value, orth_grad = orthogonality_loss(codebook.vectors)
    grad_cb += weights.beta_orth * orth_grad

    gw, gb = embed_backward(raw, grad_z)
    total = task + weights.alpha_con * con.value + weights.beta_orth * orth_value
    return LossReport(
        total=total, task=task, consistency=con.value, orthogonality=orth_value,
        grad_codebook=grad_cb, grad_features=grad_z,
        grad_backbone=BackboneParams(gw, gb, tg.classifier_weight, tg.classifier_bias),
        index=m.index,
    )


class Anchor(NamedTuple):
    features: np.ndarray
    index: np.ndarray
    assigned: np.ndarray


def make_anchor(params: BackboneParams, raw, codebook: Codebook) -> Anchor:
    z = embed(params, np.atleast_2d(raw))
    idx, _ = bridge.assign(z, codebook)
    return Anchor(z, idx, codebook.vectors[idx].copy())


def surrogate_objective(params: BackboneParams, codebook_vectors, raw, labels,
                        coeffs: BlendingCoefficients, weights: LossWeights,
                        straight_through: bool, anchor: Anchor) -> float:
    """Objective value with stop-gradient terms frozen at ``anchor``.

    Written independently of :func:`total_loss` (no shared gradient code) so it
    can serve as a finite-difference oracle for it.
    """
    raw = np.atleast_2d(raw)
    z = raw @ params.weight.T + params.bias
    P = np.asarray(codebook_vectors)
    p = P[anchor.index]
    if straight_through:
        z_hat = coeffs.w_ori * z + coeffs.w_map * p + coeffs.w_map * (z - anchor.features)
    else:
        z_hat = coeffs.w_ori * z + coeffs.w_map * anchor.assigned

    logits = z_hat @ params.classifier_weight.T + params.classifier_bias
    task = 0.0
    for row, y in zip(logits, np.asarray(labels)):
        mx = max(row)
        task += -(row[y] - mx - np.log(sum(np.exp(v - mx) for v in row)))
    task /= len(logits)

    con = 0.0
    for i in range(z.shape[0]):
        con += np.sum((p[i] - anchor.features[i]) ** 2)
        con += weights.lambda_con_inner * np.sum((anchor.assigned[i] - z[i]) ** 2)
    con /= z.shape[0]

    K = P.shape[0]
    orth = 0.0
    for i in range(K):
        for j in range(K):
            cos = P[i] @ P[j] / (np.linalg.norm(P[i]) * np.linalg.norm(P[j]))
            orth += (cos - (1.0 if i == j else 0.0)) ** 2
    orth /= K * K

    return float(task + weights.alpha_con * con + weights.beta_orth * orth)


def finite_difference_check(loss_evaluator: Callable, point, epsilon: float = 1e-6,
                            grad=None, floor: float = 1e-12) -> float:
    """Worst central-difference error of an analytic gradient.

    ``loss_evaluator(x)`` returns the loss, or ``(loss, grad)``; in the latter
    case the gradient at ``point`` is taken from it unless ``grad`` is given.
    The worst coordinate error is divided by the largest numeric gradient
    magnitude (at least ``floor``), so exactly-zero coordinates do not turn
    round-off into unit errors while a gradient off by a factor of two still
    reports an error of one.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x0 = np.array(point, dtype=np.float64).ravel()

    def value(x):
        out = loss_evaluator(x)
        return float(out[0] if isinstance(out, tuple) else out)

    first, second = loss_evaluator(x0.copy()), loss_evaluator(x0.copy())
    v1 = first[0] if isinstance(first, tuple) else first
    v2 = second[0] if isinstance(second, tuple) else second
    if v1 != v2:
        raise OracleError("loss evaluator is not deterministic")
    if grad is None:
        if not isinstance(first, tuple):
            raise ValueError("no analytic gradient supplied")
        grad = first[1]
    g = np.asarray(grad, dtype=np.float64).ravel()
    if g.shape != x0.shape:
        raise DimensionError(f"gradient shape {g.shape} != point shape {x0.shape}")

    fd = np.empty_like(x0)
    x = x0.copy()
    for i in range(x0.size):
        x[i] = x0[i] + epsilon
        fp = value(x)
        x[i] = x0[i] - epsilon
        fm = value(x)
        x[i] = x0[i]
        fd[i] = (fp - fm) / (2.0 * epsilon)

    scale = max(np.max(np.abs(fd), initial=0.0), floor)
    return float(np.max(np.abs(fd - g), initial=0.0) / scale)


def write_training_log(path, rows, append: bool = False) -> None:
    new = not append or not os.path.exists(path)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})
