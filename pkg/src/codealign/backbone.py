"""Affine feature extractor with a softmax classification head.

Stands in for a CNN backbone: ``z = weight @ x + bias`` followed by a linear
classifier trained with cross-entropy over the training identities.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from codealign.errors import DimensionError, InputError, LabelError

PARAM_NAMES = ("weight", "bias", "classifier_weight", "classifier_bias")


@dataclass
class BackboneParams:
    weight: np.ndarray  # (D, raw_dim)
    bias: np.ndarray  # (D,)
    classifier_weight: np.ndarray  # (C, D)
    classifier_bias: np.ndarray  # (C,)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> "BackboneParams":
        p = cls(**{name: np.array(d[name], dtype=np.float64) for name in PARAM_NAMES})
        p.validate()
        return p

    def copy(self) -> "BackboneParams":
        return BackboneParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def validate(self) -> None:
        D, R = self.weight.shape
        C = self.classifier_weight.shape[0]
        if self.bias.shape != (D,) or self.classifier_weight.shape != (C, D) \
                or self.classifier_bias.shape != (C,):
            raise DimensionError("inconsistent backbone parameter shapes")
        for name, v in self.as_dict().items():
            if not np.all(np.isfinite(v)):
                raise InputError(f"backbone parameter {name} is not finite")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, name), dtype=np.float64).tobytes())
        return h.hexdigest()


def init_backbone(raw_dim: int, dim: int, num_classes: int, rng: np.random.Generator) -> BackboneParams:
    """Gaussian init scaled by fan-in; biases start at zero."""
    return BackboneParams(
        weight=rng.standard_normal((dim, raw_dim)) / np.sqrt(raw_dim),
        bias=np.zeros(dim),
        classifier_weight=rng.standard_normal((num_classes, dim)) / np.sqrt(dim),
        classifier_bias=np.zeros(num_classes),
    )


def embed(params: BackboneParams, raw) -> np.ndarray:
    """Features for one raw vector (shape (R,)) or a batch (shape (B, R))."""
    x = getattr(raw, "values", raw)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.raw_dim:
        raise DimensionError(f"raw dimension {x.shape[-1]} != backbone input {params.raw_dim}")
    return x @ params.weight.T + params.bias


@dataclass
class TaskGrads:
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray
    features: np.ndarray  # dL/d(features fed to the head), (B, D)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def task_loss_and_grad(params: BackboneParams, features: np.ndarray, labels) -> tuple[float, TaskGrads]:
    """Mean softmax cross-entropy of the head on ``features``.

    ``labels`` are class indices in ``[0, C)``. The feature gradient is
    returned so callers can push it back through the alignment step.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    B = features.shape[0]
    if B == 0:
        raise InputError("empty feature batch")
    if labels.shape != (B,):
        raise DimensionError(f"expected {B} labels, got shape {labels.shape}")
    C = params.num_classes
    if np.any(labels < 0) or np.any(labels >= C):
        raise LabelError(f"labels must lie in [0, {C})")

    logits = features @ params.classifier_weight.T + params.classifier_bias
    logp = _log_softmax(logits)
    rows = np.arange(B)
    loss = -float(np.mean(logp[rows, labels]))

    g_logits = np.exp(logp)
    g_logits[rows, labels] -= 1.0
    g_logits /= B
    grads = TaskGrads(
        classifier_weight=g_logits.T @ features,
        classifier_bias=g_logits.sum(axis=0),
        features=g_logits @ params.classifier_weight,
    )
    return loss, grads


def embed_backward(raw: np.ndarray, grad_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the affine map given dL/dz for a batch."""
    return grad_features.T @ raw, grad_features.sum(axis=0)
