"""Codebook, nearest-vector assignment and blended alignment.

``align`` computes ``w_ori * z + w_map * p_k`` where ``p_k`` is the codeword
nearest to ``z`` in squared Euclidean distance. The same function is used for
enrollment and query vectors.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from codealign import kernels
from codealign.errors import ConfigError, DimensionError, InputError

CODEBOOK_VERSION = "codealign-codebook/1"


@dataclass
class Codebook:
    vectors: np.ndarray  # (K, D)
    version: str = CODEBOOK_VERSION

    def __post_init__(self):
        self.vectors = np.array(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ConfigError(f"codebook must be a nonempty K x D matrix, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("codebook entries must be finite")

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.vectors.copy(), self.version)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.vectors).tobytes()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "K": self.K,
            "D": self.D,
            "vectors": [float(v) for v in self.vectors.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        if d.get("version") != CODEBOOK_VERSION:
            raise ConfigError(f"unsupported codebook version {d.get('version')!r}")
        K, D = int(d["K"]), int(d["D"])
        flat = np.asarray(d["vectors"], dtype=np.float64)
        if flat.size != K * D:
            raise DimensionError(f"codebook has {flat.size} values, expected K*D = {K * D}")
        return cls(flat.reshape(K, D))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class BlendingCoefficients:
    """Weights of the original and the mapped vector.

    ``w_ori + w_map == 1`` is enforced unless ``unconstrained`` is set.
    """

    w_ori: float = 0.7
    w_map: float = 0.3
    unconstrained: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.w_ori) and np.isfinite(self.w_map)):
            raise ConfigError("blending coefficients must be finite")
        if self.unconstrained:
            return
        if not (0.0 <= self.w_ori <= 1.0 and 0.0 <= self.w_map <= 1.0):
            raise ConfigError(f"blending coefficients must lie in [0, 1], got {self}")
        if abs(self.w_ori + self.w_map - 1.0) > 1e-12:
            raise ConfigError(f"w_ori + w_map must equal 1, got {self.w_ori + self.w_map}")

    @classmethod
    def from_alpha(cls, alpha: float) -> "BlendingCoefficients":
        return cls(w_ori=1.0 - alpha, w_map=alpha)

    @property
    def alpha(self) -> float:
        return self.w_map

    @property
    def is_identity(self) -> bool:
        return self.w_map == 0.0 and self.w_ori == 1.0


class AssignmentResult(NamedTuple):
    index: int
    squared_distance: float


class BatchMapping(NamedTuple):
    mapped: np.ndarray  # (B, D) rows copied from the codebook
    index: np.ndarray  # (B,) int64
    squared_distance: np.ndarray  # (B,)


def _check_batch(Z, codebook: Codebook) -> np.ndarray:
    if codebook is None:
        raise ConfigError("no codebook")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError(f"expected a (B, D) batch, got shape {Z.shape}")
    if Z.shape[0] == 0:
        raise InputError("empty batch")
    if Z.shape[1] != codebook.D:
        raise DimensionError(f"feature dim {Z.shape[1]} != codebook dim {codebook.D}")
    if not np.all(np.isfinite(Z)):
        raise InputError("features must be finite")
    return Z


def assign(Z, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codeword index and squared distance for every row of ``Z``."""
    Z = _check_batch(Z, codebook)
    return kernels.nearest(Z, codebook.vectors)


def nearest_assignment(z, codebook: Codebook) -> AssignmentResult:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"expected a single vector, got shape {z.shape}")
    idx, d2 = assign(z[None, :], codebook)
    return AssignmentResult(int(idx[0]), float(d2[0]))


def map_batch(batch, codebook: Codebook) -> BatchMapping:
    idx, d2 = assign(batch, codebook)
    return BatchMapping(codebook.vectors[idx].copy(), idx, d2)


def blend(z, z_mapped, coeffs: BlendingCoefficients) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z_mapped = np.asarray(z_mapped, dtype=np.float64)
    if z.shape != z_mapped.shape:
        raise DimensionError(f"shape mismatch {z.shape} vs {z_mapped.shape}")
    if coeffs.is_identity:
        return z.copy()
    return coeffs.w_ori * z + coeffs.w_map * z_mapped


def align(batch, codebook: Codebook, coeffs: BlendingCoefficients) -> np.ndarray:
    """Blend every row with its nearest codeword."""
    m = map_batch(batch, codebook)
    return blend(batch, m.mapped, coeffs)
