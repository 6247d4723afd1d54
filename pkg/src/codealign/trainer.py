"""Adam, joint backbone/codebook training, plug-and-play attachment."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from codealign import bridge
from codealign.backbone import BackboneParams, embed, init_backbone
from codealign.bridge import BlendingCoefficients, Codebook
from codealign.errors import CompatibilityError, ConfigError, NumericError, TrainingError
from codealign.features import OpenSetSplit
from codealign.losses import LossWeights, total_loss

log = logging.getLogger(__name__)

MODES = ("joint", "naive", "plug_and_play")
CHECKPOINT_FORMAT = "codealign-checkpoint/1"


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.step_count + 1
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k!r} at step {t}")
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {k!r}")
        m = state.first_moment.get(k, np.zeros_like(g))
        v = state.second_moment.get(k, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        m_new[k], v_new[k] = m, v
    return new_params, dataclasses.replace(
        state, step_count=t, first_moment=m_new, second_moment=v_new
    )


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "joint"
    K: int = 512
    alpha: float = 0.3
    weights: LossWeights = LossWeights()
    straight_through: bool = True
    lr: float = 1e-3
    codebook_lr: float | None = None  # None -> lr
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 200
    patience: int = 10
    plateau_tol: float = 1e-6
    init_jitter: float = 0.1
    dim: int | None = None  # None -> latent dim recorded by the split
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("joint", "naive"):
            raise ConfigError(f"train mode must be 'joint' or 'naive', got {self.mode!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be >= 1")
        if not self.lr > 0 or (self.codebook_lr is not None and not self.codebook_lr > 0):
            raise ConfigError("learning rates must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid Adam hyperparameters")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainedModel:
    backbone: BackboneParams
    codebook: Codebook | None
    coeffs: BlendingCoefficients
    weights: LossWeights
    mode: str
    label_map: tuple = ()  # class index -> identity
    seed: int = 0
    config_hash: str = ""
    training_log: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "naive":
            self.coeffs = BlendingCoefficients(1.0, 0.0)
        elif self.codebook is None:
            raise ConfigError(f"mode {self.mode!r} needs a codebook")

    @property
    def uses_bridge(self) -> bool:
        return self.mode != "naive" and not self.coeffs.is_identity

    def features(self, raw) -> np.ndarray:
        """Embedding used for enrollment and verification (aligned if bridged)."""
        z = np.atleast_2d(embed(self.backbone, raw))
        if not self.uses_bridge:
            return z
        return bridge.align(z, self.codebook, self.coeffs)

    def assignments(self, raw) -> np.ndarray:
        if self.codebook is None:
            raise ConfigError("model has no codebook")
        idx, _ = bridge.assign(np.atleast_2d(embed(self.backbone, raw)), self.codebook)
        return idx

    def with_alpha(self, alpha: float) -> "TrainedModel":
        return dataclasses.replace(self, coeffs=BlendingCoefficients.from_alpha(alpha))


def _init_codebook(features: np.ndarray, K: int, jitter: float, rng) -> np.ndarray:
    n = features.shape[0]
    if n >= K:
        rows = features[:K]
    else:
        rows = features[rng.integers(0, n, size=K)]
    return rows + jitter * rng.standard_normal(rows.shape)


def train(split: OpenSetSplit, config: TrainConfig) -> TrainedModel:
    """Train backbone (and codebook in joint mode) on ``split.train``.

    Backbone init and batch order depend on the seed only, so a naive and a
    joint run with equal seeds start from the same network and see the same
    batches. A joint config with ``alpha == 0`` trains the naive model, since
    the codebook then never reaches the output.
    """
    config.validate()
    data = split.train
    if len(data) == 0:
        raise ConfigError("training set is empty")
    label_map = tuple(sorted(int(i) for i in split.train_identities))
    to_class = {y: c for c, y in enumerate(label_map)}
    labels = np.array([to_class[int(y)] for y in data.identities], dtype=np.int64)
    X = data.values
    N = X.shape[0]

    mode = config.mode
    if mode == "joint" and config.alpha == 0.0:
        mode = "naive"
    joint = mode == "joint"

    init_ss, cb_ss, order_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_backbone(X.shape[1], split_dim(split, config), len(label_map),
                           np.random.default_rng(init_ss))
    order_rng = np.random.default_rng(order_ss)
    coeffs = BlendingCoefficients.from_alpha(config.alpha) if joint else BlendingCoefficients(1.0, 0.0)

    bb_state = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
    cb_state = AdamState(config.codebook_lr or config.lr, config.beta1, config.beta2, config.adam_eps)
    codebook = None

    rows, epoch_means = [], []
    step = 0
    last_finite_epoch = -1
    for epoch in range(config.epochs):
        order = order_rng.permutation(N)
        if joint and codebook is None:
            z0 = embed(params, X[order[: min(N, config.K)]])
            codebook = Codebook(_init_codebook(z0, config.K, config.init_jitter,
                                               np.random.default_rng(cb_ss)))
        totals = []
        for start in range(0, N, config.batch_size):
            bi = order[start:start + config.batch_size]
            rep = total_loss(params, X[bi], labels[bi], codebook, coeffs, config.weights,
                             config.straight_through)
            if not np.isfinite(rep.total):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}, step {step}", last_finite_epoch
                )
            try:
                new_bb, bb_state = adam_step(bb_state, params.as_dict(), rep.grad_backbone.as_dict())
                params = BackboneParams(**new_bb)
                if joint:
                    new_cb, cb_state = adam_step(
                        cb_state, {"codebook": codebook.vectors}, {"codebook": rep.grad_codebook}
                    )
                    codebook = Codebook(new_cb["codebook"])
            except NumericError as exc:
                raise TrainingError(str(exc), last_finite_epoch) from exc
            rows.append(rep.row(epoch, step))
            totals.append(rep.total)
            step += 1
        epoch_means.append(float(np.mean(totals)))
        last_finite_epoch = epoch
        if len(epoch_means) > config.patience:
            ref = epoch_means[-1 - config.patience]
            if abs(epoch_means[-1] - ref) <= config.plateau_tol * abs(ref):
                log.info("plateau after epoch %d", epoch)
                break

    return TrainedModel(
        backbone=params, codebook=codebook, coeffs=coeffs, weights=config.weights, mode=mode,
        label_map=label_map, seed=config.seed, config_hash=config.digest(), training_log=rows,
        provenance={"backbone": f"{mode}:seed={config.seed}:{config.digest()[:12]}",
                    "codebook": f"{mode}:seed={config.seed}:{config.digest()[:12]}" if joint else None},
    )


def split_dim(split: OpenSetSplit, config: TrainConfig) -> int:
    d = config.dim if config.dim is not None else split.meta.get("dim")
    if d is None:
        raise ConfigError("split does not record the feature dimension (meta['dim'])")
    return int(d)


def attach_codebook(backbone: BackboneParams, codebook: Codebook, coeffs: BlendingCoefficients,
                    backbone_provenance: str | None = None,
                    codebook_provenance: str | None = None, **kwargs) -> TrainedModel:
    """Use ``codebook`` with a frozen backbone; nothing is copied or tuned."""
    if codebook.D != backbone.dim:
        raise CompatibilityError(f"codebook dim {codebook.D} != backbone output dim {backbone.dim}")
    if backbone_provenance is not None and backbone_provenance == codebook_provenance:
        raise CompatibilityError("plug-and-play codebook must come from a different training run")
    return TrainedModel(
        backbone=backbone, codebook=codebook, coeffs=coeffs,
        weights=kwargs.pop("weights", LossWeights()), mode="plug_and_play",
        provenance={"backbone": backbone_provenance, "codebook": codebook_provenance}, **kwargs,
    )


def checkpoint_dict(model: TrainedModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "mode": model.mode,
        "backbone": {k: np.asarray(v).tolist() for k, v in model.backbone.as_dict().items()},
        "codebook": model.codebook.to_dict() if model.codebook is not None else None,
        "coeffs": {"w_ori": model.coeffs.w_ori, "w_map": model.coeffs.w_map},
        "weights": dataclasses.asdict(model.weights),
        "label_map": list(model.label_map),
        "config_hash": model.config_hash,
        "seed": model.seed,
        "provenance": model.provenance,
    }


def save_checkpoint(model: TrainedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh)


def model_from_checkpoint(d: dict) -> TrainedModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {d.get('format')!r}")
    cb = Codebook.from_dict(d["codebook"]) if d.get("codebook") is not None else None
    return TrainedModel(
        backbone=BackboneParams.from_dict(d["backbone"]),
        codebook=cb,
        coeffs=BlendingCoefficients(**d["coeffs"]),
        weights=LossWeights(**d["weights"]),
        mode=d["mode"],
        label_map=tuple(d.get("label_map", ())),
        seed=int(d.get("seed", 0)),
        config_hash=d.get("config_hash", ""),
        provenance=d.get("provenance", {}),
    )


def load_checkpoint(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_checkpoint(json.load(fh))
