"""Synthetic identity worlds and open-set evaluation splits.

Each identity ``y`` owns a latent mean ``mu_y``; a sample is
``mu_y + eps`` with isotropic Gaussian nuisance ``eps``. A domain applies an
affine distortion (``scale``, ``bias``) plus extra noise, and the latent
vector is lifted to ``raw_dim`` by a fixed orthonormal map that belongs to
the world.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from codealign.errors import ConfigError, ProtocolError

PROTOCOLS = ("intra", "cross_domain", "closed")


@dataclass(frozen=True)
class DomainShift:
    bias: np.ndarray
    scale: float = 1.0
    extra_sigma: float = 0.0

    def __post_init__(self):
        if not self.scale > 0 or not np.isfinite(self.scale):
            raise ConfigError(f"domain scale must be positive and finite, got {self.scale}")
        if not self.extra_sigma >= 0 or not np.isfinite(self.extra_sigma):
            raise ConfigError(f"domain extra_sigma must be >= 0, got {self.extra_sigma}")
        if not np.all(np.isfinite(self.bias)):
            raise ConfigError("domain bias must be finite")


@dataclass(frozen=True)
class WorldConfig:
    num_identities: int = 128
    dim: int = 32
    raw_dim: int = 64
    nuisance_sigma: float = 0.5
    mean_scale: float = 1.0
    # None -> 4 * nuisance_sigma
    min_separation: float | None = None
    num_domains: int = 2
    shift_scale: float = 1.2
    shift_bias_norm: float = 1.0
    shift_extra_sigma: float = 0.0


@dataclass(frozen=True)
class SyntheticWorld:
    identity_means: np.ndarray  # (num_identities, D)
    nuisance_sigma: float
    domains: tuple[DomainShift, ...]
    raw_dim: int
    seed: int
    lift: np.ndarray  # (raw_dim, D), orthonormal columns
    min_pairwise_distance: float

    @property
    def dim(self) -> int:
        return self.identity_means.shape[1]

    @property
    def num_identities(self) -> int:
        return self.identity_means.shape[0]

    def embed_raw(self, latent: np.ndarray) -> np.ndarray:
        """Lift latent vector(s) of shape (..., D) into raw space."""
        return np.asarray(latent) @ self.lift.T


@dataclass(frozen=True)
class RawObservation:
    values: np.ndarray
    identity: int
    domain: int


@dataclass(frozen=True)
class Observations:
    """A labeled set of raw observations stored column-wise."""

    values: np.ndarray  # (n, raw_dim)
    identities: np.ndarray  # (n,) int64
    domains: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self) -> Iterator[RawObservation]:
        for v, y, d in zip(self.values, self.identities, self.domains):
            yield RawObservation(v, int(y), int(d))

    def subset(self, mask_or_index) -> "Observations":
        return Observations(
            self.values[mask_or_index], self.identities[mask_or_index], self.domains[mask_or_index]
        )

    @staticmethod
    def concat(parts: Sequence["Observations"], raw_dim: int) -> "Observations":
        if not parts:
            return Observations(
                np.empty((0, raw_dim)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
            )
        return Observations(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.identities for p in parts]),
            np.concatenate([p.domains for p in parts]),
        )


@dataclass(frozen=True)
class OpenSetSplit:
    protocol: str
    train_identities: frozenset
    eval_identities: frozenset
    train: Observations
    gallery: Observations
    query: Observations
    meta: dict = field(default_factory=dict)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.uint64(seed))


def generate_world(config: WorldConfig, seed: int) -> SyntheticWorld:
    """Draw identity means, domain shifts and the raw lift from ``seed``.

    Means come from ``N(0, mean_scale^2 I)``; a draw closer than
    ``min_separation`` to an earlier mean is redrawn.
    """
    c = config
    if c.num_identities < 2:
        raise ConfigError("num_identities must be >= 2")
    if c.dim < 1:
        raise ConfigError("dim must be >= 1")
    if c.raw_dim < c.dim:
        raise ConfigError(f"raw_dim ({c.raw_dim}) must be >= dim ({c.dim})")
    if not c.nuisance_sigma >= 0:
        raise ConfigError("nuisance_sigma must be >= 0")
    if not c.mean_scale > 0:
        raise ConfigError("mean_scale must be > 0")
    if c.num_domains < 1:
        raise ConfigError("num_domains must be >= 1")
    min_sep = 4.0 * c.nuisance_sigma if c.min_separation is None else c.min_separation
    if min_sep < 0:
        raise ConfigError("min_separation must be >= 0")

    rng = _rng(seed)
    means = np.empty((c.num_identities, c.dim))
    max_tries = 1000
    for i in range(c.num_identities):
        for _ in range(max_tries):
            cand = c.mean_scale * rng.standard_normal(c.dim)
            if i == 0 or np.min(np.sum((means[:i] - cand) ** 2, axis=1)) >= min_sep**2:
                means[i] = cand
                break
        else:
            raise ConfigError(
                f"could not place {c.num_identities} means at separation {min_sep}; "
                "lower min_separation or raise mean_scale"
            )

    lift, _ = np.linalg.qr(rng.standard_normal((c.raw_dim, c.dim)))

    domains = [DomainShift(np.zeros(c.dim), 1.0, 0.0)]
    for _ in range(1, c.num_domains):
        direction = rng.standard_normal(c.dim)
        direction /= np.linalg.norm(direction)
        domains.append(DomainShift(c.shift_bias_norm * direction, c.shift_scale, c.shift_extra_sigma))

    diffs = means[:, None, :] - means[None, :, :]
    d = np.sqrt(np.sum(diffs**2, axis=-1))
    min_dist = float(np.min(d[np.triu_indices(c.num_identities, 1)]))

    return SyntheticWorld(
        identity_means=means,
        nuisance_sigma=float(c.nuisance_sigma),
        domains=tuple(domains),
        raw_dim=c.raw_dim,
        seed=int(seed),
        lift=lift,
        min_pairwise_distance=min_dist,
    )


def _check_indices(world: SyntheticWorld, identity: int, domain: int):
    if not 0 <= identity < world.num_identities:
        raise IndexError(f"identity {identity} out of range [0, {world.num_identities})")
    if not 0 <= domain < len(world.domains):
        raise IndexError(f"domain {domain} out of range [0, {len(world.domains)})")


def sample_latent(world, identity, domain, n, rng) -> np.ndarray:
    """``n`` domain-transformed latent samples ``scale*(mu + eps) + bias``."""
    _check_indices(world, identity, domain)
    dom = world.domains[domain]
    sd = np.sqrt(world.nuisance_sigma**2 + dom.extra_sigma**2)
    eps = sd * rng.standard_normal((n, world.dim))
    return dom.scale * (world.identity_means[identity] + eps) + dom.bias


def sample_observation(world: SyntheticWorld, identity: int, domain: int,
                       rng: np.random.Generator) -> RawObservation:
    latent = sample_latent(world, identity, domain, 1, rng)[0]
    return RawObservation(world.embed_raw(latent), int(identity), int(domain))


def sample_observations(world: SyntheticWorld, identity: int, domain: int, n: int,
                        rng: np.random.Generator) -> Observations:
    latent = sample_latent(world, identity, domain, n, rng)
    return Observations(
        world.embed_raw(latent),
        np.full(n, identity, dtype=np.int64),
        np.full(n, domain, dtype=np.int64),
    )


def make_openset_split(
    world: SyntheticWorld,
    protocol: str,
    seed: int,
    train_per_identity: int = 10,
    eval_per_identity: int = 10,
    train_identity_fraction: float = 0.5,
    gallery_fraction: float = 0.5,
    eval_domain: int = 1,
) -> OpenSetSplit:
    """Build train / gallery / query sets for one of the three protocols.

    ``intra``: identities are split into disjoint train and eval groups, all
    samples from domain 0. ``cross_domain``: same identity split, but gallery
    and query come from ``eval_domain``. ``closed``: every identity is used for
    both training and evaluation, with fresh samples for gallery/query.
    Each eval identity's samples are divided into gallery and query by
    ``gallery_fraction``.
    """
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if train_per_identity < 1:
        raise ProtocolError("train_per_identity must be >= 1")
    n_gal = int(round(eval_per_identity * gallery_fraction))
    if n_gal < 1 or eval_per_identity - n_gal < 1:
        raise ProtocolError("each eval identity needs at least one gallery and one query sample")
    if not 0.0 < train_identity_fraction < 1.0 and protocol != "closed":
        raise ProtocolError("train_identity_fraction must lie in (0, 1)")

    rng = _rng(seed)
    ids = rng.permutation(world.num_identities)
    if protocol == "closed":
        train_ids = sorted(int(i) for i in ids)
        eval_ids = list(train_ids)
    else:
        n_train = int(round(world.num_identities * train_identity_fraction))
        if n_train < 1 or world.num_identities - n_train < 1:
            raise ProtocolError(
                f"{world.num_identities} identities cannot be split into two nonempty groups"
            )
        train_ids = sorted(int(i) for i in ids[:n_train])
        eval_ids = sorted(int(i) for i in ids[n_train:])

    test_domain = 0
    if protocol == "cross_domain":
        if not 1 <= eval_domain < len(world.domains):
            raise ProtocolError(
                f"cross_domain needs a shifted domain; world has {len(world.domains)} domain(s)"
            )
        test_domain = eval_domain

    train = Observations.concat(
        [sample_observations(world, y, 0, train_per_identity, rng) for y in train_ids], world.raw_dim
    )
    gallery_parts, query_parts = [], []
    for y in eval_ids:
        obs = sample_observations(world, y, test_domain, eval_per_identity, rng)
        gallery_parts.append(obs.subset(slice(0, n_gal)))
        query_parts.append(obs.subset(slice(n_gal, None)))

    return OpenSetSplit(
        protocol=protocol,
        train_identities=frozenset(train_ids),
        eval_identities=frozenset(eval_ids),
        train=train,
        gallery=Observations.concat(gallery_parts, world.raw_dim),
        query=Observations.concat(query_parts, world.raw_dim),
        meta={"eval_domain": test_domain, "seed": int(seed), "dim": world.dim},
    )


def export_split_csv(split: OpenSetSplit, path) -> None:
    """One row per sample: split_role, identity, domain, values..."""
    raw_dim = split.train.values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split_role", "identity", "domain"] + [f"x{j}" for j in range(raw_dim)])
        for role, obs in (("train", split.train), ("gallery", split.gallery), ("query", split.query)):
            for row in obs:
                w.writerow([role, row.identity, row.domain] + [repr(float(v)) for v in row.values])
