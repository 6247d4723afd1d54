"""Experiment configuration: sectioned key-value files, strictly parsed.

Every key has a type and a default; unknown sections or keys are rejected
with the offending ``section.key`` in the message. ``echo()`` returns the
fully resolved configuration as plain JSON-able data, which every output
file embeds.
"""
from __future__ import annotations

import configparser
import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

from codealign.errors import ConfigError
from codealign.features import PROTOCOLS, WorldConfig
from codealign.losses import LossWeights
from codealign.trainer import TrainConfig

VARIANTS = ("naive", "bridge", "plug_and_play")
OUTPUT_ROOT_ENV = "CODEALIGN_OUTPUT_ROOT"
CONFIG_DIR = Path(__file__).parent / "configs"


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list:
    out = [int(x) for x in s.replace(",", " ").split()]
    if not out:
        raise ValueError("empty list")
    return out


def _str_list(s: str) -> list:
    out = [x for x in s.replace(",", " ").split()]
    if not out:
        raise ValueError("empty list")
    return out


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "world": {
        "num_identities": (int, 128),
        "dim": (int, 32),
        "raw_dim": (int, 64),
        "nuisance_sigma": (float, 0.5),
        "mean_scale": (float, 1.0),
        "min_separation": (_opt_float, None),
        "num_domains": (int, 2),
        "shift_scale": (float, 1.2),
        "shift_bias_norm": (float, 1.0),
        "shift_extra_sigma": (float, 0.0),
    },
    "protocol": {
        "name": (str, "intra"),
        "train_per_identity": (int, 10),
        "eval_per_identity": (int, 10),
        "train_identity_fraction": (float, 0.5),
        "gallery_fraction": (float, 0.5),
        "eval_domain": (int, 1),
    },
    "model": {
        "variants": (_str_list, ["naive", "bridge"]),
        "K": (int, 512),
        "w_map": (float, 0.3),
        "straight_through": (_bool, True),
    },
    "train": {
        "lr": (float, 1e-3),
        "codebook_lr": (_opt_float, None),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "batch_size": (int, 16),
        "epochs": (int, 200),
        "patience": (int, 10),
        "plateau_tol": (float, 1e-6),
        "init_jitter": (float, 0.1),
    },
    "loss": {
        "lambda_con_inner": (float, 0.25),
        "alpha_con": (float, 1.0),
        "beta_orth": (float, 1.0),
    },
    "eval": {
        "score": (str, "negative_l2"),
        "roc_points": (int, 101),
        "gi_bins": (int, 50),
        "diag_pairs": (int, 1000),
        "timing_repeats": (int, 5),
    },
    "run": {
        "seeds": (_int_list, [0, 1, 2, 3, 4]),
        "output_dir": (str, "runs/default"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)  # section -> key -> value
    source: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def echo(self) -> dict:
        return copy.deepcopy(self.values)

    def replace(self, section: str, **kw) -> "ExperimentConfig":
        vals = copy.deepcopy(self.values)
        for k, v in kw.items():
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{k}")
            vals[section][k] = v
        out = ExperimentConfig(vals, self.source)
        out.validate()
        return out

    # derived objects

    def world_config(self) -> WorldConfig:
        return WorldConfig(**self.values["world"])

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.values["loss"])

    def train_config(self, mode: str, seed: int, alpha: float | None = None) -> TrainConfig:
        m, t = self.values["model"], self.values["train"]
        return TrainConfig(
            mode=mode, K=m["K"], alpha=m["w_map"] if alpha is None else alpha,
            weights=self.loss_weights(), straight_through=m["straight_through"],
            seed=seed, **t,
        )

    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.values["run"]["output_dir"])
        return Path(root) / out if root and not out.is_absolute() else out

    def validate(self) -> None:
        w, p, m, t, e, r = (self.values[s] for s in
                            ("world", "protocol", "model", "train", "eval", "run"))
        _check(w["num_identities"] >= 2, "world.num_identities", "must be >= 2")
        _check(w["dim"] >= 1, "world.dim", "must be >= 1")
        _check(w["raw_dim"] >= w["dim"], "world.raw_dim", "must be >= world.dim")
        _check(w["nuisance_sigma"] >= 0, "world.nuisance_sigma", "must be >= 0")
        _check(w["mean_scale"] > 0, "world.mean_scale", "must be > 0")
        _check(w["num_domains"] >= 1, "world.num_domains", "must be >= 1")
        _check(w["shift_scale"] > 0, "world.shift_scale", "must be > 0")
        _check(w["shift_extra_sigma"] >= 0, "world.shift_extra_sigma", "must be >= 0")
        _check(p["name"] in PROTOCOLS, "protocol.name", f"must be one of {PROTOCOLS}")
        _check(p["train_per_identity"] >= 1, "protocol.train_per_identity", "must be >= 1")
        _check(p["eval_per_identity"] >= 2, "protocol.eval_per_identity", "must be >= 2")
        _check(0 < p["train_identity_fraction"] < 1, "protocol.train_identity_fraction",
               "must lie in (0, 1)")
        _check(0 < p["gallery_fraction"] < 1, "protocol.gallery_fraction", "must lie in (0, 1)")
        if p["name"] == "cross_domain":
            _check(1 <= p["eval_domain"] < w["num_domains"], "protocol.eval_domain",
                   "must name a shifted domain (1 <= eval_domain < world.num_domains)")
        bad = [v for v in m["variants"] if v not in VARIANTS]
        _check(not bad, "model.variants", f"unknown variant(s) {bad}; expected {VARIANTS}")
        _check(len(set(m["variants"])) == len(m["variants"]), "model.variants", "duplicates")
        _check(m["K"] >= 1, "model.K", "must be >= 1")
        _check(0.0 <= m["w_map"] <= 1.0, "model.w_map", "must lie in [0, 1]")
        _check(t["lr"] > 0, "train.lr", "must be > 0")
        _check(t["codebook_lr"] is None or t["codebook_lr"] > 0, "train.codebook_lr", "must be > 0")
        _check(0 < t["beta1"] < 1, "train.beta1", "must lie in (0, 1)")
        _check(0 < t["beta2"] < 1, "train.beta2", "must lie in (0, 1)")
        _check(t["adam_eps"] > 0, "train.adam_eps", "must be > 0")
        _check(t["batch_size"] >= 1, "train.batch_size", "must be >= 1")
        _check(t["epochs"] >= 1, "train.epochs", "must be >= 1")
        _check(t["patience"] >= 1, "train.patience", "must be >= 1")
        _check(t["init_jitter"] >= 0, "train.init_jitter", "must be >= 0")
        for k in self.values["loss"]:
            _check(self.values["loss"][k] >= 0, f"loss.{k}", "must be >= 0")
        _check(e["score"] in ("negative_l2", "cosine"), "eval.score",
               "must be negative_l2 or cosine")
        _check(e["roc_points"] >= 2, "eval.roc_points", "must be >= 2")
        _check(e["gi_bins"] >= 1, "eval.gi_bins", "must be >= 1")
        _check(e["diag_pairs"] >= 1, "eval.diag_pairs", "must be >= 1")
        _check(e["timing_repeats"] >= 1, "eval.timing_repeats", "must be >= 1")
        _check(len(set(r["seeds"])) == len(r["seeds"]), "run.seeds", "duplicates")
        _check(all(s >= 0 for s in r["seeds"]), "run.seeds", "must be >= 0")


def _check(ok: bool, name: str, msg: str) -> None:
    if not ok:
        raise ConfigError(f"{name}: {msg}")


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()}
                             for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (K)
    try:
        parser.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = defaults()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize back to the key-value format; ``parse_config`` inverts it."""
    lines = []
    for section, keys in cfg.values.items():
        lines.append(f"[{section}]")
        for k, v in keys.items():
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``canonical``, ``cross_domain``...)."""
    p = CONFIG_DIR / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return p
