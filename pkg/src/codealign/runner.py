"""End-to-end experiments: world -> split -> train -> verify -> diagnostics.

Per seed and variant the runner writes ``metrics.json``, ``roc.csv``,
``gi.csv``, ``training_log.csv``, ``checkpoint.json`` and (for variants with
a codebook) ``diagnostics.json`` under ``<output>/seed_<s>/<variant>/``.
Everything in those files is a function of (config, seed). Wall-clock
measurements go to a separate ``timing.json`` so they never break that.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from codealign import diagnostics as diag
from codealign import verify
from codealign.backbone import embed
from codealign.bridge import BlendingCoefficients, align
from codealign.config import ExperimentConfig
from codealign.errors import ConfigError, InputError
from codealign.features import Observations, OpenSetSplit, generate_world, make_openset_split
from codealign.losses import write_training_log
from codealign.trainer import TrainedModel, attach_codebook, save_checkpoint, train

log = logging.getLogger(__name__)

SWEEP_AXES = ("blend", "cardinality", "losses")
# ablation rows: name -> (alpha_con, beta_orth)
LOSS_ROWS = {"bak": (0.0, 0.0), "bak+con": (1.0, 0.0), "bak+con+orth": (1.0, 1.0)}


def _stream_seeds(seed: int) -> tuple[int, int]:
    """Independent world and split seeds derived from one run seed."""
    w, s = np.random.SeedSequence([seed, 7]).generate_state(2)
    return int(w), int(s)


def build_split(cfg: ExperimentConfig, seed: int) -> OpenSetSplit:
    ws, ss = _stream_seeds(seed)
    world = generate_world(cfg.world_config(), ws)
    p = cfg["protocol"]
    return make_openset_split(
        world, p["name"], ss,
        train_per_identity=p["train_per_identity"], eval_per_identity=p["eval_per_identity"],
        train_identity_fraction=p["train_identity_fraction"],
        gallery_fraction=p["gallery_fraction"], eval_domain=p["eval_domain"],
    )


@dataclass
class VariantResult:
    variant: str
    seed: int
    metrics: dict
    diagnostics: dict | None = None
    model: TrainedModel | None = None
    roc: tuple = ()
    gi: tuple = ()
    split: OpenSetSplit | None = None

    def summary(self) -> str:
        d = self.diagnostics or {}
        ps = d.get("eval", {}).get("p_same")
        pc = d.get("eval", {}).get("p_collide")
        fmt = lambda x: "-" if x is None else f"{x:.4f}"  # noqa: E731
        return (f"seed={self.seed} {self.variant:<13s} EER={self.metrics['eer']:.4f} "
                f"ACC={self.metrics['acc']:.4f} p_same={fmt(ps)} p_collide={fmt(pc)}")


def evaluate(model: TrainedModel, split: OpenSetSplit, cfg: ExperimentConfig):
    """Verification metrics for one model on the split's gallery/query sets."""
    e = cfg["eval"]
    gallery = verify.enroll(model, split.gallery)
    scores = verify.score_pairs(model, gallery, split.query, e["score"])
    eer = verify.compute_eer(scores)
    acc = verify.rank1_accuracy(model, gallery, split.query, e["score"])
    m = verify.metrics_dict(eer, acc, scores)
    m["genuine_score_variance"] = float(np.var(scores.genuine_scores, ddof=1))
    m["impostor_score_variance"] = float(np.var(scores.impostor_scores, ddof=1))
    m["far_at_threshold"] = eer.far_at_threshold
    m["frr_at_threshold"] = eer.frr_at_threshold
    roc = verify.compute_roc(scores, e["roc_points"])
    gi = verify.gi_histogram(scores, e["gi_bins"])
    return m, roc, gi


def _population_stats(model: TrainedModel, obs: Observations, n_pairs: int, seed: int,
                      alpha: float) -> dict:
    rng = np.random.default_rng([seed, 11])
    try:
        stats = diag.assignment_stats(model, obs, n_pairs, rng)
        g = diag.sample_pairs(obs.identities, True, n_pairs, rng)
        con = diag.verify_contraction(model, obs.values[g[:, 0]], obs.values[g[:, 1]], alpha)
    except InputError as exc:  # too few samples to form pairs
        stats = diag.AssignmentStats()
        con = diag.ContractionReport(float("nan"), float("nan"), float("nan"), 0, str(exc))
    return diag.diagnostics_dict(stats, con, diag.codebook_utilization(model, obs))


def model_diagnostics(model: TrainedModel, split: OpenSetSplit, cfg: ExperimentConfig,
                      seed: int) -> dict:
    """p_same / p_collide / contraction / utilization on train and eval populations.

    The top-level keys mirror the eval population; both are kept under
    ``train`` and ``eval``.
    """
    n = cfg["eval"]["diag_pairs"]
    alpha = model.coeffs.w_map
    ev = Observations.concat([split.gallery, split.query], split.gallery.values.shape[1])
    out_eval = _population_stats(model, ev, n, seed, alpha)
    out_train = _population_stats(model, split.train, n, seed, alpha)
    out = dict(out_eval)
    out["alpha"] = alpha
    out["eval"] = out_eval
    out["train"] = out_train
    return out


def inference_timing(model: TrainedModel, split: OpenSetSplit, repeats: int) -> dict:
    """Backbone vs bridge wall-clock per inference batch (query set)."""
    X = split.query.values
    bb, br = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        z = embed(model.backbone, X)
        t1 = time.perf_counter()
        align(z, model.codebook, model.coeffs)
        t2 = time.perf_counter()
        bb.append(t1 - t0)
        br.append(t2 - t1)
    b, m = float(np.median(bb)), float(np.median(br))
    return {"batch_size": int(X.shape[0]), "backbone_s": b, "bridge_s": m,
            "overhead_percent": 100.0 * m / b if b > 0 else None}


def run_seed(cfg: ExperimentConfig, seed: int, variants=None,
             alpha: float | None = None) -> list[VariantResult]:
    """Train and evaluate the configured variants for one seed (no file output)."""
    variants = list(variants or cfg["model"]["variants"])
    alpha = cfg["model"]["w_map"] if alpha is None else alpha
    split = build_split(cfg, seed)
    models: dict[str, TrainedModel] = {}
    if "naive" in variants or "plug_and_play" in variants:
        models["naive"] = train(split, cfg.train_config("naive", seed))
    if "bridge" in variants or "plug_and_play" in variants:
        models["bridge"] = train(split, cfg.train_config("joint", seed, alpha))
    if "plug_and_play" in variants:
        donor = models["bridge"]
        if donor.codebook is None:
            raise ConfigError("plug_and_play needs a bridge run with model.w_map > 0")
        nv = models["naive"]
        models["plug_and_play"] = attach_codebook(
            nv.backbone, donor.codebook, BlendingCoefficients.from_alpha(alpha),
            backbone_provenance=nv.provenance.get("backbone"),
            codebook_provenance=donor.provenance.get("codebook"),
            label_map=nv.label_map, seed=seed, config_hash=nv.config_hash,
        )

    results = []
    for v in variants:
        model = models[v]
        before = (model.backbone.checksum(),
                  model.codebook.checksum() if model.codebook is not None else None)
        metrics, roc, gi = evaluate(model, split, cfg)
        d = model_diagnostics(model, split, cfg, seed) if model.codebook is not None else None
        after = (model.backbone.checksum(),
                 model.codebook.checksum() if model.codebook is not None else None)
        metrics.update(variant=v, seed=seed, mode=model.mode, w_map=model.coeffs.w_map,
                       backbone_checksum=after[0], codebook_checksum=after[1],
                       parameters_unchanged=before == after,
                       epochs_run=(model.training_log[-1]["epoch"] + 1) if model.training_log else 0)
        results.append(VariantResult(v, seed, metrics, d, model, roc, gi, split))
    return results


def _write_variant(res: VariantResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    verify.write_json(out / "metrics.json", {**res.metrics, "config": echo})
    verify.write_roc_csv(out / "roc.csv", *res.roc)
    verify.write_gi_csv(out / "gi.csv", *res.gi)
    write_training_log(out / "training_log.csv", res.model.training_log)
    save_checkpoint(res.model, out / "checkpoint.json")
    if res.diagnostics is not None:
        verify.write_json(out / "diagnostics.json", {**res.diagnostics, "config": echo})


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None, echo=print) -> dict:
    """Full run over all seeds; returns ``{seed: {variant: metrics}}``."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    summary, timing = {}, {}
    for seed in cfg["run"]["seeds"]:
        results = run_seed(cfg, seed)
        summary[str(seed)] = {}
        for res in results:
            _write_variant(res, cfg, out_dir / f"seed_{seed}" / res.variant)
            summary[str(seed)][res.variant] = {k: res.metrics[k] for k in ("eer", "acc")}
            if res.diagnostics is not None:
                summary[str(seed)][res.variant].update(
                    p_same=res.diagnostics["p_same"], p_collide=res.diagnostics["p_collide"])
            if res.model.uses_bridge:
                timing.setdefault(str(seed), {})[res.variant] = inference_timing(
                    res.model, res.split, cfg["eval"]["timing_repeats"])
            if echo:
                echo(res.summary())
    means = {}
    for v in cfg["model"]["variants"]:
        eers = [summary[str(s)][v]["eer"] for s in cfg["run"]["seeds"]]
        accs = [summary[str(s)][v]["acc"] for s in cfg["run"]["seeds"]]
        means[v] = {"mean_eer": float(np.mean(eers)), "mean_acc": float(np.mean(accs))}
    verify.write_json(out_dir / "summary.json",
                      {"per_seed": summary, "means": means, "config": cfg.echo()})
    verify.write_json(out_dir / "timing.json", timing)
    return {"per_seed": summary, "means": means}


def _sweep_cfg(cfg: ExperimentConfig, axis: str, value):
    if axis == "blend":
        return cfg.replace("model", w_map=float(value)), "bridge"
    if axis == "cardinality":
        return cfg.replace("model", K=int(value)), "bridge"
    if axis == "losses":
        if value not in LOSS_ROWS:
            raise ConfigError(f"losses grid entries must be among {list(LOSS_ROWS)}, got {value!r}")
        ac, bo = LOSS_ROWS[value]
        # without codebook losses the backbone-only row is the naive pipeline
        return cfg.replace("loss", alpha_con=ac, beta_orth=bo), ("naive" if value == "bak" else "bridge")
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def parse_grid(axis: str, grid: str) -> list:
    """``0.1,0.3`` or ``0.1:0.9:0.2`` (inclusive) for numeric axes; names for ``losses``."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if axis == "losses":
        items = [g.strip() for g in grid.split(",") if g.strip()]
        if not items:
            raise ConfigError("empty grid")
        return items
    try:
        if ":" in grid:
            lo, hi, step = (float(x) for x in grid.split(":"))
            if step <= 0:
                raise ValueError("step must be > 0")
            vals = list(np.round(np.arange(lo, hi + step / 2, step), 10))
        else:
            vals = [float(g) for g in grid.split(",") if g.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {grid!r}: {exc}") from exc
    if not vals:
        raise ConfigError("empty grid")
    if axis == "cardinality":
        return [int(v) for v in vals]
    return [float(v) for v in vals]


SWEEP_FIELDS = ("axis", "value", "seed", "variant", "eer", "acc", "w_map", "K",
                "alpha_con", "beta_orth", "dead_fraction", "p_same", "p_collide")


def sweep(cfg: ExperimentConfig, axis: str, grid: list, out_path: Path | None = None,
          echo=print) -> list[dict]:
    """One row per (grid point, seed) with EER/ACC; written as CSV if ``out_path``."""
    rows = []
    for value in grid:
        c, variant = _sweep_cfg(cfg, axis, value)
        for seed in c["run"]["seeds"]:
            (res,) = run_seed(c, seed, variants=[variant])
            d = res.diagnostics or {}
            row = {"axis": axis, "value": value, "seed": seed, "variant": variant,
                   "eer": res.metrics["eer"], "acc": res.metrics["acc"],
                   "w_map": c["model"]["w_map"], "K": c["model"]["K"],
                   "alpha_con": c["loss"]["alpha_con"], "beta_orth": c["loss"]["beta_orth"],
                   "dead_fraction": d.get("dead_fraction"), "p_same": d.get("p_same"),
                   "p_collide": d.get("p_collide"), "config": c.echo()}
            rows.append(row)
            if echo:
                echo(f"{axis}={value} {res.summary()}")
    if out_path is not None:
        write_sweep_csv(out_path, rows)
    return rows


def write_sweep_csv(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                        for k in SWEEP_FIELDS})
