"""Command-line entry point.

    codealign run <config>
    codealign sweep <config> --axis blend|cardinality|losses --grid 0.1:0.9:0.2
    codealign diagnose <checkpoint> <config>
    codealign export-codebook <checkpoint> <out.json>
    codealign attach <backbone-checkpoint> <codebook.json> [--config C]

Relative output directories are resolved against ``$CODEALIGN_OUTPUT_ROOT``
when it is set. Exit codes: 0 success, 2 invalid configuration or
incompatible inputs, 3 numeric failure (e.g. training divergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from codealign import runner, verify
from codealign.bridge import BlendingCoefficients, Codebook
from codealign.config import OUTPUT_ROOT_ENV, load_config
from codealign.errors import NumericError, CodeAlignError
from codealign.trainer import attach_codebook, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / path if root and not path.is_absolute() else path


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.output_dir()
    res = runner.run_experiment(cfg, out)
    for v, m in res["means"].items():
        print(f"mean {v:<13s} EER={m['mean_eer']:.4f} ACC={m['mean_acc']:.4f}")
    print(f"results in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    grid = runner.parse_grid(args.axis, args.grid)
    out = Path(args.out) if args.out else cfg.output_dir() / f"sweep_{args.axis}.csv"
    runner.sweep(cfg, args.axis, grid, out)
    print(f"table written to {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    if model.codebook is None:
        print("checkpoint has no codebook; nothing to diagnose", file=sys.stderr)
        return EXIT_CONFIG
    split = runner.build_split(cfg, model.seed)
    d = runner.model_diagnostics(model, split, cfg, model.seed)
    payload = {**d, "config": cfg.echo(), "checkpoint": str(args.checkpoint)}
    if args.out:
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        verify.write_json(out, payload)
        print(f"diagnostics written to {out}")
    else:
        print(json.dumps({k: v for k, v in payload.items() if k not in ("utilization", "train", "eval", "config")},
                         indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_codebook(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.codebook is None:
        print("checkpoint has no codebook", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    d = model.codebook.to_dict()
    d["provenance"] = model.provenance.get("codebook")
    with open(out, "w") as fh:
        json.dump(d, fh)
    print(f"codebook K={model.codebook.K} D={model.codebook.D} written to {out}")
    return EXIT_OK


def cmd_attach(args) -> int:
    base = load_checkpoint(args.backbone_checkpoint)
    with open(args.codebook) as fh:
        raw = json.load(fh)
    codebook = Codebook.from_dict(raw)
    model = attach_codebook(
        base.backbone, codebook, BlendingCoefficients.from_alpha(args.w_map),
        backbone_provenance=base.provenance.get("backbone"),
        codebook_provenance=raw.get("provenance"),
        label_map=base.label_map, seed=base.seed, config_hash=base.config_hash,
    )
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    print(f"plug-and-play checkpoint written to {out}")
    if args.config:
        cfg = load_config(args.config)
        split = runner.build_split(cfg, base.seed)
        checksum = base.backbone.checksum()
        m, _, _ = runner.evaluate(model, split, cfg)
        m["parameters_unchanged"] = model.backbone.checksum() == checksum
        print(f"seed={base.seed} plug_and_play EER={m['eer']:.4f} ACC={m['acc']:.4f}")
        verify.write_json(out.with_name(out.stem + "_metrics.json"), {**m, "config": cfg.echo()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codealign", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="train and evaluate every configured variant and seed")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: run.output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one-parameter sweep, written as a CSV table")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=runner.SWEEP_AXES)
    p.add_argument("--grid", required=True,
                   help="comma list or lo:hi:step; for losses: bak,bak+con,bak+con+orth")
    p.add_argument("--out", help="CSV path (default: <output_dir>/sweep_<axis>.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="assignment statistics for a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--out", help="write the diagnostics JSON here")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("export-codebook", help="write a checkpoint's codebook as JSON")
    p.add_argument("checkpoint")
    p.add_argument("out")
    p.set_defaults(func=cmd_export_codebook)

    p = sub.add_parser("attach", help="attach a codebook to a frozen backbone")
    p.add_argument("backbone_checkpoint")
    p.add_argument("codebook")
    p.add_argument("--w-map", type=float, default=0.3, dest="w_map")
    p.add_argument("--out", default="attached_checkpoint.json")
    p.add_argument("--config", help="also evaluate on this config's split")
    p.set_defaults(func=cmd_attach)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CodeAlignError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
