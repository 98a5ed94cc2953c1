"""Command line entry point: ``greenscan {process,validate,eval-seg,synth,flag}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 batch finished with
failed captures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import GreenScanError
from .pipeline import cmd_eval_seg, cmd_flag, cmd_process, cmd_synth, cmd_validate
from .synthgen import load_scene_specs, random_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

logger = logging.getLogger("greenscan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _species_threshold(text):
    name, sep, value = text.rpartition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected SPECIES=THRESHOLD, got {text!r}")
    return name, float(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML pipeline config")
    common.add_argument("--out", type=Path, help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="greenscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("process", parents=[common], help="register, segment and measure captures")
    p.add_argument("captures_dir", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--translate-x", type=float)
    p.add_argument("--translate-y", type=float)
    p.add_argument("--zoom", type=float)
    p.add_argument("--translate-units", choices=("thermal", "source"))
    p.add_argument("--ndvi-cutoff", type=float)
    p.add_argument("--mode", choices=("threshold", "external"))
    p.add_argument("--masks-dir", type=Path)

    p = sub.add_parser("validate", parents=[common], help="compare results with an inventory")
    p.add_argument("results", type=Path)
    p.add_argument("inventory", type=Path)
    p.add_argument("--radius", type=float, help="match radius in meters")

    p = sub.add_parser("eval-seg", parents=[common], help="COCO-style AP of predicted masks")
    p.add_argument("pred_dir", type=Path)
    p.add_argument("truth_dir", type=Path)
    p.add_argument("--folds", type=int, help="also report AP@0.5 per k-fold test split")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", parents=[common], help="render synthetic captures with truth")
    p.add_argument("spec", type=Path, nargs="?", help="scene spec JSON")
    p.add_argument("--random", type=int, metavar="N", help="generate N random scenes instead")
    p.add_argument("--max-trees", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("flag", parents=[common], help="list trees below an NDVI threshold")
    p.add_argument("results", type=Path)
    p.add_argument("--ndvi-threshold", type=float, required=True)
    p.add_argument("--species-threshold", type=_species_threshold, action="append", default=[],
                   metavar="SPECIES=T")
    return parser


def _with_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    reg_over = {k: v for k, v in (("translate_x", args.translate_x),
                                  ("translate_y", args.translate_y),
                                  ("zoom", args.zoom),
                                  ("units", args.translate_units)) if v is not None}
    seg_over = {k: v for k, v in (("ndvi_cutoff", args.ndvi_cutoff),
                                  ("mode", args.mode)) if v is not None}
    changes = {}
    if reg_over:
        changes["registration"] = dataclasses.replace(cfg.registration, **reg_over)
    if seg_over:
        changes["segmenter"] = dataclasses.replace(cfg.segmenter, **seg_over)
    if args.masks_dir is not None:
        changes["masks_dir"] = str(args.masks_dir)
    if args.workers is not None:
        changes["workers"] = args.workers
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.command == "process":
        cfg = _with_overrides(cfg, args)
        summary = cmd_process(args.captures_dir, cfg, args.out or Path("greenscan-out"))
        m = summary.manifest
        print(f"{m['captures_in']} captures: {m['captures_ok']} ok, {m['captures_empty']} empty, "
              f"{m['captures_failed']} failed; {m['rows_emitted']} rows")
        return EXIT_PARTIAL if summary.failures else EXIT_OK

    if args.command == "validate":
        report = cmd_validate(args.results, args.inventory, cfg,
                              out_dir=args.out or Path("greenscan-validation"), radius=args.radius)
        print(json.dumps({"n_matched": report["n_matched"], "pearson": report["pearson"],
                          "bland_altman": report["bland_altman"]}, indent=2))
        return EXIT_OK

    if args.command == "eval-seg":
        report = cmd_eval_seg(args.pred_dir, args.truth_dir,
                              out_path=args.out or Path("seg_report.json"),
                              folds=args.folds, seed=args.seed)
        print(json.dumps(report, indent=2))
        return EXIT_OK

    if args.command == "synth":
        if (args.spec is None) == (args.random is None):
            raise argparse.ArgumentTypeError("give exactly one of SPEC or --random N")
        if args.random is not None:
            rng = np.random.default_rng(args.seed if args.seed is not None else 0)
            t_min, t_max = cfg.thermal_range
            specs = [dataclasses.replace(
                random_scene(rng, int(rng.integers(1, args.max_trees + 1)),
                             noise_sigma=args.noise, name=f"scene_{i:03d}"),
                t_min=t_min, t_max=t_max) for i in range(args.random)]
        else:
            specs = load_scene_specs(args.spec)
            if args.seed is not None:
                specs = [dataclasses.replace(s, seed=args.seed + i) for i, s in enumerate(specs)]
        rows = cmd_synth(specs, args.out or Path("synthetic"))
        print(f"wrote {len(specs)} scene(s), {len(rows)} tree(s)")
        return EXIT_OK

    if args.command == "flag":
        flagged = cmd_flag(args.results, args.ndvi_threshold, dict(args.species_threshold))
        out = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            if flagged:
                writer = csv.DictWriter(out, fieldnames=list(flagged[0].keys()),
                                        lineterminator="\n")
                writer.writeheader()
                writer.writerows(flagged)
        finally:
            if args.out:
                out.close()
        logger.info("%d tree(s) flagged", len(flagged))
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"greenscan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GreenScanError as exc:
        print(f"greenscan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"greenscan: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
