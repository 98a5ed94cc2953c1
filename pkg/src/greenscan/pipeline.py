"""Batch drivers behind the command line: process, validate, eval-seg, synth, flag."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import PipelineConfig
from .errors import (GreenScanError, InsufficientDataError, NoInputError, PairingError,
                     UndefinedCorrelationError, ValidationError)
from .indexes import tree_indexes
from .inventory import IndexRow, InventoryRecord, join_results, load_inventory
from .raster import load_capture
from .registration import register
from .segeval import coco_map, kfold_split
from .segmentation import load_external_masks, segment
from .stats import aggregate_by, bland_altman, bland_altman_points, correlation_matrix, pearson
from .synthgen import SceneSpec, generate, write_scene

logger = logging.getLogger(__name__)

RESULT_FIELDS = ["capture_id", "instance_id", "lat", "lon", "ndvi_corrected_mean", "ctd_c",
                 "canopy_pixel_count"]
RASTER_SUFFIXES = (".png", ".tif", ".tiff")
_MEMBER = re.compile(r"^(?P<id>.+)_(?P<kind>rgn|thermal|meta)\.(?P<ext>png|tif|tiff|json)$",
                     re.IGNORECASE)


# --- process -----------------------------------------------------------------


@dataclass
class CaptureFiles:
    capture_id: str
    rgn: Optional[Path] = None
    thermal: Optional[Path] = None
    meta: Optional[Path] = None

    def missing(self) -> List[str]:
        return [k for k in ("rgn", "thermal", "meta") if getattr(self, k) is None]


def discover_captures(captures_dir) -> List[CaptureFiles]:
    """Group ``<id>_rgn.*``, ``<id>_thermal.*`` and ``<id>_meta.json`` files by id."""
    captures: Dict[str, CaptureFiles] = {}
    for path in sorted(Path(captures_dir).iterdir()):
        m = _MEMBER.match(path.name)
        if not m or not path.is_file():
            continue
        kind, ext = m["kind"].lower(), m["ext"].lower()
        if (kind == "meta") != (ext == "json"):
            continue
        entry = captures.setdefault(m["id"], CaptureFiles(m["id"]))
        setattr(entry, kind, path)
    return [captures[k] for k in sorted(captures)]


@dataclass
class CaptureOutcome:
    capture_id: str
    status: str  # ok | empty | failed
    rows: List[IndexRow] = field(default_factory=list)
    reason: str = ""


def process_capture(files: CaptureFiles, cfg: PipelineConfig) -> CaptureOutcome:
    """Register, segment and measure one capture; errors become a failed outcome."""
    cid = files.capture_id
    missing = files.missing()
    if missing:
        return CaptureOutcome(cid, "failed", reason=f"missing {', '.join(missing)} file")
    try:
        pair = load_capture(files.rgn, files.thermal, files.meta, max_skew=cfg.max_skew,
                            capture_id=cid)
        reg = register(pair, cfg.registration)
        external = None
        if cfg.segmenter.mode == "external":
            masks_dir = Path(cfg.masks_dir) if cfg.masks_dir else files.meta.parent
            external = load_external_masks(masks_dir / f"{cid}_masks.png",
                                           expected_dims=(reg.shape[1], reg.shape[0]))
        leaves = segment(reg, cfg.segmenter, external=external)
        rows = []
        for inst in leaves:
            idx = tree_indexes(reg, inst.mask, inst.label, pair.meta.air_temperature,
                               correct=cfg.correct_ndvi)
            rows.append(IndexRow(
                capture_id=cid, instance_id=idx.instance_id,
                latitude=pair.meta.latitude, longitude=pair.meta.longitude,
                ndvi_corrected_mean=idx.ndvi_corrected_mean, ctd_c=idx.ctd,
                canopy_pixel_count=idx.canopy_pixel_count,
            ))
    except GreenScanError as exc:
        return CaptureOutcome(cid, "failed", reason=f"{type(exc).__name__}: {exc}")
    return CaptureOutcome(cid, "ok" if rows else "empty", rows=rows)


def _row_dict(row: IndexRow) -> dict:
    return {
        "capture_id": row.capture_id,
        "instance_id": row.instance_id,
        "lat": row.latitude,
        "lon": row.longitude,
        "ndvi_corrected_mean": row.ndvi_corrected_mean,
        "ctd_c": row.ctd_c,
        "canopy_pixel_count": row.canopy_pixel_count,
    }


def write_results(rows: Sequence[IndexRow], out_dir: Path) -> Tuple[Path, Path]:
    csv_path, json_path = out_dir / "results.csv", out_dir / "results.json"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in _row_dict(row).items()})
    json_path.write_text(json.dumps([_row_dict(r) for r in rows], indent=2) + "\n")
    return csv_path, json_path


def read_results(path) -> List[IndexRow]:
    path = Path(path)
    if path.suffix.lower() == ".json":
        raw = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            raw = list(csv.DictReader(fh))
    try:
        return [IndexRow(capture_id=str(r["capture_id"]), instance_id=int(r["instance_id"]),
                         latitude=float(r["lat"]), longitude=float(r["lon"]),
                         ndvi_corrected_mean=float(r["ndvi_corrected_mean"]),
                         ctd_c=float(r["ctd_c"]),
                         canopy_pixel_count=int(r["canopy_pixel_count"]))
                for r in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed results row: {exc}") from exc


@dataclass
class ProcessSummary:
    rows: List[IndexRow]
    outcomes: List[CaptureOutcome]
    manifest: dict

    @property
    def failures(self) -> int:
        return self.manifest["captures_failed"]


def cmd_process(captures_dir, cfg: PipelineConfig, out_dir, workers: Optional[int] = None
                ) -> ProcessSummary:
    """Run every capture in ``captures_dir`` and write results plus a run manifest.

    A capture that fails is recorded in the manifest and the batch continues.
    Results keep input order whatever the worker count.
    """
    captures_dir = Path(captures_dir)
    if not captures_dir.is_dir():
        raise NoInputError(f"{captures_dir} is not a directory")
    files = discover_captures(captures_dir)
    if not files:
        raise NoInputError(f"no captures found in {captures_dir}")
    workers = workers or cfg.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(process_capture, files, [cfg] * len(files)))
    else:
        outcomes = [process_capture(f, cfg) for f in files]

    rows = [row for o in outcomes for row in o.rows]
    counts = {s: sum(o.status == s for o in outcomes) for s in ("ok", "empty", "failed")}
    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "captures_in": len(outcomes),
        "captures_ok": counts["ok"],
        "captures_empty": counts["empty"],
        "captures_failed": counts["failed"],
        "rows_emitted": len(rows),
        "captures": [
            {"capture_id": o.capture_id, "status": o.status, "rows": len(o.rows),
             **({"reason": o.reason} if o.reason else {})}
            for o in outcomes
        ],
    }
    for o in outcomes:
        if o.status == "failed":
            logger.warning("capture %s failed: %s", o.capture_id, o.reason)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results(rows, out_dir)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return ProcessSummary(rows=rows, outcomes=outcomes, manifest=manifest)


# --- validate ----------------------------------------------------------------


def _correlate(name_x, xs, name_y, ys, alpha) -> dict:
    entry = {"measured": name_x, "ground_truth": name_y, "n": len(xs)}
    try:
        res = pearson(xs, ys)
    except (UndefinedCorrelationError, InsufficientDataError) as exc:
        entry.update(r=None, p=None, significant=None, note=str(exc))
        return entry
    entry.update(r=res.r, p=res.p, significant=res.significant(alpha))
    return entry


def _write_csv(path: Path, fieldnames, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_validate(results_path, inventory_path, cfg: PipelineConfig, out_dir=None,
                 radius: Optional[float] = None) -> dict:
    """Join results with the inventory and compute the agreement report.

    Raises:
        InsufficientDataError: fewer than three results matched an inventory tree.
    """
    rows = read_results(results_path)
    inventory = load_inventory(inventory_path)
    by_id: Dict[str, InventoryRecord] = {rec.tree_id: rec for rec in inventory}
    joined = join_results(rows, inventory, radius or cfg.match_radius)
    matched = [(j, by_id[j.tree_id]) for j in joined if j.tree_id is not None]
    if len(matched) < 3:
        raise InsufficientDataError(f"only {len(matched)} result(s) matched an inventory tree")

    ndvi = [j.measured_ndvi for j, _ in matched]
    ctd = [j.measured_ctd for j, _ in matched]
    remote = [t.remote_ndvi for _, t in matched]
    area = [t.canopy_area for _, t in matched]
    ordinal = cfg.condition_ordinal
    condition = [ordinal[t.condition] for _, t in matched]

    primary = _correlate("measured_ndvi", ndvi, "remote_ndvi", remote, cfg.alpha)
    correlations = [
        primary,
        _correlate("measured_ctd", ctd, "condition", condition, cfg.alpha),
        _correlate("measured_ndvi", ndvi, "canopy_area_m2", area, cfg.alpha),
        _correlate("measured_ctd", ctd, "canopy_area_m2", area, cfg.alpha),
    ]
    ba = bland_altman(ndvi, remote)
    matrix = correlation_matrix({
        "measured_ndvi": ndvi, "measured_ctd": ctd, "condition": condition,
        "remote_ndvi": remote, "canopy_area_m2": area,
    })
    agg_rows = [{"species": t.species, "condition": t.condition,
                 "measured_ndvi": j.measured_ndvi, "measured_ctd": j.measured_ctd}
                for j, t in matched]
    aggregates = [
        {"species": g.key[0], "condition": g.key[1], "n": g.n,
         "ndvi_mean": g.ndvi_mean, "ndvi_sd": g.ndvi_sd,
         "ctd_mean": g.ctd_mean, "ctd_sd": g.ctd_sd}
        for g in aggregate_by(agg_rows)
    ]
    report = {
        "n_results": len(rows),
        "n_matched": len(matched),
        "n_unmatched": len(joined) - len(matched),
        "n_duplicate": sum(j.duplicate for j in joined),
        "pearson": {k: primary[k] for k in ("r", "p", "significant")},
        "correlations": correlations,
        "bland_altman": dataclasses.asdict(ba),
        "correlation_matrix": {"names": list(matrix.names), "values": matrix.to_rows()},
        "aggregates": aggregates,
    }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "validation.json").write_text(json.dumps(report, indent=2) + "\n")
        joined_rows = []
        for j in joined:
            t = by_id.get(j.tree_id) if j.tree_id else None
            joined_rows.append({
                **dataclasses.asdict(j),
                "species": t.species if t else "",
                "condition": t.condition if t else "",
                "remote_ndvi": t.remote_ndvi if t else "",
                "canopy_area_m2": t.canopy_area if t else "",
            })
        _write_csv(out_dir / "joined.csv",
                   list(joined_rows[0].keys()) if joined_rows else ["capture_id"], joined_rows)
        _write_csv(out_dir / "plots" / "scatter.csv",
                   ["tree_id", "capture_id", "measured_ndvi", "remote_ndvi"],
                   [{"tree_id": j.tree_id, "capture_id": j.capture_id,
                     "measured_ndvi": j.measured_ndvi, "remote_ndvi": t.remote_ndvi}
                    for j, t in matched])
        _write_csv(out_dir / "plots" / "bland_altman.csv", ["mean", "difference"],
                   [{"mean": m, "difference": d} for m, d in bland_altman_points(ndvi, remote)])
        _write_csv(out_dir / "plots" / "distributions.csv",
                   ["species", "condition", "measured_ndvi", "measured_ctd"], agg_rows)
    return report


# --- eval-seg ----------------------------------------------------------------


def _label_rasters(directory: Path) -> Dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in RASTER_SUFFIXES}


def load_seg_pairs(pred_dir, truth_dir):
    """Pair prediction and truth label rasters by file stem."""
    preds = _label_rasters(Path(pred_dir))
    truths = _label_rasters(Path(truth_dir))
    orphans = sorted(f"pred:{k}" for k in preds.keys() - truths.keys()) + \
        sorted(f"truth:{k}" for k in truths.keys() - preds.keys())
    if orphans:
        raise PairingError(f"unpaired mask files: {', '.join(orphans)}", orphans)
    if not preds:
        raise NoInputError(f"no mask rasters in {pred_dir}")
    ids = sorted(preds)
    pred_sets, truth_sets = [], []
    for k in ids:
        truth = load_external_masks(truths[k])
        pred = load_external_masks(preds[k], expected_dims=(truth.width, truth.height))
        pred_sets.append([(inst.mask, inst.score) for inst in pred])
        truth_sets.append([inst.mask for inst in truth])
    return ids, pred_sets, truth_sets


def cmd_eval_seg(pred_dir, truth_dir, out_path=None, folds: Optional[int] = None,
                 seed: int = 0) -> dict:
    ids, preds, truths = load_seg_pairs(pred_dir, truth_dir)
    report_obj = coco_map(preds, truths)
    report = {"n_images": len(ids),
              **(report_obj.to_dict() if report_obj else {"AP@[0.50:0.95:0.05]": None})}
    if folds:
        per_fold = []
        for i, (_, test) in enumerate(kfold_split(list(range(len(ids))), folds, seed), start=1):
            fold = coco_map([preds[j] for j in test], [truths[j] for j in test])
            per_fold.append({"fold": i, "images": [ids[j] for j in test],
                             "AP@0.50": fold.ap50 if fold else None})
        report["folds"] = per_fold
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2) + "\n")
    return report


# --- synth -------------------------------------------------------------------


def cmd_synth(specs: Sequence[SceneSpec], out_dir) -> List[dict]:
    """Render each scene into ``out_dir``; returns the per-tree truth rows."""
    out_dir = Path(out_dir)
    truth_rows = []
    for spec in specs:
        scene = generate(spec)
        write_scene(scene, out_dir)
        for t in scene.trees:
            truth_rows.append({"capture_id": spec.name, **dataclasses.asdict(t)})
    if truth_rows:
        _write_csv(out_dir / "truth.csv", list(truth_rows[0].keys()), truth_rows)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "truth.csv").write_text("capture_id\n")
    return truth_rows


# --- flag --------------------------------------------------------------------


def cmd_flag(results_path, ndvi_threshold: float,
             species_thresholds: Optional[Dict[str, float]] = None) -> List[dict]:
    """Rows whose measured NDVI falls below the threshold, marked ``attention``.

    ``species_thresholds`` overrides the threshold for rows carrying a matching
    ``species`` column (as in the validate command's ``joined.csv``).
    """
    path = Path(results_path)
    if path.suffix.lower() == ".json":
        rows = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    species_thresholds = species_thresholds or {}
    flagged = []
    for row in rows:
        key = "ndvi_corrected_mean" if "ndvi_corrected_mean" in row else "measured_ndvi"
        try:
            ndvi = float(row[key])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: row without a usable NDVI value: {exc}") from exc
        threshold = species_thresholds.get(row.get("species") or "", ndvi_threshold)
        if ndvi < threshold:
            flagged.append({**row, "threshold": threshold, "status": "attention"})
    return flagged
