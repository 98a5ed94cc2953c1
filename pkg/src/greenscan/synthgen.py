"""Synthetic RGN + thermal captures with exactly known ground truth.

Canopies are unions of disks, trunks are rectangles hanging below the first
disk, everything else is sky. Channel values are chosen so every canopy pixel
has a known raw NDVI and every thermal pixel decodes to a known temperature.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import SpecError
from .raster import CaptureMeta, CapturePair, RgnImage, ThermalImage, save_capture
from .registration import RegistrationParams, _Warp
from .segmentation import Instance, InstanceMaskSet, save_masks

NDVI_TOLERANCE = 0.02
PREFERRED_RED = 100
CANOPY_GREEN = 90


@dataclass(frozen=True)
class TreeSpec:
    center: Tuple[float, float]
    radius: float
    canopy_ndvi: float
    canopy_temp: float
    trunk_width: int = 0
    trunk_height: int = 0
    # extra disks as (dx, dy, radius) relative to ``center``
    lobes: Tuple[Tuple[float, float, float], ...] = ()

    def disks(self):
        cx, cy = self.center
        yield cx, cy, self.radius
        for dx, dy, r in self.lobes:
            yield cx + dx, cy + dy, r


@dataclass(frozen=True)
class SceneSpec:
    width: int = 160
    height: int = 120
    trees: Tuple[TreeSpec, ...] = ()
    sky_temp: float = 5.0
    air_temp: float = 20.0
    trunk_temp: Optional[float] = None
    noise_sigma: float = 0.0
    seed: int = 0
    t_min: float = -10.0
    t_max: float = 40.0
    sky_rgn: Tuple[int, int, int] = (140, 150, 140)
    trunk_rgn: Tuple[int, int, int] = (90, 70, 90)
    latitude: float = 42.3601
    longitude: float = -71.0942
    timestamp: float = 1_640_000_000.0
    device_id: str = "synthetic"
    name: str = "scene"

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        if "dimensions" in data:
            data["width"], data["height"] = data.pop("dimensions")
        trees = []
        for t in data.pop("trees", []):
            t = dict(t)
            t["center"] = tuple(t["center"])
            t["lobes"] = tuple(tuple(lobe) for lobe in t.get("lobes", ()))
            if "trunk" in t:
                t["trunk_width"], t["trunk_height"] = t.pop("trunk")
            trees.append(TreeSpec(**t))
        for key in ("sky_rgn", "trunk_rgn"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(trees=tuple(trees), **data)
        except TypeError as exc:
            raise SpecError(f"bad scene spec: {exc}") from exc


@dataclass(frozen=True)
class TreeTruth:
    label: int
    target_ndvi: float
    raw_ndvi: float
    ndvi_quantization_error: float
    target_temp: float
    decoded_temp: float
    target_ctd: float
    decoded_ctd: float
    pixel_count: int
    red: int
    nir: int


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SceneSpec
    pair: CapturePair
    truth_masks: InstanceMaskSet
    trees: Tuple[TreeTruth, ...] = field(default_factory=tuple)


def solve_channels(ndvi: float) -> Tuple[int, int]:
    """8-bit (red, nir) whose NDVI is as close as possible to ``ndvi``.

    Red is held at 100 when the matching NIR fits in 8 bits; otherwise every red
    level is tried.
    """
    if not -1.0 < ndvi < 1.0:
        raise SpecError(f"canopy NDVI must lie in (-1, 1), got {ndvi}")

    def nir_for(red):
        return min(255, max(0, int(math.floor(red * (1 + ndvi) / (1 - ndvi) + 0.5))))

    def err(red, nir):
        return abs((nir - red) / (nir + red) - ndvi) if nir + red else math.inf

    preferred = PREFERRED_RED * (1 + ndvi) / (1 - ndvi)
    if preferred <= 255:
        red, nir = PREFERRED_RED, nir_for(PREFERRED_RED)
    else:
        red = min(range(1, 256), key=lambda r: (err(r, nir_for(r)), abs(r - PREFERRED_RED)))
        nir = nir_for(red)
    if err(red, nir) > NDVI_TOLERANCE:
        raise SpecError(f"NDVI {ndvi} is not reachable at 8-bit quantization")
    return red, nir


def encode_temperature(temp: float, t_min: float, t_max: float) -> int:
    p = (temp - t_min) / (t_max - t_min) * 255.0
    if not -0.5 <= p < 255.5:
        raise SpecError(f"temperature {temp} outside the thermal range [{t_min}, {t_max}]")
    return int(math.floor(p + 0.5))


def _disk_mask(xx, yy, cx, cy, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _trunk_mask(xx, yy, tree: TreeSpec):
    if tree.trunk_width <= 0 or tree.trunk_height <= 0:
        return np.zeros(np.broadcast(xx, yy).shape, dtype=bool)
    cx, cy = tree.center
    half = tree.trunk_width / 2.0
    bottom = cy + tree.radius + tree.trunk_height
    return (np.abs(xx - cx) < half) & (yy >= cy) & (yy <= bottom)


def _canopy_mask(xx, yy, tree: TreeSpec):
    mask = np.zeros(np.broadcast(xx, yy).shape, dtype=bool)
    for cx, cy, r in tree.disks():
        mask |= _disk_mask(xx, yy, cx, cy, r)
    return mask


def _validate(spec: SceneSpec):
    if spec.width <= 0 or spec.height <= 0:
        raise SpecError("scene dimensions must be positive")
    if spec.noise_sigma < 0:
        raise SpecError("noise_sigma must be >= 0")
    if not spec.t_min < spec.t_max:
        raise SpecError("t_min must be below t_max")
    for i, tree in enumerate(spec.trees):
        if tree.radius <= 0:
            raise SpecError(f"tree {i}: radius must be positive")
        for cx, cy, r in tree.disks():
            if cx - r < 0 or cy - r < 0 or cx + r > spec.width - 1 or cy + r > spec.height - 1:
                raise SpecError(f"tree {i}: canopy disk at ({cx}, {cy}) r={r} leaves the frame")


def _paint(spec: SceneSpec, xx, yy):
    """Label plane for arbitrary sample coordinates: 0 sky, -1 trunk, k tree k."""
    labels = np.zeros(np.broadcast(xx, yy).shape, dtype=np.int64)
    for tree in spec.trees:
        labels[_trunk_mask(xx, yy, tree)] = -1
    for k, tree in enumerate(spec.trees, start=1):
        canopy = _canopy_mask(xx, yy, tree)
        if np.any(canopy & (labels > 0)):
            raise SpecError(f"tree {k} overlaps another canopy")
        labels[canopy] = k
    return labels


def _channels(spec: SceneSpec, labels: np.ndarray, solved, rng):
    red = np.full(labels.shape, spec.sky_rgn[0], dtype=np.float64)
    green = np.full(labels.shape, spec.sky_rgn[1], dtype=np.float64)
    nir = np.full(labels.shape, spec.sky_rgn[2], dtype=np.float64)
    trunk = labels == -1
    red[trunk], green[trunk], nir[trunk] = spec.trunk_rgn
    for k, (r, n) in enumerate(solved, start=1):
        sel = labels == k
        red[sel], green[sel], nir[sel] = r, CANOPY_GREEN, n
    planes = []
    for plane in (red, green, nir):
        if spec.noise_sigma > 0:
            plane = plane + rng.normal(0.0, spec.noise_sigma, plane.shape)
        planes.append(np.clip(np.floor(plane + 0.5), 0, 255).astype(np.uint8))
    return planes


def _meta(spec: SceneSpec) -> CaptureMeta:
    return CaptureMeta(timestamp=spec.timestamp, latitude=spec.latitude,
                       longitude=spec.longitude, air_temperature=spec.air_temp,
                       device_id=spec.device_id)


def generate(spec: SceneSpec) -> SyntheticScene:
    """Render ``spec`` at thermal resolution; identity registration recovers it exactly."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    labels = _paint(spec, xx, yy)
    solved = [solve_channels(t.canopy_ndvi) for t in spec.trees]
    red, green, nir = _channels(spec, labels, solved, rng)

    trunk_temp = spec.air_temp if spec.trunk_temp is None else spec.trunk_temp
    p_sky = encode_temperature(spec.sky_temp, spec.t_min, spec.t_max)
    p_trunk = encode_temperature(trunk_temp, spec.t_min, spec.t_max)
    thermal = np.full(labels.shape, p_sky, dtype=np.uint8)
    thermal[labels == -1] = p_trunk
    truths, instances = [], []
    scale = (spec.t_max - spec.t_min) / 255.0
    for k, (tree, (r, n)) in enumerate(zip(spec.trees, solved), start=1):
        p = encode_temperature(tree.canopy_temp, spec.t_min, spec.t_max)
        mask = labels == k
        thermal[mask] = p
        raw = (n - r) / (n + r)
        decoded = p * scale + spec.t_min
        truths.append(TreeTruth(
            label=k, target_ndvi=tree.canopy_ndvi, raw_ndvi=raw,
            ndvi_quantization_error=raw - tree.canopy_ndvi,
            target_temp=tree.canopy_temp, decoded_temp=decoded,
            target_ctd=tree.canopy_temp - spec.air_temp, decoded_ctd=decoded - spec.air_temp,
            pixel_count=int(mask.sum()), red=r, nir=n,
        ))
        instances.append(Instance(mask=mask, score=1.0, label=k))

    pair = CapturePair(
        rgn=RgnImage(red=red, green=green, nir=nir),
        thermal=ThermalImage(thermal, spec.t_min, spec.t_max),
        meta=_meta(spec),
        capture_id=spec.name,
    )
    masks = InstanceMaskSet(width=spec.width, height=spec.height, instances=instances)
    return SyntheticScene(spec=spec, pair=pair, truth_masks=masks, trees=tuple(truths))


def render_prewarp(scene: SyntheticScene, params: RegistrationParams,
                   source_size: Tuple[int, int]) -> CapturePair:
    """High-resolution RGN consistent with ``params``, paired with the scene's thermal.

    Each source pixel is mapped into the thermal frame and painted from the
    scene geometry there, so ``register(result, params)`` lands the canopies on
    their truth masks. Source pixels outside the thermal frame are sky.
    """
    spec = scene.spec
    warp = _Warp.resolve(params, source_size, (spec.width, spec.height))
    src_w, src_h = source_size
    xs = np.arange(src_w, dtype=np.float64)
    ys = np.arange(src_h, dtype=np.float64)
    tx, _ = warp.to_thermal(xs, np.zeros_like(xs))
    _, ty = warp.to_thermal(np.zeros_like(ys), ys)
    labels = _paint(spec, tx[None, :], ty[:, None])
    solved = [(t.red, t.nir) for t in scene.trees]
    rng = np.random.default_rng(spec.seed)
    red, green, nir = _channels(spec, labels, solved, rng)
    return CapturePair(rgn=RgnImage(red=red, green=green, nir=nir), thermal=scene.pair.thermal,
                       meta=scene.pair.meta, capture_id=scene.pair.capture_id)


TRUTH_FIELDS = [f for f in TreeTruth.__dataclass_fields__]


def write_scene(scene: SyntheticScene, out_dir, name: Optional[str] = None) -> List[Path]:
    """Write the capture triplet, truth label raster and truth CSV for one scene."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = name or scene.spec.name
    paths = [out_dir / f"{name}_rgn.png", out_dir / f"{name}_thermal.png",
             out_dir / f"{name}_meta.json"]
    save_capture(scene.pair, *paths)
    truth_png = out_dir / f"{name}_truth.png"
    save_masks(scene.truth_masks, truth_png)
    truth_csv = out_dir / f"{name}_truth.csv"
    with truth_csv.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["capture_id"] + TRUTH_FIELDS)
        writer.writeheader()
        for t in scene.trees:
            writer.writerow({"capture_id": name, **asdict(t)})
    return paths + [truth_png, truth_csv]


def load_scene_specs(path) -> List[SceneSpec]:
    """Parse a JSON file holding one scene object or ``{"scenes": [...]}``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read scene spec {path}: {exc}") from exc
    items = data["scenes"] if isinstance(data, dict) and "scenes" in data else data
    if isinstance(items, dict):
        items = [items]
    specs = []
    for i, item in enumerate(items):
        item = dict(item)
        item.setdefault("name", f"scene_{i:03d}")
        specs.append(SceneSpec.from_dict(item))
    return specs


def random_scene(rng: np.random.Generator, n_trees: int, noise_sigma: float = 0.0,
                 width: int = 160, height: int = 120, name: str = "scene",
                 gap: float = 4.0, max_tries: int = 2000) -> SceneSpec:
    """Random non-touching single-disk trees with trunks, for batch oracle runs."""
    trees: List[TreeSpec] = []
    tries = 0
    while len(trees) < n_trees:
        tries += 1
        if tries > max_tries:
            raise SpecError(f"could not place {n_trees} trees in {width}x{height}")
        if tries % 200 == 0:
            trees = []
        r = float(rng.integers(6, 13))
        cx = float(rng.integers(int(r) + 1, width - int(r) - 1))
        cy = float(rng.integers(int(r) + 1, height - int(r) - 1))
        # horizontal separation keeps trunks clear of neighbouring canopies
        if any(abs(cx - t.center[0]) < r + t.radius + gap for t in trees):
            continue
        trees.append(TreeSpec(
            center=(cx, cy), radius=r,
            canopy_ndvi=round(float(rng.uniform(0.15, 0.8)), 3),
            canopy_temp=round(float(rng.uniform(-5.0, 35.0)), 2),
            trunk_width=int(rng.integers(2, 5)), trunk_height=int(rng.integers(3, 20)),
        ))
    return SceneSpec(width=width, height=height, trees=tuple(trees), noise_sigma=noise_sigma,
                     seed=int(rng.integers(0, 2**31)), name=name,
                     air_temp=round(float(rng.uniform(-5.0, 25.0)), 2))
