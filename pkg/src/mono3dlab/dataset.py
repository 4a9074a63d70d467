"""Seeded synthetic datasets on disk: one tensor file per map plus manifest.json."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CorruptFileError
from .geometry import CameraIntrinsics, KeypointSet
from .io import box_from_dict, box_to_dict, camera_to_dict, dump_json, read_tensor, sha256_file, write_tensor
from .scene import (
    CorruptionConfig,
    DepthMap,
    FeatureMap,
    ImageSpec,
    NocMap,
    PlacementRanges,
    SceneSample,
    make_scene,
)

MANIFEST = "manifest.json"
FORMAT = "mono3dlab-dataset/1"
MAP_NAMES = ("noc", "mask", "instance", "depth", "features")


def _json_float(x: float):
    return None if not np.isfinite(x) else float(x)


def scene_maps(sample: SceneSample) -> dict[str, np.ndarray]:
    maps = {
        "noc": sample.noc.coords,
        "mask": sample.noc.mask.astype(np.float32),
        "instance": sample.noc.instance_id.astype(np.float32),
        "depth": sample.depth.depth,
    }
    if sample.features is not None:
        maps["features"] = sample.features.values
    return maps


def scene_record(sample: SceneSample, index: int) -> dict:
    return {
        "index": index,
        "seed": sample.rng_seed,
        "camera": camera_to_dict(sample.camera),
        "width": sample.width,
        "height": sample.height,
        "boxes": [box_to_dict(b) for b in sample.boxes],
        "proposals": [box_to_dict(b) for b in sample.proposals],
        "sigma_z": list(sample.sigma_z),
        "keypoints": [
            {"uv": [[_json_float(x) for x in row] for row in kp.uv], "valid": kp.valid.tolist()}
            for kp in sample.keypoints
        ],
    }


def write_scene(sample: SceneSample, index: int, out_dir: Path) -> dict:
    rec = scene_record(sample, index)
    sub = f"scene_{index:05d}"
    (out_dir / sub).mkdir(parents=True, exist_ok=True)
    files, digests = {}, {}
    for name, arr in scene_maps(sample).items():
        rel = f"{sub}/{name}.t32"
        write_tensor(out_dir / rel, arr, name=name)
        files[name] = rel
        digests[name] = sha256_file(out_dir / rel)
    rec["files"] = files
    rec["sha256"] = digests
    return rec


def _generate_one(args) -> dict:
    index, seed, ranges, image, cfg, out_dir = args
    sample = make_scene(index, seed, ranges, image, cfg)
    return write_scene(sample, index, Path(out_dir))


def dataset_config(ranges: PlacementRanges, image: ImageSpec, cfg: CorruptionConfig) -> dict:
    img = asdict(image)
    img["camera"] = camera_to_dict(image.camera)
    return {
        "ranges": asdict(ranges),
        "image": img,
        "corruption": {k: (None if v == float("inf") else v) for k, v in asdict(cfg).items()},
    }


def generate_dataset(
    scene_count: int,
    ranges: PlacementRanges,
    cfg: CorruptionConfig,
    seed: int,
    out_dir,
    image: ImageSpec | None = None,
    jobs: int = 1,
    extra_config: dict | None = None,
) -> dict:
    """Write ``scene_count`` scenes and return the manifest (also written to disk)."""
    image = image or ImageSpec()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from exc
    tasks = [(i, seed, ranges, image, cfg, str(out_dir)) for i in range(scene_count)]
    if jobs > 1 and scene_count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_generate_one, tasks))
    else:
        records = [_generate_one(t) for t in tasks]
    config = dataset_config(ranges, image, cfg)
    if extra_config:
        config.update(extra_config)
    manifest = {
        "format": FORMAT,
        "seed": seed,
        "scene_count": scene_count,
        "config": config,
        "scenes": records,
    }
    dump_json(manifest, out_dir / MANIFEST)
    return manifest


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
    if manifest.get("format") != FORMAT:
        raise CorruptFileError(f"unknown dataset format {manifest.get('format')!r}", str(path))
    manifest["_root"] = str(path.parent)
    return manifest


def load_scene(manifest: dict, index: int, verify: bool = False) -> SceneSample:
    rec = manifest["scenes"][index]
    root = Path(manifest["_root"])
    maps = {}
    for name, rel in rec["files"].items():
        p = root / rel
        if verify and sha256_file(p) != rec["sha256"][name]:
            raise CorruptFileError("sha256 does not match manifest", str(p))
        maps[name], _ = read_tensor(p)
    mask = maps["mask"] > 0.5
    K = CameraIntrinsics(**rec["camera"])
    return SceneSample(
        camera=K,
        width=rec["width"],
        height=rec["height"],
        boxes=tuple(box_from_dict(b) for b in rec["boxes"]),
        noc=NocMap(maps["noc"].astype(np.float64), mask, maps["instance"].astype(np.int64)),
        depth=DepthMap(maps["depth"].astype(np.float64), mask.copy()),
        features=FeatureMap(maps["features"].astype(np.float64)) if "features" in maps else None,
        rng_seed=rec["seed"],
        proposals=tuple(box_from_dict(b) for b in rec["proposals"]),
        sigma_z=tuple(rec["sigma_z"]),
        keypoints=tuple(
            KeypointSet(np.array([[np.nan if x is None else x for x in row] for row in kp["uv"]]), kp["valid"])
            for kp in rec["keypoints"]
        ),
    )


def iter_instances(manifest: dict):
    """Yield (instance_id, scene_index, object_index) for every object in the dataset."""
    for rec in manifest["scenes"]:
        for k in range(len(rec["boxes"])):
            yield f"s{rec['index']:05d}_o{k}", rec["index"], k
