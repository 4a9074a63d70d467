"""Ray-cast cuboid scenes into NOC / depth / feature maps, and corrupt them.

The rendered maps are the ground truth a perfect NOC branch and feature
extractor would produce.  :func:`corrupt` degrades copies of them to stand in
for network error: NOC noise, textureless patches, occluders with coherent
but wrong coordinate predictions, noisy proposals and noisy corner keypoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    EPS_Z,
    Box3D,
    CameraIntrinsics,
    Dimensions,
    KeypointSet,
    ObjectPose,
    PixelRect,
    backproject,
    box_at_depth,
    box_corners,
    project_corners,
    project_unchecked,
    rot_y,
)

NOC_EPS = 1e-6

# Feature proxy: channel c is cos(FEATURE_OMEGA * <k_c, noc> + phase[instance, c]).
FEATURE_OMEGA = math.pi / 2.0

# Stage ids for independent RNG streams.
STAGE_PLACE, STAGE_FEATURES, STAGE_CORRUPT = 0, 1, 2

OCCLUDER_INSTANCE_BASE = 1_000_000


def rng_stream(*key: int) -> np.random.Generator:
    """Counter-based stream keyed by non-negative integers, e.g. (seed, scene, stage)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True, eq=False)
class NocMap:
    coords: np.ndarray  # (H, W, 3), NaN where invalid
    mask: np.ndarray  # (H, W) bool
    instance_id: np.ndarray  # (H, W) int, -1 where invalid

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    def instance_pixels(self, instance: int | None = None) -> np.ndarray:
        """(N, 2) integer (u, v) of valid pixels, optionally of one instance."""
        sel = self.mask if instance is None else self.mask & (self.instance_id == instance)
        vv, uu = np.nonzero(sel)
        return np.stack([uu, vv], axis=-1)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray  # (H, W, C)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise InvalidInputError(f"feature map must be (H, W, C>=1), got {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray  # (H, W), NaN where invalid
    mask: np.ndarray

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class CorruptionConfig:
    noc_noise_sigma: float = 0.0
    textureless_patch_fraction: float = 0.0
    # proposal depth std is pose_depth_sigma + pose_depth_sigma_per_m * z (Laplacian noise)
    pose_depth_sigma: float = 0.0
    pose_depth_sigma_per_m: float = 0.0
    yaw_sigma: float = 0.0
    dims_sigma_frac: float = 0.0
    occluder_count: int = 0
    occluder_size_frac: float = 0.3
    occluder_noc_offset: float = 0.15
    corner_noise_px: float = 0.0
    corner_occlusion_fraction: float = 0.0
    # "hallucinate": an occluded corner is still reported, at a random point on its occluder;
    # "drop": it is marked invalid
    occluded_corner_mode: str = "hallucinate"
    max_proposal_offset: float = math.inf

    def __post_init__(self):
        sigmas = (
            self.noc_noise_sigma,
            self.pose_depth_sigma,
            self.pose_depth_sigma_per_m,
            self.yaw_sigma,
            self.dims_sigma_frac,
            self.occluder_noc_offset,
            self.corner_noise_px,
        )
        if any(not (s >= 0) for s in sigmas):
            raise InvalidInputError(f"all sigmas must be >= 0: {self}")
        for name in ("textureless_patch_fraction", "dims_sigma_frac", "corner_occlusion_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.occluder_size_frac <= 1.0:
            raise InvalidInputError("occluder_size_frac must lie in (0, 1]")
        if self.occluder_count < 0:
            raise InvalidInputError("occluder_count must be >= 0")
        if self.occluded_corner_mode not in ("hallucinate", "drop"):
            raise InvalidInputError(f"unknown occluded_corner_mode {self.occluded_corner_mode!r}")
        if not self.max_proposal_offset > 0:
            raise InvalidInputError("max_proposal_offset must be positive")


@dataclass(frozen=True, eq=False)
class SceneSample:
    camera: CameraIntrinsics
    width: int
    height: int
    boxes: tuple[Box3D, ...]
    noc: NocMap
    depth: DepthMap
    features: FeatureMap | None = None
    rng_seed: int = 0
    # proposal stage stand-ins; equal to ground truth until corrupted
    proposals: tuple[Box3D, ...] = ()
    sigma_z: tuple[float, ...] = ()
    keypoints: tuple[KeypointSet, ...] = ()

    def __post_init__(self):
        shape = (self.height, self.width)
        maps = [self.noc.mask, self.depth.mask]
        if self.features is not None:
            maps.append(self.features.values[..., 0])
        if any(m.shape != shape for m in maps):
            raise InvalidInputError("all maps must share the image dimensions")
        if not self.proposals:
            object.__setattr__(self, "proposals", tuple(self.boxes))
        if not self.sigma_z:
            object.__setattr__(self, "sigma_z", (0.0,) * len(self.boxes))
        if not self.keypoints:
            kps = tuple(image_corners(b, self.camera, self.width, self.height) for b in self.boxes)
            object.__setattr__(self, "keypoints", kps)
        if not (len(self.proposals) == len(self.sigma_z) == len(self.keypoints) == len(self.boxes)):
            raise InvalidInputError("per-box annotations must match the box list")


def image_corners(box: Box3D, K: CameraIntrinsics, width: int, height: int) -> KeypointSet:
    """Exact corner projections; corners behind the camera or off-image are invalid."""
    kp = project_corners(box, K)
    u, v = kp.uv[:, 0], kp.uv[:, 1]
    with np.errstate(invalid="ignore"):
        ok = kp.valid & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    return KeypointSet(np.where(ok[:, None], kp.uv, np.nan), ok)


def pixel_rays(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Ray directions with unit z through the pixel centers, so ray parameter t == depth."""
    return backproject(K, np.asarray(pixels, dtype=float) + 0.5, 1.0)


def _box_image_rect(box: Box3D, K: CameraIntrinsics, width: int, height: int) -> PixelRect:
    corners = box_corners(box)
    if np.any(corners[:, 2] <= EPS_Z):
        return PixelRect(0, 0, width, height)
    uv, _ = project_unchecked(K, corners)
    lo = np.floor(uv.min(axis=0)).astype(int) - 1
    hi = np.ceil(uv.max(axis=0)).astype(int) + 1
    return PixelRect(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])).clip(width, height)


def intersect_box(rays: np.ndarray, box: Box3D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test of camera rays (origin at 0, unit z) against an oriented box.

    Returns (hit, depth, noc) with noc snapped onto the entry face.
    """
    half = 0.5 * box.dims.as_array()
    R = rot_y(box.yaw)
    # object frame: p_obj(t) = t * a + b
    a = (rays @ R) / half
    b = (-box.center @ R) / half
    parallel = a == 0
    safe = np.where(parallel, 1.0, a)
    t1 = (-1.0 - b) / safe
    t2 = (1.0 - b) / safe
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
    outside = parallel & (np.abs(b) > 1.0)
    tmin = np.where(parallel, -np.inf, tmin)
    tmax = np.where(parallel, np.inf, tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    entry_axis = tmin.argmax(axis=1)
    hit = (t_near <= t_far) & (t_near > EPS_Z) & ~outside.any(axis=1)
    noc = a * t_near[:, None] + b
    noc = np.clip(noc, -1.0, 1.0)
    rows = np.arange(len(rays))
    noc[rows, entry_axis] = np.sign(noc[rows, entry_axis]) * 1.0
    return hit, t_near, noc


def render_scene(boxes, K: CameraIntrinsics, width: int, height: int) -> SceneSample:
    """Z-buffered ray cast of yaw boxes into NOC, depth and instance maps."""
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"image size must be positive, got {width}x{height}")
    boxes = tuple(boxes)
    for b in boxes:
        if not b.depth > 0:
            raise InvalidInputError(f"box center must lie in front of the camera: {b}")
    coords = np.full((height, width, 3), np.nan)
    depth = np.full((height, width), np.inf)
    inst = np.full((height, width), -1, dtype=np.int64)
    for k, box in enumerate(boxes):
        rect = _box_image_rect(box, K, width, height)
        if rect.empty:
            continue
        pix = rect.pixels()
        hit, t, noc = intersect_box(pixel_rays(K, pix), box)
        uu, vv = pix[:, 0], pix[:, 1]
        closer = hit & (t < depth[vv, uu])
        uu, vv = uu[closer], vv[closer]
        depth[vv, uu] = t[closer]
        coords[vv, uu] = noc[closer]
        inst[vv, uu] = k
    mask = inst >= 0
    depth[~mask] = np.nan
    return SceneSample(
        camera=K,
        width=width,
        height=height,
        boxes=boxes,
        noc=NocMap(coords, mask, inst),
        depth=DepthMap(depth, mask.copy()),
    )


def feature_wave_vectors(channels: int) -> np.ndarray:
    """(C, 3) integer wave vectors cycling (1,2,3), (2,3,1), (3,1,2)."""
    c = np.arange(channels)[:, None]
    return 1.0 + (c + np.arange(3)[None, :]) % 3


def instance_phases(seed: int, instance: int, channels: int) -> np.ndarray:
    return rng_stream(seed, STAGE_FEATURES, instance).uniform(0.0, 2.0 * math.pi, size=channels)


def feature_function(noc: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Band-limited proxy features for NOC points (..., 3) -> (..., C)."""
    k = feature_wave_vectors(len(phases))
    return np.cos(FEATURE_OMEGA * (np.asarray(noc) @ k.T) + phases)


def render_features(sample: SceneSample, channels: int, seed: int) -> FeatureMap:
    if channels < 1:
        raise InvalidInputError(f"channels must be >= 1, got {channels}")
    values = np.zeros((sample.height, sample.width, channels))
    noc = sample.noc
    for k in range(len(sample.boxes)):
        sel = noc.mask & (noc.instance_id == k)
        if sel.any():
            values[sel] = feature_function(noc.coords[sel], instance_phases(seed, k, channels))
    return FeatureMap(values)


def with_features(sample: SceneSample, channels: int, seed: int) -> SceneSample:
    return replace(sample, features=render_features(sample, channels, seed), rng_seed=seed)


def reflect_into_unit(x: np.ndarray) -> np.ndarray:
    """Mirror values at +-1 so a perturbed surface coordinate stays in [-1, 1]."""
    y = np.where(x > 1.0, 2.0 - x, x)
    y = np.where(y < -1.0, -2.0 - y, y)
    return np.clip(y, -1.0, 1.0)


def _rect_around(center, half_w, half_h, width, height) -> PixelRect:
    u0 = int(math.floor(center[0] - half_w))
    v0 = int(math.floor(center[1] - half_h))
    return PixelRect(u0, v0, int(math.ceil(center[0] + half_w)), int(math.ceil(center[1] + half_h))).clip(width, height)


def _rect_mask(rect: PixelRect, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    if not rect.empty:
        m[rect.v0:rect.v1, rect.u0:rect.u1] = True
    return m


def _perturb_proposal(box: Box3D, K, cfg: CorruptionConfig, rng) -> tuple[Box3D, float]:
    z = box.depth
    sigma = cfg.pose_depth_sigma + cfg.pose_depth_sigma_per_m * z
    offset = rng.laplace(0.0, sigma / math.sqrt(2.0)) if sigma > 0 else 0.0
    offset = float(np.clip(offset, -cfg.max_proposal_offset, cfg.max_proposal_offset))
    yaw_noise = rng.normal(0.0, cfg.yaw_sigma) if cfg.yaw_sigma > 0 else 0.0
    dims = box.dims
    if cfg.dims_sigma_frac > 0:
        scale = np.clip(1.0 + rng.normal(0.0, cfg.dims_sigma_frac, size=3), 0.2, None)
        dims = Dimensions(*(dims.as_array() * scale))
    if offset == 0.0 and yaw_noise == 0.0 and dims is box.dims:
        return box, sigma
    moved = box_at_depth(box, K, max(z + offset, 0.5))
    return replace(moved, pose=ObjectPose(box.yaw + yaw_noise, moved.pose.center), dims=dims), sigma


def corrupt(sample: SceneSample, cfg: CorruptionConfig, seed: int) -> SceneSample:
    """Degrade copies of the maps and derive proposals, depth beliefs and keypoints.

    Ground-truth boxes and the depth map are never modified.  With an all-zero
    config the returned maps are bitwise copies of the input.
    """
    K, W, H = sample.camera, sample.width, sample.height
    noc = sample.noc.coords.copy()
    mask = sample.noc.mask.copy()
    inst = sample.noc.instance_id.copy()
    feats = None if sample.features is None else sample.features.values.copy()
    C = 0 if feats is None else feats.shape[2]

    rng_noise = rng_stream(seed, STAGE_CORRUPT, 0)
    rng_occ = rng_stream(seed, STAGE_CORRUPT, 1)
    rng_patch = rng_stream(seed, STAGE_CORRUPT, 2)
    rng_prop = rng_stream(seed, STAGE_CORRUPT, 3)
    rng_kp = rng_stream(seed, STAGE_CORRUPT, 4)

    if cfg.noc_noise_sigma > 0 and mask.any():
        n = rng_noise.normal(0.0, cfg.noc_noise_sigma, size=(int(mask.sum()), 3))
        noc[mask] = reflect_into_unit(noc[mask] + n)

    keypoints = []
    occluders: list[PixelRect] = []
    for k, box in enumerate(sample.boxes):
        kp = image_corners(box, K, W, H)
        uv, in_image = kp.uv.copy(), kp.valid.copy()
        obj = mask & (inst == k)
        if not obj.any():
            keypoints.append(kp)
            continue
        rect = PixelRect.bounding(np.argwhere(obj)[:, ::-1])
        half_w = 0.5 * cfg.occluder_size_frac * rect.width
        half_h = 0.5 * cfg.occluder_size_frac * rect.height
        obj_occluders = []
        if cfg.corner_occlusion_fraction > 0:
            for c in np.flatnonzero(in_image):
                if rng_occ.random() < cfg.corner_occlusion_fraction:
                    obj_occluders.append(_rect_around(uv[c], half_w, half_h, W, H))
        for _ in range(cfg.occluder_count):
            center = (rng_occ.uniform(rect.u0, rect.u1), rng_occ.uniform(rect.v0, rect.v1))
            obj_occluders.append(_rect_around(center, half_w, half_h, W, H))
        for j, occ in enumerate(obj_occluders):
            region = _rect_mask(occ, mask.shape) & obj
            with np.errstate(invalid="ignore"):
                covered = (uv[:, 0] >= occ.u0) & (uv[:, 0] < occ.u1) & (uv[:, 1] >= occ.v0) & (uv[:, 1] < occ.v1)
            covered &= in_image
            if cfg.occluded_corner_mode == "drop":
                in_image &= ~covered
            else:
                for c in np.flatnonzero(covered):
                    uv[c] = (rng_occ.uniform(occ.u0, occ.u1), rng_occ.uniform(occ.v0, occ.v1))
            if not region.any():
                continue
            # coherent but wrong coordinate prediction under the occluder
            offset = rng_occ.normal(0.0, cfg.occluder_noc_offset, size=3)
            noc[region] = reflect_into_unit(noc[region] + offset)
            if feats is not None:
                vv, uu = np.nonzero(region)
                pseudo = np.stack(
                    [
                        2.0 * (uu + 0.5 - occ.u0) / max(occ.width, 1) - 1.0,
                        2.0 * (vv + 0.5 - occ.v0) / max(occ.height, 1) - 1.0,
                        -np.ones(len(uu)),
                    ],
                    axis=-1,
                )
                occ_id = OCCLUDER_INSTANCE_BASE + 1000 * k + j
                feats[vv, uu] = feature_function(pseudo, instance_phases(seed, occ_id, C))
        occluders.extend(obj_occluders)
        if cfg.corner_noise_px > 0:
            uv = uv + rng_kp.normal(0.0, cfg.corner_noise_px, size=uv.shape)
        keypoints.append(KeypointSet(np.where(in_image[:, None], uv, np.nan), in_image))

    if cfg.textureless_patch_fraction > 0 and feats is not None:
        _flatten_patches(feats, mask, inst, len(sample.boxes), cfg.textureless_patch_fraction, rng_patch)

    proposals, sigmas = [], []
    for box in sample.boxes:
        p, s = _perturb_proposal(box, K, cfg, rng_prop)
        proposals.append(p)
        sigmas.append(float(s))

    return replace(
        sample,
        noc=NocMap(noc, mask, inst),
        features=None if feats is None else FeatureMap(feats),
        proposals=tuple(proposals),
        sigma_z=tuple(sigmas),
        keypoints=tuple(keypoints),
    )


def flattened_mask(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Pixels whose features changed relative to ``reference``."""
    return np.any(values != reference, axis=-1)


def _flatten_patches(feats, mask, inst, n_boxes, fraction, rng, patch_frac: float = 0.2):
    """Set features to their patch mean inside random rectangles until ``fraction``
    of every object's valid pixels are covered."""
    flat = np.zeros(mask.shape, dtype=bool)
    for k in range(n_boxes):
        obj = mask & (inst == k)
        total = int(obj.sum())
        if total == 0:
            continue
        rect = PixelRect.bounding(np.argwhere(obj)[:, ::-1])
        pw = max(1, int(round(patch_frac * rect.width)))
        ph = max(1, int(round(patch_frac * rect.height)))
        target = fraction * total
        for _ in range(10_000):
            covered = int((flat & obj).sum())
            if covered >= target:
                break
            u0 = int(rng.integers(rect.u0, max(rect.u0 + 1, rect.u1 - pw + 1)))
            v0 = int(rng.integers(rect.v0, max(rect.v0 + 1, rect.v1 - ph + 1)))
            patch = _rect_mask(PixelRect(u0, v0, u0 + pw, v0 + ph), mask.shape) & obj & ~flat
            need = target - covered
            n_new = int(patch.sum())
            if n_new == 0:
                continue
            if n_new > need:
                # trim the last patch row-major so coverage lands on target
                idx = np.argwhere(patch)[: int(math.ceil(need))]
                patch = np.zeros_like(patch)
                patch[idx[:, 0], idx[:, 1]] = True
            feats[patch] = feats[patch].mean(axis=0)
            flat |= patch
    return flat


@dataclass(frozen=True)
class PlacementRanges:
    depth: tuple[float, float] = (5.0, 60.0)
    objects_per_scene: tuple[int, int] = (1, 1)
    width: tuple[float, float] = (1.5, 1.9)
    height: tuple[float, float] = (1.4, 1.7)
    length: tuple[float, float] = (3.5, 4.8)
    u_frac: tuple[float, float] = (0.15, 0.85)
    camera_height: float = 1.65

    def __post_init__(self):
        for name in ("depth", "objects_per_scene", "width", "height", "length", "u_frac"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidInputError(f"{name} range must satisfy lo <= hi")
        if self.depth[0] <= 0:
            raise InvalidInputError("depth range must be positive")


@dataclass(frozen=True)
class ImageSpec:
    """Camera and raster shared by every scene of a dataset (KITTI-like defaults)."""

    width: int = 1242
    height: int = 375
    camera: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854))
    channels: int = 8


def sample_boxes(ranges: PlacementRanges, image: ImageSpec, rng: np.random.Generator) -> list[Box3D]:
    K = image.camera
    n = int(rng.integers(ranges.objects_per_scene[0], ranges.objects_per_scene[1] + 1))
    boxes: list[Box3D] = []
    for _ in range(n):
        for _attempt in range(50):
            dims = Dimensions(rng.uniform(*ranges.width), rng.uniform(*ranges.height), rng.uniform(*ranges.length))
            z = rng.uniform(*ranges.depth)
            u = rng.uniform(*ranges.u_frac) * image.width
            x = (u - K.cx) * z / K.fx
            y = ranges.camera_height - dims.h / 2.0
            yaw = rng.uniform(-math.pi, math.pi)
            box = Box3D(ObjectPose(yaw, (x, y, z)), dims)
            clear = all(
                math.hypot(box.center[0] - o.center[0], box.center[2] - o.center[2]) > 0.5 * (dims.l + o.dims.l)
                for o in boxes
            )
            if clear:
                boxes.append(box)
                break
    return boxes


def make_scene(index: int, seed: int, ranges: PlacementRanges, image: ImageSpec, cfg: CorruptionConfig) -> SceneSample:
    """Place, render, texture and corrupt scene ``index`` of a seeded dataset."""
    scene_seed = int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)
    boxes = sample_boxes(ranges, image, rng_stream(scene_seed, STAGE_PLACE))
    clean = render_scene(boxes, image.camera, image.width, image.height)
    clean = with_features(clean, image.channels, scene_seed)
    return corrupt(clean, cfg, scene_seed)
