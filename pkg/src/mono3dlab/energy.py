"""Pixel-level geometric, semantic and joint energies of a hypothesized box.

Every energy compares an observed pixel ``p_i`` (the pixel center) with the
reprojection ``p_hat_i = project(K, object_to_camera(noc_i, box))`` of its
estimated object coordinate.  The geometric term measures the pixel distance,
the semantic term the feature distance ``d(F(p_i), F(p_hat_i))``.

Pixels whose reprojection lands behind the camera (geometric) or outside the
feature map (semantic) are dropped from the mean and counted, never clamped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import InsufficientSupportError, InvalidInputError, NoSupportError, OutOfBoundsError
from .geometry import (
    Box3D,
    CameraIntrinsics,
    PixelPoint,
    PixelRect,
    box_at_depth,
    object_to_camera,
    pixel_centers,
    project_unchecked,
    projected_center,
)
from .scene import FeatureMap, NocMap

EnergyFn = Callable[[Box3D], float]


@dataclass(frozen=True)
class EnergyConfig:
    beta: float = 1.0
    pixel_norm: Literal["l2", "l1"] = "l2"
    feature_metric: Literal["l1", "l2"] = "l1"
    min_pixels: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise InvalidInputError(f"beta must be finite and >= 0, got {self.beta}")
        if self.pixel_norm not in ("l1", "l2"):
            raise InvalidInputError(f"unknown pixel_norm {self.pixel_norm!r}")
        if self.feature_metric not in ("l1", "l2"):
            raise InvalidInputError(f"unknown feature_metric {self.feature_metric!r}")
        if self.min_pixels < 1:
            raise InvalidInputError("min_pixels must be >= 1")


@dataclass(frozen=True)
class EnergyTerms:
    value: float
    n_used: int
    n_excluded: int


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    depths: np.ndarray
    energies: np.ndarray  # NaN marks a sample where the energy was undefined
    argmin_depth: float

    @property
    def gaps(self) -> int:
        return int(np.isnan(self.energies).sum())

    @property
    def step(self) -> float:
        return float(self.depths[1] - self.depths[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["depth", "energy"])
            for d, e in zip(self.depths, self.energies):
                w.writerow([repr(float(d)), "" if math.isnan(e) else repr(float(e))])


# -- sampling ---------------------------------------------------------------


def bilinear_sample_many(values: np.ndarray, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup at index coordinates ``xy`` (N, 2) into an (H, W, C) array.

    Integer coordinates address pixel centers.  Returns (samples, inside) where
    rows with ``inside == False`` are zero.
    """
    H, W = values.shape[:2]
    xy = np.asarray(xy, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    inside = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (xs - x0)[:, None]
    ay = (ys - y0)[:, None]
    top = values[y0, x0] * (1.0 - ax) + values[y0, x1] * ax
    bot = values[y1, x0] * (1.0 - ax) + values[y1, x1] * ax
    out = top * (1.0 - ay) + bot * ay
    out[~inside] = 0.0
    return out, inside


def bilinear_sample(fmap: FeatureMap, p: PixelPoint) -> np.ndarray:
    """Feature vector at index coordinates ``p`` (exact at integer coordinates)."""
    out, inside = bilinear_sample_many(fmap.values, np.array([[p.u, p.v]]))
    if not inside[0]:
        raise OutOfBoundsError(f"({p.u}, {p.v}) outside [0, {fmap.width - 1}] x [0, {fmap.height - 1}]")
    return out[0]


def sample_at_image_points(fmap: FeatureMap, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample features at continuous image coordinates (pixel centers at +0.5)."""
    return bilinear_sample_many(fmap.values, np.asarray(uv) - 0.5)


# -- pixel selection ----------------------------------------------------------


def select_pixels(noc: NocMap, instance: int | None = None, max_pixels: int | None = None) -> np.ndarray:
    """Valid pixels of an instance, thinned to at most ``max_pixels`` by even striding."""
    pix = noc.instance_pixels(instance)
    if max_pixels is not None and len(pix) > max_pixels:
        idx = np.unique(np.linspace(0, len(pix) - 1, max_pixels).round().astype(np.int64))
        pix = pix[idx]
    return pix


def _valid_subset(noc: NocMap, pixels) -> np.ndarray:
    pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    inb = (pix[:, 0] >= 0) & (pix[:, 0] < noc.width) & (pix[:, 1] >= 0) & (pix[:, 1] < noc.height)
    pix = pix[inb]
    return pix[noc.mask[pix[:, 1], pix[:, 0]]]


def reproject(noc: NocMap, pixels: np.ndarray, box: Box3D, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """(p_hat, in_front) for already-validated integer pixels."""
    P = object_to_camera(noc.coords[pixels[:, 1], pixels[:, 0]], box)
    return project_unchecked(K, P)


def _pixel_distance(d: np.ndarray, norm: str) -> np.ndarray:
    return np.abs(d).sum(axis=-1) if norm == "l1" else np.sqrt((d * d).sum(axis=-1))


def feature_distance(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Per-row channel-mean distance: mean |a-b| (l1) or sqrt(mean (a-b)^2) (l2)."""
    d = a - b
    if metric == "l1":
        return np.abs(d).mean(axis=-1)
    return np.sqrt((d * d).mean(axis=-1))


def _check_support(n: int, cfg: EnergyConfig, what: str) -> None:
    if n < cfg.min_pixels:
        raise InsufficientSupportError(f"{what}: {n} usable pixels < min_pixels={cfg.min_pixels}")


# -- energies ---------------------------------------------------------------


def geometric_terms(noc: NocMap, pixels, box: Box3D, K: CameraIntrinsics, cfg: EnergyConfig) -> EnergyTerms:
    pix = _valid_subset(noc, pixels)
    _check_support(len(pix), cfg, "geometric energy")
    uv_hat, ok = reproject(noc, pix, box, K)
    n = int(ok.sum())
    _check_support(n, cfg, "geometric energy")
    d = _pixel_distance(pixel_centers(pix[ok]) - uv_hat[ok], cfg.pixel_norm)
    return EnergyTerms(float(d.mean()), n, len(pix) - n)


def geometric_energy(noc: NocMap, pixels, box: Box3D, K: CameraIntrinsics, cfg: EnergyConfig) -> float:
    """Mean reprojection distance (pixels) between pixel centers and reprojected NOCs."""
    return geometric_terms(noc, pixels, box, K, cfg).value


def semantic_terms(
    features: FeatureMap, noc: NocMap, pixels, box: Box3D, K: CameraIntrinsics, cfg: EnergyConfig
) -> EnergyTerms:
    pix = _valid_subset(noc, pixels)
    _check_support(len(pix), cfg, "semantic energy")
    uv_hat, ok = reproject(noc, pix, box, K)
    f_hat, inside = sample_at_image_points(features, np.where(ok[:, None], uv_hat, -1.0))
    used = ok & inside
    n = int(used.sum())
    _check_support(n, cfg, "semantic energy")
    f_src = features.values[pix[used, 1], pix[used, 0]]
    d = feature_distance(f_src, f_hat[used], cfg.feature_metric)
    return EnergyTerms(float(d.mean()), n, len(pix) - n)


def semantic_energy(
    features: FeatureMap, noc: NocMap, pixels, box: Box3D, K: CameraIntrinsics, cfg: EnergyConfig
) -> float:
    return semantic_terms(features, noc, pixels, box, K, cfg).value


def roi_diagonal(noc: NocMap, pixels) -> float:
    rect = PixelRect.bounding(_valid_subset(noc, pixels))
    return math.hypot(rect.width, rect.height)


def joint_energy(
    features: FeatureMap | None,
    noc: NocMap,
    pixels,
    box: Box3D,
    K: CameraIntrinsics,
    cfg: EnergyConfig,
    roi_diag: float | None = None,
) -> float:
    """``geometric / roi_diagonal + beta * semantic`` (dimensionless)."""
    diag = roi_diagonal(noc, pixels) if roi_diag is None else roi_diag
    e = geometric_energy(noc, pixels, box, K, cfg) / diag
    if cfg.beta > 0:
        if features is None:
            raise InvalidInputError("joint energy with beta > 0 needs a feature map")
        e += cfg.beta * semantic_energy(features, noc, pixels, box, K, cfg)
    return e


# -- landscapes --------------------------------------------------------------


def energy_profile(
    energy_fn: EnergyFn,
    box: Box3D,
    K: CameraIntrinsics,
    depth_lo: float,
    depth_hi: float,
    samples: int,
) -> EnergyProfile:
    """Energy at ``samples`` uniformly spaced depths, center slid along the projected-center ray."""
    if not depth_lo < depth_hi:
        raise InvalidInputError(f"need depth_lo < depth_hi, got {depth_lo}, {depth_hi}")
    if samples < 2:
        raise InvalidInputError("samples must be >= 2")
    center_px = projected_center(box, K)
    depths = np.linspace(depth_lo, depth_hi, samples)
    energies = np.full(samples, np.nan)
    for i, d in enumerate(depths):
        try:
            e = energy_fn(box_at_depth(box, K, d, center_px))
        except (InsufficientSupportError, InvalidInputError):
            continue
        if math.isfinite(e):
            energies[i] = e
    if np.all(np.isnan(energies)):
        raise NoSupportError("energy undefined over the whole profile range")
    return EnergyProfile(depths, energies, float(depths[np.nanargmin(energies)]))


# -- depth likelihood -----------------------------------------------------------


def laplacian_depth_nll(z_hat: float, sigma_z: float, z_true: float) -> float:
    """``sqrt(2) / sigma * |z_hat - z_true| + log(sigma)``."""
    if not sigma_z > 0:
        raise InvalidInputError(f"sigma_z must be positive, got {sigma_z}")
    return math.sqrt(2.0) / sigma_z * abs(z_hat - z_true) + math.log(sigma_z)


def laplacian_depth_nll_grad(z_hat: float, sigma_z: float, z_true: float) -> tuple[float, float]:
    """Analytic (d/dz_hat, d/dsigma); the z_hat derivative uses sign(0) = 0 at the kink."""
    if not sigma_z > 0:
        raise InvalidInputError(f"sigma_z must be positive, got {sigma_z}")
    r = z_hat - z_true
    dz = math.sqrt(2.0) / sigma_z * float(np.sign(r))
    ds = -math.sqrt(2.0) * abs(r) / sigma_z**2 + 1.0 / sigma_z
    return dz, ds
