"""Uncertainty-adaptive depth cost volume with soft arg-min refinement.

Candidates are indexed ``i = 1..D`` at ``anchor + delta_z * (i - D/2)``; for the
adaptive grid the anchor is the proposal depth and ``delta_z = lambda * sigma_z``.
Each cell of the volume holds ``[op, F(p), op_hat, F(p_hat)]`` where ``op`` are
ROI-normalized pixel coordinates relative to the projected box center.

The learned refinement head is replaced by an analytic reduction: mean joint
cell cost per depth slice, softmax over negated costs, then soft arg-min.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .energy import EnergyConfig, feature_distance, sample_at_image_points
from .errors import InvalidInputError, NoSupportError
from .geometry import (
    EPS_Z,
    Box3D,
    CameraIntrinsics,
    PixelRect,
    box_at_depth,
    normalize_pixel,
    object_to_camera,
    pixel_centers,
    project_unchecked,
    projected_center,
)
from .io import write_tensor
from .scene import FeatureMap, NocMap


@dataclass(frozen=True)
class DepthBelief:
    z_hat: float
    sigma_z: float

    def __post_init__(self):
        if not (math.isfinite(self.z_hat) and self.z_hat > 0):
            raise InvalidInputError(f"z_hat must be positive, got {self.z_hat}")
        if not (math.isfinite(self.sigma_z) and self.sigma_z > 0):
            raise InvalidInputError(f"sigma_z must be positive, got {self.sigma_z}")


@dataclass(frozen=True)
class DepthGrid:
    anchor: float
    delta_z: float
    D: int

    def __post_init__(self):
        if self.D < 2:
            raise InvalidInputError(f"D must be >= 2, got {self.D}")
        if not (math.isfinite(self.delta_z) and self.delta_z > 0):
            raise InvalidInputError(f"delta_z must be positive, got {self.delta_z}")
        if not self.candidates[0] > 0:
            raise InvalidInputError("all candidates must be positive")

    @property
    def offsets(self) -> np.ndarray:
        """``i - D/2`` for i = 1..D."""
        return np.arange(1, self.D + 1) - self.D / 2.0

    @property
    def candidates(self) -> np.ndarray:
        return self.anchor + self.delta_z * self.offsets


def _clamped(anchor: float, delta_z: float, D: int) -> DepthGrid:
    lowest = anchor + delta_z * (1 - D / 2.0)
    if lowest <= EPS_Z:
        anchor += EPS_Z - lowest
    return DepthGrid(anchor, delta_z, D)


def adaptive_grid(belief: DepthBelief, lam: float, D: int) -> DepthGrid:
    """``delta_z = lam * sigma_z`` around the proposal depth."""
    if not lam > 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    if D < 2:
        raise InvalidInputError(f"D must be >= 2, got {D}")
    return _clamped(belief.z_hat, lam * belief.sigma_z, D)


def uniform_grid(z_hat: float, half_range: float, D: int) -> DepthGrid:
    """D equally spaced candidates over ``[z_hat - half_range, z_hat + half_range]``."""
    if not half_range > 0:
        raise InvalidInputError(f"half_range must be positive, got {half_range}")
    if D < 2:
        raise InvalidInputError(f"D must be >= 2, got {D}")
    dz = 2.0 * half_range / (D - 1)
    return _clamped(z_hat - half_range + dz * (D / 2.0 - 1.0), dz, D)


@dataclass(frozen=True)
class DepthDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidInputError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)


def volume_layout(C: int) -> list[str]:
    feat = [f"f{c}" for c in range(C)]
    return ["u_src", "v_src", *[f"{f}_src" for f in feat], "u_prj", "v_prj", *[f"{f}_prj" for f in feat]]


@dataclass(frozen=True, eq=False)
class CostVolume:
    roi: PixelRect
    stride: int
    center_px: np.ndarray
    grid: DepthGrid
    cells: np.ndarray  # (h, w, D, 2(C+2))
    validity: np.ndarray  # (h, w, D)

    @property
    def D(self) -> int:
        return self.cells.shape[2]

    @property
    def C(self) -> int:
        return self.cells.shape[3] // 2 - 2

    @property
    def roi_w(self) -> int:
        return self.roi.width

    @property
    def roi_h(self) -> int:
        return self.roi.height

    def save(self, path) -> None:
        """Write the cells to ``path`` and the validity mask to ``path`` + ``.validity``."""
        write_tensor(
            path,
            self.cells,
            name="cost_volume",
            layout=volume_layout(self.C),
            roi=[self.roi.u0, self.roi.v0, self.roi.u1, self.roi.v1],
            stride=self.stride,
            center_px=[float(x) for x in self.center_px],
            candidates=[float(x) for x in self.grid.candidates],
        )
        write_tensor(f"{path}.validity", self.validity.astype(np.float32), name="validity")


class _Sampler:
    """Per-ROI state shared by the dense and fused paths."""

    def __init__(self, roi, noc, features, box_template, K, instance, stride):
        if roi.empty:
            raise InvalidInputError("empty ROI")
        if roi.u0 < 0 or roi.v0 < 0 or roi.u1 > noc.width or roi.v1 > noc.height:
            raise InvalidInputError(f"ROI {roi} exceeds the {noc.width}x{noc.height} image")
        if stride < 1:
            raise InvalidInputError("stride must be >= 1")
        pix = roi.pixels(stride)
        self.shape = (len(range(roi.v0, roi.v1, stride)), len(range(roi.u0, roi.u1, stride)))
        src_ok = noc.mask[pix[:, 1], pix[:, 0]]
        if instance is not None:
            src_ok &= noc.instance_id[pix[:, 1], pix[:, 0]] == instance
        self.src_ok = src_ok
        self.pix = pix
        self.noc_pts = np.where(src_ok[:, None], noc.coords[pix[:, 1], pix[:, 0]], 0.0)
        self.K = K
        self.box = box_template
        self.center_px = projected_center(box_template, K)
        self.roi = roi
        self.src_norm = normalize_pixel(pixel_centers(pix), self.center_px, roi.width, roi.height)
        self.features = features
        self.width, self.height = noc.width, noc.height
        if features is not None:
            self.f_src = features.values[pix[:, 1], pix[:, 0]]
        else:
            self.f_src = np.zeros((len(pix), 0))

    def at_depth(self, d: float):
        box_d = box_at_depth(self.box, self.K, d, self.center_px)
        uv_hat, ok = project_unchecked(self.K, object_to_camera(self.noc_pts, box_d))
        uv_hat = np.where(ok[:, None], uv_hat, -1.0)
        if self.features is not None:
            f_hat, inside = sample_at_image_points(self.features, uv_hat)
        else:
            x, y = uv_hat[:, 0] - 0.5, uv_hat[:, 1] - 0.5
            inside = (x >= 0) & (x <= self.width - 1) & (y >= 0) & (y <= self.height - 1)
            f_hat = self.f_src[:, :0]
        valid = self.src_ok & ok & inside
        prj_norm = normalize_pixel(uv_hat, self.center_px, self.roi.width, self.roi.height)
        return valid, prj_norm, f_hat


def build_cost_volume(
    roi: PixelRect,
    noc: NocMap,
    features: FeatureMap | None,
    box_template: Box3D,
    K: CameraIntrinsics,
    grid: DepthGrid,
    instance: int | None = None,
    stride: int = 1,
) -> CostVolume:
    """Materialize the (h, w, D, 2(C+2)) volume; invalid cells are zero and flagged."""
    s = _Sampler(roi, noc, features, box_template, K, instance, stride)
    C = s.f_src.shape[1]
    n = len(s.pix)
    cells = np.zeros((n, grid.D, 2 * (C + 2)))
    validity = np.zeros((n, grid.D), dtype=bool)
    for j, d in enumerate(grid.candidates):
        valid, prj_norm, f_hat = s.at_depth(d)
        block = np.concatenate([s.src_norm, s.f_src, prj_norm, f_hat], axis=1)
        cells[valid, j] = block[valid]
        validity[:, j] = valid
    h, w = s.shape
    return CostVolume(
        roi=roi,
        stride=stride,
        center_px=s.center_px,
        grid=grid,
        cells=cells.reshape(h, w, grid.D, -1),
        validity=validity.reshape(h, w, grid.D),
    )


def _cell_cost(src_norm, f_src, prj_norm, f_hat, cfg: EnergyConfig) -> np.ndarray:
    d = src_norm - prj_norm
    cost = np.sqrt((d * d).sum(axis=-1))
    if cfg.beta > 0 and f_src.shape[-1] > 0:
        cost = cost + cfg.beta * feature_distance(f_src, f_hat, cfg.feature_metric)
    return cost


def reduce_volume(volume: CostVolume, cfg: EnergyConfig) -> np.ndarray:
    """Per-slice mean joint cell cost; slices without valid cells get +inf."""
    C = volume.C
    cells = volume.cells.reshape(-1, volume.D, 2 * (C + 2))
    valid = volume.validity.reshape(-1, volume.D)
    out = np.full(volume.D, np.inf)
    for j in range(volume.D):
        v = valid[:, j]
        if not v.any():
            continue
        c = cells[v, j]
        cost = _cell_cost(c[:, :2], c[:, 2:C + 2], c[:, C + 2:C + 4], c[:, C + 4:], cfg)
        out[j] = cost.mean()
    if np.all(np.isinf(out)):
        raise NoSupportError("cost volume has no valid cell")
    return out


def slice_energies(
    roi: PixelRect,
    noc: NocMap,
    features: FeatureMap | None,
    box_template: Box3D,
    K: CameraIntrinsics,
    grid: DepthGrid,
    cfg: EnergyConfig,
    instance: int | None = None,
    stride: int = 1,
) -> np.ndarray:
    """Same per-slice energies as ``reduce_volume(build_cost_volume(...))`` without
    materializing the volume."""
    s = _Sampler(roi, noc, features, box_template, K, instance, stride)
    out = np.full(grid.D, np.inf)
    for j, d in enumerate(grid.candidates):
        valid, prj_norm, f_hat = s.at_depth(d)
        if valid.any():
            out[j] = _cell_cost(s.src_norm[valid], s.f_src[valid], prj_norm[valid], f_hat[valid], cfg).mean()
    if np.all(np.isinf(out)):
        raise NoSupportError("cost volume has no valid cell")
    return out


def default_temperature(energies: np.ndarray, scale: float = 0.05, eps: float = 1e-9) -> float:
    """``scale * (interquartile range of the finite energies + eps)``."""
    e = np.asarray(energies, dtype=float)
    e = e[np.isfinite(e)]
    if e.size == 0:
        raise NoSupportError("no finite energy")
    q75, q25 = np.percentile(e, [75, 25])
    return scale * (q75 - q25 + eps)


def softmax_probs(energies, temperature: float) -> DepthDistribution:
    """``p_i ~ exp(-e_i / T)``; infinite energies get probability 0."""
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    e = np.asarray(energies, dtype=float)
    finite = np.isfinite(e)
    if not finite.any():
        raise NoSupportError("all energies are infinite")
    z = np.zeros_like(e)
    z[finite] = np.exp(-(e[finite] - e[finite].min()) / temperature)
    return DepthDistribution(z / z.sum())


def soft_argmin(grid: DepthGrid, dist: DepthDistribution) -> float:
    """``anchor + sum_i delta_z * p_i * (i - D/2)``; the expectation over candidates."""
    if len(dist.probs) != grid.D:
        raise InvalidInputError(f"distribution has {len(dist.probs)} entries, grid has {grid.D}")
    return float(grid.anchor + np.sum(grid.delta_z * dist.probs * grid.offsets))


@dataclass(frozen=True, eq=False)
class RefineDiagnostics:
    grid: DepthGrid
    energies: np.ndarray
    probs: np.ndarray
    temperature: float
    volume: CostVolume | None = field(default=None, repr=False)

    @property
    def hard_argmin(self) -> float:
        return float(self.grid.candidates[int(np.argmin(self.energies))])

    def to_dict(self) -> dict:
        return {
            "anchor": self.grid.anchor,
            "delta_z": self.grid.delta_z,
            "D": self.grid.D,
            "temperature": self.temperature,
            "candidates": [float(x) for x in self.grid.candidates],
            "energies": [float(x) if math.isfinite(x) else None for x in self.energies],
            "probs": [float(x) for x in self.probs],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "depth", "energy", "prob"])
            for i, (d, e, p) in enumerate(zip(self.grid.candidates, self.energies, self.probs), start=1):
                w.writerow([i, repr(float(d)), repr(float(e)), repr(float(p))])


def refine_depth(
    roi: PixelRect,
    noc: NocMap,
    features: FeatureMap | None,
    box_proposal: Box3D,
    belief: DepthBelief,
    K: CameraIntrinsics,
    cfg: EnergyConfig,
    lam: float = 0.5,
    D: int = 32,
    temperature: float | None = None,
    sampling: Literal["adaptive", "uniform"] = "adaptive",
    half_range: float = 1.6,
    instance: int | None = None,
    stride: int = 1,
    materialize: bool = False,
) -> tuple[float, RefineDiagnostics]:
    """grid -> cost volume -> per-depth reduction -> softmax -> soft arg-min."""
    if sampling == "adaptive":
        grid = adaptive_grid(belief, lam, D)
    elif sampling == "uniform":
        grid = uniform_grid(belief.z_hat, half_range, D)
    else:
        raise InvalidInputError(f"unknown sampling {sampling!r}")
    volume = None
    if materialize:
        volume = build_cost_volume(roi, noc, features, box_proposal, K, grid, instance, stride)
        energies = reduce_volume(volume, cfg)
    else:
        energies = slice_energies(roi, noc, features, box_proposal, K, grid, cfg, instance, stride)
    T = default_temperature(energies) if temperature is None else temperature
    dist = softmax_probs(energies, T)
    z = soft_argmin(grid, dist)
    return z, RefineDiagnostics(grid, energies, dist.probs, T, volume)
