"""Depth recovery by 1-D constraint minimization along the projected-center ray.

All solvers hold yaw, dimensions and the projected center fixed at the
proposal values and only move the box along its viewing ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .energy import (
    EnergyConfig,
    EnergyFn,
    geometric_energy,
    joint_energy,
    roi_diagonal,
    select_pixels,
    semantic_energy,
)
from .errors import InsufficientSupportError, InvalidInputError, NoSupportError
from .geometry import (
    Box3D,
    CameraIntrinsics,
    Dimensions,
    KeypointSet,
    ObjectPose,
    PixelPoint,
    backproject,
    box_at_depth,
    box_corners,
    project_unchecked,
    projected_center,
)

Variant = Literal["sparse_geo", "dense_geo", "joint", "oracle", "semantic", "refine"]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverResult:
    depth: float
    energy_at_solution: float
    evaluations: int
    variant: str


class _Counted:
    def __init__(self, energy_fn: EnergyFn, proposal: Box3D, K: CameraIntrinsics, center_px):
        self.fn = energy_fn
        self.proposal = proposal
        self.K = K
        self.center_px = projected_center(proposal, K) if center_px is None else np.asarray(center_px, float)
        self.calls = 0
        self.best = (math.inf, math.nan)

    def __call__(self, depth: float) -> float:
        self.calls += 1
        try:
            e = float(self.fn(box_at_depth(self.proposal, self.K, depth, self.center_px)))
        except (InsufficientSupportError, InvalidInputError):
            e = math.inf
        if not math.isfinite(e):
            e = math.inf
        if e < self.best[0]:
            self.best = (e, depth)
        return e


def brute_force_oracle(
    energy_fn: EnergyFn,
    proposal: Box3D,
    K: CameraIntrinsics,
    search_lo: float,
    search_hi: float,
    step: float,
    center_px=None,
) -> SolverResult:
    """Global minimum over the fixed grid ``search_lo + k * step``; never refined."""
    if not step > 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    if not search_lo < search_hi:
        raise InvalidInputError("need search_lo < search_hi")
    n = int(math.floor((search_hi - search_lo) / step + 1e-9)) + 1
    f = _Counted(energy_fn, proposal, K, center_px)
    for k in range(n):
        f(search_lo + k * step)
    e, d = f.best
    if not math.isfinite(e):
        raise NoSupportError("energy undefined over the whole search range")
    return SolverResult(float(d), e, f.calls, "oracle")


def solve_depth_1d(
    energy_fn: EnergyFn,
    proposal: Box3D,
    K: CameraIntrinsics,
    search_lo: float,
    search_hi: float,
    coarse_steps: int = 33,
    tol: float = 1e-3,
    variant: str = "dense_geo",
    center_px=None,
) -> SolverResult:
    """Coarse scan, then golden-section search inside the best coarse bracket."""
    if not search_lo < search_hi:
        raise InvalidInputError("need search_lo < search_hi")
    if coarse_steps < 3:
        raise InvalidInputError("coarse_steps must be >= 3")
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    f = _Counted(energy_fn, proposal, K, center_px)
    grid = np.linspace(search_lo, search_hi, coarse_steps)
    values = np.array([f(d) for d in grid])
    if not np.isfinite(values).any():
        raise NoSupportError("energy undefined over the whole search range")
    k = int(np.argmin(values))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, coarse_steps - 1)]
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a >= tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    f(0.5 * (a + b))
    e, depth = f.best
    return SolverResult(float(depth), e, f.calls, variant)


def sparse_corner_energy(keypoints: KeypointSet, box: Box3D, K: CameraIntrinsics) -> float:
    """Mean pixel distance between observed corners and the box's projected corners."""
    uv, ok = project_unchecked(K, box_corners(box))
    use = keypoints.valid & ok
    if use.sum() < 2:
        raise InsufficientSupportError(f"{int(use.sum())} usable corners < 2")
    d = keypoints.uv[use] - uv[use]
    return float(np.sqrt((d * d).sum(axis=1)).mean())


def solve_sparse(
    keypoints: KeypointSet,
    dims: Dimensions,
    yaw: float,
    center_px,
    K: CameraIntrinsics,
    search_lo: float,
    search_hi: float,
    tol: float = 1e-3,
    coarse_steps: int = 33,
) -> SolverResult:
    if keypoints.n_valid < 2:
        raise InsufficientSupportError(f"{keypoints.n_valid} valid corners < 2")
    if isinstance(center_px, PixelPoint):
        center_px = center_px.as_array()
    center_px = np.asarray(center_px, dtype=float)
    mid = 0.5 * (search_lo + search_hi)
    proposal = Box3D(ObjectPose(yaw, tuple(backproject(K, center_px, mid))), dims)
    return solve_depth_1d(
        lambda b: sparse_corner_energy(keypoints, b, K),
        proposal,
        K,
        search_lo,
        search_hi,
        coarse_steps,
        tol,
        "sparse_geo",
        center_px,
    )


def energy_for(
    kind: str,
    sample,
    instance: int,
    cfg: EnergyConfig,
    max_pixels: int | None = 4096,
) -> EnergyFn:
    """Energy closure over one instance of a scene: box -> scalar."""
    K = sample.camera
    if kind == "sparse_geo":
        kp = sample.keypoints[instance]
        return lambda b: sparse_corner_energy(kp, b, K)
    pixels = select_pixels(sample.noc, instance, max_pixels)
    if kind == "dense_geo":
        return lambda b: geometric_energy(sample.noc, pixels, b, K, cfg)
    if kind == "semantic":
        return lambda b: semantic_energy(sample.features, sample.noc, pixels, b, K, cfg)
    if kind == "joint":
        diag = roi_diagonal(sample.noc, pixels) if len(pixels) else 1.0
        return lambda b: joint_energy(sample.features, sample.noc, pixels, b, K, cfg, roi_diag=diag)
    raise InvalidInputError(f"unknown energy kind {kind!r}")
