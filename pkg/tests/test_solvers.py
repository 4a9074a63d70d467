from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import small_scene
from mono3dlab.energy import EnergyConfig, geometric_energy, select_pixels
from mono3dlab.errors import InsufficientSupportError, InvalidInputError, NoSupportError
from mono3dlab.geometry import (
    CORNER_SIGNS,
    Box3D,
    CameraIntrinsics,
    KeypointSet,
    box_at_depth,
    project_corners,
    projected_center,
)
from mono3dlab.scene import NocMap, render_scene, with_features
from mono3dlab.solvers import brute_force_oracle, energy_for, solve_depth_1d, solve_sparse, sparse_corner_energy
from strategies import random_box

CFG = EnergyConfig()
K700 = CameraIntrinsics(700.0, 700.0, 640.0, 360.0)


def dense_fn(s, k=0, max_pixels=400):
    pix = select_pixels(s.noc, k, max_pixels)
    return lambda b: geometric_energy(s.noc, pix, b, s.camera, CFG)


def test_noiseless_dense_solve_within_one_centimeter():
    for seed in range(10):
        s = small_scene(seed, noisy=False)
        truth = s.boxes[0]
        proposal = box_at_depth(truth, s.camera, truth.depth + 0.37 * (seed % 3 - 1) + 0.11)
        res = solve_depth_1d(dense_fn(s), proposal, s.camera, proposal.depth - 1.6, proposal.depth + 1.6, tol=0.01)
        assert abs(res.depth - truth.depth) < 0.01
        assert res.variant == "dense_geo"


def test_returned_energy_is_the_energy_at_the_returned_depth():
    s = small_scene(1)
    fn = dense_fn(s)
    p = s.boxes[0]
    res = solve_depth_1d(fn, p, s.camera, p.depth - 1, p.depth + 1)
    assert res.energy_at_solution == fn(box_at_depth(p, s.camera, res.depth))


def test_solver_agrees_with_brute_force_oracle():
    tol = 0.01
    for seed in range(30):
        s = small_scene(seed)
        fn = dense_fn(s, max_pixels=200)
        p = s.boxes[0]
        lo, hi = p.depth - 0.3, p.depth + 0.3
        res = solve_depth_1d(fn, p, s.camera, lo, hi, tol=tol)
        ora = brute_force_oracle(fn, p, s.camera, lo, hi, tol / 2)
        assert abs(res.depth - ora.depth) <= tol + tol / 2
        assert res.energy_at_solution <= ora.energy_at_solution + 1e-4 * abs(ora.energy_at_solution)


def test_brute_force_with_step_equal_to_range_checks_endpoints():
    seen = []
    box = Box3D.make((0, 0, 5), (1, 1, 1))
    ora = brute_force_oracle(lambda b: seen.append(b.depth) or b.depth, box, K700, 3.0, 7.0, 4.0)
    assert seen == [3.0, 7.0] and ora.depth == 3.0 and ora.evaluations == 2 and ora.variant == "oracle"


def test_monotone_energy_gives_boundary():
    box = Box3D.make((0, 0, 5), (1, 1, 1))
    assert brute_force_oracle(lambda b: -b.depth, box, K700, 3.0, 7.0, 0.5).depth == 7.0
    assert solve_depth_1d(lambda b: b.depth, box, K700, 3.0, 7.0).depth == pytest.approx(3.0, abs=1e-3)


def test_argument_validation():
    box = Box3D.make((0, 0, 5), (1, 1, 1))
    f = lambda b: 0.0  # noqa: E731
    with pytest.raises(InvalidInputError):
        solve_depth_1d(f, box, K700, 5.0, 4.0)
    with pytest.raises(InvalidInputError):
        solve_depth_1d(f, box, K700, 4.0, 5.0, coarse_steps=2)
    with pytest.raises(InvalidInputError):
        brute_force_oracle(f, box, K700, 4.0, 5.0, 0.0)


def test_undefined_energy_everywhere_is_no_support():
    def never(b):
        raise InsufficientSupportError("nothing")

    box = Box3D.make((0, 0, 5), (1, 1, 1))
    with pytest.raises(NoSupportError):
        solve_depth_1d(never, box, K700, 4.0, 6.0)
    with pytest.raises(NoSupportError):
        brute_force_oracle(never, box, K700, 4.0, 6.0, 0.5)


def test_solver_is_deterministic():
    s = small_scene(4)
    p = s.boxes[0]
    a = solve_depth_1d(dense_fn(s), p, s.camera, p.depth - 1, p.depth + 1)
    b = solve_depth_1d(dense_fn(s), p, s.camera, p.depth - 1, p.depth + 1)
    assert a == b


def test_translation_equivariance():
    rng = np.random.default_rng(0)
    K = CameraIntrinsics(300.0, 300.0, 80.0, 60.0)
    for _ in range(4):
        box = random_box(rng, (8, 12))
        shift = rng.uniform(1, 5)
        results = []
        for b in (box, box.with_center(box.center + [0, 0, shift])):
            s = with_features(render_scene([b], K, 160, 120), 2, 0)
            proposal = box_at_depth(b, K, b.depth + 0.5)
            results.append(solve_depth_1d(dense_fn(s), proposal, K, proposal.depth - 1.6, proposal.depth + 1.6).depth)
        assert results[1] - results[0] == pytest.approx(shift, abs=1e-3)


# -- sparse corners --------------------------------------------------------------------------


def test_exact_corners_give_zero():
    box = Box3D.make((1, 0.5, 20), (1.6, 1.5, 4), 0.3)
    assert sparse_corner_energy(project_corners(box, K700), box, K700) == pytest.approx(0.0, abs=1e-12)


def test_one_offset_corner_gives_five_eighths():
    box = Box3D.make((1, 0.5, 20), (1.6, 1.5, 4), 0.3)
    kp = project_corners(box, K700)
    uv = kp.uv.copy()
    uv[5] += [3.0, 4.0]
    assert sparse_corner_energy(KeypointSet(uv, kp.valid), box, K700) == pytest.approx(5 / 8)


def test_sparse_equals_dense_on_the_eight_corner_pixels():
    box = Box3D.make((0.4, 0.2, 15), (1.7, 1.5, 4.1), -0.8)
    pixels = np.array([[10 + 7 * i, 20 + 3 * i] for i in range(8)])
    coords = np.full((60, 80, 3), np.nan)
    mask = np.zeros((60, 80), dtype=bool)
    coords[pixels[:, 1], pixels[:, 0]] = CORNER_SIGNS
    mask[pixels[:, 1], pixels[:, 0]] = True
    noc = NocMap(coords, mask, np.where(mask, 0, -1))
    kp = KeypointSet(pixels + 0.5, np.ones(8, bool))
    assert sparse_corner_energy(kp, box, K700) == pytest.approx(geometric_energy(noc, pixels, box, K700, CFG), abs=1e-9)


def test_sparse_needs_two_corners():
    box = Box3D.make((1, 0.5, 20), (1.6, 1.5, 4), 0.3)
    kp = project_corners(box, K700)
    valid = np.zeros(8, bool)
    valid[2] = True
    with pytest.raises(InsufficientSupportError):
        sparse_corner_energy(KeypointSet(kp.uv, valid), box, K700)
    with pytest.raises(InsufficientSupportError):
        solve_sparse(KeypointSet(kp.uv, valid), box.dims, box.yaw, projected_center(box, K700), K700, 10, 30)


def test_sparse_solve_noiseless_and_with_four_corners_hidden():
    box = Box3D.make((-2, 0.8, 24), (1.6, 1.5, 4), 1.1)
    kp = project_corners(box, K700)
    res = solve_sparse(kp, box.dims, box.yaw, projected_center(box, K700), K700, 22, 26)
    assert abs(res.depth - box.depth) < 1e-3
    uv = kp.uv.copy()
    valid = kp.valid.copy()
    valid[:4] = False
    uv[:4] = np.nan  # poisoned: must never be read
    res = solve_sparse(KeypointSet(uv, valid), box.dims, box.yaw, projected_center(box, K700), K700, 22, 26)
    assert abs(res.depth - box.depth) < 1e-3 and res.variant == "sparse_geo"


def test_sparse_is_wider_than_dense_at_forty_meters():
    rng = np.random.default_rng(5)
    K = CameraIntrinsics(700.0, 700.0, 200.0, 100.0)
    sparse_err, dense_err = [], []
    for _ in range(20):
        box = random_box(rng, (39, 41))
        s = render_scene([box], K, 400, 200)
        proposal = box_at_depth(box, K, box.depth + 0.5)
        lo, hi = proposal.depth - 1.6, proposal.depth + 1.6
        kp = project_corners(box, K)
        noisy = KeypointSet(kp.uv + rng.normal(0, 1.0, size=(8, 2)), kp.valid)
        sparse = solve_sparse(noisy, box.dims, box.yaw, projected_center(box, K), K, lo, hi)
        dense = solve_depth_1d(dense_fn(s), proposal, K, lo, hi)
        sparse_err.append(abs(sparse.depth - box.depth))
        dense_err.append(abs(dense.depth - box.depth))
    assert np.median(sparse_err) > 5 * np.median(dense_err) + 0.01


def test_energy_for_kinds():
    s = small_scene(2)
    b = s.boxes[0]
    for kind in ("sparse_geo", "dense_geo", "semantic", "joint"):
        assert math.isfinite(energy_for(kind, s, 0, CFG)(b))
    with pytest.raises(InvalidInputError):
        energy_for("photometric", s, 0, CFG)
