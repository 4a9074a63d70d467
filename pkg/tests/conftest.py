from __future__ import annotations

import numpy as np
import pytest

from mono3dlab.scene import CorruptionConfig, corrupt, render_scene, with_features
from strategies import SMALL_K, random_box


def small_scene(seed: int, n_boxes: int = 1, noisy: bool = True, channels: int = 4, size=(160, 120)):
    """A textured scene on a 160x120 raster, optionally with NOC noise and flat patches."""
    rng = np.random.default_rng(seed)
    boxes = [random_box(rng, (6.0, 14.0)) for _ in range(n_boxes)]
    s = with_features(render_scene(boxes, SMALL_K, *size), channels, seed)
    if noisy:
        s = corrupt(s, CorruptionConfig(noc_noise_sigma=0.03, textureless_patch_fraction=0.1), seed)
    return s


@pytest.fixture(scope="session")
def scenes():
    return [small_scene(i, n_boxes=1 + i % 2) for i in range(12)]


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
