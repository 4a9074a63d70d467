"""Per-instance depth recovery runs and their summaries.

Everything here works on in-memory :class:`SceneSample` objects; the CLI adds
the manifest loading and file output on top.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cost_volume import DepthBelief, refine_depth
from .energy import EnergyConfig, energy_profile
from .errors import Mono3DError
from .geometry import PixelRect, projected_center
from .scene import SceneSample
from .solvers import brute_force_oracle, energy_for, solve_depth_1d

VARIANTS = ("sparse_geo", "dense_geo", "semantic", "joint", "refine", "oracle")
PROFILE_VARIANTS = ("sparse_geo", "dense_geo", "semantic", "joint")
RESULT_FIELDS = (
    "instance_id",
    "scene",
    "object",
    "variant",
    "status",
    "depth",
    "truth",
    "proposal",
    "error",
    "abs_error",
    "energy",
    "evaluations",
)


@dataclass(frozen=True)
class SolveSettings:
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    half_range: float = 1.6  # search window around the proposal depth, meters
    coarse_steps: int = 33
    tol: float = 1e-3
    oracle_step: float = 0.01
    oracle_energy: str = "joint"
    max_pixels: int | None = 4096
    lam: float = 0.5
    D: int = 32
    sampling: str = "adaptive"
    temperature: float | None = None
    min_sigma: float = 0.05  # floor for the depth belief when the proposal is noise-free
    min_depth: float = 0.5

    def search_range(self, proposal_depth: float) -> tuple[float, float]:
        return max(proposal_depth - self.half_range, self.min_depth), proposal_depth + self.half_range


def error_code(exc: BaseException) -> str:
    """Snake-case class name, e.g. ``InsufficientSupportError`` -> ``insufficient_support``."""
    name = type(exc).__name__.removesuffix("Error")
    return "".join("_" + c.lower() if c.isupper() else c for c in name).lstrip("_") or "error"


def refine_instance(sample: SceneSample, k: int, settings: SolveSettings) -> tuple[float, object]:
    proposal = sample.proposals[k]
    pix = sample.noc.instance_pixels(k)
    if len(pix) == 0:
        from .errors import NoSupportError

        raise NoSupportError(f"instance {k} has no visible pixels")
    roi = PixelRect.bounding(pix)
    n_roi = roi.width * roi.height
    cap = settings.max_pixels
    stride = 1 if cap is None or n_roi <= cap else int(math.ceil(math.sqrt(n_roi / cap)))
    belief = DepthBelief(proposal.depth, max(sample.sigma_z[k], settings.min_sigma))
    return refine_depth(
        roi,
        sample.noc,
        sample.features,
        proposal,
        belief,
        sample.camera,
        settings.energy,
        lam=settings.lam,
        D=settings.D,
        temperature=settings.temperature,
        sampling=settings.sampling,
        half_range=settings.half_range,
        instance=k,
        stride=stride,
    )


def solve_instance(sample: SceneSample, k: int, variant: str, settings: SolveSettings) -> dict:
    """One result row; failures become rows with a status code instead of raising."""
    truth = sample.boxes[k].depth
    proposal = sample.proposals[k]
    row = {
        "variant": variant,
        "status": "ok",
        "depth": math.nan,
        "truth": truth,
        "proposal": proposal.depth,
        "error": math.nan,
        "abs_error": math.nan,
        "energy": math.nan,
        "evaluations": 0,
    }
    lo, hi = settings.search_range(proposal.depth)
    K = sample.camera
    try:
        if variant == "refine":
            depth, diag = refine_instance(sample, k, settings)
            energy = float(np.min(diag.energies))
            evaluations = diag.grid.D
        elif variant == "oracle":
            fn = energy_for(settings.oracle_energy, sample, k, settings.energy, settings.max_pixels)
            res = brute_force_oracle(fn, proposal, K, lo, hi, settings.oracle_step)
            depth, energy, evaluations = res.depth, res.energy_at_solution, res.evaluations
        elif variant in VARIANTS:
            fn = energy_for(variant, sample, k, settings.energy, settings.max_pixels)
            res = solve_depth_1d(fn, proposal, K, lo, hi, settings.coarse_steps, settings.tol, variant)
            depth, energy, evaluations = res.depth, res.energy_at_solution, res.evaluations
        else:
            raise ValueError(f"unknown variant {variant!r}")
    except Mono3DError as exc:
        row["status"] = error_code(exc)
        return row
    row.update(
        depth=float(depth),
        error=float(depth - truth),
        abs_error=abs(float(depth - truth)),
        energy=float(energy),
        evaluations=int(evaluations),
    )
    return row


def solve_scene(sample: SceneSample, scene_index: int, variants, settings: SolveSettings) -> list[dict]:
    rows = []
    for k in range(len(sample.boxes)):
        for v in variants:
            row = {"instance_id": f"s{scene_index:05d}_o{k}", "scene": scene_index, "object": k}
            row.update(solve_instance(sample, k, v, settings))
            rows.append(row)
    return rows


def _solve_manifest_scene(args) -> list[dict]:
    from .dataset import load_scene

    manifest, index, variants, settings = args
    return solve_scene(load_scene(manifest, index), index, variants, settings)


def solve_manifest(manifest: dict, variants, settings: SolveSettings, jobs: int = 1) -> list[dict]:
    """Rows ordered by (scene, object, variant order) regardless of ``jobs``."""
    n = len(manifest["scenes"])
    tasks = [(manifest, i, tuple(variants), settings) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_solve_manifest_scene, tasks))
    else:
        chunks = [_solve_manifest_scene(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize(rows, variants=None) -> dict:
    """Per-variant counts and |error| statistics over successful rows."""
    variants = variants or sorted({r["variant"] for r in rows})
    out = {}
    for v in variants:
        mine = [r for r in rows if r["variant"] == v]
        ok = np.array([r["abs_error"] for r in mine if r["status"] == "ok"], dtype=float)
        entry = {"n": len(mine), "n_ok": int(ok.size), "n_failed": len(mine) - int(ok.size)}
        if ok.size:
            entry.update(
                mean_abs=float(ok.mean()),
                median_abs=float(np.median(ok)),
                p90_abs=float(np.percentile(ok, 90)),
                max_abs=float(ok.max()),
            )
        out[v] = entry
    return out


def paired_errors(rows, a: str, b: str) -> tuple[np.ndarray, np.ndarray]:
    """|error| of variants ``a`` and ``b`` on instances where both succeeded."""
    by = {}
    for r in rows:
        if r["status"] == "ok":
            by.setdefault(r["instance_id"], {})[r["variant"]] = r["abs_error"]
    keys = sorted(k for k, v in by.items() if a in v and b in v)
    return np.array([by[k][a] for k in keys]), np.array([by[k][b] for k in keys])


def sign_test(x, y) -> tuple[float, int, int]:
    """One-sided exact sign test of ``x < y``; ties are dropped.

    Returns (p-value, wins for x, number of untied pairs).
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    wins = int(np.sum(x < y))
    n = int(np.sum(x != y))
    if n == 0:
        return 1.0, 0, 0
    tail = sum(math.comb(n, i) for i in range(wins, n + 1))
    return float(tail / 2**n), wins, n


# -- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    lam: float
    D: int
    sampling: str
    beta: float

    def apply(self, settings: SolveSettings) -> SolveSettings:
        return replace(
            settings,
            lam=self.lam,
            D=self.D,
            sampling=self.sampling,
            energy=replace(settings.energy, beta=self.beta),
        )


def sweep_grid(lams, Ds, samplings, betas) -> list[SweepCell]:
    cells = [SweepCell(float(l), int(d), s, float(b)) for l in lams for d in Ds for s in samplings for b in betas]
    return cells


def run_sweep(samples, cells, settings: SolveSettings) -> tuple[list[dict], list[dict]]:
    """Refine every instance once per cell.

    Returns (summary rows, timing rows); timings live apart so the summary is
    byte-reproducible.
    """
    samples = list(samples)
    summary, timing = [], []
    for cell in cells:
        s = cell.apply(settings)
        t0 = time.perf_counter()
        rows = [r for i, sample in enumerate(samples) for r in solve_scene(sample, i, ("refine",), s)]
        elapsed = time.perf_counter() - t0
        stats = summarize(rows, ["refine"])["refine"]
        summary.append({**asdict(cell), **stats})
        timing.append({**asdict(cell), "runtime_s": elapsed, "instances": stats["n"]})
    return summary, timing


# -- landscapes ---------------------------------------------------------------


def instance_profile(sample: SceneSample, k: int, variant: str, settings: SolveSettings, samples: int = 65):
    """Energy landscape over ``proposal +- half_range`` for one instance."""
    fn = energy_for(variant, sample, k, settings.energy, settings.max_pixels)
    proposal = sample.proposals[k]
    lo, hi = settings.search_range(proposal.depth)
    return energy_profile(fn, proposal, sample.camera, lo, hi, samples)


def profile_hits(sample: SceneSample, k: int, variant: str, settings: SolveSettings, samples: int, bound_steps=2.0):
    """Whether the profile argmin lies within ``bound_steps`` grid steps of the truth."""
    prof = instance_profile(sample, k, variant, settings, samples)
    return abs(prof.argmin_depth - sample.boxes[k].depth) <= bound_steps * prof.step + 1e-12


def center_pixel(sample: SceneSample, k: int) -> np.ndarray:
    return projected_center(sample.proposals[k], sample.camera)
