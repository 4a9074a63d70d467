"""``mono3dlab`` command line: synth, solve, sweep, eval, profile.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every output
directory receives ``config.json`` with the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import generate_dataset, iter_instances, load_scene, manifest_hash, read_manifest
from .energy import EnergyConfig
from .errors import InvalidInputError, Mono3DError
from .evaluation import (
    Detection,
    EvalReport,
    ap_from_matches,
    depth_error_stats,
    filter_difficulty,
    match_detections,
)
from .experiments import (
    PROFILE_VARIANTS,
    RESULT_FIELDS,
    VARIANTS,
    SolveSettings,
    instance_profile,
    run_sweep,
    solve_manifest,
    summarize,
    sweep_grid,
)
from .geometry import CameraIntrinsics, box_at_depth
from .io import box_from_dict, dump_json, kitti_to_box, read_label_file
from .scene import CorruptionConfig, ImageSpec, PlacementRanges


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    ranges: PlacementRanges = field(default_factory=PlacementRanges)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    variants: tuple[str, ...] = ("dense_geo",)
    lam: float = 0.5
    D: int = 32
    half_range: float = 1.6
    sampling: str = "adaptive"
    temperature: float | None = None
    out: str = "out"

    def __post_init__(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise InvalidInputError(f"unknown variant(s) {', '.join(bad)}; choose from {', '.join(VARIANTS)}")
        if not self.variants:
            raise InvalidInputError("at least one variant is required")
        if self.sampling not in ("uniform", "adaptive"):
            raise InvalidInputError(f"unknown sampling {self.sampling!r}")
        if not self.lam > 0 or self.D < 2 or not self.half_range > 0:
            raise InvalidInputError("need lambda > 0, D >= 2 and half_range > 0")
        if self.temperature is not None and not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")

    def settings(self) -> SolveSettings:
        return SolveSettings(
            energy=self.energy,
            half_range=self.half_range,
            lam=self.lam,
            D=self.D,
            sampling=self.sampling,
            temperature=self.temperature,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corruption"] = {k: (None if v == math.inf else v) for k, v in d["corruption"].items()}
        return d


# -- flag parsing helpers ------------------------------------------------------


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"need 0 < lo <= hi, got {text!r}")
    return lo, hi


def _int_range(text: str) -> tuple[int, int]:
    lo, hi = _range(text) if ":" in text else (float(text), float(text))
    return int(lo), int(hi)


def _list(cast):
    def parse(text: str):
        items = [x.strip() for x in text.split(",") if x.strip()]
        try:
            return [cast(x) for x in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _load_corruption(path: str | None) -> CorruptionConfig:
    if path is None:
        return CorruptionConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read corruption file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    known = {f.name for f in fields(CorruptionConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"{path}: unknown corruption keys {', '.join(unknown)}")
    data = {k: (math.inf if v is None and k == "max_proposal_offset" else v) for k, v in data.items()}
    try:
        return CorruptionConfig(**data)
    except (InvalidInputError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _config(args, **overrides) -> ExperimentConfig:
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "beta", None) is not None and not isinstance(args.beta, list):
        kw["energy"] = EnergyConfig(beta=args.beta)
    for flag, key in (("lam", "lam"), ("depth_samples", "D"), ("sampling", "sampling"),
                      ("temperature", "temperature"), ("half_range", "half_range"), ("variants", "variants")):
        v = getattr(args, flag, None)
        if v is not None and not isinstance(v, list):
            kw[key] = v
    if isinstance(getattr(args, "variants", None), list):
        kw["variants"] = tuple(args.variants)
    kw["out"] = str(args.out)
    kw.update(overrides)
    try:
        return ExperimentConfig(**kw)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_rows(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from None


def _manifest(path):
    p = Path(path)
    if not (p / "manifest.json").is_file() and not p.is_file():
        raise UsageError(f"no dataset manifest at {path}")
    return read_manifest(p)


# -- commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    corruption = _load_corruption(args.corruption_file)
    try:
        ranges = PlacementRanges(depth=args.depth_range, objects_per_scene=args.objects)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    if args.scenes < 0:
        raise UsageError("--scenes must be >= 0")
    cfg = _config(args, ranges=ranges, corruption=corruption)
    out = _out_dir(args.out)
    generate_dataset(
        args.scenes, ranges, corruption, cfg.seed, out, ImageSpec(channels=args.channels), jobs=args.jobs
    )
    dump_json({"command": "synth", "scenes": args.scenes, "channels": args.channels, **cfg.to_dict()}, out / "config.json")
    print(out / "manifest.json")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args.dataset)
    out = _out_dir(args.out)
    rows = solve_manifest(manifest, cfg.variants, cfg.settings(), jobs=args.jobs)
    write_rows(out / "results.csv", rows, RESULT_FIELDS)
    summary = summarize(rows, list(cfg.variants))
    dump_json(summary, out / "summary.json")
    dump_json(
        {"command": "solve", "dataset_manifest_sha256": manifest_hash(Path(manifest["_root"]) / "manifest.json"),
         "settings": asdict(cfg.settings()), **cfg.to_dict()},
        out / "config.json",
    )
    print(out / "results.csv")
    return 0


SWEEP_COLUMNS = ("lam", "D", "sampling", "beta", "n", "n_ok", "n_failed", "mean_abs", "median_abs", "p90_abs", "max_abs")


def cmd_sweep(args) -> int:
    manifest = _manifest(args.dataset)
    lams = args.lam if args.lam is not None else [0.5]
    Ds = args.depth_samples if args.depth_samples is not None else [32]
    samplings = args.sampling if args.sampling is not None else ["adaptive"]
    betas = args.beta if args.beta is not None else [1.0]
    bad = [s for s in samplings if s not in ("uniform", "adaptive")]
    if bad:
        raise UsageError(f"unknown sampling {', '.join(bad)}")
    cells = sweep_grid(lams, Ds, samplings, betas)
    if not cells:
        raise UsageError("empty parameter grid")
    base = _config(args, lam=lams[0], D=Ds[0], sampling=samplings[0], energy=EnergyConfig(beta=betas[0]),
                   variants=("refine",))
    for c in cells:
        try:
            ExperimentConfig(lam=c.lam, D=c.D, sampling=c.sampling, energy=EnergyConfig(beta=c.beta), variants=("refine",))
        except InvalidInputError as exc:
            raise UsageError(f"bad grid cell {c}: {exc}") from None
    out = _out_dir(args.out)
    samples = [load_scene(manifest, i) for i in range(len(manifest["scenes"]))]
    summary, timing = run_sweep(samples, cells, base.settings())
    write_rows(out / "sweep.csv", summary, SWEEP_COLUMNS)
    write_rows(out / "sweep_timing.csv", timing, ("lam", "D", "sampling", "beta", "instances", "runtime_s"))
    dump_json(
        {"command": "sweep", "grid": {"lambda": lams, "D": Ds, "sampling": samplings, "beta": betas},
         "dataset_manifest_sha256": manifest_hash(Path(manifest["_root"]) / "manifest.json"), **base.to_dict()},
        out / "config.json",
    )
    print(out / "sweep.csv")
    return 0


def _eval_synthetic(args, thresholds) -> EvalReport:
    manifest = _manifest(args.dataset)
    rows = read_rows(args.results)
    gt_ids = {iid: (s, k) for iid, s, k in iter_instances(manifest)}
    unknown = sorted({r["instance_id"] for r in rows} - gt_ids.keys())
    if unknown:
        raise InvalidInputError(f"results reference unknown instance ids: {', '.join(unknown)}")
    gts = {rec["index"]: [box_from_dict(b) for b in rec["boxes"]] for rec in manifest["scenes"]}
    report = EvalReport()
    for v in sorted({r["variant"] for r in rows}):
        mine = {r["instance_id"]: r for r in rows if r["variant"] == v}
        missing = sorted(gt_ids.keys() - mine.keys())
        if missing:
            raise InvalidInputError(f"variant {v} has no result for instance ids: {', '.join(missing)}")
        # detections keep the proposal's ray, yaw and size; failed rows detect nothing
        dets: dict[int, list[Detection]] = {}
        pairs = []
        for iid, (s, k) in gt_ids.items():
            r = mine[iid]
            if r["status"] != "ok":
                continue
            rec = manifest["scenes"][s]
            box = box_at_depth(box_from_dict(rec["proposals"][k]), CameraIntrinsics(**rec["camera"]), float(r["depth"]))
            dets.setdefault(s, []).append(Detection(box, 1.0))
            pairs.append((float(r["depth"]), float(r["truth"])))
        report.ap[v] = _ap_table(dets, gts, thresholds)
        if pairs:
            report.depth[v] = asdict(depth_error_stats(pairs))
    return report


def _ap_table(dets: dict, gts: dict, thresholds) -> dict:
    """AP per (IoU kind, threshold); matching is per image, ranking is pooled."""
    n_gt = sum(len(g) for g in gts.values())
    table = {}
    for kind in ("3d", "bev"):
        for t in thresholds:
            matches = []
            for key, g in gts.items():
                matches += match_detections(dets.get(key, []), g, t, kind)
            matches.sort(key=lambda m: -m.score)
            table[f"{kind}@{t}"] = ap_from_matches(matches, n_gt)
    return table


def _eval_kitti(args, thresholds) -> EvalReport:
    gt_dir, pred_dir = Path(args.gt_dir), Path(args.pred_dir)
    gt_ids = sorted(p.stem for p in gt_dir.glob("*.txt"))
    pred_ids = sorted(p.stem for p in pred_dir.glob("*.txt"))
    missing = sorted(set(gt_ids) - set(pred_ids))
    extra = sorted(set(pred_ids) - set(gt_ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"no predictions for ids: {', '.join(missing)}")
        if extra:
            parts.append(f"predictions without ground truth: {', '.join(extra)}")
        raise InvalidInputError("; ".join(parts))
    gts, dets = {}, {}
    for iid in gt_ids:
        labels = [lb for lb in read_label_file(gt_dir / f"{iid}.txt") if lb.type == args.cls]
        if args.difficulty is not None:
            labels = filter_difficulty(labels, args.difficulty)
        gts[iid] = [kitti_to_box(lb) for lb in labels]
        preds = [lb for lb in read_label_file(pred_dir / f"{iid}.txt") if lb.type == args.cls]
        dets[iid] = [Detection(kitti_to_box(p), 1.0 if p.score is None else p.score) for p in preds]
    report = EvalReport()
    report.ap[args.cls] = _ap_table(dets, gts, thresholds)
    return report


def cmd_eval(args) -> int:
    thresholds = sorted(set(args.iou)) if args.iou else [0.7]
    if args.results and args.dataset:
        report = _eval_synthetic(args, thresholds)
        source = {"results": str(args.results), "dataset": str(args.dataset)}
    elif args.gt_dir and args.pred_dir:
        report = _eval_kitti(args, thresholds)
        source = {"gt_dir": str(args.gt_dir), "pred_dir": str(args.pred_dir), "class": args.cls,
                  "difficulty": args.difficulty}
    else:
        raise UsageError("eval needs --results with --dataset, or --gt-dir with --pred-dir")
    out = _out_dir(args.out)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    dump_json({"command": "eval", "iou": thresholds, **source}, out / "config.json")
    print(out / "report.json")
    return 0


def cmd_profile(args) -> int:
    manifest = _manifest(args.dataset)
    ids = {iid: (s, k) for iid, s, k in iter_instances(manifest)}
    if args.instance not in ids:
        raise InvalidInputError(f"unknown instance id {args.instance!r}")
    variants = args.variants or list(PROFILE_VARIANTS)
    bad = [v for v in variants if v not in PROFILE_VARIANTS]
    if bad:
        raise UsageError(f"unknown profile variant(s) {', '.join(bad)}; choose from {', '.join(PROFILE_VARIANTS)}")
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    cfg = _config(args, variants=("dense_geo",))
    s, k = ids[args.instance]
    sample = load_scene(manifest, s)
    settings = cfg.settings()
    out = _out_dir(args.out)
    for v in variants:
        prof = instance_profile(sample, k, v, settings, args.samples)
        prof.to_csv(out / f"profile_{args.instance}_{v}.csv")
    dump_json(
        {"command": "profile", "instance": args.instance, "profile_variants": variants, "samples": args.samples,
         **cfg.to_dict()},
        out / "config.json",
    )
    print(out)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mono3dlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (output order is fixed)")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--scenes", type=int, required=True)
    sp.add_argument("--depth-range", type=_range, default=(5.0, 60.0), metavar="LO:HI")
    sp.add_argument("--objects", type=_int_range, default=(1, 1), metavar="LO:HI", help="objects per scene")
    sp.add_argument("--channels", type=int, default=8, help="feature channels")
    sp.add_argument("--corruption-file", default=None, help="JSON object of corruption settings")
    sp.set_defaults(func=cmd_synth)

    def solver_flags(sp, multi=False):
        kind = _list(float) if multi else float
        sp.add_argument("--lambda", dest="lam", type=kind, default=None)
        sp.add_argument("--depth-samples", type=_list(int) if multi else int, default=None, help="D")
        sp.add_argument("--sampling", type=_list(str) if multi else str, default=None,
                        **({} if multi else {"choices": ("uniform", "adaptive")}))
        sp.add_argument("--beta", type=kind, default=None)
        sp.add_argument("--temperature", type=float, default=None)
        sp.add_argument("--half-range", type=float, default=None, help="search half-width around the proposal (m)")

    sp = sub.add_parser("solve", help="recover depth for every instance")
    common(sp)
    sp.add_argument("dataset")
    sp.add_argument("--variants", type=_list(str), default=["dense_geo"], help=f"comma list of {','.join(VARIANTS)}")
    solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="refinement over a lambda x D x sampling x beta grid")
    common(sp)
    sp.add_argument("dataset")
    solver_flags(sp, multi=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="AP|R40 and depth-error report")
    common(sp, jobs=False)
    sp.add_argument("--results", help="results.csv from solve")
    sp.add_argument("--dataset", help="dataset directory holding the ground truth")
    sp.add_argument("--gt-dir", help="directory of KITTI ground-truth label files")
    sp.add_argument("--pred-dir", help="directory of KITTI prediction label files")
    sp.add_argument("--class", dest="cls", default="Car")
    sp.add_argument("--difficulty", type=int, choices=(0, 1, 2), default=None)
    sp.add_argument("--iou", type=float, action="append", choices=(0.5, 0.7), default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("profile", help="energy landscapes around the proposal depth")
    common(sp, jobs=False)
    sp.add_argument("dataset")
    sp.add_argument("--instance", required=True, help="instance id, e.g. s00000_o0")
    sp.add_argument("--variants", type=_list(str), default=None)
    sp.add_argument("--samples", type=int, default=65)
    solver_flags(sp)
    sp.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mono3dlab {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (Mono3DError, OSError, ValueError) as exc:
        print(f"mono3dlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
