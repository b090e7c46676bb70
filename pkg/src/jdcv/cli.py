"""Command-line entry point: ``jdcv <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path


from . import __version__
from .deformation import DeformationConfig, MonitorSpec, write_grid_text
from .errors import FoldingError, GeometryError, JDCVError
from .features import ARMS, crop_subvolumes, extract_jd_cv, geometry_record, stack_for_arm, write_stack
from .field_core import LatticeGeometry, read_volume, write_volume
from .metrics import evaluate
from .phantom import brain_phantom
from .preprocess import PreprocessConfig, preprocess
from .recovery import RecoveryProblem, node_error_cells, recover, synthesize_t0

log = logging.getLogger("jdcv")

EXIT_ERROR = 1
EXIT_FOLDING = 3


def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _require(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(args.sigma, args.clahe_tiles, args.clahe_clip, args.mask_threshold)
    paths = [_require(p) for p in args.inputs]
    out = _outdir(args)
    record = {"tool": "jdcv preprocess", "version": __version__, "config": asdict(cfg),
              "chain": ["gaussian_subtract", "zscore", "clahe"], "files": []}
    for p in paths:
        try:
            result = preprocess(read_volume(p), cfg)
        except JDCVError as exc:
            raise JDCVError(f"{p}: {exc}") from exc
        target = out / f"{_stem(p)}_pre.nii.gz"
        write_volume(result, target)
        record["files"].append({"input": str(p), "output": target.name})
        print(target)
    (out / "provenance.json").write_text(json.dumps(record, indent=2))
    return 0


def _monitor_and_config(args):
    spec = MonitorSpec(args.alpha, args.beta, args.floor)
    cfg = DeformationConfig(time_steps=args.steps, integrator=args.integrator)
    return spec, cfg


def cmd_extract(args) -> int:
    out = _outdir(args)
    if args.demo:
        geometry = LatticeGeometry((args.demo_size, args.demo_size))
        images, _ = brain_phantom(geometry, seed=args.seed)
        t1 = images["T1"]
        write_volume(t1, out / "phantom_t1.nii.gz")
    elif args.t1:
        t1 = read_volume(_require(args.t1))
    else:
        raise JDCVError("extract needs a T1 volume or --demo")
    spec, cfg = _monitor_and_config(args)
    jd, cv, phi = extract_jd_cv(t1, spec, cfg, cv_components=args.cv_components, return_map=True)
    write_volume(jd, out / "jd.nii.gz")
    cv_files = []
    if isinstance(cv, tuple):
        for k, c in enumerate(cv):
            write_volume(c, out / f"cv_{'xyz'[k]}.nii.gz")
            cv_files.append(f"cv_{'xyz'[k]}.nii.gz")
    else:
        write_volume(cv, out / "cv.nii.gz")
        cv_files.append("cv.nii.gz")
    write_grid_text(phi, out / "grid.txt")
    manifest = {"jd": "jd.nii.gz", "cv": cv_files, "grid": "grid.txt",
                "geometry": geometry_record(t1.geometry),
                "monitor": asdict(spec), "time_steps": cfg.time_steps, "integrator": cfg.integrator}
    (out / "features.json").write_text(json.dumps(manifest, indent=2))
    print(f"jd range [{jd.values.min():.4f}, {jd.values.max():.4f}]; wrote {out}")
    if args.plot:
        _plot_grid(phi, t1, out / "grid.png")
    return 0


def _plot_grid(phi, image, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if phi.geometry.ndim != 2:
        return
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    axes[0].imshow(image.values.T, origin="lower", cmap="gray")
    axes[0].set_title("image")
    p = phi.positions
    for i in range(p.shape[0]):
        axes[1].plot(p[i, :, 0], p[i, :, 1], "k-", lw=0.4)
    for j in range(p.shape[1]):
        axes[1].plot(p[:, j, 0], p[:, j, 1], "k-", lw=0.4)
    axes[1].set_aspect("equal")
    axes[1].set_title("adapted grid")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_stack(args) -> int:
    mods, feats = ARMS[args.arm]
    sources = {"T1": args.t1, "T1-IR": args.t1ir, "FLAIR": args.flair, "JD": args.jd, "CV": args.cv}
    missing = [n for n in mods + feats if not sources[n]]
    if missing:
        raise JDCVError(f"arm {args.arm!r} needs {', '.join(missing)}")
    volumes = {n: read_volume(_require(sources[n])) for n in mods + feats}
    stack = stack_for_arm(args.arm, volumes)
    out = _outdir(args)
    extra = {}
    if args.tiles or args.tile_size is not None:
        size = args.tile_size or 80
        stride = args.tile_stride or size
        tiles = crop_subvolumes(stack, size, stride)
        tile_dir = out / "tiles"
        records = []
        for k, t in enumerate(tiles):
            m = write_stack(t, tile_dir, arm=args.arm, prefix=f"tile{k:03d}_")
            records.append({"manifest": str(m.relative_to(out)), "offset": list(t.offset), "dims": list(t.geometry.dims)})
        extra["tiles"] = {"size": size, "stride": stride, "count": len(tiles), "items": records}
    manifest = write_stack(stack, out, arm=args.arm, extra=extra)
    print(f"{len(stack)} channels {list(stack.names)}" + (f", {extra['tiles']['count']} tiles" if extra else ""))
    print(manifest)
    return 0


def cmd_eval(args) -> int:
    pred = read_volume(_require(args.pred), labels=True)
    truth = read_volume(_require(args.truth), labels=True)
    report = evaluate(pred, truth)
    out = _outdir(args)
    report.write_csv(out / "report.csv")
    (out / "report.json").write_text(report.to_json())
    for row in report.rows():
        cells = ["undefined" if row[k] is None else f"{row[k]:.4f}" for k in ("dsc", "hd_mm", "avd")]
        print(f"{row['class']:>8}  dsc={cells[0]}  hd={cells[1]} mm  avd={cells[2]}")
    return 0


def cmd_recover(args) -> int:
    geometry = LatticeGeometry((args.size,) * args.dim)
    t0 = synthesize_t0(geometry, args.amplitude, args.seed)
    problem = RecoveryProblem.from_map(t0, smooth_weight=args.lam, max_iters=args.iters)
    result = recover(problem)
    err = node_error_cells(result.map, t0)
    out = _outdir(args)
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss", "grad_norm"])
        writer.writerows(result.trace_rows())
    write_grid_text(t0, out / "t0_grid.txt")
    write_grid_text(result.map, out / "recovered_grid.txt")
    summary = {"iterations": result.iterations, "converged": result.converged,
               "final_loss": result.loss_history[-1],
               "mean_error_cells": float(err.mean()), "max_error_cells": float(err.max())}
    (out / "recovery.json").write_text(json.dumps(summary, indent=2))
    print(f"iterations={result.iterations} converged={result.converged} loss={result.loss_history[-1]:.3e}")
    print(f"mean node error {err.mean():.3e} cells, max {err.max():.3e} cells")
    return 0


def cmd_phantom(args) -> int:
    dims = tuple(args.dims)
    geometry = LatticeGeometry(dims, tuple(args.spacing) if args.spacing else None)
    images, labels = brain_phantom(geometry, noise=args.noise, seed=args.seed)
    out = _outdir(args)
    for name, img in images.items():
        write_volume(img, out / f"{name.lower().replace('-', '')}.nii.gz")
    write_volume(labels, out / "labels.nii.gz")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jdcv", description="JD/CV feature extraction and segmentation evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="gaussian subtraction, z-score and CLAHE per modality")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--sigma", type=float, default=2.0, help="gaussian sigma in mm")
    p.add_argument("--clahe-tiles", type=int, default=8)
    p.add_argument("--clahe-clip", type=float, default=0.01)
    p.add_argument("--mask-threshold", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    def deformation_flags(q):
        q.add_argument("--alpha", type=float, default=1.0, help="brightness weight")
        q.add_argument("--beta", type=float, default=1.0, help="gradient-magnitude weight")
        q.add_argument("--floor", type=float, default=0.1)
        q.add_argument("--steps", type=int, default=100)
        q.add_argument("--integrator", choices=("euler", "rk4"), default="rk4")

    p = sub.add_parser("extract", help="JD and CV images plus the adapted grid")
    p.add_argument("t1", nargs="?")
    deformation_flags(p)
    p.add_argument("--demo", action="store_true", help="use the built-in 2D phantom instead of a file")
    p.add_argument("--demo-size", type=int, default=65)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cv-components", action="store_true", help="3D only: write the three curl components")
    p.add_argument("--plot", action="store_true", help="2D only: save grid.png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stack", help="assemble an experiment arm's channels, optionally tiled")
    p.add_argument("--arm", choices=sorted(ARMS), required=True)
    p.add_argument("--t1")
    p.add_argument("--t1ir")
    p.add_argument("--flair")
    p.add_argument("--jd")
    p.add_argument("--cv")
    p.add_argument("--tiles", action="store_true", help="also write 80^3 sub-volumes")
    p.add_argument("--tile-size", type=int, nargs="+")
    p.add_argument("--tile-stride", type=int, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("eval", help="DSC/HD/AVD per tissue class")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recover", help="rebuild a synthetic map from its JD and curl")
    p.add_argument("--size", type=int, default=65)
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--amplitude", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("phantom", help="write a synthetic multimodal phantom with labels")
    p.add_argument("--dims", type=int, nargs="+", default=[64, 64, 24])
    p.add_argument("--spacing", type=float, nargs="+")
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for name in ("tile_size", "tile_stride"):
        v = getattr(args, name, None)
        if v is not None and len(v) == 1:
            setattr(args, name, v[0])
    try:
        return args.func(args)
    except FoldingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FOLDING
    except (JDCVError, OSError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
