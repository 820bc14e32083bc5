"""Command-line entry point.

Subcommands: render, benchmark, gen-data, train, eval, crossval, ablate,
kernel-bench. Every run resolves its configuration as defaults < config file
(--config) < explicit flags, then persists the resolved values to
<out>/run.txt so any run can be reproduced with `--config <out>/run.txt`.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal error.
"""

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import io as tio
from . import kernels
from . import model as M
from . import synth
from .kinematics import load_kinematics_csv, nearest_sample
from .mesh import load_mesh
from .render import CameraIntrinsics, RenderConfig, benchmark_render, render_parts


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _merge_config(args, defaults):
    """defaults < config file < explicit flags; returns a plain dict."""
    resolved = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        file_values = tio.read_config(cfg_path)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ValueError(
                f"{cfg_path}: unknown config keys: {', '.join(sorted(unknown))}"
            )
        for key, raw in file_values.items():
            resolved[key] = _coerce(raw, defaults[key])
    for key in defaults:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _coerce(raw, template):
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def _write_run_txt(out_dir, resolved):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tio.write_config(out_dir / "run.txt", resolved)


def _load_intrinsics(path):
    return CameraIntrinsics.from_config(tio.read_intrinsics(path))


# ---------------------------------------------------------------------------
# render / benchmark
# ---------------------------------------------------------------------------

RENDER_DEFAULTS = {
    "mesh": "",
    "kin": "",
    "intrinsics": "",
    "out": "render_out",
    "time": 0.0,
    "scale": 1,
    "decimation": 1,
    "png": False,
    "seed": 0,
}


def cmd_render(args):
    cfg = _merge_config(args, RENDER_DEFAULTS)
    problems = [k for k in ("mesh", "kin", "intrinsics") if not cfg[k]]
    if problems:
        raise ValueError(f"missing required options: {', '.join('--' + p for p in problems)}")
    mesh = load_mesh(cfg["mesh"])
    stream = load_kinematics_csv(cfg["kin"])
    intr = _load_intrinsics(cfg["intrinsics"])
    sample = nearest_sample(stream, cfg["time"])
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)

    t0 = time.perf_counter()
    mask = render_parts(
        mesh, sample.instruments[0], sample.camera, intr,
        RenderConfig(cfg["scale"], cfg["decimation"], intr.near_clip),
    )
    elapsed = time.perf_counter() - t0
    tio.write_pgm(out_dir / "mask.pgm", mask.labels)
    if cfg["png"]:
        tio.write_png(out_dir / "mask.png", tio.label_overlay(mask.labels))
    for part, name in ((0, "background"), (1, "base"), (2, "wrist"), (3, "tip")):
        print(f"{name}: {int((mask.labels == part).sum())} px")
    print(f"rendered {mask.width}x{mask.height} in {elapsed * 1000:.1f} ms -> {out_dir / 'mask.pgm'}")
    return 0


BENCH_DEFAULTS = {
    "mesh": "",
    "kin": "",
    "intrinsics": "",
    "out": "bench_out",
    "time": 0.0,
    "configs": "s1:r1,s2:r10",
    "repeats": 5,
    "seed": 0,
}


def _parse_bench_configs(text, near_clip):
    configs = []
    for item in text.split(","):
        item = item.strip()
        try:
            s_part, r_part = item.split(":")
            configs.append(RenderConfig(int(s_part.lstrip("s")), int(r_part.lstrip("r")), near_clip))
        except Exception as exc:
            raise ValueError(f"bad benchmark config {item!r} (expected like s2:r10)") from exc
    return configs


def cmd_benchmark(args):
    cfg = _merge_config(args, BENCH_DEFAULTS)
    problems = [k for k in ("mesh", "kin", "intrinsics") if not cfg[k]]
    if problems:
        raise ValueError(f"missing required options: {', '.join('--' + p for p in problems)}")
    mesh = load_mesh(cfg["mesh"])
    stream = load_kinematics_csv(cfg["kin"])
    intr = _load_intrinsics(cfg["intrinsics"])
    sample = nearest_sample(stream, cfg["time"])
    configs = _parse_bench_configs(cfg["configs"], intr.near_clip)
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)

    rows, ref_ms = benchmark_render(
        mesh, sample.instruments[0], sample.camera, intr, configs, cfg["repeats"]
    )
    _write_benchmark_outputs(out_dir, rows, ref_ms)
    return 0


def _write_benchmark_outputs(out_dir, rows, ref_ms):
    with open(out_dir / "benchmark.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config", "median_ms", "fps", "iou_base", "iou_wrist", "iou_tip"])
        for row in rows:
            writer.writerow(
                [
                    f"s{row.config.scale}:r{row.config.decimation_rate}",
                    f"{row.median_ms:.4f}",
                    f"{row.fps:.3f}",
                    f"{row.iou['base']:.6f}",
                    f"{row.iou['wrist']:.6f}",
                    f"{row.iou['tip']:.6f}",
                ]
            )
    lines = [f"reference (s1:r1): {ref_ms:.2f} ms/frame ({1000.0 / ref_ms:.1f} fps)"]
    for row in rows:
        lines.append(
            f"s{row.config.scale}:r{row.config.decimation_rate}: "
            f"{row.median_ms:.2f} ms/frame ({row.fps:.1f} fps), speedup {row.speedup:.2f}x, "
            f"IoU base/wrist/tip = {row.iou['base']:.3f}/{row.iou['wrist']:.3f}/{row.iou['tip']:.3f}"
        )
    report = "\n".join(lines)
    (out_dir / "benchmark.txt").write_text(report + "\n")
    print(report)


# ---------------------------------------------------------------------------
# gen-data / train / eval / crossval / ablate
# ---------------------------------------------------------------------------

GEN_DEFAULTS = {
    "out": "dataset",
    "families": "ABCDE",
    "per-family": 40,
    "seed": 0,
    "image-size": 64,
    "deviation": 1.0,
}


def cmd_gen_data(args):
    cfg = _merge_config(args, GEN_DEFAULTS)
    families = [f.strip() for f in cfg["families"].replace(",", "") if f.strip()]
    unknown = [f for f in families if f not in synth.FAMILIES]
    if unknown:
        raise ValueError(f"unknown families: {', '.join(unknown)} (have {''.join(synth.FAMILIES)})")
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)
    scfg = synth.SynthConfig(image_size=cfg["image-size"], deviation=cfg["deviation"])
    manifest = synth.gen_dataset(families, cfg["per-family"], scfg, out_dir, base_seed=cfg["seed"])
    print(f"wrote {len(families) * cfg['per-family']} scenes -> {manifest}")
    return 0


TRAIN_DEFAULTS = {
    "data": "",
    "out": "train_out",
    "arm": "FULL",
    "optimizer": "adam",
    "epochs": 10,
    "seed": 0,
    "lr": 1e-3,
    "val-family": "",
    "exclude-family": "",
}


def _model_cfg(cfg, samples=None):
    size = None
    if samples:
        size = samples[0]["target"].shape[0]
    elif cfg.get("image-size"):
        size = cfg["image-size"]
    kwargs = {"arm": cfg["arm"], "seed": cfg["seed"], "lr": cfg["lr"]}
    if "optimizer" in cfg:
        kwargs["optimizer"] = cfg["optimizer"]
    if size:
        kwargs["image_size"] = int(size)
    return M.ModelConfig(**kwargs)


def cmd_train(args):
    cfg = _merge_config(args, TRAIN_DEFAULTS)
    if not cfg["data"]:
        raise ValueError("missing required option: --data (dataset manifest)")
    records = synth.load_manifest(cfg["data"])
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)
    samples = ev.load_samples(records)
    held = [s for s in samples if cfg["val-family"] and s["family"] == cfg["val-family"]]
    excluded = {cfg["val-family"], cfg["exclude-family"]} - {""}
    train_samples = [s for s in samples if s["family"] not in excluded]
    if not train_samples:
        raise ValueError("no training samples left after family exclusions")
    mcfg = _model_cfg(cfg, samples)
    triples = [(s["image"], s["rendered"], s["target"]) for s in train_samples]
    val = held if held else train_samples

    log_rows = []

    def on_epoch(epoch, means, params):
        dvals = [
            ev.dice(M.predict(s["image"], s["rendered"], mcfg, params), s["target"], 3)
            for s in val
        ]
        log_rows.append(
            {
                "epoch": epoch,
                "L_seg": repr(means["seg"]),
                "L_nc": repr(means["nc"]),
                "L_ds": repr(means["ds"]),
                "L_train": repr(means["total"]),
                "val_dice_tip": repr(float(np.mean(dvals))),
            }
        )
        print(
            f"epoch {epoch}: L_train {means['total']:.4f} "
            f"(seg {means['seg']:.4f} nc {means['nc']:.4f} ds {means['ds']:.4f}) "
            f"val tip dice {float(np.mean(dvals)):.4f}"
        )

    params, _ = M.train(triples, mcfg, cfg["epochs"], callback=on_epoch)
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "L_seg", "L_nc", "L_ds", "L_train", "val_dice_tip"])
        writer.writeheader()
        writer.writerows(log_rows)
    M.save_weights(out_dir / "weights.ckpt", params)
    print(f"saved weights -> {out_dir / 'weights.ckpt'}")
    return 0


EVAL_DEFAULTS = {
    "data": "",
    "weights": "",
    "out": "eval_out",
    "arm": "FULL",
    "optimizer": "adam",
    "family": "",
    "seed": 0,
    "lr": 1e-3,
    "overlays": False,
}


def cmd_eval(args):
    cfg = _merge_config(args, EVAL_DEFAULTS)
    problems = [k for k in ("data", "weights") if not cfg[k]]
    if problems:
        raise ValueError(f"missing required options: {', '.join('--' + p for p in problems)}")
    records = synth.load_manifest(cfg["data"])
    if cfg["family"]:
        records = [r for r in records if r["family"] == cfg["family"]]
        if not records:
            raise ValueError(f"no samples for family {cfg['family']!r}")
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)
    samples = ev.load_samples(records)
    mcfg = _model_cfg(cfg, samples)
    params = M.load_weights(cfg["weights"])

    rows = []
    for s in samples:
        pred = M.predict(s["image"], s["rendered"], mcfg, params)
        row = {"family": s["family"], "seed": s["seed"]}
        for k, name in ev.CLASS_NAMES.items():
            row[f"dice_{name}"] = repr(ev.dice(pred, s["target"], k))
            row[f"iou_{name}"] = repr(ev.iou(pred, s["target"], k))
        rows.append(row)
        if cfg["overlays"]:
            overlay_dir = out_dir / "overlays"
            overlay_dir.mkdir(exist_ok=True)
            combo = np.concatenate([tio.label_overlay(pred.labels), tio.label_overlay(s["target"])], axis=1)
            tio.write_png(overlay_dir / f"{s['family']}_{s['seed']}.png", combo)
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    tip = np.mean([float(r["dice_tip"]) for r in rows])
    print(f"evaluated {len(rows)} frames; mean tip dice {tip:.4f} -> {out_dir / 'metrics.csv'}")
    return 0


CROSSVAL_DEFAULTS = {
    "data": "",
    "out": "crossval_out",
    "arm": "FULL",
    "optimizer": "adam",
    "epochs": 10,
    "seed": 0,
    "lr": 1e-3,
    "jobs": 1,
    "families": "",
    "per-family": 0,
    "image-size": 64,
    "deviation": 1.0,
}


def _ensure_dataset(cfg, out_dir):
    """Use --data if given, else generate a dataset under the run directory."""
    if cfg["data"]:
        return Path(cfg["data"])
    if not cfg["families"] or cfg["per-family"] <= 0:
        raise ValueError("need either --data or both --families and --per-family")
    families = [f for f in cfg["families"].replace(",", "") if f.strip()]
    scfg = synth.SynthConfig(image_size=cfg["image-size"], deviation=cfg["deviation"])
    return synth.gen_dataset(families, cfg["per-family"], scfg, out_dir / "data", base_seed=cfg["seed"])


def cmd_crossval(args):
    cfg = _merge_config(args, CROSSVAL_DEFAULTS)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _ensure_dataset(cfg, out_dir)
    resolved = dict(cfg)
    resolved["data"] = str(manifest)
    _write_run_txt(out_dir, resolved)

    first = ev.load_samples(synth.load_manifest(manifest)[:1])
    mcfg = _model_cfg(cfg, first)
    t0 = time.perf_counter()
    report = ev.crossval(manifest, mcfg, cfg["epochs"], jobs=cfg["jobs"])
    wall = time.perf_counter() - t0

    rows = ev.crossval_csv_rows(report)
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    lines = [f"leave-one-family-out, arm {report.arm}, seed {report.seed}"]
    for fold in report.folds:
        lines.append(
            f"  fold {fold.family}: tip dice {fold.tip_dice:.4f} iou {fold.tip_iou:.4f} "
            f"(n={fold.n_test}) train {fold.train_seconds:.1f}s "
            f"[{fold.train_fps:.1f} steps/s, infer {fold.infer_fps:.1f} fps]"
        )
    mean_frames, std_frames = report.tip_dice_frame_stats()
    lines.append(
        f"aggregate tip dice {report.tip_dice:.4f} "
        f"(over folds +-{report.tip_dice_fold_std():.4f}; over frames {mean_frames:.4f}+-{std_frames:.4f})"
    )
    text = "\n".join(lines)
    (out_dir / "report.txt").write_text(text + f"\nwall time: {wall:.1f}s\n")
    print(text)
    print(f"wall time: {wall:.1f}s -> {out_dir / 'metrics.csv'}")
    return 0


ABLATE_DEFAULTS = {
    "data": "",
    "out": "ablate_out",
    "optimizer": "adam",
    "arms": "VIS,FULL",
    "seeds": "0",
    "epochs": 10,
    "lr": 1e-3,
    "jobs": 1,
    "seed": 0,
    "families": "",
    "per-family": 0,
    "image-size": 64,
    "deviation": 1.0,
}


def cmd_ablate(args):
    cfg = _merge_config(args, ABLATE_DEFAULTS)
    arms = [a.strip() for a in cfg["arms"].split(",") if a.strip()]
    seeds = [int(s) for s in str(cfg["seeds"]).split(",") if str(s).strip()]
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _ensure_dataset(cfg, out_dir)
    resolved = dict(cfg)
    resolved["data"] = str(manifest)
    _write_run_txt(out_dir, resolved)

    first = ev.load_samples(synth.load_manifest(manifest)[:1])
    base = _model_cfg({**cfg, "arm": arms[0], "seed": seeds[0]}, first)
    reports = ev.ablation_grid(manifest, base, arms, seeds, cfg["epochs"], jobs=cfg["jobs"])

    rows = []
    for rep in reports:
        rows.append(
            {
                "arm": rep.arm,
                "seed": rep.seed,
                "tip_dice": repr(rep.tip_dice),
                "tip_iou": repr(rep.tip_iou),
                "dice_base": repr(rep.class_mean("dice_per_class", 1)),
                "dice_wrist": repr(rep.class_mean("dice_per_class", 2)),
            }
        )
    with open(out_dir / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    lines = [f"{'arm':<13} {'seed':<5} {'tip dice':<10} {'tip iou':<10}"]
    for rep in reports:
        lines.append(f"{rep.arm:<13} {rep.seed:<5} {rep.tip_dice:<10.4f} {rep.tip_iou:<10.4f}")
    by_arm = {}
    for rep in reports:
        by_arm.setdefault(rep.arm, []).append(rep.tip_dice)
    lines.append("mean over seeds:")
    for arm in arms:
        lines.append(f"  {arm:<13} tip dice {float(np.mean(by_arm[arm])):.4f}")
    text = "\n".join(lines)
    (out_dir / "ablation.txt").write_text(text + "\n")
    print(text)
    return 0


KERNEL_BENCH_DEFAULTS = {
    "out": "kernel_bench_out",
    "repeats": 5,
    "seed": 0,
}


def cmd_kernel_bench(args):
    """Compare the numba and numpy kernel backends on the hot paths."""
    cfg = _merge_config(args, KERNEL_BENCH_DEFAULTS)
    out_dir = Path(cfg["out"])
    _write_run_txt(out_dir, cfg)
    rng = np.random.default_rng(cfg["seed"])

    from .render import CameraIntrinsics

    intr = CameraIntrinsics(800.0, 800.0, 480.0, 480.0, 960, 960, 1.0)
    from .shapes import chain_poses, make_dense_instrument_mesh
    from .kinematics import Pose7, quat_from_axis_angle, quat_multiply
    from .render import pose_parts_to_camera

    mesh = make_dense_instrument_mesh()
    q = quat_multiply(quat_from_axis_angle([0, 1, 0], np.pi / 2), quat_from_axis_angle([0, 0, 1], 0.2))
    poses = chain_poses(Pose7(np.array([-55.0, -6.0, 130.0]), q), 0.35, 0.25, 0.15)
    posed = pose_parts_to_camera(mesh, poses, Pose7.identity())

    x = rng.normal(size=(24, 32, 32))
    w = rng.normal(size=(32, 24, 3, 3))
    g = rng.normal(size=(32, 32, 32))

    rows = []
    for name, impl in kernels.backend_pairs():
        from . import render as render_mod

        times = {}
        # rasterize via the full path with this backend's fill kernel
        orig = kernels.raster_fill
        kernels.raster_fill = impl["raster_fill"]
        try:
            render_mod.rasterize(posed, intr)  # warm (JIT, caches)
            samples = []
            for _ in range(cfg["repeats"]):
                t0 = time.perf_counter()
                render_mod.rasterize(posed, intr)
                samples.append(time.perf_counter() - t0)
            times["rasterize_960"] = float(np.median(samples)) * 1000
        finally:
            kernels.raster_fill = orig

        for label, fn in (
            ("conv_fwd", lambda: impl["conv2d_forward"](x, w, 1, 1)),
            ("conv_igrad", lambda: impl["conv2d_input_grad"](g, w, x.shape, 1, 1)),
            ("conv_wgrad", lambda: impl["conv2d_weight_grad"](g, x, w.shape, 1, 1)),
        ):
            fn()
            samples = []
            for _ in range(cfg["repeats"]):
                t0 = time.perf_counter()
                fn()
                samples.append(time.perf_counter() - t0)
            times[label] = float(np.median(samples)) * 1000
        rows.append((name, times))

    with open(out_dir / "kernel_bench.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["backend", "kernel", "median_ms"])
        for name, times in rows:
            for label, ms in times.items():
                writer.writerow([name, label, f"{ms:.4f}"])
    lines = [f"active backend: {kernels.BACKEND}"]
    for name, times in rows:
        detail = ", ".join(f"{k} {v:.2f} ms" for k, v in times.items())
        lines.append(f"{name}: {detail}")
    text = "\n".join(lines)
    (out_dir / "kernel_bench.txt").write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="tipseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, defaults, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file (flags override)")
        for key, template in defaults.items():
            flag = f"--{key}"
            if isinstance(template, bool):
                p.add_argument(flag, action="store_const", const=True, default=None)
            elif isinstance(template, int):
                p.add_argument(flag, type=int, default=None)
            elif isinstance(template, float):
                p.add_argument(flag, type=float, default=None)
            else:
                p.add_argument(flag, default=None)
        p.set_defaults(func=fn, defaults=defaults)

    add("render", cmd_render, RENDER_DEFAULTS, "render a silhouette mask from mesh + kinematics")
    add("benchmark", cmd_benchmark, BENCH_DEFAULTS, "time render configs against the s1:r1 reference")
    add("gen-data", cmd_gen_data, GEN_DEFAULTS, "generate the synthetic multi-family dataset")
    add("train", cmd_train, TRAIN_DEFAULTS, "train one arm on a dataset manifest")
    add("eval", cmd_eval, EVAL_DEFAULTS, "evaluate saved weights on a dataset")
    add("crossval", cmd_crossval, CROSSVAL_DEFAULTS, "leave-one-family-out cross-validation")
    add("ablate", cmd_ablate, ABLATE_DEFAULTS, "run the ablation grid over arms and seeds")
    add("kernel-bench", cmd_kernel_bench, KERNEL_BENCH_DEFAULTS, "compare numba and numpy kernel backends")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AssertionError, FloatingPointError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
