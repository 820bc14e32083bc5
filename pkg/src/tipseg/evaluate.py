"""Segmentation metrics and the leave-one-family-out evaluation harness."""

import multiprocessing
import time
from dataclasses import dataclass, replace

import numpy as np

from . import io as tio
from . import model as M
from . import synth
from .kinematics import load_kinematics_csv
from .render import RenderConfig

CLASS_NAMES = {0: "background", 1: "base", 2: "wrist", 3: "tip"}


def _counts(pred, gt, class_id):
    pred_grid = pred.labels if hasattr(pred, "labels") else np.asarray(pred)
    gt_grid = gt.labels if hasattr(gt, "labels") else np.asarray(gt)
    if pred_grid.shape != gt_grid.shape:
        raise ValueError(f"mask sizes differ: {pred_grid.shape} vs {gt_grid.shape}")
    p = pred_grid == class_id
    g = gt_grid == class_id
    inter = int(np.logical_and(p, g).sum())
    return inter, int(p.sum()), int(g.sum())


def dice(pred, gt, class_id):
    """2|P∩G| / (|P|+|G|); empty-vs-empty is defined as 1.0."""
    inter, np_, ng = _counts(pred, gt, class_id)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred, gt, class_id):
    """|P∩G| / |P∪G|; empty-vs-empty is defined as 1.0."""
    inter, np_, ng = _counts(pred, gt, class_id)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


def load_samples(records, synth_cfg=None, prior_cfg=None):
    """Materialize manifest records into model-ready (image, prior, target)
    triples; the kinematics prior mask is rendered here, once per record."""
    prior_cfg = prior_cfg or RenderConfig(scale=2, decimation_rate=10)
    mesh = synth.instrument_mesh()
    from .render import render_parts

    samples = []
    for rec in records:
        rgb = tio.read_ppm(rec["image"])
        image = np.transpose(rgb, (2, 0, 1)).astype(np.float64) / 255.0
        target = tio.read_pgm(rec["mask"])
        stream = load_kinematics_csv(rec["kin"])
        kin = stream.samples[0]
        # intrinsics follow the stored frame size, not a global default
        cfg = synth_cfg or synth.SynthConfig(image_size=rgb.shape[0])
        intr = cfg.intrinsics()
        prior = render_parts(mesh, kin.instruments[0], kin.camera, intr, prior_cfg)
        rendered = prior.labels[None].astype(np.float64) / 3.0
        samples.append(
            {
                "family": rec["family"],
                "seed": rec["seed"],
                "image": image,
                "rendered": rendered,
                "target": target,
            }
        )
    return samples


@dataclass
class FoldReport:
    family: str
    arm: str
    seed: int
    n_test: int
    dice_per_class: dict  # class -> (mean, std) over frames
    iou_per_class: dict
    frame_tip_dice: np.ndarray
    train_seconds: float
    train_fps: float
    infer_fps: float

    @property
    def tip_dice(self):
        return self.dice_per_class[3][0]

    @property
    def tip_iou(self):
        return self.iou_per_class[3][0]


@dataclass
class CrossvalReport:
    arm: str
    seed: int
    folds: list

    @property
    def tip_dice(self):
        """Aggregate: unweighted mean of fold means."""
        return float(np.mean([f.tip_dice for f in self.folds]))

    @property
    def tip_iou(self):
        return float(np.mean([f.tip_iou for f in self.folds]))

    def tip_dice_fold_std(self):
        return float(np.std([f.tip_dice for f in self.folds]))

    def tip_dice_frame_stats(self):
        frames = np.concatenate([f.frame_tip_dice for f in self.folds])
        return float(frames.mean()), float(frames.std())

    def class_mean(self, metric, class_id):
        per = [getattr(f, metric)[class_id][0] for f in self.folds]
        return float(np.mean(per))


def _run_fold(samples, test_family, cfg, epochs):
    train_samples = [s for s in samples if s["family"] != test_family]
    test_samples = [s for s in samples if s["family"] == test_family]
    if not test_samples:
        raise ValueError(f"family {test_family!r} has no samples")
    triples = [(s["image"], s["rendered"], s["target"]) for s in train_samples]
    t0 = time.perf_counter()
    params, _ = M.train(triples, cfg, epochs)
    train_seconds = time.perf_counter() - t0
    steps = len(triples) * epochs

    test_triples = [(s["image"], s["rendered"], s["target"]) for s in test_samples]
    masks, median_infer = M.predict_timed(test_triples, cfg, params)

    dice_pc = {}
    iou_pc = {}
    frame_tip = None
    for k in CLASS_NAMES:
        dvals = np.array([dice(m, s["target"], k) for m, s in zip(masks, test_samples)])
        ivals = np.array([iou(m, s["target"], k) for m, s in zip(masks, test_samples)])
        dice_pc[k] = (float(dvals.mean()), float(dvals.std()))
        iou_pc[k] = (float(ivals.mean()), float(ivals.std()))
        if k == 3:
            frame_tip = dvals
    return FoldReport(
        family=test_family,
        arm=cfg.arm,
        seed=cfg.seed,
        n_test=len(test_samples),
        dice_per_class=dice_pc,
        iou_per_class=iou_pc,
        frame_tip_dice=frame_tip,
        train_seconds=train_seconds,
        train_fps=steps / train_seconds if train_seconds > 0 else float("inf"),
        infer_fps=1.0 / median_infer if median_infer > 0 else float("inf"),
    )


def _fold_worker(args):
    manifest, test_family, cfg_kwargs, epochs = args
    from . import evaluate as ev

    records = synth.load_manifest(manifest)
    samples = ev.load_samples(records)
    cfg = M.ModelConfig(**cfg_kwargs)
    return ev._run_fold(samples, test_family, cfg, epochs)


def _cfg_kwargs(cfg):
    return {
        "image_size": cfg.image_size,
        "feature_channels": cfg.feature_channels,
        "arm": cfg.arm,
        "gcn_layers": cfg.gcn_layers,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "lr_decay": cfg.lr_decay,
        "decay_every": cfg.decay_every,
        "seed": cfg.seed,
        "loss": cfg.loss,
    }


def crossval(manifest, cfg, epochs, jobs=1, samples=None, families=None):
    """Leave-one-family-out: train on all other families, test on each family
    once. Deterministic for a fixed config seed regardless of jobs."""
    records = synth.load_manifest(manifest)
    fams = families or sorted({r["family"] for r in records})
    if len(fams) < 2:
        raise ValueError("cross-validation needs at least 2 families")
    if jobs > 1:
        # fork keeps the warm JIT state; the numba threading layer is pinned
        # to the fork-safe workqueue backend in kernels.py
        ctx = multiprocessing.get_context("fork")
        args = [(str(manifest), fam, _cfg_kwargs(cfg), epochs) for fam in fams]
        with ctx.Pool(jobs) as pool:
            folds = pool.map(_fold_worker, args)
    else:
        if samples is None:
            samples = load_samples(records)
        folds = [_run_fold(samples, fam, cfg, epochs) for fam in fams]
    return CrossvalReport(cfg.arm, cfg.seed, folds)


def ablation_grid(manifest, base_cfg, arms, seeds, epochs, jobs=1):
    """Run crossval per (arm, seed) with shared data and fold splits."""
    unknown = set(arms) - set(M.ARMS)
    if unknown:
        raise ValueError(f"unknown arms: {sorted(unknown)}")
    reports = []
    samples = None
    if jobs <= 1:
        samples = load_samples(synth.load_manifest(manifest))
    for arm in arms:
        for seed in seeds:
            cfg = replace(base_cfg, arm=arm, seed=seed)
            reports.append(crossval(manifest, cfg, epochs, jobs=jobs, samples=samples))
    return reports


def crossval_csv_rows(report):
    """Deterministic metric rows (no timing fields; timings go elsewhere)."""
    rows = []
    for fold in report.folds:
        row = {
            "arm": report.arm,
            "seed": report.seed,
            "fold": fold.family,
            "n_test": fold.n_test,
        }
        for k, name in CLASS_NAMES.items():
            row[f"dice_{name}"] = repr(fold.dice_per_class[k][0])
            row[f"dice_{name}_std"] = repr(fold.dice_per_class[k][1])
            row[f"iou_{name}"] = repr(fold.iou_per_class[k][0])
            row[f"iou_{name}_std"] = repr(fold.iou_per_class[k][1])
        rows.append(row)
    agg = {"arm": report.arm, "seed": report.seed, "fold": "MEAN", "n_test": sum(f.n_test for f in report.folds)}
    for k, name in CLASS_NAMES.items():
        agg[f"dice_{name}"] = repr(report.class_mean("dice_per_class", k))
        agg[f"dice_{name}_std"] = repr(float(np.std([f.dice_per_class[k][0] for f in report.folds])))
        agg[f"iou_{name}"] = repr(report.class_mean("iou_per_class", k))
        agg[f"iou_{name}_std"] = repr(float(np.std([f.iou_per_class[k][0] for f in report.folds])))
    rows.append(agg)
    return rows
