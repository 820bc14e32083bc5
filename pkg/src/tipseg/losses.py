"""Training objectives: CEDice segmentation loss, per-part binary deep
supervision, the cross-modal node-wise contrastive loss, and their weighted
combination."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

NUM_CLASSES = 4
FOREGROUND_CLASSES = (1, 2, 3)
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0  # contrastive weight
    lambda2: float = 0.05  # deep-supervision weight
    tau: float = 0.1
    normalize_embeddings: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


def _target_grid(target):
    grid = target.labels if hasattr(target, "labels") else np.asarray(target)
    grid = grid.astype(np.int64)
    if grid.min() < 0 or grid.max() >= NUM_CLASSES:
        raise ValueError(f"target labels must be in 0..{NUM_CLASSES - 1}")
    return grid


def one_hot(grid, num_classes=NUM_CLASSES):
    return (np.arange(num_classes)[:, None, None] == grid[None]).astype(np.float64)


def ce_dice_loss(logits, target):
    """Mean pixel cross-entropy plus (1 - mean soft Dice over the 3 parts)."""
    grid = _target_grid(target)
    if logits.shape != (NUM_CLASSES,) + grid.shape:
        raise ValueError(f"logits shape {logits.shape} does not match target {grid.shape}")
    onehot = ad.Tensor(one_hot(grid))
    logp = ad.log_softmax(logits, 0)
    ce = -1.0 * ad.mean(ad.tsum(ad.mul(onehot, logp), axes=(0,)))

    probs = ad.softmax(logits, 0)
    dice_terms = []
    for k in FOREGROUND_CLASSES:
        pk = ad.narrow(probs, 0, k, 1)
        gk = ad.narrow(onehot, 0, k, 1)
        inter = ad.tsum(ad.mul(pk, gk))
        dice = ad.div(2.0 * inter + DICE_SMOOTH, ad.tsum(pk) + ad.tsum(gk) + DICE_SMOOTH)
        dice_terms.append(dice)
    mean_dice = (dice_terms[0] + dice_terms[1] + dice_terms[2]) * (1.0 / 3.0)
    return ce + (1.0 - mean_dice)


def majority_pool_binary(grid, part, out_h, out_w):
    """Downsample (mask == part) by block majority; exact half ties are positive."""
    h, w = grid.shape
    if h % out_h or w % out_w:
        raise ValueError(f"target {h}x{w} not divisible by head {out_h}x{out_w}")
    bh, bw = h // out_h, w // out_w
    hits = (grid == part).reshape(out_h, bh, out_w, bw).sum(axis=(1, 3))
    return (2 * hits >= bh * bw).astype(np.float64)


def binary_ce_dice(logits, target01):
    """Binary CEDice of a (h, w) logit map against a {0,1} grid."""
    t = ad.Tensor(target01)
    bce = ad.mean(ad.softplus(logits) - ad.mul(t, logits))
    p = ad.sigmoid(logits)
    dice = ad.div(
        2.0 * ad.tsum(ad.mul(p, t)) + DICE_SMOOTH, ad.tsum(p) + ad.tsum(t) + DICE_SMOOTH
    )
    return bce + (1.0 - dice)


def deep_supervision_loss(head_logits, target):
    """Mean over the 3 parts of binary CEDice at head resolution."""
    grid = _target_grid(target)
    if len(head_logits) != 3:
        raise ValueError(f"expected 3 per-part heads, got {len(head_logits)}")
    terms = []
    for k, head in enumerate(head_logits, start=1):
        _, hh, hw = head.shape
        t = majority_pool_binary(grid, k, hh, hw)
        terms.append(binary_ce_dice(ad.reshape(head, (hh, hw)), t))
    return (terms[0] + terms[1] + terms[2]) * (1.0 / 3.0)


def _normalized_rows(H):
    rows = []
    for i in range(H.shape[0]):
        row = ad.reshape(ad.narrow(H, 0, i, 1), (H.shape[1],))
        norm = ad.sqrt(ad.tsum(ad.mul(row, row)) + 1e-12)
        rows.append(ad.div(row, norm))
    return rows


def node_contrastive_loss(H_vis, H_kin, tau, normalize=False):
    """InfoNCE over the 6 nodes of both graphs.

    Every node anchors once; its positive is the same-index node of the
    other graph, its negatives are that graph's two other nodes. Computed
    with log-sum-exp so saturated dots stay finite.
    """
    if H_vis.shape != H_kin.shape or H_vis.data.ndim != 2:
        raise ValueError(f"embedding shapes differ: {H_vis.shape} vs {H_kin.shape}")
    if not (np.all(np.isfinite(H_vis.data)) and np.all(np.isfinite(H_kin.data))):
        raise ValueError("contrastive embeddings must be finite")
    n = H_vis.shape[0]
    if normalize:
        vis_rows = _normalized_rows(H_vis)
        kin_rows = _normalized_rows(H_kin)
    else:
        vis_rows = [ad.reshape(ad.narrow(H_vis, 0, i, 1), (H_vis.shape[1],)) for i in range(n)]
        kin_rows = [ad.reshape(ad.narrow(H_kin, 0, i, 1), (H_kin.shape[1],)) for i in range(n)]

    inv_tau = 1.0 / tau
    losses = []
    for anchors, others in ((vis_rows, kin_rows), (kin_rows, vis_rows)):
        for i in range(n):
            pos = ad.dot(anchors[i], others[i]) * inv_tau
            logits = [pos]
            logits.extend(
                ad.dot(anchors[i], others[j]) * inv_tau for j in range(n) if j != i
            )
            stacked = ad.concat([ad.reshape(v, (1,)) for v in logits], axis=0)
            losses.append(ad.logsumexp(stacked, 0) - pos)
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total * (1.0 / len(losses))


def total_loss(seg, nc, ds, cfg):
    """L = seg + lambda1 * nc + lambda2 * ds; nc may be None for non-CL arms."""
    out = seg + cfg.lambda2 * ds
    if nc is not None:
        out = out + cfg.lambda1 * nc
    return out
