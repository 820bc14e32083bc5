"""Dual-branch model assembly, training steps, and prediction.

Arms (the ablation grid): VIS is the vision-only baseline; VIS+GCN adds
graph message passing on the visual nodes; VIS+KIN adds the kinematics
branch without graphs; VIS+KIN+GCN runs graphs on both branches; FULL adds
the node-wise contrastive loss. In dual-branch arms the two branches' node
states are summed per node before the channel attention, so the rendered
prior influences inference, not only training.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import encoders, graph, losses
from .render import LabelMask

ARMS = ("VIS", "VIS+GCN", "VIS+KIN", "VIS+KIN+GCN", "FULL")
GRAD_CLIP_NORM = 1.0


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    feature_channels: int = 48
    arm: str = "FULL"
    gcn_layers: int = 3
    optimizer: str = "adam"  # adam | momentum
    lr: float = 1e-3
    momentum: float = 0.9
    lr_decay: float = 0.8
    decay_every: int = 5
    seed: int = 0
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}; expected one of {ARMS}")
        if self.optimizer not in ("momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by the encoder downsample (8)")

    @property
    def uses_kin(self):
        return self.arm in ("VIS+KIN", "VIS+KIN+GCN", "FULL")

    @property
    def uses_gcn(self):
        return self.arm in ("VIS+GCN", "VIS+KIN+GCN", "FULL")

    @property
    def uses_contrast(self):
        return self.arm == "FULL"

    @property
    def node_dim(self):
        return self.feature_channels // 3

    def vis_encoder(self):
        return encoders.EncoderConfig(3, self.feature_channels)

    def kin_encoder(self):
        return encoders.EncoderConfig(1, self.feature_channels)

    def decoder_plan(self):
        h = self.image_size // 8
        return encoders.DecoderPlan(self.feature_channels, (h, h), (self.image_size, self.image_size))


@dataclass
class ForwardOutput:
    logits: ad.Tensor  # (4, H, W)
    vis_nodes: ad.Tensor  # (3, d)
    kin_nodes: ad.Tensor | None
    ds_logits: list  # 3 maps of (1, h, w)


def init_weights(cfg):
    """Seeded parameter dict; only the components the arm uses exist."""
    seed = cfg.seed
    params = {}
    params.update(encoders.init_encoder_params(cfg.vis_encoder(), np.random.default_rng([seed, 0]), "vis_enc"))
    params.update(encoders.init_ds_params(cfg.vis_encoder(), np.random.default_rng([seed, 1]), "ds"))
    params.update(encoders.init_decoder_params(cfg.decoder_plan(), np.random.default_rng([seed, 2]), "dec"))
    if cfg.uses_gcn:
        params.update(graph.init_gcn_params(cfg.node_dim, cfg.gcn_layers, np.random.default_rng([seed, 3]), "vis_gcn"))
    if cfg.uses_kin:
        params.update(encoders.init_encoder_params(cfg.kin_encoder(), np.random.default_rng([seed, 4]), "kin_enc"))
        if cfg.uses_gcn:
            params.update(graph.init_gcn_params(cfg.node_dim, cfg.gcn_layers, np.random.default_rng([seed, 5]), "kin_gcn"))
    return params


def _standardized(x):
    """Per-image, per-channel standardization; removes the global
    brightness/cast component that varies across scene families."""
    data = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    mean = data.mean(axis=(1, 2), keepdims=True)
    std = data.std(axis=(1, 2), keepdims=True)
    return ad.Tensor((data - mean) / np.maximum(std, 1e-3))


def _prior_scaled(x):
    data = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    return ad.Tensor(data - 0.5)


def _gcn_weights(params, prefix, layers):
    return [params[f"{prefix}.gcn{l}.w"] for l in range(layers)]


def forward(image, rendered_mask, cfg, params):
    """Run the arm's forward pass; see the module docstring for the wiring."""
    if cfg.uses_kin and rendered_mask is None:
        raise ValueError(f"arm {cfg.arm} needs a rendered kinematics mask")
    if not cfg.uses_kin and rendered_mask is not None:
        raise ValueError(f"arm {cfg.arm} does not take a kinematics input")

    part_graph = graph.build_graph()
    image = _standardized(image)
    F_vis = encoders.encode(image, cfg.vis_encoder(), params, "vis_enc")
    ds_logits = encoders.deep_supervision_heads(F_vis, params, "ds")
    vis_nodes = ad.stack_vectors(encoders.partition_and_pool(F_vis))
    if cfg.uses_gcn:
        vis_nodes = graph.gcn_forward(part_graph, vis_nodes, _gcn_weights(params, "vis_gcn", cfg.gcn_layers))

    kin_nodes = None
    if cfg.uses_kin:
        F_kin = encoders.encode(_prior_scaled(rendered_mask), cfg.kin_encoder(), params, "kin_enc")
        kin_nodes = ad.stack_vectors(encoders.partition_and_pool(F_kin))
        if cfg.uses_gcn:
            kin_nodes = graph.gcn_forward(part_graph, kin_nodes, _gcn_weights(params, "kin_gcn", cfg.gcn_layers))

    att_nodes = vis_nodes if kin_nodes is None else ad.add(vis_nodes, kin_nodes)
    fused = graph.fuse_attention(F_vis, att_nodes)
    logits = encoders.decode(fused, cfg.decoder_plan(), params, "dec")
    return ForwardOutput(logits, vis_nodes, kin_nodes, ds_logits)


def compute_losses(out, target, cfg):
    """Loss breakdown tensors: seg, ds, nc (None off the FULL arm), total."""
    seg = losses.ce_dice_loss(out.logits, target)
    ds = losses.deep_supervision_loss(out.ds_logits, target)
    nc = None
    if cfg.uses_contrast:
        nc = losses.node_contrastive_loss(
            out.vis_nodes, out.kin_nodes, cfg.loss.tau, cfg.loss.normalize_embeddings
        )
    total = losses.total_loss(seg, nc, ds, cfg.loss)
    return {"seg": seg, "nc": nc, "ds": ds, "total": total}


def train_step(batch, cfg, params, opt_state, lr):
    """One optimizer step on a (image, rendered, target) sample.

    Returns the loss breakdown as floats; raises on a non-finite total with
    the breakdown in the message.
    """
    image, rendered, target = batch
    out = forward(image, rendered if cfg.uses_kin else None, cfg, params)
    terms = compute_losses(out, target, cfg)
    breakdown = {
        k: (float(v.data) if v is not None else 0.0) for k, v in terms.items()
    }
    if not np.isfinite(breakdown["total"]):
        raise FloatingPointError(f"non-finite training loss: {breakdown}")
    total = terms["total"]
    total.backward()
    # global-norm clip: one bad step with momentum can kill the whole stack
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    scale = 1.0 if sq <= GRAD_CLIP_NORM**2 else GRAD_CLIP_NORM / np.sqrt(sq)
    if cfg.optimizer == "adam":
        _adam_update(cfg, params, opt_state, lr, scale)
    else:
        _momentum_update(cfg, params, opt_state, lr, scale)
    return breakdown


def _momentum_update(cfg, params, opt_state, lr, scale):
    for name, p in params.items():
        if p.grad is None:
            continue
        v = opt_state.setdefault(name, np.zeros_like(p.data))
        v *= cfg.momentum
        v -= lr * scale * p.grad
        p.data += v
        p.grad = None


def _adam_update(cfg, params, opt_state, lr, scale, b1=0.9, b2=0.999, eps=1e-8):
    t = opt_state.get("_step", 0) + 1
    opt_state["_step"] = t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = scale * p.grad
        st = opt_state.setdefault(name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        mhat = st["m"] / (1 - b1**t)
        vhat = st["v"] / (1 - b2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = None


def lr_at_epoch(cfg, epoch):
    """Step decay: multiply by lr_decay every decay_every epochs."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)


def train(samples, cfg, epochs, params=None, callback=None):
    """Train over a list of (image, rendered, target) samples.

    Sample order reshuffles every epoch from the config seed, so identical
    seeds give identical weight trajectories.
    """
    if params is None:
        params = init_weights(cfg)
    opt_state = {}
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([cfg.seed, 100 + epoch]).permutation(len(samples))
        lr = lr_at_epoch(cfg, epoch)
        sums = {"seg": 0.0, "nc": 0.0, "ds": 0.0, "total": 0.0}
        for idx in order:
            breakdown = train_step(samples[idx], cfg, params, opt_state, lr)
            for k in sums:
                sums[k] += breakdown[k]
        means = {k: v / max(len(samples), 1) for k, v in sums.items()}
        means["epoch"] = epoch
        history.append(means)
        if callback is not None:
            callback(epoch, means, params)
    return params, history


def predict(image, rendered_mask, cfg, params):
    """Per-pixel argmax label mask; ties resolve to the lower class index."""
    out = forward(image, rendered_mask if cfg.uses_kin else None, cfg, params)
    return LabelMask(np.argmax(out.logits.data, axis=0).astype(np.uint8))


def predict_timed(samples, cfg, params):
    """Predictions plus the median per-frame forward time in seconds."""
    masks = []
    times = []
    for image, rendered, _ in samples:
        t0 = time.perf_counter()
        masks.append(predict(image, rendered, cfg, params))
        times.append(time.perf_counter() - t0)
    return masks, float(np.median(times)) if times else 0.0


def save_weights(path, params):
    from .io import save_checkpoint

    save_checkpoint(path, {k: v.data for k, v in sorted(params.items())})


def load_weights(path):
    from .io import load_checkpoint

    return {k: ad.Tensor(v, requires_grad=True) for k, v in load_checkpoint(path).items()}
