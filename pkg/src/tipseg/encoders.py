"""Toy convolutional encoders, channel partitioning with GAP node init,
per-partition deep-supervision heads, and the mask decoder.

The encoder is 3 stride-2 stages followed by 2 stride-1 stages (all 3x3,
zero padded, ReLU). The decoder runs 5 upsample+conv stages: a stage doubles
resolution while below the target and a final nearest resize reconciles any
remainder; a target unreachable by five doublings is rejected when the plan
is built.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    feature_channels: int = 48
    downsample_factor: int = 8

    def __post_init__(self):
        if self.feature_channels % 3:
            raise ValueError(
                f"feature_channels must be divisible by 3 (one block per part), got {self.feature_channels}"
            )
        if self.downsample_factor != 8:
            raise ValueError("the 3 stride-2 stages fix the downsample factor at 8")

    @property
    def node_dim(self):
        return self.feature_channels // 3


def encoder_stages(cfg):
    """(cin, cout, stride) per stage: 3 stride-2 then 2 stride-1."""
    c = cfg.feature_channels
    ramp = [max(c // 4, 4), max(c // 2, 8), c, c, c]
    strides = [2, 2, 2, 1, 1]
    stages = []
    cin = cfg.in_channels
    for cout, stride in zip(ramp, strides):
        stages.append((cin, cout, stride))
        cin = cout
    return stages


def _conv_init(rng, cout, cin, k):
    # He-gain uniform: plain +-1/sqrt(fan_in) collapses this ReLU stack
    # (activations shrink ~6x per layer and the logits never leave ~1e-6)
    bound = np.sqrt(6.0 / (cin * k * k))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    return w, np.zeros(cout)


def init_encoder_params(cfg, rng, prefix):
    params = {}
    for s, (cin, cout, _) in enumerate(encoder_stages(cfg)):
        w, b = _conv_init(rng, cout, cin, 3)
        params[f"{prefix}.conv{s}.w"] = ad.Tensor(w, requires_grad=True)
        params[f"{prefix}.conv{s}.b"] = ad.Tensor(b, requires_grad=True)
    return params


def encode(x, cfg, params, prefix):
    """(in_channels, H, W) -> (C, H/8, W/8); deterministic given weights."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    c, h, w = x.shape
    if c != cfg.in_channels:
        raise ValueError(f"encoder expects {cfg.in_channels} input channels, got {c}")
    if h % cfg.downsample_factor or w % cfg.downsample_factor:
        raise ValueError(
            f"input {h}x{w} not divisible by downsample factor {cfg.downsample_factor}"
        )
    y = x
    for s, (_, _, stride) in enumerate(encoder_stages(cfg)):
        y = ad.conv2d(y, params[f"{prefix}.conv{s}.w"], params[f"{prefix}.conv{s}.b"], stride=stride, pad=1)
        # leaky so a bad early step cannot permanently kill a stage
        y = ad.leaky_relu(y)
    return y


def partition_channels(F, num_parts=3):
    """Contiguous channel blocks, one per part, in (base, wrist, tip) order."""
    c = F.shape[0]
    block = c // num_parts
    return [ad.narrow(F, 0, k * block, block) for k in range(num_parts)]


def partition_and_pool(F):
    """GAP each of the 3 channel blocks to a node vector of length C/3."""
    return [ad.mean_pool_spatial(p) for p in partition_channels(F)]


def init_ds_params(cfg, rng, prefix):
    params = {}
    block = cfg.node_dim
    for k in range(3):
        w, b = _conv_init(rng, 1, block, 1)
        params[f"{prefix}.ds{k}.w"] = ad.Tensor(w, requires_grad=True)
        params[f"{prefix}.ds{k}.b"] = ad.Tensor(b, requires_grad=True)
    return params


def deep_supervision_heads(F, params, prefix):
    """Per-part 1x1-conv logit maps (1, h, w) from each channel partition."""
    heads = []
    for k, part in enumerate(partition_channels(F)):
        heads.append(
            ad.conv2d(part, params[f"{prefix}.ds{k}.w"], params[f"{prefix}.ds{k}.b"], stride=1, pad=0)
        )
    return heads


@dataclass(frozen=True)
class DecoderPlan:
    """Five upsample+conv stages from (C, h, w) to 4-class logits at (H, W)."""

    in_channels: int
    feature_hw: tuple
    target_hw: tuple
    stage_channels: tuple = field(default=None)
    stage_scales: tuple = field(default=None)

    def __post_init__(self):
        c = self.in_channels
        h, w = self.feature_hw
        H, W = self.target_hw
        if H > h * 32 or W > w * 32:
            raise ValueError(
                f"target {H}x{W} not reachable from {h}x{w} by 5 doublings plus resize"
            )
        doublings = 0
        ch, cw = h, w
        while ch < H or cw < W:
            doublings += 1
            ch, cw = ch * 2, cw * 2
        # upsample in the last stages: early stages run at low resolution,
        # which is where nearly all of the decoder compute would otherwise go
        scales = [1] * (5 - doublings) + [2] * doublings
        chans = [max(2 * c // 3, 8), max(c // 2, 8), max(c // 3, 8), max(c // 4, 6), max(c // 6, 6)]
        object.__setattr__(self, "stage_channels", tuple(chans))
        object.__setattr__(self, "stage_scales", tuple(scales))


def init_decoder_params(plan, rng, prefix):
    params = {}
    cin = plan.in_channels
    for s, cout in enumerate(plan.stage_channels):
        w, b = _conv_init(rng, cout, cin, 3)
        params[f"{prefix}.up{s}.w"] = ad.Tensor(w, requires_grad=True)
        params[f"{prefix}.up{s}.b"] = ad.Tensor(b, requires_grad=True)
        cin = cout
    w, b = _conv_init(rng, 4, cin, 1)
    # class-prior bias: start the background logit near its pixel share so
    # early cross-entropy does not entrench an all-background solution
    b = b.copy()
    b[0] = 2.5
    params[f"{prefix}.head.w"] = ad.Tensor(w, requires_grad=True)
    params[f"{prefix}.head.b"] = ad.Tensor(b, requires_grad=True)
    return params


def decode(F, plan, params, prefix):
    """Fused feature map -> per-class logits (4, H, W)."""
    y = F
    for s, scale in enumerate(plan.stage_scales):
        y = ad.upsample_nearest(y, scale)
        y = ad.conv2d(y, params[f"{prefix}.up{s}.w"], params[f"{prefix}.up{s}.b"], stride=1, pad=1)
        y = ad.leaky_relu(y)
    H, W = plan.target_hw
    y = ad.resize_nearest(y, H, W)
    return ad.conv2d(y, params[f"{prefix}.head.w"], params[f"{prefix}.head.b"], stride=1, pad=0)
