"""Hot numeric kernels with two interchangeable backends.

The rasterizer fill and the conv2d forward/backward loops dominate runtime.
Both exist as numba @njit kernels and as pure-numpy implementations; the
active backend is chosen once at import time from the TIPSEG_KERNELS
environment variable ("numba" or "numpy", default numba when importable).

Backend contract: the rasterizer backends are bit-identical (same IEEE
operations in the same per-pixel order); the conv backends agree to float64
rounding but may differ in the last bits because summation order differs.
Within one backend every kernel is deterministic, including the parallel
rasterizer (each output row is owned by exactly one thread).
"""

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    # workqueue is fork-safe, which matters for fold-parallel evaluation
    numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_env = os.environ.get("TIPSEG_KERNELS", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"TIPSEG_KERNELS must be 'numba' or 'numpy', got {_env!r}")
USE_NUMBA = HAVE_NUMBA and _env != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Rasterizer fill
#
# Inputs are per-triangle screen-space vertices (orientation already
# normalized to positive doubled area), inverse depths, labels and the
# doubled area. Coverage uses pixel centers (u+0.5, v+0.5) with the top-left
# rule on w == 0 boundaries; nearer inverse depth wins, exact depth ties go
# to the earlier triangle.
# ---------------------------------------------------------------------------


def _raster_fill_numpy(xs, ys, iz, labels, area2, width, height):
    out = np.zeros((height, width), dtype=np.uint8)
    zbuf = np.zeros((height, width), dtype=np.float64)  # inverse depth, 0 = empty
    px = np.arange(width, dtype=np.float64) + 0.5
    for t in range(xs.shape[0]):
        x0, x1, x2 = xs[t]
        y0, y1, y2 = ys[t]
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), width - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        # top-left acceptance per edge; edge k runs from vertex k+1 to k+2
        tl0 = _top_left(x1, y1, x2, y2)
        tl1 = _top_left(x2, y2, x0, y0)
        tl2 = _top_left(x0, y0, x1, y1)
        cols = px[xmin : xmax + 1]
        for row in range(ymin, ymax + 1):
            py = row + 0.5
            w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (cols - x1)
            w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (cols - x2)
            w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (cols - x0)
            cov = (
                ((w0 > 0.0) | ((w0 == 0.0) & tl0))
                & ((w1 > 0.0) | ((w1 == 0.0) & tl1))
                & ((w2 > 0.0) | ((w2 == 0.0) & tl2))
            )
            if not cov.any():
                continue
            inv = (w0 * iz[t, 0] + w1 * iz[t, 1] + w2 * iz[t, 2]) / area2[t]
            win = cov & (inv > zbuf[row, xmin : xmax + 1])
            zbuf[row, xmin : xmax + 1][win] = inv[win]
            out[row, xmin : xmax + 1][win] = labels[t]
    return out


def _top_left(ax, ay, bx, by):
    # edge a->b bounds the interior on its positive side after orientation
    # normalization; include the boundary for left (dy<0) and top (dy==0,
    # dx>0) edges so shared edges rasterize exactly once
    dx = bx - ax
    dy = by - ay
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


def _make_raster_fill_numba():
    @njit(cache=True, parallel=True)
    def fill(xs, ys, iz, labels, area2, width, height):  # pragma: no cover - jit
        out = np.zeros((height, width), dtype=np.uint8)
        zbuf = np.zeros((height, width), dtype=np.float64)
        n = xs.shape[0]
        xmin = np.empty(n, dtype=np.int64)
        xmax = np.empty(n, dtype=np.int64)
        ymin = np.empty(n, dtype=np.int64)
        ymax = np.empty(n, dtype=np.int64)
        tl = np.empty((n, 3), dtype=np.bool_)
        for t in range(n):
            x0, x1, x2 = xs[t, 0], xs[t, 1], xs[t, 2]
            y0, y1, y2 = ys[t, 0], ys[t, 1], ys[t, 2]
            xmin[t] = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
            xmax[t] = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), width - 1)
            ymin[t] = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
            ymax[t] = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), height - 1)
            dx0, dy0 = x2 - x1, y2 - y1
            dx1, dy1 = x0 - x2, y0 - y2
            dx2, dy2 = x1 - x0, y1 - y0
            tl[t, 0] = dy0 < 0.0 or (dy0 == 0.0 and dx0 > 0.0)
            tl[t, 1] = dy1 < 0.0 or (dy1 == 0.0 and dx1 > 0.0)
            tl[t, 2] = dy2 < 0.0 or (dy2 == 0.0 and dx2 > 0.0)
        for row in prange(height):
            py = row + 0.5
            for t in range(n):
                if row < ymin[t] or row > ymax[t]:
                    continue
                x0, x1, x2 = xs[t, 0], xs[t, 1], xs[t, 2]
                y0, y1, y2 = ys[t, 0], ys[t, 1], ys[t, 2]
                for col in range(xmin[t], xmax[t] + 1):
                    pxx = col + 0.5
                    w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (pxx - x1)
                    if not (w0 > 0.0 or (w0 == 0.0 and tl[t, 0])):
                        continue
                    w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (pxx - x2)
                    if not (w1 > 0.0 or (w1 == 0.0 and tl[t, 1])):
                        continue
                    w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (pxx - x0)
                    if not (w2 > 0.0 or (w2 == 0.0 and tl[t, 2])):
                        continue
                    inv = (w0 * iz[t, 0] + w1 * iz[t, 1] + w2 * iz[t, 2]) / area2[t]
                    if inv > zbuf[row, col]:
                        zbuf[row, col] = inv
                        out[row, col] = labels[t]
        return out

    return fill


# ---------------------------------------------------------------------------
# conv2d: NCHW-free single-sample layout (C, H, W), weights (Cout, Cin, k, k),
# zero padding, stride 1 or 2.
# ---------------------------------------------------------------------------


def _conv2d_forward_numpy(x, w, stride, pad):
    cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy : dy + oh * stride : stride, dx : dx + ow * stride : stride]
            out += np.tensordot(w[:, :, dy, dx], patch, axes=([1], [0]))
    return out


def _conv2d_input_grad_numpy(gout, w, x_shape, stride, pad):
    cin, h, ww = x_shape
    cout, _, kh, kw = w.shape
    oh, ow = gout.shape[1], gout.shape[2]
    gxp = np.zeros((cin, h + 2 * pad, ww + 2 * pad), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            g = np.tensordot(w[:, :, dy, dx], gout, axes=([0], [0]))
            gxp[:, dy : dy + oh * stride : stride, dx : dx + ow * stride : stride] += g
    if pad:
        return gxp[:, pad:-pad, pad:-pad]
    return gxp


def _conv2d_weight_grad_numpy(gout, x, w_shape, stride, pad):
    cout, cin, kh, kw = w_shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = gout.shape[1], gout.shape[2]
    gw = np.zeros(w_shape, dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy : dy + oh * stride : stride, dx : dx + ow * stride : stride]
            gw[:, :, dy, dx] = np.tensordot(gout, patch, axes=([1, 2], [1, 2]))
    return gw


def _make_conv_numba():
    # single-thread kernels: training parallelism lives at the fold level
    @njit(cache=True)
    def forward(x, w, stride, pad):  # pragma: no cover - jit
        cin, h, ww = x.shape
        cout, _, kh, kw = w.shape
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (ww + 2 * pad - kw) // stride + 1
        out = np.zeros((cout, oh, ow), dtype=np.float64)
        for co in range(cout):
            for oy in range(oh):
                iy0 = oy * stride - pad
                for ox in range(ow):
                    ix0 = ox * stride - pad
                    acc = 0.0
                    for ci in range(cin):
                        for dy in range(kh):
                            iy = iy0 + dy
                            if iy < 0 or iy >= h:
                                continue
                            for dx in range(kw):
                                ix = ix0 + dx
                                if ix < 0 or ix >= ww:
                                    continue
                                acc += w[co, ci, dy, dx] * x[ci, iy, ix]
                    out[co, oy, ox] = acc
        return out

    @njit(cache=True)
    def input_grad(gout, w, cin, h, ww, stride, pad):  # pragma: no cover - jit
        cout, _, kh, kw = w.shape
        oh, ow = gout.shape[1], gout.shape[2]
        gx = np.zeros((cin, h, ww), dtype=np.float64)
        for co in range(cout):
            for oy in range(oh):
                iy0 = oy * stride - pad
                for ox in range(ow):
                    ix0 = ox * stride - pad
                    g = gout[co, oy, ox]
                    if g == 0.0:
                        continue
                    for ci in range(cin):
                        for dy in range(kh):
                            iy = iy0 + dy
                            if iy < 0 or iy >= h:
                                continue
                            for dx in range(kw):
                                ix = ix0 + dx
                                if ix < 0 or ix >= ww:
                                    continue
                                gx[ci, iy, ix] += g * w[co, ci, dy, dx]
        return gx

    @njit(cache=True)
    def weight_grad(gout, x, cout, cin, kh, kw, stride, pad):  # pragma: no cover - jit
        h, ww = x.shape[1], x.shape[2]
        oh, ow = gout.shape[1], gout.shape[2]
        gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
        for co in range(cout):
            for oy in range(oh):
                iy0 = oy * stride - pad
                for ox in range(ow):
                    ix0 = ox * stride - pad
                    g = gout[co, oy, ox]
                    if g == 0.0:
                        continue
                    for ci in range(cin):
                        for dy in range(kh):
                            iy = iy0 + dy
                            if iy < 0 or iy >= h:
                                continue
                            for dx in range(kw):
                                ix = ix0 + dx
                                if ix < 0 or ix >= ww:
                                    continue
                                gw[co, ci, dy, dx] += g * x[ci, iy, ix]
        return gw

    return forward, input_grad, weight_grad


if USE_NUMBA:
    raster_fill = _make_raster_fill_numba()
    _conv_fwd_nb, _conv_igrad_nb, _conv_wgrad_nb = _make_conv_numba()

    def conv2d_forward(x, w, stride, pad):
        return _conv_fwd_nb(x, w, stride, pad)

    def conv2d_input_grad(gout, w, x_shape, stride, pad):
        return _conv_igrad_nb(gout, w, x_shape[0], x_shape[1], x_shape[2], stride, pad)

    def conv2d_weight_grad(gout, x, w_shape, stride, pad):
        return _conv_wgrad_nb(gout, x, w_shape[0], w_shape[1], w_shape[2], w_shape[3], stride, pad)

else:
    raster_fill = _raster_fill_numpy
    conv2d_forward = _conv2d_forward_numpy
    conv2d_input_grad = _conv2d_input_grad_numpy
    conv2d_weight_grad = _conv2d_weight_grad_numpy


def backend_pairs():
    """(name, kernels) pairs for benchmarking both backends side by side."""
    pairs = [
        (
            "numpy",
            {
                "raster_fill": _raster_fill_numpy,
                "conv2d_forward": _conv2d_forward_numpy,
                "conv2d_input_grad": _conv2d_input_grad_numpy,
                "conv2d_weight_grad": _conv2d_weight_grad_numpy,
            },
        )
    ]
    if HAVE_NUMBA:
        fill = raster_fill if USE_NUMBA else _make_raster_fill_numba()
        if USE_NUMBA:
            fwd, igrad, wgrad = _conv_fwd_nb, _conv_igrad_nb, _conv_wgrad_nb
        else:
            fwd, igrad, wgrad = _make_conv_numba()
        pairs.append(
            (
                "numba",
                {
                    "raster_fill": fill,
                    "conv2d_forward": fwd,
                    "conv2d_input_grad": lambda g, w, xs, s, p: igrad(g, w, xs[0], xs[1], xs[2], s, p),
                    "conv2d_weight_grad": lambda g, x, ws, s, p: wgrad(g, x, ws[0], ws[1], ws[2], ws[3], s, p),
                },
            )
        )
    return pairs
