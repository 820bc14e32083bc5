import numpy as np
import pytest

from tipseg import kernels


@pytest.fixture(scope="module")
def pairs():
    return dict(kernels.backend_pairs())


def test_both_backends_available(pairs):
    assert "numpy" in pairs
    assert "numba" in pairs  # declared dependency, must be importable


def test_conv_forward_backends_agree(pairs, rng):
    x = rng.normal(size=(3, 10, 10))
    w = rng.normal(size=(5, 3, 3, 3))
    for stride in (1, 2):
        outs = [impl["conv2d_forward"](x, w, stride, 1) for impl in pairs.values()]
        assert np.allclose(outs[0], outs[1], atol=1e-10)


def test_conv_grad_backends_agree(pairs, rng):
    x = rng.normal(size=(4, 8, 8))
    w = rng.normal(size=(6, 4, 3, 3))
    g = rng.normal(size=(6, 8, 8))
    igs = [impl["conv2d_input_grad"](g, w, x.shape, 1, 1) for impl in pairs.values()]
    assert np.allclose(igs[0], igs[1], atol=1e-10)
    wgs = [impl["conv2d_weight_grad"](g, x, w.shape, 1, 1) for impl in pairs.values()]
    assert np.allclose(wgs[0], wgs[1], atol=1e-10)


def test_raster_backends_bit_identical(pairs, rng):
    # the two rasterizer fills must agree exactly, not just approximately
    n = 12
    xs = rng.uniform(0, 64, (n, 3))
    ys = rng.uniform(0, 64, (n, 3))
    iz = rng.uniform(0.01, 0.2, (n, 3))
    labels = rng.integers(1, 4, n).astype(np.uint8)
    area2 = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (ys[:, 1] - ys[:, 0]) * (
        xs[:, 2] - xs[:, 0]
    )
    flip = area2 < 0
    xs[flip, 1], xs[flip, 2] = xs[flip, 2], xs[flip, 1]
    ys[flip, 1], ys[flip, 2] = ys[flip, 2], ys[flip, 1]
    iz[flip, 1], iz[flip, 2] = iz[flip, 2], iz[flip, 1]
    area2 = np.abs(area2)
    out = [
        impl["raster_fill"](xs, ys, iz, labels, area2, 64, 64) for impl in pairs.values()
    ]
    assert np.array_equal(out[0], out[1])


def test_env_flag_validation(monkeypatch):
    import importlib

    monkeypatch.setenv("TIPSEG_KERNELS", "cuda")
    with pytest.raises(ValueError, match="TIPSEG_KERNELS"):
        importlib.reload(kernels)
    monkeypatch.setenv("TIPSEG_KERNELS", "numba")
    importlib.reload(kernels)
    assert kernels.BACKEND == "numba"
    monkeypatch.delenv("TIPSEG_KERNELS")
    importlib.reload(kernels)
