import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tipseg import autodiff as ad
from tipseg.losses import (
    LossConfig,
    binary_ce_dice,
    ce_dice_loss,
    deep_supervision_loss,
    majority_pool_binary,
    node_contrastive_loss,
    one_hot,
    total_loss,
)

LN3 = float(np.log(3.0))


def reference_ce_dice(logits, target):
    """Scalar-by-scalar reference implementation (loops, no tensor ops)."""
    C, H, W = logits.shape
    ce = 0.0
    probs = np.zeros_like(logits)
    for y in range(H):
        for x in range(W):
            z = logits[:, y, x]
            m = z.max()
            e = np.exp(z - m)
            p = e / e.sum()
            probs[:, y, x] = p
            ce -= np.log(p[target[y, x]])
    ce /= H * W
    dice_sum = 0.0
    for k in (1, 2, 3):
        inter = sum(
            probs[k, y, x] for y in range(H) for x in range(W) if target[y, x] == k
        )
        psum = probs[k].sum()
        gsum = float((target == k).sum())
        dice_sum += (2 * inter + 1.0) / (psum + gsum + 1.0)
    return ce + (1.0 - dice_sum / 3.0)


class TestCeDice:
    def test_confident_correct_approaches_zero(self):
        target = np.array([[0, 1], [2, 3]], dtype=np.uint8)
        logits = 50.0 * one_hot(target)
        val = ce_dice_loss(ad.Tensor(logits), target).item()
        assert 0.0 <= val < 1e-3

    def test_uniform_logits_ce_is_ln4(self):
        target = np.zeros((4, 4), dtype=np.uint8)
        loss = ce_dice_loss(ad.Tensor(np.zeros((4, 4, 4))), target).item()
        # dice term for uniform probs on an all-background target:
        # each part has inter=0, sum_p=4, sum_g=0 -> dice 1/5
        want = np.log(4.0) + (1.0 - 1.0 / 5.0)
        assert abs(loss - want) < 1e-12

    def test_matches_bruteforce_reference(self, rng):
        for _ in range(5):
            logits = rng.normal(size=(4, 4, 4)) * 2
            target = rng.integers(0, 4, (4, 4)).astype(np.uint8)
            got = ce_dice_loss(ad.Tensor(logits), target).item()
            want = reference_ce_dice(logits, target)
            assert abs(got - want) < 1e-10

    def test_invalid_label_rejected(self):
        with pytest.raises(ValueError, match="labels"):
            ce_dice_loss(ad.Tensor(np.zeros((4, 2, 2))), np.full((2, 2), 7, dtype=np.uint8))

    def test_gradient(self, rng):
        target = rng.integers(0, 4, (4, 4)).astype(np.uint8)
        x = ad.Tensor(rng.normal(size=(4, 4, 4)), requires_grad=True)
        assert ad.grad_check(lambda t: ce_dice_loss(t, target), x, eps=1e-5) < 1e-7

    def test_nonnegative(self, rng):
        for _ in range(10):
            logits = rng.normal(size=(4, 3, 3)) * 3
            target = rng.integers(0, 4, (3, 3)).astype(np.uint8)
            assert ce_dice_loss(ad.Tensor(logits), target).item() >= 0.0


class TestDeepSupervision:
    def test_perfect_heads_approach_zero(self):
        target = np.zeros((8, 8), dtype=np.uint8)
        target[:4, :4] = 1
        target[:4, 4:] = 2
        target[4:, :4] = 3
        heads = []
        for k in (1, 2, 3):
            t = majority_pool_binary(target, k, 4, 4)
            heads.append(ad.Tensor((t[None] * 2 - 1) * 60.0))
        assert deep_supervision_loss(heads, target).item() < 1e-3

    def test_all_background_zero_logits_ce_is_ln2(self):
        target = np.zeros((4, 4), dtype=np.uint8)
        heads = [ad.Tensor(np.zeros((1, 2, 2))) for _ in range(3)]
        got = deep_supervision_loss(heads, target).item()
        # per part: BCE = ln2; dice = (0+1)/(0.5*4+0+1) = 1/3
        want = np.log(2.0) + (1.0 - 1.0 / 3.0)
        assert abs(got - want) < 1e-12

    def test_matches_bruteforce_8x8(self, rng):
        target = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        heads = [ad.Tensor(rng.normal(size=(1, 4, 4))) for _ in range(3)]
        got = deep_supervision_loss(heads, target).item()
        want = 0.0
        for k in (1, 2, 3):
            z = heads[k - 1].data[0]
            t = np.zeros((4, 4))
            for y in range(4):
                for x in range(4):
                    block = (target[2 * y : 2 * y + 2, 2 * x : 2 * x + 2] == k).sum()
                    t[y, x] = 1.0 if block * 2 >= 4 else 0.0
            bce = np.mean(np.logaddexp(0, z) - t * z)
            p = 1 / (1 + np.exp(-z))
            dice = (2 * (p * t).sum() + 1) / (p.sum() + t.sum() + 1)
            want += bce + (1 - dice)
        want /= 3.0
        assert abs(got - want) < 1e-10

    def test_majority_tie_is_positive(self):
        grid = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        pooled = majority_pool_binary(grid, 1, 1, 1)
        assert pooled[0, 0] == 1.0

    def test_gradient(self, rng):
        target = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        x = ad.Tensor(rng.normal(size=(1, 4, 4)), requires_grad=True)
        others = [ad.Tensor(rng.normal(size=(1, 4, 4))) for _ in range(2)]

        def f(t):
            return deep_supervision_loss([t, others[0], others[1]], target)

        assert ad.grad_check(f, x, eps=1e-5) < 1e-7


def loop_contrastive_oracle(Hv, Hk, tau):
    """Direct per-anchor loop using plain floats."""
    n = Hv.shape[0]
    total = 0.0
    for anchors, others in ((Hv, Hk), (Hk, Hv)):
        for i in range(n):
            pos = float(anchors[i] @ others[i]) / tau
            negs = [float(anchors[i] @ others[j]) / tau for j in range(n) if j != i]
            m = max([pos] + negs)
            denom = sum(np.exp(v - m) for v in [pos] + negs)
            total += -(pos - m - np.log(denom))
    return total / (2 * n)


class TestNodeContrastive:
    def test_identical_embeddings_give_ln3(self, rng):
        H = rng.normal(size=(3, 8))
        H = np.tile(H[0], (3, 1))
        val = node_contrastive_loss(ad.Tensor(H), ad.Tensor(H.copy()), 0.1).item()
        assert abs(val - LN3) < 1e-9

    def test_saturated_positive_orthogonal_negatives(self):
        tau = 0.1
        H = np.eye(3) * np.sqrt(10 * tau)
        val = node_contrastive_loss(ad.Tensor(H), ad.Tensor(H.copy()), tau).item()
        want = np.log(1 + 2 * np.exp(-10.0))
        assert abs(val - want) < 1e-12
        assert val < 1e-4

    def test_matches_loop_oracle(self, rng):
        for _ in range(10):
            Hv = rng.normal(size=(3, 6))
            Hk = rng.normal(size=(3, 6))
            got = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk), 0.25).item()
            want = loop_contrastive_oracle(Hv, Hk, 0.25)
            assert abs(got - want) < 1e-10

    def test_symmetric_in_graph_roles(self, rng):
        Hv = rng.normal(size=(3, 5))
        Hk = rng.normal(size=(3, 5))
        a = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk), 0.2).item()
        b = node_contrastive_loss(ad.Tensor(Hk), ad.Tensor(Hv), 0.2).item()
        assert abs(a - b) < 1e-12

    def test_monotonic_in_positive_and_negative_dots(self):
        # orthogonal construction lets one dot vary while all others stay
        # fixed: increasing a positive dot must strictly lower the loss,
        # increasing a negative dot must strictly raise it
        d = 8
        rngl = np.random.default_rng(0)
        for _ in range(20):
            Hv = np.zeros((3, d))
            Hk = np.zeros((3, d))
            Hv[0, 0], Hv[1, 1], Hv[2, 2] = 1, 1, 1
            Hk[0, 3], Hk[1, 4], Hk[2, 5] = 1, 1, 1
            pos = rngl.uniform(-1, 1)
            Hk[0] += pos * Hv[0]  # dot(Hv0, Hk0) = pos, all else unchanged
            lo = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk), 0.3).item()
            Hk[0] += 0.1 * Hv[0]
            hi = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk), 0.3).item()
            assert hi < lo  # larger positive dot, strictly smaller loss
            Hk2 = Hk.copy()
            Hk2[1] += 0.1 * Hv[0]  # raises the negative dot(Hv0, Hk1) only
            worse = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk2), 0.3).item()
            assert worse > hi

    def test_gradient(self, rng):
        Hk = ad.Tensor(rng.normal(size=(3, 4)))
        x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        err = ad.grad_check(lambda t: node_contrastive_loss(t, Hk, 0.1), x, eps=1e-5)
        assert err < 1e-7

    def test_rejects_nonfinite(self):
        H = np.zeros((3, 2))
        bad = H.copy()
        bad[0, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            node_contrastive_loss(ad.Tensor(H), ad.Tensor(bad), 0.1)

    def test_finite_for_bounded_inputs(self, rng):
        H = rng.normal(size=(3, 4)) * 100
        K = rng.normal(size=(3, 4)) * 100
        val = node_contrastive_loss(ad.Tensor(H), ad.Tensor(K), 0.01).item()
        assert np.isfinite(val)

    def test_normalized_variant(self, rng):
        Hv = rng.normal(size=(3, 4)) * 100
        Hk = rng.normal(size=(3, 4)) * 0.01
        val = node_contrastive_loss(ad.Tensor(Hv), ad.Tensor(Hk), 0.5, normalize=True).item()
        # normalized dots are in [-1, 1]; loss stays near ln3 scale
        assert 0.0 < val < 3.0


class TestTotalLoss:
    def test_paper_lambdas_arithmetic(self):
        cfg = LossConfig(lambda1=1.0, lambda2=0.05)
        out = total_loss(ad.Tensor(1.0), ad.Tensor(2.0), ad.Tensor(4.0), cfg)
        assert abs(out.item() - 3.2) < 1e-12

    def test_zero_lambdas_equal_seg(self):
        cfg = LossConfig(lambda1=0.0, lambda2=0.0)
        out = total_loss(ad.Tensor(1.5), ad.Tensor(9.0), ad.Tensor(9.0), cfg)
        assert out.item() == 1.5

    def test_gradient_distributes_linearly(self, rng):
        cfg = LossConfig(lambda1=1.0, lambda2=0.05)
        x = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)

        def f(t):
            seg = ad.tsum(ad.mul(t, t))
            nc = ad.tsum(t)
            ds = ad.tsum(ad.mul(t, 2.0))
            return total_loss(seg, nc, ds, cfg)

        assert ad.grad_check(f, x, eps=1e-6) < 1e-7
        x.grad = None
        out = f(x)
        out.backward()
        want = 2 * x.data + 1.0 + 0.05 * 2.0
        assert np.allclose(x.grad, want, atol=1e-12)

    def test_default_config_matches_paper_values(self):
        cfg = LossConfig()
        assert cfg.lambda1 == 1.0 and cfg.lambda2 == 0.05

    @given(st.floats(0.01, 10.0), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
    def test_identity_total(self, a, b, c):
        cfg = LossConfig()
        out = total_loss(ad.Tensor(a), ad.Tensor(b), ad.Tensor(c), cfg).item()
        assert abs(out - (a + 1.0 * b + 0.05 * c)) < 1e-12
