import math

import pytest
import torch
from torch import nn
from torch.nn import functional as F

from cscn.errors import NoLabeledPixels, ShapeMismatch
from cscn.losses import (
    ClassFeatureProjector,
    LossBreakdown,
    adaptive_softmax_loss,
    ce_loss,
    class_contrastive_loss,
    class_features,
    total_loss,
)


class TestCeLoss:
    def test_uniform_logits(self):
        logits = torch.zeros(4, 3, 3)
        labels = torch.ones(3, 3, dtype=torch.long)
        assert ce_loss(logits, labels).item() == pytest.approx(math.log(4.0), abs=1e-6)

    def test_hand_value(self):
        # p = softmax([0, ln 3]) = [0.25, 0.75]; true class 1 -> -ln 0.25
        logits = torch.tensor([[[0.0]], [[math.log(3.0)]]])
        labels = torch.tensor([[1]], dtype=torch.long)
        assert ce_loss(logits, labels).item() == pytest.approx(math.log(4.0), abs=1e-6)

    def test_background_ignored(self):
        logits = torch.randn(3, 2, 2)
        labels = torch.tensor([[1, 0], [0, 0]], dtype=torch.long)
        full = ce_loss(logits, labels).item()
        lone = -F.log_softmax(logits[:, 0, 0], dim=0)[0].item()
        assert full == pytest.approx(lone, abs=1e-6)

    def test_no_labels_raises(self):
        with pytest.raises(NoLabeledPixels):
            ce_loss(torch.randn(3, 2, 2), torch.zeros(2, 2, dtype=torch.long))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ce_loss(torch.randn(3, 2, 2), torch.zeros(3, 3, dtype=torch.long))


class TestAdaptiveSoftmaxLoss:
    def test_hand_value(self):
        # branch probs for the true class: 0.8 vs 0.6 -> loss = -ln 0.8
        r_m = torch.tensor([[[math.log(4.0)]], [[0.0]]])
        r_d = torch.tensor([[[math.log(1.5)]], [[0.0]]])
        labels = torch.tensor([[1]], dtype=torch.long)
        got = adaptive_softmax_loss(r_m, r_d, labels).item()
        assert got == pytest.approx(-math.log(0.8), abs=1e-6)

    def test_dominates_both_branch_ce(self):
        gen = torch.Generator().manual_seed(0)
        for _ in range(200):
            r_m = torch.randn(5, 1, 1, generator=gen) * 3
            r_d = torch.randn(5, 1, 1, generator=gen) * 3
            cls = int(torch.randint(1, 6, (1,), generator=gen))
            labels = torch.full((1, 1), cls, dtype=torch.long)
            asl = adaptive_softmax_loss(r_m, r_d, labels).item()
            ce_m = ce_loss(r_m, labels).item()
            ce_d = ce_loss(r_d, labels).item()
            assert asl <= min(ce_m, ce_d) + 1e-7

    def test_equal_branches_reduce_to_ce(self):
        gen = torch.Generator().manual_seed(1)
        r = torch.randn(4, 3, 3, generator=gen)
        labels = torch.randint(1, 5, (3, 3), generator=gen)
        asl = adaptive_softmax_loss(r, r.clone(), labels).item()
        ce = ce_loss(r, labels).item()
        assert asl == pytest.approx(ce, abs=1e-7)

    def test_tie_gradient_goes_to_magnitude_branch(self):
        r = torch.randn(3, 2, 2)
        r_m = r.clone().requires_grad_(True)
        r_d = r.clone().requires_grad_(True)
        labels = torch.ones(2, 2, dtype=torch.long)
        adaptive_softmax_loss(r_m, r_d, labels).backward()
        assert r_m.grad.abs().sum() > 0
        assert torch.all(r_d.grad == 0)


class _FixedRows(nn.Module):
    """Stand-in projector returning preset rows regardless of input."""

    def __init__(self, rows):
        super().__init__()
        self.rows = rows

    def forward(self, x):
        return self.rows[: x.shape[0]]


class TestClassFeatures:
    def test_matches_pixel_loop(self):
        gen = torch.Generator().manual_seed(2)
        feat = torch.randn(6, 5, 5, generator=gen)
        labels = torch.randint(0, 4, (5, 5), generator=gen)
        labels[0, 0] = 1  # at least one labeled pixel
        classes, sums = class_features(feat, labels, class_count=3)
        for row, cls in enumerate(classes.tolist()):
            want = torch.zeros(6)
            for i in range(5):
                for j in range(5):
                    if labels[i, j] == cls:
                        want += feat[:, i, j]
            assert torch.allclose(sums[row], want, atol=1e-5)

    def test_downsampled_labels(self):
        feat = torch.randn(4, 2, 2)
        labels = torch.tensor([
            [1, 1, 2, 2],
            [1, 1, 2, 2],
            [3, 3, 0, 0],
            [3, 3, 0, 0],
        ], dtype=torch.long)
        classes, sums = class_features(feat, labels, class_count=3)
        # nearest downsample to 2x2 keeps one pixel per quadrant
        assert classes.tolist() == [1, 2, 3]
        assert sums.shape == (3, 4)

    def test_absent_class_dropped(self):
        feat = torch.randn(3, 2, 2)
        labels = torch.tensor([[2, 2], [0, 2]], dtype=torch.long)
        classes, sums = class_features(feat, labels, class_count=5)
        assert classes.tolist() == [2]
        assert sums.shape == (1, 3)


class TestClassContrastiveLoss:
    def test_identity_banks(self):
        # orthonormal, equal banks -> logits = I -> loss = ln(1 + e^-1)
        rows = torch.eye(2, 128)
        feat = torch.randn(3, 2, 2)
        labels = torch.tensor([[1, 2], [1, 2]], dtype=torch.long)
        loss = class_contrastive_loss(
            feat, feat, labels, _FixedRows(rows), _FixedRows(rows), 2)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1.0)), abs=1e-6)

    def test_query_to_key_direction_only(self):
        rows_q = torch.tensor([[1.0, 0.0], [0.6, 0.8]])
        rows_k = torch.tensor([[0.8, 0.6], [0.6, 0.8]])
        feat = torch.randn(3, 2, 2)
        labels = torch.tensor([[1, 2], [1, 2]], dtype=torch.long)
        loss = class_contrastive_loss(
            feat, feat, labels, _FixedRows(rows_q), _FixedRows(rows_k), 2)
        logits = rows_q @ rows_k.T
        want = F.cross_entropy(logits, torch.arange(2))
        assert loss.item() == pytest.approx(want.item(), abs=1e-6)
        swapped = F.cross_entropy(logits.T, torch.arange(2))
        assert abs(want.item() - swapped.item()) > 1e-4  # direction matters here

    def test_single_class_returns_zero(self):
        feat = torch.randn(3, 2, 2)
        labels = torch.ones(2, 2, dtype=torch.long)
        proj = ClassFeatureProjector(3, 8)
        assert class_contrastive_loss(feat, feat, labels, proj, proj, 4).item() == 0.0

    def test_real_projectors_finite_and_positive(self):
        gen = torch.Generator().manual_seed(3)
        feat_q = torch.randn(5, 4, 4, generator=gen)
        feat_k = torch.randn(5, 8, 8, generator=gen)
        labels = torch.randint(1, 4, (8, 8), generator=gen)
        proj_q = ClassFeatureProjector(5, 16)
        proj_k = ClassFeatureProjector(5, 16)
        loss = class_contrastive_loss(feat_q, feat_k, labels, proj_q, proj_k, 3)
        assert torch.isfinite(loss)
        assert loss.item() > 0


class TestProjector:
    def test_shapes(self):
        proj = ClassFeatureProjector(24, proj_dim=32)
        out = proj(torch.randn(5, 24))
        assert out.shape == (5, 32)
        assert proj.hidden.out_features == 48


class TestTotalLoss:
    def _outputs(self, with_hd):
        from cscn.model import CSCN, ModelConfig

        cfg = ModelConfig(
            magnitude_bands=8, derivative_bands=7, class_count=3,
            channel_schedule=(8, 12), fusion_channels=8,
            use_cpfm=with_hd, use_hd_loss=with_hd,
            mode="dual" if with_hd else "single-magnitude",
        )
        model = CSCN(cfg)
        x_m = torch.randn(1, 8, 12, 12)
        x_d = torch.randn(1, 7, 12, 12)
        return model(x_m, x_d)

    def test_ce_only_when_heads_absent(self):
        out = self._outputs(with_hd=False)
        labels = torch.randint(1, 4, (12, 12))
        total, breakdown = total_loss(out, labels, lam=1.0, class_count=3)
        assert breakdown.asl == 0.0
        assert breakdown.ccl == 0.0
        assert breakdown.total == pytest.approx(breakdown.ce, abs=1e-9)

    def test_weighted_sum(self):
        out = self._outputs(with_hd=True)
        labels = torch.randint(1, 4, (12, 12))
        total, breakdown = total_loss(out, labels, lam=2.0, class_count=3, step=17)
        assert breakdown.step == 17
        want = breakdown.ce + 2.0 * (breakdown.asl + breakdown.ccl)
        assert breakdown.total == pytest.approx(want, rel=1e-6)
        assert total.item() == pytest.approx(breakdown.total, rel=1e-6)
        assert breakdown.asl > 0

    def test_breakdown_csv(self):
        row = LossBreakdown(3, 1.0, 0.5, 0.25, 1.75)
        assert LossBreakdown.CSV_HEADER == "step,ce,asl,ccl,total"
        assert row.csv_row() == "3,1,0.5,0.25,1.75"
