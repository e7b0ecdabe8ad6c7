"""Training objectives: masked cross entropy, the adaptive softmax loss
over the two branch heads, and the class contrastive loss between encoder
and decoder class features.

Layout conventions: logits and features are (C, H, W); labels are (H, W)
int64 with 0 = unlabeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import NoLabeledPixels, ShapeMismatch


def _labeled_rows(tensor_chw: torch.Tensor, labels: torch.Tensor):
    """(n, C) rows of the labeled pixels plus their 0-based class ids."""
    if tensor_chw.shape[1:] != labels.shape:
        raise ShapeMismatch(
            f"logits {tuple(tensor_chw.shape[1:])} vs labels {tuple(labels.shape)}"
        )
    mask = labels > 0
    if not bool(mask.any()):
        raise NoLabeledPixels("no labeled pixels to score")
    rows = tensor_chw.permute(1, 2, 0)[mask]
    return rows, (labels[mask] - 1).long()


def ce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy over labeled pixels."""
    rows, target = _labeled_rows(F.log_softmax(logits, dim=0), labels)
    return -rows.gather(1, target[:, None]).mean()


def adaptive_softmax_loss(r_m: torch.Tensor, r_d: torch.Tensor,
                          labels: torch.Tensor) -> torch.Tensor:
    """Cross entropy against the pointwise max of the two branch softmaxes.

    S = max(softmax(r_m), softmax(r_d)) elementwise, without
    renormalization; ties keep the magnitude branch's value. Runs in the
    log domain so that, per pixel, the loss matches the smaller branch
    cross entropy bit-for-bit instead of merely up to rounding.
    """
    rows_m, target = _labeled_rows(F.log_softmax(r_m, dim=0), labels)
    rows_d, _ = _labeled_rows(F.log_softmax(r_d, dim=0), labels)
    t_m = rows_m.gather(1, target[:, None])
    t_d = rows_d.gather(1, target[:, None])
    return -torch.where(t_d > t_m, t_d, t_m).mean()


class ClassFeatureProjector(nn.Module):
    """LayerNorm -> hidden layer (width 2C, ReLU) -> projection to 128."""

    def __init__(self, in_channels: int, proj_dim: int = 128):
        super().__init__()
        self.norm = nn.LayerNorm(in_channels)
        self.hidden = nn.Linear(in_channels, 2 * in_channels)
        self.proj = nn.Linear(2 * in_channels, proj_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(F.relu(self.hidden(self.norm(x))))


def class_features(feat: torch.Tensor, labels: torch.Tensor, class_count: int):
    """Per-class raw feature sums of one (C, h, w) map.

    Labels are nearest-downsampled to the feature grid when dims differ.
    Returns (present class ids (k,), sums (k, C)); classes that vanish
    under downsampling are dropped.
    """
    c, h, w = feat.shape
    lab = labels
    if lab.shape != (h, w):
        lab = F.interpolate(
            labels[None, None].float(), size=(h, w), mode="nearest"
        )[0, 0].long()
    onehot = F.one_hot(lab.reshape(-1), class_count + 1).to(feat.dtype)  # (hw, K+1)
    sums = onehot.T @ feat.reshape(c, -1).T  # (K+1, C)
    present = onehot.sum(dim=0)[1:] > 0
    classes = torch.nonzero(present, as_tuple=False).flatten() + 1
    return classes, sums[1:][present]


def class_contrastive_loss(feat_q: torch.Tensor, feat_k: torch.Tensor,
                           labels: torch.Tensor, proj_q: ClassFeatureProjector,
                           proj_k: ClassFeatureProjector,
                           class_count: int) -> torch.Tensor:
    """Identity-pairing contrastive loss between two class-feature banks.

    Each side's per-class sums are projected and unit-normalized; the
    query bank (feat_q side) must match its own class in the key bank
    under plain dot-product logits, scored q->k only. Returns 0 when
    fewer than two classes appear on both grids.
    """
    cls_q, sums_q = class_features(feat_q, labels, class_count)
    cls_k, sums_k = class_features(feat_k, labels, class_count)
    common_q = torch.isin(cls_q, cls_k)
    common_k = torch.isin(cls_k, cls_q)
    if int(common_q.sum()) < 2:
        return feat_q.new_zeros(())
    q = F.normalize(proj_q(sums_q[common_q]), dim=1)
    k = F.normalize(proj_k(sums_k[common_k]), dim=1)
    logits = q @ k.T
    target = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, target)


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss terms; asl/ccl are 0 when disabled."""

    step: int
    ce: float
    asl: float
    ccl: float
    total: float

    CSV_HEADER = "step,ce,asl,ccl,total"

    def csv_row(self) -> str:
        return f"{self.step},{self.ce:.10g},{self.asl:.10g},{self.ccl:.10g},{self.total:.10g}"


def total_loss(outputs, labels: torch.Tensor, lam: float, class_count: int,
               step: int = -1):
    """Combine the objectives of one forward pass.

    `outputs` is a ModelOutputs bundle; when its branch heads are absent
    the result is plain cross entropy. Returns (scalar tensor, breakdown).
    """
    logits = outputs.logits[0] if outputs.logits.dim() == 4 else outputs.logits
    ce = ce_loss(logits, labels)
    asl = logits.new_zeros(())
    ccl = logits.new_zeros(())
    if outputs.r_m is not None:
        asl = adaptive_softmax_loss(outputs.r_m[0], outputs.r_d[0], labels)
        ccl = class_contrastive_loss(
            outputs.enc_feat_m[0], outputs.dec_feat_m[0], labels,
            outputs.proj_enc_m, outputs.proj_dec_m, class_count,
        ) + class_contrastive_loss(
            outputs.enc_feat_d[0], outputs.dec_feat_d[0], labels,
            outputs.proj_enc_d, outputs.proj_dec_d, class_count,
        )
    total = ce + lam * (asl + ccl)
    breakdown = LossBreakdown(
        step=step, ce=float(ce.detach()), asl=float(asl.detach()),
        ccl=float(ccl.detach()), total=float(total.detach()),
    )
    return total, breakdown
