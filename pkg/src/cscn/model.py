"""Assembly of the dual-branch classifier and its ablation variants.

Architecture modes:
  dual              - separate magnitude/derivative encoders
  shared-params     - dual, but the branches share every stage except the
                      first conv block (band counts differ at the input)
  concat-input      - one encoder over the stacked magnitude+derivative bands
  single-magnitude  - magnitude encoder only
  single-derivative - derivative encoder only

Orthogonal switches: use_cpfm picks adaptive vs fixed-average fusion for
the two-stream modes; use_hd_loss adds the per-branch mini-decoders and
the projectors feeding the auxiliary losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .fusion import FusionPathway
from .losses import ClassFeatureProjector
from .network import ClassifyHead, Encoder, EncoderConfig, MiniDecoder

MODES = ("dual", "shared-params", "concat-input", "single-magnitude",
         "single-derivative")
TWO_STREAM_MODES = ("dual", "shared-params")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild the network byte-for-byte."""

    magnitude_bands: int
    derivative_bands: int
    class_count: int
    channel_schedule: tuple = (64, 128, 192, 256)
    fusion_channels: int = 128
    kernel: int = 3
    gn_groups: int = 8
    mode: str = "dual"
    use_cpfm: bool = True
    use_hd_loss: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule",
                           tuple(int(c) for c in self.channel_schedule))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.fusion_channels < 1:
            raise ValueError("fusion_channels must be >= 1")
        if self.mode not in TWO_STREAM_MODES and (self.use_cpfm or self.use_hd_loss):
            raise ValueError(
                f"use_cpfm/use_hd_loss need a two-stream mode, not {self.mode!r}"
            )

    def to_dict(self) -> dict:
        return {
            "magnitude_bands": self.magnitude_bands,
            "derivative_bands": self.derivative_bands,
            "class_count": self.class_count,
            "channel_schedule": list(self.channel_schedule),
            "fusion_channels": self.fusion_channels,
            "kernel": self.kernel,
            "gn_groups": self.gn_groups,
            "mode": self.mode,
            "use_cpfm": self.use_cpfm,
            "use_hd_loss": self.use_hd_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channel_schedule"] = tuple(d["channel_schedule"])
        return cls(**d)


@dataclass
class ModelOutputs:
    """One forward pass: final logits plus the auxiliary-loss inputs.

    All tensors keep their batch dim. The projector references let the
    loss code run without holding the whole model.
    """

    logits: torch.Tensor
    fusion_weights: list = field(default_factory=list)
    r_m: torch.Tensor = None
    r_d: torch.Tensor = None
    enc_feat_m: torch.Tensor = None
    enc_feat_d: torch.Tensor = None
    dec_feat_m: torch.Tensor = None
    dec_feat_d: torch.Tensor = None
    proj_enc_m: nn.Module = None
    proj_dec_m: nn.Module = None
    proj_enc_d: nn.Module = None
    proj_dec_d: nn.Module = None


class CSCN(nn.Module):
    """Content-adaptive spectrum-complementary classifier."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        sched = cfg.channel_schedule
        two_stream = cfg.mode in TWO_STREAM_MODES

        if two_stream:
            self.encoder_m = Encoder(EncoderConfig(
                cfg.magnitude_bands, sched, cfg.kernel, cfg.gn_groups))
            self.encoder_d = Encoder(EncoderConfig(
                cfg.derivative_bands, sched, cfg.kernel, cfg.gn_groups))
            if cfg.mode == "shared-params":
                # Tie everything past the branch-specific first conv block.
                for i in range(1, len(sched)):
                    self.encoder_d.blocks[i] = self.encoder_m.blocks[i]
                self.encoder_d.downs = self.encoder_m.downs
            pathway_mode = "attention" if cfg.use_cpfm else "average"
        elif cfg.mode == "concat-input":
            self.encoder_m = Encoder(EncoderConfig(
                cfg.magnitude_bands + cfg.derivative_bands, sched,
                cfg.kernel, cfg.gn_groups))
            pathway_mode = "single"
        elif cfg.mode == "single-magnitude":
            self.encoder_m = Encoder(EncoderConfig(
                cfg.magnitude_bands, sched, cfg.kernel, cfg.gn_groups))
            pathway_mode = "single"
        else:  # single-derivative
            self.encoder_d = Encoder(EncoderConfig(
                cfg.derivative_bands, sched, cfg.kernel, cfg.gn_groups))
            pathway_mode = "single"

        self.pathway = FusionPathway(
            sched, cfg.fusion_channels, cfg.kernel, cfg.gn_groups, pathway_mode)
        self.head = ClassifyHead(cfg.fusion_channels, cfg.class_count)

        if two_stream and cfg.use_hd_loss:
            self.decoder_m = MiniDecoder(sched, cfg.class_count, cfg.kernel,
                                         cfg.gn_groups)
            self.decoder_d = MiniDecoder(sched, cfg.class_count, cfg.kernel,
                                         cfg.gn_groups)
            self.proj_enc_m = ClassFeatureProjector(sched[-1])
            self.proj_dec_m = ClassFeatureProjector(sched[0])
            self.proj_enc_d = ClassFeatureProjector(sched[-1])
            self.proj_dec_d = ClassFeatureProjector(sched[0])

    def forward(self, x_mag: torch.Tensor = None,
                x_der: torch.Tensor = None) -> ModelOutputs:
        cfg = self.cfg
        if cfg.mode in TWO_STREAM_MODES:
            feats_m = self.encoder_m(x_mag)
            feats_d = self.encoder_d(x_der)
            out_hw = tuple(x_mag.shape[2:])
            fused, weights = self.pathway(feats_m, feats_d)
            outputs = ModelOutputs(
                logits=self.head(fused, out_hw), fusion_weights=weights)
            if cfg.use_hd_loss:
                outputs.r_m, outputs.dec_feat_m = self.decoder_m(feats_m[-1], out_hw)
                outputs.r_d, outputs.dec_feat_d = self.decoder_d(feats_d[-1], out_hw)
                outputs.enc_feat_m = feats_m[-1]
                outputs.enc_feat_d = feats_d[-1]
                outputs.proj_enc_m = self.proj_enc_m
                outputs.proj_dec_m = self.proj_dec_m
                outputs.proj_enc_d = self.proj_enc_d
                outputs.proj_dec_d = self.proj_dec_d
            return outputs

        if cfg.mode == "concat-input":
            x = torch.cat([x_mag, x_der], dim=1)
        elif cfg.mode == "single-magnitude":
            x = x_mag
        else:
            x = x_der
        encoder = self.encoder_d if cfg.mode == "single-derivative" else self.encoder_m
        feats = encoder(x)
        fused, weights = self.pathway(feats)
        return ModelOutputs(
            logits=self.head(fused, tuple(x.shape[2:])), fusion_weights=weights)


def build_model(cfg: ModelConfig, seed: int) -> CSCN:
    """Construct and deterministically initialize the network."""
    from .network import init_parameters

    model = CSCN(cfg)
    init_parameters(model, seed)
    return model
