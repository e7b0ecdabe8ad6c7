"""Training, evaluation, ablation sweeps, and map rendering.

Training is patch-free: every step feeds the whole scene through the
network and averages losses over the training-split pixels only, so the
test split can never influence the parameter trajectory.
"""

from __future__ import annotations

import colorsys
import dataclasses
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import LabelMask, SplitMask, split
from .errors import DivergenceDetected, NoLabeledPixels, ShapeMismatch
from .losses import LossBreakdown, total_loss
from .metrics import ConfusionMatrix, EvalReport, confusion, report
from .model import CSCN, MODES, TWO_STREAM_MODES, ModelConfig, build_model
from .network import load_checkpoint, save_checkpoint
from .spectra import DerivativeSpec, HsiCube, derivative, normalize_bands

OPTIMIZERS = ("adaptive-moment", "momentum-sgd")
SEED_ENV_VAR = "CSCN_SEED"


@dataclass(frozen=True)
class TrainConfig:
    """One training run, fully determined together with (cube, mask, split).

    class_count 0 means "infer from the label mask". The architecture
    mode and the two switches mirror ModelConfig.
    """

    optimizer: str = "adaptive-moment"
    learning_rate: float = 1e-4
    momentum: float = 0.9
    epochs: int = 100
    loss_weight: float = 1.0
    seed: int = 0
    derivative_order: int = 1
    derivative_step: int = 1
    channel_schedule: tuple = (64, 128, 192, 256)
    fusion_channels: int = 128
    kernel: int = 3
    gn_groups: int = 8
    class_count: int = 0
    mode: str = "dual"
    use_cpfm: bool = True
    use_hd_loss: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule",
                           tuple(int(c) for c in self.channel_schedule))
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        DerivativeSpec(self.derivative_order, self.derivative_step)

    @property
    def derivative_spec(self) -> DerivativeSpec:
        return DerivativeSpec(self.derivative_order, self.derivative_step)

    def model_config(self, magnitude_bands: int, class_count: int) -> ModelConfig:
        deriv_bands = self.derivative_spec.output_bands(magnitude_bands)
        two_stream = self.mode in TWO_STREAM_MODES
        return ModelConfig(
            magnitude_bands=magnitude_bands,
            derivative_bands=deriv_bands,
            class_count=class_count,
            channel_schedule=self.channel_schedule,
            fusion_channels=self.fusion_channels,
            kernel=self.kernel,
            gn_groups=self.gn_groups,
            mode=self.mode,
            use_cpfm=self.use_cpfm and two_stream,
            use_hd_loss=self.use_hd_loss and two_stream,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channel_schedule"] = list(self.channel_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "channel_schedule" in d:
            d["channel_schedule"] = tuple(d["channel_schedule"])
        return cls(**d)


def _coerce_field(name: str, raw: str):
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if name not in kinds:
        raise ValueError(f"unknown config key {name!r}")
    raw = raw.strip()
    if name == "channel_schedule":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name in ("optimizer", "mode"):
        return raw
    if name in ("use_cpfm", "use_hd_loss"):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {raw!r} for {name}")
    if name in ("learning_rate", "momentum", "loss_weight"):
        return float(raw)
    return int(raw)


def load_config(path) -> TrainConfig:
    """Parse a flat key=value file; '#' starts a comment.

    The CSCN_SEED environment variable, when set, wins over the file.
    """
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce_field(key.strip(), raw)
    cfg = TrainConfig(**values)
    return apply_seed_env(cfg)


def save_config(cfg: TrainConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if f.name == "channel_schedule":
            value = ",".join(str(c) for c in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def apply_seed_env(cfg: TrainConfig) -> TrainConfig:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return cfg
    return dataclasses.replace(cfg, seed=int(raw))


@dataclass(frozen=True)
class RunRecord:
    """Everything one training run produced."""

    config: TrainConfig
    model_config: ModelConfig
    trace: tuple  # LossBreakdown per step
    report: EvalReport
    confusion: ConfusionMatrix
    wall_seconds: float
    checkpoint_path: str = None

    def trace_csv(self) -> str:
        rows = [LossBreakdown.CSV_HEADER]
        rows.extend(b.csv_row() for b in self.trace)
        return "\n".join(rows) + "\n"


def _scene_tensors(cube: HsiCube, spec: DerivativeSpec):
    """(x_mag, x_der) as (1, C, H, W) float32, each branch band-normalized.

    Differencing runs on raw reflectance; normalization comes after, so
    each branch sees unit-scale inputs of its own statistics.
    """
    x_m = normalize_bands(cube).data
    x_d = normalize_bands(derivative(cube, spec)).data
    to_tensor = lambda a: torch.from_numpy(np.ascontiguousarray(
        np.moveaxis(a, 2, 0)))[None]
    return to_tensor(x_m), to_tensor(x_d)


def predict_map(model: CSCN, x_mag: torch.Tensor, x_der: torch.Tensor) -> np.ndarray:
    """(H, W) label raster (1-based classes) from one forward pass."""
    with torch.no_grad():
        logits = model(x_mag, x_der).logits[0]
    return (logits.argmax(dim=0) + 1).numpy().astype(np.uint16)


def train(cube: HsiCube, mask: LabelMask, split_mask: SplitMask,
          cfg: TrainConfig, out_dir=None) -> RunRecord:
    """Fit on the train split, score on the test split.

    When out_dir is given, writes checkpoint, manifest, loss trace, and
    report there. Bit-deterministic for a fixed (inputs, config, seed).
    """
    t0 = time.monotonic()
    class_count = cfg.class_count or mask.class_count
    model_cfg = cfg.model_config(cube.band_count, class_count)
    if mask.labels.shape != (cube.height, cube.width):
        raise ShapeMismatch(
            f"mask {mask.labels.shape} vs cube {(cube.height, cube.width)}")

    x_mag, x_der = _scene_tensors(cube, cfg.derivative_spec)
    labels = torch.from_numpy(mask.labels.astype(np.int64))
    train_labels = labels * torch.from_numpy(split_mask.train)
    if not bool((train_labels > 0).any()):
        raise NoLabeledPixels("train split selects no labeled pixels")

    model = build_model(model_cfg, cfg.seed)
    if cfg.optimizer == "adaptive-moment":
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate,
                              momentum=cfg.momentum)

    trace = []
    for step in range(cfg.epochs):
        outputs = model(x_mag, x_der)
        loss, breakdown = total_loss(
            outputs, train_labels, cfg.loss_weight, class_count, step)
        if not math.isfinite(breakdown.total):
            raise DivergenceDetected(step, trace=trace)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(breakdown)

    pred = predict_map(model, x_mag, x_der)
    cm = confusion(pred, mask.labels, split_mask.test, class_count)
    rep = report(cm)

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = str(out_dir / "model.ckpt")
        save_checkpoint(checkpoint_path, model,
                        {"model": model_cfg.to_dict(), "train": cfg.to_dict()})

    record = RunRecord(
        config=cfg, model_config=model_cfg, trace=tuple(trace), report=rep,
        confusion=cm, wall_seconds=time.monotonic() - t0,
        checkpoint_path=checkpoint_path,
    )
    if out_dir is not None:
        _atomic_text(Path(out_dir) / "trace.csv", record.trace_csv())
        _atomic_text(Path(out_dir) / "report.json", rep.to_json())
        _atomic_text(Path(out_dir) / "confusion.csv", cm.to_csv())
    return record


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def evaluate(checkpoint_path, cube: HsiCube, mask: LabelMask,
             split_mask: SplitMask, region: str = "test") -> EvalReport:
    """Score a saved checkpoint on one scene's chosen region."""
    state, meta = load_checkpoint(checkpoint_path)
    model_cfg = ModelConfig.from_dict(meta["model"])
    train_cfg = TrainConfig.from_dict(meta["train"])
    if cube.band_count != model_cfg.magnitude_bands:
        raise ShapeMismatch(
            f"cube has {cube.band_count} bands, checkpoint expects "
            f"{model_cfg.magnitude_bands}")
    model = CSCN(model_cfg)
    model.load_state_dict(state)
    x_mag, x_der = _scene_tensors(cube, train_cfg.derivative_spec)
    pred = predict_map(model, x_mag, x_der)
    regions = {
        "test": split_mask.test,
        "train": split_mask.train,
        "all": split_mask.train | split_mask.test,
    }
    cm = confusion(pred, mask.labels, regions[region], model_cfg.class_count)
    return report(cm)


# ---------------------------------------------------------------------------
# Ablation sweeps

ABLATION_AXES = ("components", "input-format", "derivative", "lambda",
                 "stages", "fusion-channels", "kernel")


def _extend_schedule(base: tuple, stages: int) -> tuple:
    """Continue the arithmetic progression of the base schedule."""
    base = tuple(base)
    if stages <= len(base):
        return base[:stages]
    step = base[-1] - base[-2] if len(base) > 1 else base[0]
    out = list(base)
    while len(out) < stages:
        out.append(out[-1] + step)
    return tuple(out)


def ablation_variants(axis: str, base: TrainConfig) -> list:
    """(name, config) pairs for one sweep axis."""
    rep = dataclasses.replace
    if axis == "components":
        return [
            ("baseline", rep(base, mode="single-magnitude",
                             use_cpfm=False, use_hd_loss=False)),
            ("dual", rep(base, mode="dual", use_cpfm=False, use_hd_loss=False)),
            ("cpfm", rep(base, mode="dual", use_cpfm=True, use_hd_loss=False)),
            ("hdloss", rep(base, mode="dual", use_cpfm=True, use_hd_loss=True)),
        ]
    if axis == "input-format":
        return [
            ("concat", rep(base, mode="concat-input",
                           use_cpfm=False, use_hd_loss=False)),
            ("shared", rep(base, mode="shared-params",
                           use_cpfm=False, use_hd_loss=False)),
            ("dual", rep(base, mode="dual", use_cpfm=False, use_hd_loss=False)),
        ]
    if axis == "derivative":
        return [
            ("first", rep(base, derivative_order=1)),
            ("second", rep(base, derivative_order=2)),
        ]
    if axis == "lambda":
        return [(f"lambda-{v:g}", rep(base, loss_weight=v))
                for v in (0.5, 1.0, 2.0, 3.0)]
    if axis == "stages":
        return [(f"stages-{n}",
                 rep(base, channel_schedule=_extend_schedule(
                     base.channel_schedule, n)))
                for n in (3, 4, 5, 6)]
    if axis == "fusion-channels":
        return [(f"cf-{c}", rep(base, fusion_channels=c))
                for c in (64, 128, 192, 256)]
    if axis == "kernel":
        return [(f"kernel-{k}", rep(base, kernel=k)) for k in (3, 5)]
    raise ValueError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")


@dataclass(frozen=True)
class AblationRow:
    axis: str
    variant: str
    seed: int
    oa: float
    aa: float
    kappa: float
    cf1: float
    wall_seconds: float


@dataclass(frozen=True)
class AblationTable:
    rows: tuple

    CSV_HEADER = "axis,variant,seed,oa,aa,kappa,cf1,wall_seconds"

    def to_csv(self) -> str:
        out = [self.CSV_HEADER]
        for r in self.rows:
            out.append(f"{r.axis},{r.variant},{r.seed},{r.oa:.6f},{r.aa:.6f},"
                       f"{r.kappa:.6f},{r.cf1:.6f},{r.wall_seconds:.2f}")
        return "\n".join(out) + "\n"

    def mean_cf1(self) -> dict:
        """variant -> mean CF1 over seeds, in first-seen variant order."""
        sums, counts, order = {}, {}, []
        for r in self.rows:
            if r.variant not in sums:
                order.append(r.variant)
                sums[r.variant] = 0.0
                counts[r.variant] = 0
            sums[r.variant] += r.cf1
            counts[r.variant] += 1
        return {v: sums[v] / counts[v] for v in order}


def ablate(cube: HsiCube, mask: LabelMask, axis: str, base: TrainConfig,
           seeds: tuple, ratio: float, out_dir=None) -> AblationTable:
    """Run every variant of one axis across a shared seed set.

    Each seed fixes both the split and the parameter init, so variants
    see identical data partitions.
    """
    rows = []
    for name, variant_cfg in ablation_variants(axis, base):
        for seed in seeds:
            cfg = dataclasses.replace(variant_cfg, seed=int(seed))
            split_mask = split(mask, ratio, seed=int(seed))
            record = train(cube, mask, split_mask, cfg)
            rows.append(AblationRow(
                axis=axis, variant=name, seed=int(seed),
                oa=record.report.oa, aa=record.report.aa,
                kappa=record.report.kappa, cf1=record.report.cf1,
                wall_seconds=record.wall_seconds,
            ))
    table = AblationTable(tuple(rows))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_text(out_dir / f"ablation-{axis}.csv", table.to_csv())
    return table


# ---------------------------------------------------------------------------
# Rendering

def class_palette(class_count: int) -> np.ndarray:
    """(class_count + 1, 3) uint8 palette; row 0 (background) is black.

    Hues walk the golden-ratio sequence, so any two class colors stay
    far apart and the palette is stable across calls.
    """
    palette = np.zeros((class_count + 1, 3), dtype=np.uint8)
    for c in range(1, class_count + 1):
        hue = (c * 0.6180339887498949) % 1.0
        sat = 0.65 if c % 2 else 0.9
        val = 0.95 if c % 3 else 0.7
        r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
        palette[c] = (int(r * 255), int(g * 255), int(b * 255))
    return palette


def render_labels(labels: np.ndarray, path, class_count: int = None) -> None:
    """Write a color PNG of a (H, W) label raster."""
    from PIL import Image

    labels = np.asarray(labels)
    class_count = class_count or int(labels.max())
    rgb = class_palette(class_count)[labels]
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")


def render_weights(weights: np.ndarray, path) -> None:
    """Write a grayscale PNG of a (H, W) map on a fixed [0, 1] scale.

    Fusion weights live in (0, 1), so the gray level is comparable
    across runs; values outside the range are clipped.
    """
    from PIL import Image

    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(w * 255).astype(np.uint8), mode="L").save(
        Path(path), format="PNG")
