"""Spectral-domain operations: derivative spectra, band normalization, noise
degradation, and synthetic confusable-scene generation.

All functions are pure; randomized ones take an explicit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSpec, InsufficientBands


@dataclass(frozen=True)
class HsiCube:
    """Reflectance raster of shape (H, W, B), stored as float32.

    Invariants: all entries finite, B >= 2, H and W >= 1.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"cube must be (H, W, B), got shape {arr.shape}")
        h, w, b = arr.shape
        if h < 1 or w < 1:
            raise ValueError("cube spatial dims must be >= 1")
        if b < 2:
            raise ValueError(f"cube needs >= 2 bands, got {b}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def band_count(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DerivativeSpec:
    """Order (1 or 2) and band step of the spectral derivative."""

    order: int = 1
    step: int = 1

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"derivative order must be 1 or 2, got {self.order}")
        if self.step < 1:
            raise ValueError(f"derivative step must be >= 1, got {self.step}")

    def output_bands(self, band_count: int) -> int:
        remaining = band_count - self.order * self.step
        if remaining < 2:  # the result must itself be a valid cube
            raise InsufficientBands(
                f"order {self.order} with step {self.step} leaves {remaining} "
                f"of {band_count} bands; a cube needs at least 2"
            )
        return remaining


@dataclass(frozen=True)
class NoiseSpec:
    """Mixed degradation: Gaussian + salt-and-pepper + column stripes.

    gaussian_sigma is a fraction of each band's dynamic range; the
    salt-and-pepper replacement values are each band's min/max.
    """

    gaussian_sigma: float = 0.05
    salt_pepper_rate: float = 0.01
    stripe_amplitude: float = 0.1
    stripe_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if not 0.0 <= self.salt_pepper_rate <= 1.0:
            raise ValueError("salt_pepper_rate must be in [0, 1]")
        if self.stripe_amplitude < 0:
            raise ValueError("stripe_amplitude must be >= 0")
        if not 0.0 <= self.stripe_fraction <= 1.0:
            raise ValueError("stripe_fraction must be in [0, 1]")


@dataclass(frozen=True)
class SynthSceneSpec:
    """Recipe for a labeled synthetic scene of blockwise class regions.

    Classes listed in ``confusable_pairs`` share a smooth mean spectrum and
    differ only in the phase of a small band-to-band oscillation, so raw
    magnitudes nearly coincide while first differences separate them.
    ``offset_pairs`` are the mirror case: the two classes differ by a
    constant reflectance offset, which band differencing erases entirely.
    A smooth per-pixel brightness nuisance (amplitude ``brightness_sigma``)
    dominates magnitude variance but is almost invisible to the derivative.
    ``rough_classes`` get a block-coherent alternating ripple of amplitude
    ``roughness_sigma`` with a random sign per region block: class means are
    intact, but the derivative of those regions is flooded with
    class-irrelevant structure while magnitude statistics barely move.
    ``glare_classes`` are the mirror nuisance: each of their blocks gets a
    flat (band-constant) reflectance shift of size ``glare_sigma``, signs
    balanced within each class, which scrambles magnitude levels but cancels
    entirely under band differencing.
    """

    class_count: int
    bands: int
    height: int
    width: int
    confusable_pairs: tuple = ()
    offset_pairs: tuple = ()
    rough_classes: tuple = ()
    glare_classes: tuple = ()
    magnitude_noise_sigma: float = 0.015
    brightness_sigma: float = 0.25
    oscillation_amplitude: float = 0.05
    roughness_sigma: float = 0.08
    glare_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.class_count <= 255:
            raise ValueError("class_count must be in [2, 255]")
        if self.bands < 4:
            raise ValueError("bands must be >= 4")
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dims must be >= 1")
        if self.magnitude_noise_sigma < 0 or self.brightness_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.oscillation_amplitude < 0 or self.roughness_sigma < 0:
            raise ValueError("oscillation_amplitude/roughness_sigma must be >= 0")
        if self.glare_sigma < 0:
            raise ValueError("glare_sigma must be >= 0")
        for cls in tuple(self.rough_classes) + tuple(self.glare_classes):
            if not 1 <= cls <= self.class_count:
                raise ValueError(f"nuisance class {cls} out of range 1..{self.class_count}")
        for pair in tuple(self.confusable_pairs) + tuple(self.offset_pairs):
            a, b = pair
            if a == b:
                raise ValueError(f"pair {pair} must name two distinct classes")
            if not (1 <= a <= self.class_count and 1 <= b <= self.class_count):
                raise ValueError(f"pair {pair} out of class range 1..{self.class_count}")
        object.__setattr__(self, "confusable_pairs", tuple(tuple(p) for p in self.confusable_pairs))
        object.__setattr__(self, "offset_pairs", tuple(tuple(p) for p in self.offset_pairs))
        object.__setattr__(self, "rough_classes", tuple(int(c) for c in self.rough_classes))
        object.__setattr__(self, "glare_classes", tuple(int(c) for c in self.glare_classes))


def derivative(cube: HsiCube, spec: DerivativeSpec) -> HsiCube:
    """Finite-difference derivative spectrum along the band axis.

    Band b of the first-order output is (I[b+step] - I[b]) / step; the
    second order iterates the first-order difference twice, losing
    order*step bands in total.
    """
    spec.output_bands(cube.band_count)
    out = cube.data
    for _ in range(spec.order):
        out = (out[:, :, spec.step:] - out[:, :, : -spec.step]) / spec.step
    return HsiCube(out)


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Z-score each band independently over its H*W pixels.

    Uses population statistics; bands with zero variance map to all zeros.
    """
    data = cube.data.astype(np.float64)
    mean = data.mean(axis=(0, 1))
    std = data.std(axis=(0, 1))
    safe = np.where(std > 0, std, 1.0)
    out = (data - mean) / safe
    out[:, :, std == 0] = 0.0
    return HsiCube(out.astype(np.float32))


def degrade(cube: HsiCube, noise: NoiseSpec) -> HsiCube:
    """Apply the mixed degradation; bit-deterministic given noise.seed.

    Components run in order Gaussian -> salt-and-pepper -> stripes, each
    skipped when its parameter is zero so the all-zero spec is an exact
    identity. Salt-and-pepper uses the clean cube's per-band min/max.
    """
    rng = np.random.default_rng(noise.seed)
    data = cube.data
    out = data.copy()
    band_min = data.min(axis=(0, 1))
    band_max = data.max(axis=(0, 1))

    if noise.gaussian_sigma > 0:
        scale = (noise.gaussian_sigma * (band_max - band_min)).astype(np.float32)
        out += (rng.standard_normal(data.shape) * scale).astype(np.float32)

    if noise.salt_pepper_rate > 0:
        hit = rng.random(data.shape) < noise.salt_pepper_rate
        salt = rng.random(data.shape) < 0.5
        maxed = np.broadcast_to(band_max, data.shape)
        mined = np.broadcast_to(band_min, data.shape)
        out[hit & salt] = maxed[hit & salt]
        out[hit & ~salt] = mined[hit & ~salt]

    if noise.stripe_fraction > 0 and noise.stripe_amplitude > 0:
        n_cols = int(round(noise.stripe_fraction * cube.width))
        if n_cols > 0:
            cols = rng.choice(cube.width, size=n_cols, replace=False)
            signs = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=n_cols)
            out[:, cols, :] += noise.stripe_amplitude * signs[None, :, None]

    return HsiCube(out)


def _tile_regions(spec: SynthSceneSpec, rng: np.random.Generator):
    """Partition the raster into rectangular blocks carrying class labels.

    Returns (labels, blocks): the class raster and the block-index raster
    that records which rectangle each pixel belongs to.
    """
    h, w, k = spec.height, spec.width, spec.class_count
    if h * w < k:
        raise InfeasibleSpec(f"{k} classes cannot tile a {h}x{w} raster")

    # A few blocks per class when the raster has room, never fewer than one.
    goal = max(k, min(3 * k, max(1, (h * w) // 16)))
    rows = int(np.clip(round(math.sqrt(goal * h / max(w, 1))), 1, h))
    cols = int(np.clip(math.ceil(goal / rows), 1, w))
    while rows * cols < k:
        if rows < h:
            rows += 1
        elif cols < w:
            cols += 1
        else:  # pragma: no cover - excluded by the h*w >= k guard
            raise InfeasibleSpec(f"{k} classes cannot tile a {h}x{w} raster")

    row_edges = np.linspace(0, h, rows + 1).astype(int)
    col_edges = np.linspace(0, w, cols + 1).astype(int)
    labels = np.zeros((h, w), dtype=np.uint16)
    blocks = np.zeros((h, w), dtype=np.int64)
    order = rng.permutation(rows * cols)
    fill = rng.integers(1, k + 1, size=rows * cols)
    for rank, block in enumerate(order):
        r, c = divmod(int(block), cols)
        cls = rank + 1 if rank < k else int(fill[rank])
        labels[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]] = cls
        blocks[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]] = block
    return labels, blocks


def _class_signatures(spec: SynthSceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-class mean spectra, row 0 unused (background)."""
    b = spec.bands
    t = np.arange(b) / (b - 1)
    sig = np.zeros((spec.class_count + 1, b))
    for c in range(1, spec.class_count + 1):
        curve = rng.uniform(0.2, 0.8) * np.ones(b)
        for harmonic in (1, 2, 3):
            amp = rng.uniform(-0.25, 0.25) / harmonic
            phase = rng.uniform(0, 2 * np.pi)
            curve = curve + amp * np.cos(np.pi * harmonic * t + phase)
        sig[c] = curve

    for a, bb in spec.confusable_pairs:
        shared = sig[a].copy()
        alternation = spec.oscillation_amplitude * np.where(np.arange(b) % 2 == 0, 1.0, -1.0)
        sig[a] = shared + alternation
        sig[bb] = shared - alternation
    for a, bb in spec.offset_pairs:
        sig[bb] = sig[a] + 0.35
    return sig


def synth_scene(spec: SynthSceneSpec):
    """Generate (HsiCube, LabelMask) with engineered magnitude confusion.

    Every class is present in the mask; regions are contiguous blocks.
    """
    from .data import LabelMask

    rng = np.random.default_rng(spec.seed)
    labels, blocks = _tile_regions(spec, rng)
    signatures = _class_signatures(spec, rng)

    cube = signatures[labels]  # (H, W, B)

    if spec.brightness_sigma > 0:
        t = np.arange(spec.bands) / (spec.bands - 1)
        modes = np.stack([np.ones_like(t), np.cos(np.pi * t), np.cos(2 * np.pi * t)])
        weights = np.array([1.0, 0.5, 0.25]) * spec.brightness_sigma
        coeff = rng.standard_normal((spec.height, spec.width, 3)) * weights
        cube = cube + coeff @ modes

    if spec.rough_classes and spec.roughness_sigma > 0:
        # Patch-coherent clutter: each rough block carries a full-strength
        # alternating ripple whose sign is drawn once per block. Band-to-band
        # slopes are junk across those patches while class means stay intact,
        # and the contamination is locally constant rather than speckle.
        region = np.isin(labels, spec.rough_classes)
        block_sign = np.where(rng.standard_normal(int(blocks.max()) + 1) < 0, -1.0, 1.0)
        alternation = np.where(np.arange(spec.bands) % 2 == 0, 1.0, -1.0)
        ripple = (region * block_sign[blocks] * spec.roughness_sigma)[:, :, None]
        cube = cube + ripple * alternation

    if spec.glare_classes and spec.glare_sigma > 0:
        # Mirror nuisance aimed at the magnitude branch: each glare block is
        # shifted by a flat +-glare_sigma across every band, so levels are
        # scrambled patch to patch while band differences cancel exactly.
        # Signs alternate over each class's blocks to keep the class mean.
        shift = np.zeros((spec.height, spec.width))
        for cls in spec.glare_classes:
            ids = np.unique(blocks[labels == cls])
            signs = np.where(np.arange(ids.size) % 2 == 0, 1.0, -1.0)
            rng.shuffle(signs)
            for idx, sign in zip(ids, signs):
                shift[blocks == idx] = sign * spec.glare_sigma
        cube = cube + shift[:, :, None]

    if spec.magnitude_noise_sigma > 0:
        cube = cube + rng.standard_normal(cube.shape) * spec.magnitude_noise_sigma

    return HsiCube(cube.astype(np.float32)), LabelMask(labels, spec.class_count)
