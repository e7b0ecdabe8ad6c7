"""Labeled-raster containers, flat-binary raster I/O, and the per-class
train/test split.

On-disk scheme: ``<prefix>.raw`` holds little-endian samples in
band-sequential order (all of band 0, then band 1, ...); ``<prefix>.hdr.json``
holds {height, width, bands, dtype, interleave}. Cubes use dtype "f32le",
label rasters "u16le", split rasters "u8le"; interleave is always "bsq".
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClass, HeaderMismatch, UnsupportedDtype
from .spectra import HsiCube

_DTYPES = {
    "f32le": np.dtype("<f4"),
    "u16le": np.dtype("<u2"),
    "u8le": np.dtype("<u1"),
}


@dataclass(frozen=True)
class LabelMask:
    """(H, W) uint16 ground-truth raster; 0 = unlabeled background.

    Invariants: values in [0, class_count], at least one labeled pixel.
    """

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.uint16)
        if arr.ndim != 2:
            raise ValueError(f"labels must be (H, W), got shape {arr.shape}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if arr.max(initial=0) > self.class_count:
            raise ValueError(
                f"label {int(arr.max())} exceeds class_count {self.class_count}"
            )
        if not (arr > 0).any():
            raise ValueError("label mask has no labeled pixels")
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def present_classes(self) -> np.ndarray:
        vals = np.unique(self.labels)
        return vals[vals > 0]


@dataclass(frozen=True)
class SplitMask:
    """Boolean train/test rasters over the labeled pixels of one scene."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train, dtype=bool)
        te = np.asarray(self.test, dtype=bool)
        if tr.shape != te.shape or tr.ndim != 2:
            raise ValueError("train/test masks must share one (H, W) shape")
        if (tr & te).any():
            raise ValueError("train and test masks overlap")
        object.__setattr__(self, "train", tr)
        object.__setattr__(self, "test", te)


def _strip_raw(path) -> Path:
    p = Path(path)
    if p.name.endswith(".raw"):
        p = p.with_name(p.name[: -len(".raw")])
    return p


def _atomic_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _sibling(prefix: Path, ext: str) -> Path:
    # Plain concatenation: prefixes may contain dots (e.g. "scene.train").
    return prefix.with_name(prefix.name + ext)


def _write_raster(prefix: Path, arr: np.ndarray, dtype_tag: str, bands: int) -> None:
    header = {
        "height": int(arr.shape[0]),
        "width": int(arr.shape[1]),
        "bands": int(bands),
        "dtype": dtype_tag,
        "interleave": "bsq",
    }
    # Band-sequential layout: move the band axis first before flattening.
    if arr.ndim == 3:
        flat = np.ascontiguousarray(np.moveaxis(arr, 2, 0), dtype=_DTYPES[dtype_tag])
    else:
        flat = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_tag])
    _atomic_bytes(_sibling(prefix, ".raw"), flat.tobytes())
    _atomic_bytes(
        _sibling(prefix, ".hdr.json"),
        (json.dumps(header, indent=2, sort_keys=True) + "\n").encode("ascii"),
    )


def _read_raster(prefix: Path, expect_dtype: str) -> np.ndarray:
    hdr_path = _sibling(prefix, ".hdr.json")
    raw_path = _sibling(prefix, ".raw")
    header = json.loads(hdr_path.read_text())
    for key in ("height", "width", "bands", "dtype", "interleave"):
        if key not in header:
            raise HeaderMismatch(f"{hdr_path} missing key {key!r}")
    if header["interleave"] != "bsq":
        raise UnsupportedDtype(f"unsupported interleave {header['interleave']!r}")
    if header["dtype"] not in _DTYPES:
        raise UnsupportedDtype(f"unsupported dtype {header['dtype']!r}")
    if header["dtype"] != expect_dtype:
        raise HeaderMismatch(
            f"{hdr_path} has dtype {header['dtype']!r}, expected {expect_dtype!r}"
        )
    h, w, b = int(header["height"]), int(header["width"]), int(header["bands"])
    payload = raw_path.read_bytes()
    expected = h * w * b * _DTYPES[expect_dtype].itemsize
    if len(payload) != expected:
        raise HeaderMismatch(
            f"{raw_path} holds {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype=_DTYPES[expect_dtype]).reshape(b, h, w)
    return np.moveaxis(flat, 0, 2) if b > 1 else flat[0]


def save_cube(cube: HsiCube, path) -> None:
    _write_raster(_strip_raw(path), cube.data, "f32le", cube.band_count)


def load_cube(path) -> HsiCube:
    arr = _read_raster(_strip_raw(path), "f32le")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return HsiCube(np.ascontiguousarray(arr, dtype=np.float32))


def save_labels(mask: LabelMask, path) -> None:
    _write_raster(_strip_raw(path), mask.labels, "u16le", 1)


def load_labels(path) -> LabelMask:
    arr = _read_raster(_strip_raw(path), "u16le")
    return LabelMask(np.ascontiguousarray(arr), int(arr.max()))


def save_split(split: SplitMask, prefix) -> None:
    prefix = Path(prefix)
    _write_raster(
        prefix.with_name(prefix.name + ".train"), split.train.astype(np.uint8), "u8le", 1
    )
    _write_raster(
        prefix.with_name(prefix.name + ".test"), split.test.astype(np.uint8), "u8le", 1
    )


def load_split(prefix) -> SplitMask:
    prefix = Path(prefix)
    train = _read_raster(prefix.with_name(prefix.name + ".train"), "u8le")
    test = _read_raster(prefix.with_name(prefix.name + ".test"), "u8le")
    return SplitMask(train.astype(bool), test.astype(bool))


def split(mask: LabelMask, ratio: float, seed: int) -> SplitMask:
    """Per-class random split of the labeled pixels.

    Each class contributes exactly max(1, round(ratio * n_c)) training
    pixels (round half up); everything else labeled goes to test.
    Background pixels belong to neither side. Deterministic per seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    train = np.zeros(mask.labels.shape, dtype=bool)
    test = np.zeros(mask.labels.shape, dtype=bool)
    for cls in range(1, mask.class_count + 1):
        idx = np.flatnonzero(mask.labels == cls)
        if idx.size == 0:
            raise EmptyClass(f"class {cls} has no labeled pixels")
        take = max(1, int(np.floor(ratio * idx.size + 0.5)))
        perm = rng.permutation(idx.size)
        chosen = idx[perm[:take]]
        rest = idx[perm[take:]]
        train.flat[chosen] = True
        test.flat[rest] = True
    return SplitMask(train, test)


def one_hot(mask: LabelMask) -> np.ndarray:
    """(H, W, class_count) float32 one-hot; background rows are all zero."""
    eye = np.eye(mask.class_count + 1, dtype=np.float32)
    return eye[mask.labels][:, :, 1:]
