import numpy as np
import pytest

from cscn.errors import InfeasibleSpec, InsufficientBands
from cscn.spectra import (
    DerivativeSpec,
    HsiCube,
    NoiseSpec,
    SynthSceneSpec,
    degrade,
    derivative,
    normalize_bands,
    synth_scene,
)


def loop_derivative(data: np.ndarray, order: int, step: int) -> np.ndarray:
    """Scalar reference: per-pixel nested differencing in float32."""
    out = data.astype(np.float32)
    for _ in range(order):
        h, w, b = out.shape
        nxt = np.empty((h, w, b - step), dtype=np.float32)
        for i in range(h):
            for j in range(w):
                for k in range(b - step):
                    nxt[i, j, k] = (out[i, j, k + step] - out[i, j, k]) / np.float32(step)
        out = nxt
    return out


class TestDerivative:
    def test_constant_spectrum_is_zero(self):
        cube = HsiCube(np.full((1, 1, 4), 5.0, dtype=np.float32))
        out = derivative(cube, DerivativeSpec(order=1, step=1))
        assert out.data.shape == (1, 1, 3)
        assert np.all(out.data == 0.0)

    def test_second_order_example(self):
        cube = HsiCube(np.array([1.0, 2.0, 4.0, 7.0], dtype=np.float32).reshape(1, 1, 4))
        out = derivative(cube, DerivativeSpec(order=2, step=1))
        np.testing.assert_array_equal(out.data.ravel(), [1.0, 1.0])

    def test_band_count_first_order(self):
        cube = HsiCube(np.random.default_rng(0).normal(size=(3, 3, 32)).astype(np.float32))
        out = derivative(cube, DerivativeSpec(order=1, step=1))
        assert out.band_count == 31

    def test_matches_loop_with_step_two(self):
        rng = np.random.default_rng(7)
        cube = HsiCube(rng.normal(size=(4, 4, 8)).astype(np.float32))
        got = derivative(cube, DerivativeSpec(order=1, step=2))
        want = loop_derivative(cube.data, 1, 2)
        np.testing.assert_array_equal(got.data, want)

    @pytest.mark.parametrize("order", [1, 2])
    @pytest.mark.parametrize("step", [1, 2, 3])
    def test_matches_loop_bitwise(self, order, step):
        rng = np.random.default_rng(order * 10 + step)
        for _ in range(5):
            cube = HsiCube(rng.normal(size=(3, 4, 11)).astype(np.float32))
            got = derivative(cube, DerivativeSpec(order=order, step=step))
            want = loop_derivative(cube.data, order, step)
            assert got.data.shape == want.shape
            np.testing.assert_array_equal(got.data, want)

    def test_insufficient_bands(self):
        cube = HsiCube(np.zeros((2, 2, 4), dtype=np.float32))
        with pytest.raises(InsufficientBands):
            derivative(cube, DerivativeSpec(order=2, step=2))
        # a single surviving band is rejected too: not a usable cube
        with pytest.raises(InsufficientBands):
            derivative(HsiCube(np.zeros((2, 2, 5), dtype=np.float32)),
                       DerivativeSpec(order=2, step=2))

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 3, 9)).astype(np.float32)
        y = rng.normal(size=(3, 3, 9)).astype(np.float32)
        spec = DerivativeSpec(order=1, step=2)
        lhs = derivative(HsiCube(2.0 * x + 0.5 * y), spec).data
        rhs = 2.0 * derivative(HsiCube(x), spec).data + 0.5 * derivative(HsiCube(y), spec).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_second_order_is_iterated_first_order(self):
        rng = np.random.default_rng(4)
        cube = HsiCube(rng.normal(size=(2, 5, 12)).astype(np.float32))
        spec1 = DerivativeSpec(order=1, step=2)
        once = derivative(derivative(cube, spec1), spec1)
        twice = derivative(cube, DerivativeSpec(order=2, step=2))
        np.testing.assert_array_equal(once.data, twice.data)

    def test_input_not_mutated(self):
        rng = np.random.default_rng(5)
        arr = rng.normal(size=(2, 2, 6)).astype(np.float32)
        cube = HsiCube(arr.copy())
        derivative(cube, DerivativeSpec(order=2, step=1))
        np.testing.assert_array_equal(cube.data, arr)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DerivativeSpec(order=3, step=1)
        with pytest.raises(ValueError):
            DerivativeSpec(order=1, step=0)


class TestNormalizeBands:
    def test_two_pixel_band(self):
        # each band holds values {1, 3} split evenly, so z-scores are +-1
        arr = np.zeros((2, 2, 2), dtype=np.float32)
        arr[0, :, :] = 1.0
        arr[1, :, :] = 3.0
        out = normalize_bands(HsiCube(arr))
        np.testing.assert_allclose(out.data[0], -1.0, atol=1e-6)
        np.testing.assert_allclose(out.data[1], 1.0, atol=1e-6)

    def test_constant_band_maps_to_zero(self):
        cube = HsiCube(np.full((3, 3, 4), 7.0, dtype=np.float32))
        out = normalize_bands(cube)
        assert np.all(out.data == 0.0)

    def test_population_moments(self):
        rng = np.random.default_rng(11)
        cube = HsiCube(rng.normal(2.0, 3.0, size=(16, 16, 6)).astype(np.float32))
        out = normalize_bands(cube).data.astype(np.float64)
        mean = out.mean(axis=(0, 1))
        std = out.std(axis=(0, 1))
        assert np.abs(mean).max() < 1e-6
        np.testing.assert_allclose(std, 1.0, atol=1e-5)

    def test_input_not_mutated(self):
        rng = np.random.default_rng(12)
        arr = rng.normal(size=(4, 4, 3)).astype(np.float32)
        cube = HsiCube(arr.copy())
        normalize_bands(cube)
        np.testing.assert_array_equal(cube.data, arr)


class TestDegrade:
    def _cube(self, seed=0, shape=(8, 10, 5)):
        rng = np.random.default_rng(seed)
        return HsiCube(rng.uniform(0.0, 1.0, size=shape).astype(np.float32))

    def test_zero_spec_is_identity(self):
        cube = self._cube()
        out = degrade(cube, NoiseSpec(0.0, 0.0, 0.0, 0.0, seed=3))
        np.testing.assert_array_equal(out.data, cube.data)

    def test_full_salt_pepper_saturates(self):
        cube = self._cube(1)
        out = degrade(cube, NoiseSpec(0.0, 1.0, 0.0, 0.0, seed=0))
        lo = cube.data.min(axis=(0, 1))
        hi = cube.data.max(axis=(0, 1))
        at_lo = np.isclose(out.data, lo[None, None, :])
        at_hi = np.isclose(out.data, hi[None, None, :])
        assert np.all(at_lo | at_hi)

    def test_deterministic_per_seed(self):
        cube = self._cube(2)
        spec = NoiseSpec(0.05, 0.02, 0.1, 0.2, seed=9)
        a = degrade(cube, spec)
        b = degrade(cube, spec)
        np.testing.assert_array_equal(a.data, b.data)
        c = degrade(cube, NoiseSpec(0.05, 0.02, 0.1, 0.2, seed=10))
        assert not np.array_equal(a.data, c.data)

    def test_stripes_touch_expected_columns(self):
        cube = self._cube(3, shape=(6, 20, 4))
        out = degrade(cube, NoiseSpec(0.0, 0.0, 0.5, 0.25, seed=1))
        moved = np.any(out.data != cube.data, axis=(0, 2))
        assert moved.sum() == 5  # round(0.25 * 20)
        delta = out.data - cube.data
        hit = delta[:, moved, :]
        np.testing.assert_allclose(np.abs(hit), 0.5, atol=1e-6)

    def test_input_not_mutated(self):
        cube = self._cube(4)
        before = cube.data.copy()
        degrade(cube, NoiseSpec(0.1, 0.1, 0.1, 0.1, seed=0))
        np.testing.assert_array_equal(cube.data, before)


class TestSynthScene:
    def _spec(self, **kw):
        base = dict(
            class_count=4,
            bands=24,
            height=24,
            width=24,
            confusable_pairs=((1, 2),),
            offset_pairs=((3, 4),),
            seed=0,
        )
        base.update(kw)
        return SynthSceneSpec(**base)

    def test_shapes_and_presence(self):
        cube, mask = synth_scene(self._spec())
        assert cube.data.shape == (24, 24, 24)
        assert cube.data.dtype == np.float32
        assert mask.labels.shape == (24, 24)
        assert set(np.unique(mask.labels)) >= {1, 2, 3, 4}
        assert mask.labels.max() <= 4

    def test_deterministic(self):
        a_cube, a_mask = synth_scene(self._spec())
        b_cube, b_mask = synth_scene(self._spec())
        np.testing.assert_array_equal(a_cube.data, b_cube.data)
        np.testing.assert_array_equal(a_mask.labels, b_mask.labels)
        c_cube, _ = synth_scene(self._spec(seed=1))
        assert not np.array_equal(a_cube.data, c_cube.data)

    def test_infeasible_when_raster_too_small(self):
        with pytest.raises(InfeasibleSpec):
            synth_scene(SynthSceneSpec(class_count=5, bands=8, height=2, width=2))

    def test_pair_validation(self):
        with pytest.raises(ValueError):
            SynthSceneSpec(class_count=3, bands=8, height=8, width=8,
                           confusable_pairs=((1, 1),))
        with pytest.raises(ValueError):
            SynthSceneSpec(class_count=3, bands=8, height=8, width=8,
                           confusable_pairs=((1, 4),))

    @staticmethod
    def _class_mean_gap(z: np.ndarray, labels: np.ndarray, a: int, b: int) -> float:
        """RMS distance between per-class mean spectra in normalized space."""
        mu_a = z[labels == a].mean(axis=0)
        mu_b = z[labels == b].mean(axis=0)
        return float(np.sqrt(np.mean((mu_a - mu_b) ** 2)))

    def test_confusable_pair_separates_under_derivative(self):
        # Phase-coded oscillation: invisible next to the magnitude nuisance,
        # dominant once smooth structure is differenced away.
        for seed in range(3):
            cube, mask = synth_scene(self._spec(seed=seed))
            zm = normalize_bands(cube).data
            zd = normalize_bands(derivative(cube, DerivativeSpec(1, 1))).data
            gap_m = self._class_mean_gap(zm, mask.labels, 1, 2)
            gap_d = self._class_mean_gap(zd, mask.labels, 1, 2)
            assert gap_d > 5.0 * gap_m

    def test_offset_pair_collapses_under_derivative(self):
        for seed in range(3):
            cube, mask = synth_scene(self._spec(seed=seed))
            zm = normalize_bands(cube).data
            zd = normalize_bands(derivative(cube, DerivativeSpec(1, 1))).data
            gap_m = self._class_mean_gap(zm, mask.labels, 3, 4)
            gap_d = self._class_mean_gap(zd, mask.labels, 3, 4)
            assert gap_m > 5.0 * gap_d

    def test_every_class_region_is_contiguous_block_union(self):
        _, mask = synth_scene(self._spec())
        # every class occupies at least one full rectangular block, so its
        # pixel count is well above a scattered minimum
        for cls in range(1, 5):
            assert (mask.labels == cls).sum() >= 16
