import numpy as np
import pytest

from ptvlidar.core import (
    AcquisitionSpec,
    CountImage,
    RateImage,
    Resolution,
)
from ptvlidar.errors import ConfigError, DimensionError
from ptvlidar.forward import (
    Background,
    PulseKernel,
    apply_adjoint,
    apply_forward,
    composed_nll_grad,
    estimate_background,
    pulse_contaminated_bins,
)
from ptvlidar.likelihood import discrete_nll, discrete_nll_grad
from ptvlidar.simulate import RectPatchScene, sample_time_tags


def res_of(dt, spc=1):
    return Resolution(1, 1, dt, spc)


class TestPulseKernel:
    def test_unit_area_various_widths(self):
        dt = 5e-9
        for width in [0.0, 2e-9, 5e-9, 12.5e-9, 0.625e-6]:
            k = PulseKernel(width)
            taps = k.taps(dt)
            assert taps.sum() * dt == pytest.approx(1.0, rel=1e-12)
            assert (taps >= 0).all()

    def test_exact_multiple_taps(self):
        w = PulseKernel(20e-9).weights(5e-9)
        assert np.allclose(w, [0.25, 0.25, 0.25, 0.25])

    def test_partial_last_tap(self):
        w = PulseKernel(12e-9).weights(5e-9)
        assert np.allclose(w, [5 / 12, 5 / 12, 2 / 12])

    def test_delta(self):
        assert PulseKernel.delta().weights(1e-9).tolist() == [1.0]
        assert pulse_contaminated_bins(PulseKernel.delta(), 1e-9) == 0
        assert pulse_contaminated_bins(PulseKernel(20e-9), 5e-9) == 3


class TestForward:
    def test_impulse_gives_square_response(self):
        dt = 1e-9
        width = 4e-9
        x = np.zeros((16, 1))
        x[5, 0] = 1.0 / dt  # unit-area impulse
        out = apply_forward(RateImage(x, res_of(dt)), PulseKernel(width))
        expect = np.zeros((16, 1))
        expect[5:9, 0] = 1.0 / width
        assert np.allclose(out.rates, expect)
        assert out.rates.sum() * dt == pytest.approx(1.0)

    def test_zero_input_returns_background(self):
        x = RateImage(np.zeros((8, 3)), res_of(1e-9))
        bg = Background(np.array([1.0, 2.0, 3.0]))
        out = apply_forward(x, PulseKernel(3e-9), bg)
        assert np.allclose(out.rates, [[1.0, 2.0, 3.0]] * 8)

    def test_area_conservation_interior_support(self):
        rng = np.random.default_rng(2)
        dt = 1e-9
        x = np.zeros((32, 2))
        x[:24] = rng.uniform(0, 5e3, (24, 2))  # zero near the far edge
        bg = Background(np.array([7.0, 11.0]))
        out = apply_forward(RateImage(x, res_of(dt)), PulseKernel(6e-9), bg)
        lhs = out.rates.sum(axis=0) * dt
        rhs = x.sum(axis=0) * dt + bg.rates * 32 * dt
        assert np.allclose(lhs, rhs)

    def test_kernel_wider_than_window(self):
        x = RateImage(np.zeros((4, 1)), res_of(1e-9))
        with pytest.raises(ConfigError):
            apply_forward(x, PulseKernel(10e-9))

    def test_linearity_with_background(self):
        rng = np.random.default_rng(3)
        r = res_of(2e-9)
        x1 = rng.uniform(0, 4, (10, 2))
        x2 = rng.uniform(0, 4, (10, 2))
        bg = Background(np.array([0.5, 1.5]))
        k = PulseKernel(7e-9)
        a, b = 2.0, 3.0
        lhs = apply_forward(RateImage(a * x1 + b * x2, r), k, bg).rates
        rhs = (a * apply_forward(RateImage(x1, r), k, bg).rates
               + b * apply_forward(RateImage(x2, r), k, bg).rates
               - (a + b - 1) * bg.rates[np.newaxis, :])
        assert np.allclose(lhs, rhs)

    def test_nonnegativity_closure(self):
        rng = np.random.default_rng(4)
        x = RateImage(rng.uniform(0, 10, (12, 3)), res_of(1e-9))
        out = apply_forward(x, PulseKernel(4.5e-9), Background.zero(3))
        assert out.rates.min() >= 0


class TestAdjoint:
    @pytest.mark.parametrize("width_bins", [0.0, 1.0, 2.5, 7.0])
    def test_adjoint_identity(self, width_bins):
        rng = np.random.default_rng(int(width_bins * 10))
        dt = 1e-9
        k = PulseKernel(width_bins * dt)
        for _ in range(5):
            x = rng.normal(size=(16, 3))
            y = rng.normal(size=(16, 3))
            ax = apply_forward(RateImage(np.abs(x), res_of(dt)), k).rates
            aty = apply_adjoint(y, k, dt)
            lhs = float((ax * y).sum())
            rhs = float((np.abs(x) * aty).sum())
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_delta_is_identity(self):
        g = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(apply_adjoint(g, PulseKernel.delta(), 1e-9), g)

    def test_constant_with_delta_unchanged(self):
        g = np.full((5, 2), 3.3)
        assert np.allclose(apply_adjoint(g, None, 1e-9), g)


class TestComposed:
    def test_reduces_to_discrete_with_delta_kernel(self):
        rng = np.random.default_rng(5)
        r = Resolution(1, 1, 0.5, 4)
        x = RateImage(rng.uniform(0.5, 4, (6, 3)), r)
        counts = CountImage(rng.poisson(2.0, (6, 3)), r, np.full(3, 4))
        val, grad = composed_nll_grad(x, counts, None, None)
        assert val == pytest.approx(discrete_nll(x, counts))
        assert np.allclose(grad, discrete_nll_grad(x, counts))

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        r = Resolution(1, 1, 0.5, 2)
        shape = (6, 3)
        x = rng.uniform(0.5, 4, shape)
        counts = CountImage(rng.poisson(2.0, shape), r, np.full(3, 2))
        kernel = PulseKernel(0.5 * rng.integers(1, 4))
        bg = Background(rng.uniform(0.1, 1.0, 3))
        _, grad = composed_nll_grad(RateImage(x, r), counts, kernel, bg)
        fd = np.zeros(shape)
        for i in range(shape[0]):
            for j in range(shape[1]):
                h = 1e-6 * x[i, j]
                hi, lo = x.copy(), x.copy()
                hi[i, j] += h
                lo[i, j] -= h
                va, _ = composed_nll_grad(RateImage(hi, r), counts, kernel, bg)
                vb, _ = composed_nll_grad(RateImage(lo, r), counts, kernel, bg)
                fd[i, j] = (va - vb) / (2 * h)
        assert np.linalg.norm(fd - grad) <= 1e-6 * np.linalg.norm(fd)

    def test_zero_counts_gradient_pushes_down(self):
        r = Resolution(1, 1, 1.0, 2)
        x = RateImage(np.full((8, 2), 1.0), r)
        counts = CountImage(np.zeros((8, 2)), r, np.full(2, 2))
        _, grad = composed_nll_grad(x, counts, PulseKernel(3.0), None)
        assert (grad > 0).all()


class TestBackground:
    def test_shot_scale_grouping(self):
        bg = Background(np.array([1.0, 3.0, 5.0, 7.0]))
        assert bg.at_shot_scale(2).rates.tolist() == [2.0, 6.0]
        with pytest.raises(DimensionError):
            bg.at_shot_scale(3)

    def test_estimate_recovers_constant_rate(self):
        # large counts: per-column estimate should land within 5%
        rate = 5e5
        spec = AcquisitionSpec(1e-7, 100e-6, 1000, 64)
        scene = RectPatchScene(rate, (), 100e-6, 64)
        tags = sample_time_tags(scene, spec, seed=50)
        bg = estimate_background(tags, (0.0, 100e-6), shots_per_col=8)
        assert bg.rates.size == 8
        assert np.all(np.abs(bg.rates / rate - 1) < 0.05)

    def test_estimate_zero_counts_floors(self):
        spec = AcquisitionSpec(1e-7, 100e-6, 1000, 8)
        scene = RectPatchScene(0.0, (), 100e-6, 8)
        tags = sample_time_tags(scene, spec, seed=51)
        bg = estimate_background(tags, (0.0, 100e-6), shots_per_col=4)
        assert np.all(bg.rates == 1e-12)

    def test_estimate_region_scaling_consistency(self):
        rate = 2e5
        spec = AcquisitionSpec(1e-7, 200e-6, 2000, 32)
        scene = RectPatchScene(rate, (), 200e-6, 32)
        tags = sample_time_tags(scene, spec, seed=52)
        short = estimate_background(tags, (0.0, 100e-6), shots_per_col=8)
        full = estimate_background(tags, (0.0, 200e-6), shots_per_col=8)
        assert np.all(np.abs(short.rates / rate - 1) < 0.1)
        assert np.all(np.abs(full.rates / rate - 1) < 0.1)

    def test_empty_region_rejected(self):
        spec = AcquisitionSpec(1e-7, 100e-6, 1000, 4)
        scene = RectPatchScene(1.0, (), 100e-6, 4)
        tags = sample_time_tags(scene, spec, seed=53)
        with pytest.raises(ConfigError):
            estimate_background(tags, (5e-5, 5e-5), shots_per_col=2)
