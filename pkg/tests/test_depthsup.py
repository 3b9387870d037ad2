import numpy as np
import pytest
import torch

from tridepth.config import Settings
from tridepth.depthsup import (
    CorruptionConfig,
    DepthAdaptor,
    SelectionPolicy,
    adapt,
    monotone_remap,
    normalize_real_depth,
    select_depth,
    simulate_estimated_depth,
)
from tridepth.diffmath import DTYPE


def _d_bar(b=4, h=6, w=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(b, h, w, generator=g, dtype=DTYPE) * 2 - 1


class TestAdaptor:
    def test_three_bounded_maps(self):
        maps = adapt(DepthAdaptor(channels=4), _d_bar() * 50)
        assert len(maps) == 3
        for m in maps:
            assert m.shape == (4, 6, 6)
            assert torch.all(m.abs() <= 1)

    def test_head_shared_across_layers(self):
        adaptor = DepthAdaptor(channels=4)
        heads = [m for m in adaptor.modules() if isinstance(m, torch.nn.Conv2d) and m.kernel_size == (1, 1)]
        assert len(heads) == 1


class TestSelection:
    def test_probabilities(self):
        probs = SelectionPolicy(0.25).probabilities
        assert probs.tolist() == pytest.approx([0.25, 0.25, 0.25, 0.25])
        assert float(SelectionPolicy(0.7).probabilities.sum()) == pytest.approx(1.0)

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            SelectionPolicy(1.5)

    def test_p_one_always_raw(self):
        d_bar = _d_bar()
        adapted = adapt(DepthAdaptor(channels=4), d_bar)
        selected, choices = select_depth(d_bar, adapted, SelectionPolicy(1.0), torch.Generator().manual_seed(0))
        assert torch.equal(selected, d_bar)
        assert choices.tolist() == [0, 0, 0, 0]

    def test_p_zero_never_raw(self):
        d_bar = _d_bar(b=64)
        adapted = adapt(DepthAdaptor(channels=4), d_bar)
        selected, choices = select_depth(d_bar, adapted, SelectionPolicy(0.0), torch.Generator().manual_seed(0))
        assert torch.all(choices > 0)
        for i in range(64):
            assert torch.equal(selected[i], adapted[int(choices[i]) - 1][i])

    def test_raw_frequency_follows_policy(self):
        d_bar = torch.zeros(4000, 1, 1, dtype=DTYPE)
        adapted = (d_bar + 1, d_bar + 2, d_bar + 3)
        _, choices = select_depth(d_bar, adapted, SelectionPolicy(0.25), torch.Generator().manual_seed(3))
        assert float((choices == 0).double().mean()) == pytest.approx(0.25, abs=0.03)

    def test_even_split_at_half(self):
        d_bar = torch.zeros(10_000, 1, 1, dtype=DTYPE)
        adapted = (d_bar + 1, d_bar + 2, d_bar + 3)
        _, choices = select_depth(d_bar, adapted, SelectionPolicy(0.5), torch.Generator().manual_seed(11))
        freq = torch.bincount(choices, minlength=4).double() / len(choices)
        assert 0.48 <= float(freq[0]) <= 0.52
        for k in (1, 2, 3):
            assert float(freq[k]) == pytest.approx(1 / 6, abs=0.01)

    def test_gradient_reaches_adaptor(self):
        adaptor = DepthAdaptor(channels=4)
        d_bar = _d_bar()
        selected, _ = select_depth(d_bar, adapt(adaptor, d_bar), SelectionPolicy(0.0), torch.Generator().manual_seed(0))
        grads = torch.autograd.grad(selected.sum(), list(adaptor.parameters()), allow_unused=True)
        assert any(g is not None and g.abs().sum() > 0 for g in grads)


class TestNormalizeRealDepth:
    def test_numpy_extremes(self):
        depth = np.array([[0.8, 1.0], [1.2, 0.9]])
        out = normalize_real_depth(depth)
        assert out.min() == pytest.approx(-1.0)
        assert out.max() == pytest.approx(1.0)
        assert out[1, 1] == pytest.approx(-0.5)

    def test_torch_stack_per_map(self):
        depth = torch.stack([
            torch.tensor([[1.0, 2.0], [3.0, 5.0]], dtype=DTYPE),
            torch.tensor([[10.0, 10.0], [20.0, 20.0]], dtype=DTYPE),
        ])
        out = normalize_real_depth(depth)
        assert out[0].tolist() == pytest.approx([[-1.0, -0.5], [0.0, 1.0]])
        assert out[1].tolist() == pytest.approx([[-1.0, -1.0], [1.0, 1.0]])

    def test_constant_map_is_zero(self):
        assert np.all(normalize_real_depth(np.full((3, 3), 0.9)) == 0.0)
        assert torch.all(normalize_real_depth(torch.ones(2, 2, dtype=DTYPE)) == 0.0)


class TestSimulatedEstimate:
    @pytest.fixture
    def depth(self):
        yy, xx = np.mgrid[0:16, 0:16]
        return 0.8 + 0.02 * xx + 0.2 * ((xx - 8) ** 2 + (yy - 8) ** 2 < 16)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CorruptionConfig(blur_sigma=-1.0)
        with pytest.raises(ValueError):
            CorruptionConfig(remap_strength=2.0)

    def test_from_settings(self):
        cfg = CorruptionConfig.from_settings(Settings(depth_noise_std=0.05))
        assert cfg.noise_std == 0.05

    def test_no_corruption_is_identity(self, depth):
        cfg = CorruptionConfig(0.0, 0.0, 0.0)
        assert np.array_equal(simulate_estimated_depth(depth, cfg, np.random.default_rng(0)), depth)

    def test_blur_preserves_mean_and_smooths(self, depth):
        out = simulate_estimated_depth(depth, CorruptionConfig(1.5, 0.0, 0.0), np.random.default_rng(0))
        assert out.mean() == pytest.approx(depth.mean(), abs=1e-10)
        assert np.abs(np.diff(out, axis=0)).max() < np.abs(np.diff(depth, axis=0)).max()

    def test_remap_keeps_order_and_range(self, depth):
        out = monotone_remap(depth)
        order = np.argsort(depth, axis=None, kind="stable")
        assert np.all(np.diff(out.ravel()[order]) >= 0)
        assert out.min() == pytest.approx(depth.min())
        assert out.max() == pytest.approx(depth.max())

    def test_noise_level(self):
        flat = np.ones((64, 64))
        out = simulate_estimated_depth(flat, CorruptionConfig(0.0, 0.1, 0.0), np.random.default_rng(1))
        assert np.std(out - flat) == pytest.approx(0.1, rel=0.05)

    def test_deterministic_for_seed(self, depth):
        cfg = CorruptionConfig()
        a = simulate_estimated_depth(depth, cfg, np.random.default_rng(5))
        b = simulate_estimated_depth(depth, cfg, np.random.default_rng(5))
        assert np.array_equal(a, b)
