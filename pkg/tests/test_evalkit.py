import json

import numpy as np
import pytest
import scipy.linalg
import torch

from tridepth.camera import CameraPrior
from tridepth.config import Settings
from tridepth.errors import MetricError
from tridepth.evalkit import (
    DepthHistogram,
    FeatureStats,
    frechet_distance,
    frontal_camera,
    generated_depth_maps,
    generator_nfs,
    instance_select,
    nfs,
    write_report,
)
from tridepth.scene import Generator

NEAR, FAR, BINS = 0.75, 1.25, 64


def _uniform_map():
    k = np.arange(BINS)
    return (NEAR + (FAR - NEAR) * (k + 0.5) / BINS).reshape(8, 8)


class TestHistogram:
    def test_counts_cover_every_pixel(self):
        hist = DepthHistogram.from_normalized(np.array([-3.0, -1.0, 0.0, 1.0, 5.0]), 4)
        assert hist.counts.sum() == 5
        assert hist.counts[0] == 2 and hist.counts[-1] == 2

    def test_needs_two_bins(self):
        with pytest.raises(ValueError):
            DepthHistogram(np.array([3]), 3)


class TestNfs:
    def test_single_bin_is_one(self):
        assert nfs([np.full((8, 8), 1.0)], NEAR, FAR, BINS) == 1.0

    def test_uniform_fixture_hits_bin_count(self):
        assert nfs([_uniform_map()], NEAR, FAR, BINS) == pytest.approx(64.0, abs=1e-9)

    def test_flat_versus_deep_scene(self):
        flat = np.full((32, 32), 0.9) + np.random.default_rng(0).normal(0, 1e-4, (32, 32))
        ramp = np.tile(np.linspace(NEAR, FAR, 128), (4, 1))
        assert nfs([flat], NEAR, FAR, BINS) < 1.5
        assert nfs([ramp], NEAR, FAR, BINS) > BINS / 2

    def test_bounds_for_random_maps(self):
        rng = np.random.default_rng(1)
        maps = [rng.uniform(0.0, 2.0, size=(16, 16)) for _ in range(5)]
        score = nfs(maps, NEAR, FAR, BINS)
        assert 1.0 <= score <= BINS

    def test_mean_over_maps_and_limit(self):
        maps = [np.full((8, 8), 1.0), _uniform_map(), _uniform_map()]
        assert nfs(maps, NEAR, FAR, BINS) == pytest.approx((1 + 64 + 64) / 3)
        assert nfs(maps, NEAR, FAR, BINS, n_maps=1) == 1.0

    def test_accepts_tensors(self):
        assert nfs([torch.tensor(_uniform_map())], NEAR, FAR, BINS) == pytest.approx(64.0)

    def test_empty_inputs(self):
        with pytest.raises(MetricError):
            nfs([], NEAR, FAR)
        with pytest.raises(MetricError):
            nfs([np.zeros((0, 4))], NEAR, FAR)


class TestGeneratedMaps:
    def test_frontal_camera_is_prior_mean(self):
        prior = CameraPrior.from_settings(Settings())
        cams = frontal_camera(prior, 3)
        assert cams.values.shape == (3, 6)
        assert torch.equal(cams.values[0], cams.values[2])

    def test_generator_nfs_in_bounds_and_seeded(self, tiny_cfg):
        torch.manual_seed(0)
        gen = Generator(tiny_cfg)
        maps = list(generated_depth_maps(gen, tiny_cfg, 3, torch.Generator().manual_seed(0), batch_size=2))
        assert len(maps) == 3
        assert maps[0].shape == (tiny_cfg.img_res, tiny_cfg.img_res)
        a = generator_nfs(gen, tiny_cfg, seed=1, n_maps=2)
        b = generator_nfs(gen, tiny_cfg, seed=1, n_maps=2)
        assert a == b
        assert 1.0 <= a <= tiny_cfg.nfs_bins


class TestFrechet:
    def test_one_dimensional_closed_form(self):
        a = FeatureStats(np.array([1.0]), np.array([[4.0]]))
        b = FeatureStats(np.array([-1.0]), np.array([[1.0]]))
        assert frechet_distance(a, b) == pytest.approx(4.0 + 1.0)

    def test_matches_sqrtm_formula(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(200, 4))
        y = rng.normal(size=(150, 4)) @ rng.normal(size=(4, 4)) + 0.5
        a, b = FeatureStats.from_features(x), FeatureStats.from_features(y)
        cross = scipy.linalg.sqrtm(a.cov @ b.cov).real
        expected = np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov + b.cov - 2 * cross)
        assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-6)

    def test_symmetric_and_zero_on_self(self):
        rng = np.random.default_rng(3)
        a = FeatureStats.from_features(rng.normal(size=(50, 3)))
        b = FeatureStats.from_features(rng.normal(size=(50, 3)) + 1)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)
        assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            frechet_distance(
                FeatureStats(np.zeros(2), np.eye(2)), FeatureStats(np.zeros(3), np.eye(3)),
            )

    def test_needs_two_rows(self):
        with pytest.raises(MetricError):
            FeatureStats.from_features(np.zeros((1, 3)))


class TestInstanceSelect:
    def test_drops_outlier(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(19, 2)) * 0.1
        feats = np.vstack([feats, [[8.0, -8.0]]])
        kept = instance_select(feats, 0.5)
        assert len(kept) == 10
        assert 19 not in kept
        assert np.all(np.diff(kept) > 0)

    def test_keep_count_rounds_up(self):
        feats = np.random.default_rng(5).normal(size=(10, 2))
        assert len(instance_select(feats, 0.25)) == 3
        assert instance_select(feats, 1.0).tolist() == list(range(10))

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            instance_select(np.zeros((4, 2)), 0.0)


class TestReport:
    def test_text_and_json(self, tmp_path):
        txt, js = write_report(tmp_path / "r", "eval", {"nfs": 3.5, "seed": 0})
        assert txt.read_text() == "nfs=3.5\nseed=0\n"
        assert json.loads(js.read_text()) == {"nfs": 3.5, "seed": 0}
