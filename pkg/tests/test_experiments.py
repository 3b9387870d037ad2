import json

import pytest
import torch

from tridepth.camera import CameraGenerator, CameraPrior
from tridepth.config import Settings
from tridepth.dataset import SyntheticDataset, gen_dataset
from tridepth.experiments import (
    CAMERA_VARIANTS,
    DEPTH_VARIANTS,
    ablate_camera,
    ablate_depth,
    collapse_statistic,
    run_training,
)

class TestCollapseStatistic:
    def test_identity_camera_keeps_prior_spread(self, tiny_cfg):
        ratios = collapse_statistic(lambda p, z, c: p, tiny_cfg, seed=0, n=256)
        assert set(ratios) == {"yaw", "pitch", "fov", "lookat_yaw", "lookat_pitch", "lookat_radius"}
        assert all(r == pytest.approx(1.0) for r in ratios.values())

    def test_constant_camera_collapses(self, tiny_cfg):
        ratios = collapse_statistic(lambda p, z, c: p * 0 + 0.5, tiny_cfg, seed=0, n=256)
        assert all(r == 0.0 for r in ratios.values())

    def test_fresh_generator_is_finite(self, tiny_cfg):
        cam = CameraGenerator(CameraPrior.from_settings(tiny_cfg), tiny_cfg.z_dim, tiny_cfg.n_classes, 8)
        ratios = collapse_statistic(cam, tiny_cfg, seed=0)
        assert all(r >= 0 for r in ratios.values())


class TestRunTraining:
    def test_periodic_checkpoints(self, tiny_cfg, tiny_data, tmp_path):
        cfg = tiny_cfg.model_copy(update={"checkpoint_interval": 2})
        state = run_training(cfg, tiny_data, tmp_path / "run", steps=4)
        assert state.step == 4
        names = sorted(p.name for p in (tmp_path / "run").glob("checkpoint_*.pt"))
        assert names == ["checkpoint_000002.pt", "checkpoint_000004.pt", "checkpoint_latest.pt"]
        record = json.loads((tmp_path / "run" / "run.json").read_text())
        assert record["seed"] == cfg.seed


class TestAblationTables:
    def test_depth_table(self, tiny_cfg, tiny_data, tmp_path):
        table = ablate_depth(tiny_cfg, tiny_data, tmp_path / "abl", steps=1, seeds=(0,))
        assert list(table) == list(DEPTH_VARIANTS)
        assert all(1.0 <= v <= tiny_cfg.nfs_bins for v in table.values())
        assert (tmp_path / "abl" / "ablate_depth.json").exists()

    def test_camera_table(self, tiny_cfg, tiny_data, tmp_path):
        table = ablate_camera(tiny_cfg, tiny_data, tmp_path / "abl", steps=1)
        assert list(table) == list(CAMERA_VARIANTS)
        assert all(len(row) == 6 for row in table.values())
        report = json.loads((tmp_path / "abl" / "ablate_camera.json").read_text())
        assert "gradpen.yaw" in report


@pytest.fixture(scope="module")
def full_data(tmp_path_factory):
    cfg = Settings()
    root = gen_dataset(cfg, tmp_path_factory.mktemp("full") / "data", seed=0)
    return cfg, SyntheticDataset.load(root)


@pytest.mark.experiment
class TestAblationTrends:
    def test_depth_supervision_raises_nfs(self, full_data, tmp_path):
        torch.set_num_threads(1)
        cfg, data = full_data
        table = ablate_depth(cfg, data, tmp_path / "depth")
        assert table["P=0.5"] > table["P=0"]
        assert table["P=0.5"] > table["no-ADS"]

    def test_regularizers_prevent_collapse(self, full_data, tmp_path):
        cfg, data = full_data
        table = ablate_camera(cfg, data, tmp_path / "camera")
        for reg in ("none", "residual"):
            assert min(table[reg]["yaw"], table[reg]["pitch"]) < 0.1
        for reg in ("gradpen", "emd"):
            assert min(table[reg]["yaw"], table[reg]["pitch"]) > 0.3
