import pytest
import torch

from tridepth.config import Settings

# Bitwise reproducibility of training runs holds single-threaded only.
torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg(tmp_path) -> Settings:
    """Settings small enough for a training step in well under a second."""
    return Settings(
        z_dim=8,
        w_dim=16,
        mapping_hidden=16,
        feat_dim=4,
        plane_res=8,
        synthesis_channels=8,
        decoder_hidden=16,
        camera_hidden=8,
        n_steps=8,
        img_res=8,
        patch_res=8,
        adaptor_channels=8,
        disc_channels=8,
        disc_hidden=16,
        teacher_channels=4,
        teacher_dim=4,
        batch_size=2,
        emd_samples=8,
        n_scenes=6,
        data_workers=2,
        nfs_maps=4,
        collapse_draws=64,
        checkpoint_interval=1000,
        log_interval=1000,
        log_dir=str(tmp_path / "logs"),
    )


@pytest.fixture
def tiny_data(tiny_cfg, tmp_path):
    from tridepth.dataset import SyntheticDataset, gen_dataset

    root = gen_dataset(tiny_cfg, tmp_path / "data", seed=7)
    return SyntheticDataset.load(root)
