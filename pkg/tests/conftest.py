"""Shared desk-scale benchmark fixtures for the acceptance suite.

The expensive artifacts (dataset, three pre-trained encoders) are built once
per session and reused across the learning-behavior criteria.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from wfmae.dasgen import GenConfig, synth_dataset
from wfmae.model import MaeModel, ModelConfig
from wfmae.optim import LrSchedule
from wfmae.pipeline import TrainConfig, pretrain
from wfmae.stft import StftConfig, preprocess
from wfmae.tubes import TubeGrid, partition_tubes

SEEDS = [0, 1, 2]

DESK_STFT = StftConfig(window=40, hop=40, nfft=64)
DESK_TUBES = (2, 8, 8)


def desk_model_config(n_tokens: int) -> ModelConfig:
    return ModelConfig(
        cp=2, tp=8, fp=8, di=1, enc_width=64, enc_depth=4, enc_heads=4,
        dec_width=32, dec_depth=2, dec_heads=2, mlp_ratio=4, n_tokens=n_tokens,
    )


@dataclass
class DeskBenchmark:
    train_plots: list
    train_labels: np.ndarray
    test_plots: list
    test_labels: np.ndarray
    train_tensors: list
    test_tensors: list
    train_tubes: np.ndarray
    test_tubes: np.ndarray
    grid: TubeGrid
    n_classes: int


@pytest.fixture(scope="session")
def desk_benchmark() -> DeskBenchmark:
    # 6 classes x 120 samples, split 5/6 -> 600 train / 120 test
    cfg = GenConfig.benchmark(per_class=120, samples=2000, split=5 / 6, seed=0)
    manifest, samples = synth_dataset(cfg)
    by_name = {f"sample_{i:05d}.wfp": s for i, s in enumerate(samples)}
    train_plots = [by_name[f] for f in manifest.train_files]
    test_plots = [by_name[f] for f in manifest.test_files]
    train_labels = np.array([manifest.labels[f] for f in manifest.train_files])
    test_labels = np.array([manifest.labels[f] for f in manifest.test_files])
    train_tensors = [preprocess(p, DESK_STFT).values for p in train_plots]
    test_tensors = [preprocess(p, DESK_STFT).values for p in test_plots]
    grid = TubeGrid(*DESK_TUBES, *train_tensors[0].shape[:3])
    train_tubes = np.stack([partition_tubes(t, grid) for t in train_tensors])
    test_tubes = np.stack([partition_tubes(t, grid) for t in test_tensors])
    return DeskBenchmark(
        train_plots, train_labels, test_plots, test_labels,
        train_tensors, test_tensors, train_tubes, test_tubes,
        grid, len(manifest.class_names),
    )


@pytest.fixture(scope="session")
def pretrained_models(desk_benchmark) -> dict[int, MaeModel]:
    """Three encoders pre-trained 100 epochs at mask ratio 0.9, one per seed."""
    models = {}
    for seed in SEEDS:
        model = MaeModel(desk_model_config(desk_benchmark.grid.n_tubes), seed=seed)
        cfg = TrainConfig(
            batch_size=32, epochs=100, schedule=LrSchedule(1e-3, 0.0, 10, 100),
            mask_ratio=0.9, seed=seed,
        )
        pretrain(desk_benchmark.train_tensors, model, desk_benchmark.grid, cfg)
        models[seed] = model
    return models


@pytest.fixture(scope="session")
def random_models(desk_benchmark) -> dict[int, MaeModel]:
    return {
        seed: MaeModel(desk_model_config(desk_benchmark.grid.n_tubes), seed=seed)
        for seed in SEEDS
    }
