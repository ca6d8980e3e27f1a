"""Tube partitioning of spectro tensors and mask sampling.

A tube is an axis-aligned (C_p, T_p, F_p) block; tube order is row-major over
(channel-block, time-block, frequency-block). Trailing remainders on
non-divisible extents are truncated. Masks are sampled uniformly at random or
as whole slices along one axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .stft import SpectroTensor

STRATEGY_RANDOM = "random"
STRATEGY_SPATIAL = "spatial"
STRATEGY_TEMPORAL = "temporal"
STRATEGY_FREQUENCY = "frequency"
STRATEGIES = (STRATEGY_RANDOM, STRATEGY_SPATIAL, STRATEGY_TEMPORAL, STRATEGY_FREQUENCY)


@dataclass
class TubeGrid:
    cp: int
    tp: int
    fp: int
    channels: int
    frames: int
    bins: int

    def __post_init__(self):
        if min(self.cp, self.tp, self.fp) <= 0:
            raise ContractError("tube extents must be positive")
        if self.channels < self.cp or self.frames < self.tp or self.bins < self.fp:
            raise DataError(
                f"tensor ({self.channels},{self.frames},{self.bins}) smaller than "
                f"one tube ({self.cp},{self.tp},{self.fp})"
            )

    @property
    def n_c(self) -> int:
        return self.channels // self.cp

    @property
    def n_t(self) -> int:
        return self.frames // self.tp

    @property
    def n_f(self) -> int:
        return self.bins // self.fp

    @property
    def n_tubes(self) -> int:
        return self.n_c * self.n_t * self.n_f

    @staticmethod
    def for_tensor(t: SpectroTensor, cp: int, tp: int, fp: int) -> "TubeGrid":
        c, frames, bins, _ = t.shape
        return TubeGrid(cp, tp, fp, c, frames, bins)


@dataclass
class MaskSpec:
    ratio: float
    strategy: str
    seed: int
    masked: np.ndarray  # sorted tube indices
    visible: np.ndarray  # sorted complement

    @property
    def n_masked(self) -> int:
        return len(self.masked)

    @property
    def n_visible(self) -> int:
        return len(self.visible)


def partition_tubes(t: SpectroTensor | np.ndarray, grid: TubeGrid) -> np.ndarray:
    """(C, T, F, D) -> (N, C_p, T_p, F_p, D), row-major over blocks."""
    values = t.values if isinstance(t, SpectroTensor) else np.asarray(t)
    d = values.shape[-1]
    trimmed = values[: grid.n_c * grid.cp, : grid.n_t * grid.tp, : grid.n_f * grid.fp]
    blocks = trimmed.reshape(grid.n_c, grid.cp, grid.n_t, grid.tp, grid.n_f, grid.fp, d)
    return blocks.transpose(0, 2, 4, 1, 3, 5, 6).reshape(
        grid.n_tubes, grid.cp, grid.tp, grid.fp, d
    )


def reassemble_tubes(tubes: np.ndarray, grid: TubeGrid) -> np.ndarray:
    """Exact inverse of partition_tubes on divisible extents."""
    if len(tubes) != grid.n_tubes:
        raise ContractError(f"got {len(tubes)} tubes for a grid of {grid.n_tubes}")
    d = tubes.shape[-1]
    blocks = tubes.reshape(grid.n_c, grid.n_t, grid.n_f, grid.cp, grid.tp, grid.fp, d)
    return blocks.transpose(0, 3, 1, 4, 2, 5, 6).reshape(
        grid.n_c * grid.cp, grid.n_t * grid.tp, grid.n_f * grid.fp, d
    )


def _axis_slice_indices(grid: TubeGrid, strategy: str) -> tuple[int, np.ndarray]:
    """Number of slices along the strategy axis and the per-slice tube index sets."""
    idx = np.arange(grid.n_tubes).reshape(grid.n_c, grid.n_t, grid.n_f)
    if strategy == STRATEGY_SPATIAL:
        slices = idx.reshape(grid.n_c, -1)
    elif strategy == STRATEGY_TEMPORAL:
        slices = idx.transpose(1, 0, 2).reshape(grid.n_t, -1)
    elif strategy == STRATEGY_FREQUENCY:
        slices = idx.transpose(2, 0, 1).reshape(grid.n_f, -1)
    else:
        raise ContractError(f"unknown strategy {strategy!r}")
    return len(slices), slices


def sample_mask(grid: TubeGrid, ratio: float, strategy: str = STRATEGY_RANDOM,
                seed: int = 0) -> MaskSpec:
    """Sample a mask over the grid's tubes; deterministic given the seed.

    Random strategy masks exactly ceil(ratio * N) tubes. Axis strategies mask
    whole slices: the slice count targets the same total from above, capped at
    one fewer than the slice count so at least one slice stays visible.
    """
    if not (0.0 <= ratio < 1.0):
        raise ContractError(f"mask ratio must lie in [0, 1), got {ratio}")
    n = grid.n_tubes
    n_masked = math.ceil(ratio * n)
    rng = np.random.default_rng(seed)
    if strategy == STRATEGY_RANDOM:
        masked = np.sort(rng.choice(n, size=n_masked, replace=False))
    elif strategy in STRATEGIES:
        n_slices, slices = _axis_slice_indices(grid, strategy)
        if n_slices == 1 and ratio > 0:
            raise ContractError(
                f"{strategy} masking with a single slice would mask everything"
            )
        per_slice = slices.shape[1]
        k = min(math.ceil(n_masked / per_slice), n_slices - 1) if ratio > 0 else 0
        chosen = rng.choice(n_slices, size=k, replace=False)
        masked = np.sort(slices[chosen].ravel())
    else:
        raise ContractError(f"unknown strategy {strategy!r}")
    visible = np.setdiff1d(np.arange(n), masked, assume_unique=True)
    return MaskSpec(ratio, strategy, seed, masked, visible)


def apply_mask(tubes: np.ndarray, mask: MaskSpec) -> tuple[np.ndarray, MaskSpec]:
    """Keep visible tubes in their original relative order."""
    if len(mask.masked) and mask.masked.max() >= len(tubes):
        raise ContractError("mask index out of range for the given tube array")
    if len(mask.visible) and mask.visible.max() >= len(tubes):
        raise ContractError("mask index out of range for the given tube array")
    return tubes[mask.visible], mask
