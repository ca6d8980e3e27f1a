"""Masked-reconstruction pre-training, dual-stage transfer, checkpoints.

The loss averages the per-element squared error over masked tubes only; each
target tube is optionally standardized with its own mean and variance before
comparison. Checkpoints are a flat named-array container so stage-1 weights
can be carried into stage-2 runs, with permissive loading across mismatched
shapes (e.g. positional tables for a different token count).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DataError, NumericFailure, TransferError
from .model import MaeModel
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr
from .tubes import MaskSpec, STRATEGY_RANDOM, TubeGrid, partition_tubes, sample_mask

CKPT_MAGIC = b"DMCK"
CKPT_VERSION = 1

STAGE_VIDEO = "stage1-video"
STAGE_WATERFALL = "stage2-waterfall"
STAGE_SCRATCH = "scratch"


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 500
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(1e-3, 0.0, 40, 500))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    mask_ratio: float = 0.9
    mask_strategy: str = STRATEGY_RANDOM
    seed: int = 0
    normalize_targets: bool = True
    stage: str = STAGE_SCRATCH

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")

    @staticmethod
    def full_preset() -> "TrainConfig":
        return TrainConfig()


def reconstruction_loss(targets: np.ndarray, predictions: Tensor,
                        masks: list[MaskSpec], normalize: bool = True,
                        eps: float = 1e-8) -> Tensor:
    """Mean over masked tubes of the per-element mean squared error."""
    n_masked_total = sum(m.n_masked for m in masks)
    if n_masked_total == 0:
        raise ContractError("reconstruction loss needs a non-empty mask")
    b, n = targets.shape[:2]
    tube_elems = int(np.prod(targets.shape[2:]))
    t = targets.reshape(b, n, tube_elems).astype(np.float64)
    if normalize:
        mu = t.mean(axis=-1, keepdims=True)
        var = t.var(axis=-1, keepdims=True)
        t = (t - mu) / np.sqrt(var + eps)
    weights = np.zeros((b, n, 1), dtype=predictions.dtype)
    for i, m in enumerate(masks):
        weights[i, m.masked, 0] = 1.0
    pred = predictions.reshape(b, n, tube_elems)
    diff = pred - Tensor(t.astype(pred.data.dtype))
    per_tube = (diff * diff).mean(axis=-1, keepdims=True)
    return (per_tube * Tensor(weights)).sum() * (1.0 / n_masked_total)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float


def write_loss_curve(curve: list[EpochRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,lr\n")
        for rec in curve:
            fh.write(f"{rec.epoch},{rec.loss:.8g},{rec.lr:.8g}\n")


def pretrain(tensors: list[np.ndarray], model: MaeModel, grid: TubeGrid,
             cfg: TrainConfig, log_every: int = 0) -> list[EpochRecord]:
    """Self-supervised masked reconstruction; deterministic given cfg.seed.

    `tensors` are preprocessed (C, T, F, D) arrays. Fresh masks are drawn per
    sample each epoch from a seed stream derived from (seed, epoch).
    """
    if not tensors:
        raise ContractError("pretrain needs a non-empty dataset")
    tubes_all = np.stack([partition_tubes(t, grid) for t in tensors])
    n_samples = len(tubes_all)
    state = OptimizerState(
        beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    params = model.parameters()
    curve: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.schedule)
        epoch_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch,))
        )
        order = epoch_rng.permutation(n_samples)
        mask_seeds = epoch_rng.integers(0, 2**31, size=n_samples)
        losses = []
        for start in range(0, n_samples, cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            masks = [
                sample_mask(grid, cfg.mask_ratio, cfg.mask_strategy,
                            seed=int(mask_seeds[i]))
                for i in batch_idx
            ]
            model.zero_grad()
            preds, targets = model.forward_mae(tubes_all[batch_idx], masks)
            loss = reconstruction_loss(targets, preds, masks, cfg.normalize_targets)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericFailure(
                    f"non-finite loss at epoch {epoch}, step {start // cfg.batch_size}"
                )
            loss.backward()
            adamw_step(params, state, lr=lr)
            losses.append(value)
        curve.append(EpochRecord(epoch, float(np.mean(losses)), lr))
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch:4d}  loss {curve[-1].loss:.5f}  lr {lr:.2e}")
    return curve


# -- stage-1 video-like data ---------------------------------------------------

def video_like_tensors(count: int, channels: int, frames: int, bins: int,
                       seed: int = 0, planes: int = 1) -> list[np.ndarray]:
    """Moving-blob tensors on the waterfall grid, for stage-1 pre-training.

    Each sample holds a few gaussian blobs drifting across the (C, F) plane
    over the frame axis, standardized per sample.
    """
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        tensor = np.zeros((channels, frames, bins), dtype=np.float64)
        cc, ff = np.meshgrid(np.arange(channels), np.arange(bins), indexing="ij")
        for _ in range(int(rng.integers(2, 5))):
            c0 = rng.uniform(0, channels)
            f0 = rng.uniform(0, bins)
            vc = rng.uniform(-0.5, 0.5) * channels / frames
            vf = rng.uniform(-0.5, 0.5) * bins / frames
            sc = rng.uniform(0.08, 0.25) * channels
            sf = rng.uniform(0.08, 0.25) * bins
            amp = rng.uniform(0.5, 2.0)
            for t in range(frames):
                blob = amp * np.exp(
                    -0.5 * (((cc - c0 - vc * t) / sc) ** 2 + ((ff - f0 - vf * t) / sf) ** 2)
                )
                tensor[:, t, :] += blob
        tensor += rng.normal(0, 0.05, tensor.shape)
        tensor = (tensor - tensor.mean()) / (tensor.std() + 1e-8)
        out.append(np.repeat(tensor[..., None], planes, axis=-1).astype(np.float32))
    return out


# -- checkpoints ---------------------------------------------------------------

@dataclass
class LoadReport:
    loaded: list[str]
    skipped: list[str]  # arrays in the file with no matching parameter
    reinitialized: list[str]  # parameters left at their current values


def write_array_container(arrays: dict[str, np.ndarray], meta: dict, path) -> None:
    """Named-array container, also used to cache preprocessed tensors."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))
        lines = [f"{k}={v}" for k, v in meta.items()]
        fh.write("\n".join(lines).encode("utf-8"))


def save_checkpoint(model: MaeModel, meta: dict, path) -> None:
    write_array_container({name: p.data for name, p in model.params.items()}, meta, path)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise DataError(f"bad checkpoint magic in {path}")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n_values = int(np.prod(shape)) if rank else 1
            end = offset + 4 * n_values
            if end > len(blob):
                raise DataError(f"truncated checkpoint {path}")
            arrays[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy()
            offset = end
    except struct.error as exc:
        raise DataError(f"truncated checkpoint {path}") from exc
    meta: dict[str, str] = {}
    for line in blob[offset:].decode("utf-8", errors="replace").splitlines():
        key, _, value = line.partition("=")
        if key:
            meta[key] = value
    return arrays, meta


def load_checkpoint(path, model: MaeModel, strict: bool = False) -> LoadReport:
    """Copy name-and-shape-matching arrays into the model.

    Permissive mode reports every mismatch; strict mode raises on the first.
    """
    arrays, _ = read_checkpoint(path)
    loaded, skipped, reinitialized = [], [], []
    for name, p in model.params.items():
        if name not in arrays:
            if strict:
                raise TransferError(f"parameter {name!r} missing from checkpoint")
            reinitialized.append(name)
            continue
        arr = arrays[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            if strict:
                raise TransferError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.data.shape}"
                )
            reinitialized.append(name)
            continue
        p.data = arr.astype(p.data.dtype)
        loaded.append(name)
    for name in arrays:
        if name not in model.params:
            if strict:
                raise TransferError(f"checkpoint array {name!r} has no matching parameter")
            skipped.append(name)
    return LoadReport(loaded, skipped, reinitialized)
