"""STFT front-end: 2D waterfall -> 3D channel x frame x frequency tensor.

Hop equals window (no overlap), rectangular window, zero-padding to the FFT
length, and only bins 0..Nfft/2-1 are kept so the bin count is half the FFT
length. Three real-valued output formats are supported; concatenation happens
along a trailing plane axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dasgen import WaterfallPlot
from .errors import ContractError, DataError

FORMAT_MAGNITUDE = "magnitude"
FORMAT_MAG_PHASE = "magnitude_phase"
FORMAT_REAL_IMAG = "real_imag"
FORMATS = (FORMAT_MAGNITUDE, FORMAT_MAG_PHASE, FORMAT_REAL_IMAG)

NORM_NONE = "none"
NORM_LOG_ZSCORE = "log_zscore"


@dataclass
class StftConfig:
    window: int
    hop: int
    nfft: int
    format: str = FORMAT_MAGNITUDE
    normalize: str = NORM_LOG_ZSCORE

    def __post_init__(self):
        if not (0 < self.window <= self.nfft):
            raise ContractError(f"need 0 < window <= nfft, got {self.window}, {self.nfft}")
        if self.hop != self.window:
            raise ContractError("hop must equal window (non-overlapping frames)")
        if self.nfft % 2 != 0:
            raise ContractError("nfft must be even")
        if self.format not in FORMATS:
            raise ContractError(f"unknown format {self.format!r}")
        if self.normalize not in (NORM_NONE, NORM_LOG_ZSCORE):
            raise ContractError(f"unknown normalization {self.normalize!r}")

    @property
    def bins(self) -> int:
        return self.nfft // 2

    @property
    def planes(self) -> int:
        return 1 if self.format == FORMAT_MAGNITUDE else 2


@dataclass
class SpectroTensor:
    """Real tensor (C, T, F, D) plus its format and normalization state."""

    values: np.ndarray
    format: str
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise ContractError(f"spectro tensor must be rank-4, got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


def stft_complex(x: WaterfallPlot | np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Complex frames (C, T, Nfft/2): non-overlapping windows, zero-padded."""
    values = x.values if isinstance(x, WaterfallPlot) else np.asarray(x)
    c, s = values.shape
    if s < cfg.window:
        raise DataError(f"record of {s} samples is shorter than one window ({cfg.window})")
    t = s // cfg.hop
    frames = values[:, : t * cfg.hop].reshape(c, t, cfg.hop).astype(np.float64)
    spectrum = np.fft.rfft(frames, n=cfg.nfft, axis=-1)
    return spectrum[:, :, : cfg.nfft // 2]


def to_real_format(frames: np.ndarray, format: str) -> SpectroTensor:
    """Complex frames -> real tensor with 1 or 2 trailing planes."""
    if format == FORMAT_MAGNITUDE:
        values = np.abs(frames)[..., None]
    elif format == FORMAT_MAG_PHASE:
        phase = np.angle(frames)
        # keep phase in (-pi, pi]
        phase = np.where(phase <= -np.pi, np.pi, phase)
        values = np.stack([np.abs(frames), phase], axis=-1)
    elif format == FORMAT_REAL_IMAG:
        values = np.stack([frames.real, frames.imag], axis=-1)
    else:
        raise ContractError(f"unknown format {format!r}")
    return SpectroTensor(values.astype(np.float32), format)


def normalize_spectro(t: SpectroTensor, eps: float = 1e-8) -> SpectroTensor:
    """log(1+v) on magnitude planes then per-sample standardization.

    Phase planes pass through unchanged. A second call is a no-op: the tensor
    remembers that it has already been normalized.
    """
    if t.normalized:
        return t
    values = t.values.astype(np.float64).copy()
    if t.format in (FORMAT_MAGNITUDE, FORMAT_MAG_PHASE):
        mag = np.log1p(np.maximum(values[..., 0], 0.0))
        std = mag.std()
        values[..., 0] = (mag - mag.mean()) / (std + eps) if std > eps else 0.0
    else:
        # no magnitude plane: standardize both planes jointly, no log
        std = values.std()
        values = (values - values.mean()) / (std + eps) if std > eps else values * 0.0
    return SpectroTensor(values.astype(np.float32), t.format, normalized=True)


def preprocess(x: WaterfallPlot, cfg: StftConfig) -> SpectroTensor:
    """Full front-end: STFT, real formatting, optional normalization."""
    tensor = to_real_format(stft_complex(x, cfg), cfg.format)
    if cfg.normalize == NORM_LOG_ZSCORE:
        tensor = normalize_spectro(tensor)
    return tensor
