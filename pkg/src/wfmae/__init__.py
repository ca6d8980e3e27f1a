"""Masked-autoencoder representation learning for DAS waterfall plots."""

from .autodiff import Parameter, Tensor, cross_entropy, gelu, layer_norm, softmax
from .dasgen import (
    CouplingProfile,
    EventSpec,
    GenConfig,
    WaterfallPlot,
    phase_from_strain,
    read_dataset,
    synth_dataset,
    synth_waterfall,
    write_dataset,
)
from .errors import (
    ContractError,
    DataError,
    DimensionError,
    NumericFailure,
    TransferError,
    UsageError,
)
from .model import MaeModel, ModelConfig, param_count
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr
from .pipeline import (
    TrainConfig,
    load_checkpoint,
    pretrain,
    reconstruction_loss,
    save_checkpoint,
    video_like_tensors,
)
from .stft import SpectroTensor, StftConfig, normalize_spectro, preprocess, stft_complex, to_real_format
from .tubes import MaskSpec, TubeGrid, apply_mask, partition_tubes, reassemble_tubes, sample_mask

__version__ = "0.1.0"
