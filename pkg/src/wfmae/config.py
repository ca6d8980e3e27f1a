"""Run configuration: flat key=value files with dotted keys.

Unknown keys are rejected. Every command echoes its fully-resolved config
into its output directory so a run can be reproduced from the echo alone.
"""

from __future__ import annotations

from .dasgen import BENCHMARK_CLASSES, FIELD_CLASSES, FIELD_COUNTS, GenConfig
from .errors import UsageError
from .model import ModelConfig
from .optim import LrSchedule
from .pipeline import TrainConfig
from .stft import StftConfig
from .tubes import STRATEGIES

DEFAULTS: dict[str, str] = {
    "data.classes": "benchmark",
    "data.counts": "100",
    "data.channels": "12",
    "data.samples": "10000",
    "data.sample_rate": "200",
    "data.split": "0.8",
    "data.seed": "0",
    "stft.window": "104",
    "stft.hop": "104",
    "stft.nfft": "192",
    "stft.format": "magnitude",
    "stft.normalize": "log_zscore",
    "tubes.cp": "2",
    "tubes.tp": "16",
    "tubes.fp": "16",
    "tubes.ratio": "0.9",
    "tubes.strategy": "random",
    "model.de": "384",
    "model.le": "12",
    "model.he": "6",
    "model.dd": "192",
    "model.ld": "4",
    "model.hd": "3",
    "model.mlp_ratio": "4",
    "train.batch": "64",
    "train.epochs": "500",
    "train.lr": "1e-3",
    "train.warmup": "40",
    "train.wd": "0.05",
    "train.seed": "0",
    "train.stage": "scratch",
    "train.normalize_targets": "true",
    "eval.k_per_class": "15",
    "eval.seeds": "0,1,2",
    "eval.tsne.perplexity": "40",
    "eval.tsne.learning_rate": "2000",
    "eval.tsne.iterations": "500",
}


class RunConfig:
    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value: str) -> None:
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        self.values[key] = value
        self.validate(key)

    def validate(self, key: str) -> None:
        try:
            if key == "tubes.ratio":
                ratio = self.get_float(key)
                if not (0.0 <= ratio < 1.0):
                    raise UsageError(f"tubes.ratio must lie in [0, 1), got {ratio}")
            elif key == "tubes.strategy":
                if self.values[key] not in STRATEGIES:
                    raise UsageError(f"unknown mask strategy {self.values[key]!r}")
            elif key in ("data.split",):
                split = self.get_float(key)
                if not (0.0 < split < 1.0):
                    raise UsageError(f"{key} must lie in (0, 1)")
            elif key.endswith((".seed", ".epochs", ".batch", ".window", ".hop",
                               ".nfft", ".channels", ".samples", ".k_per_class")):
                self.get_int(key)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def get_bool(self, key: str) -> bool:
        value = self.values[key].strip().lower()
        if value in ("true", "1", "yes", "on"):
            return True
        if value in ("false", "0", "no", "off"):
            return False
        raise UsageError(f"bad boolean for {key}: {self.values[key]!r}")

    def get_int_list(self, key: str) -> list[int]:
        return [int(v) for v in self.values[key].split(",") if v != ""]

    # -- typed views ----------------------------------------------------------

    def gen_config(self) -> GenConfig:
        classes = self.values["data.classes"]
        counts = self.get_int_list("data.counts")
        if classes == "benchmark":
            names = list(BENCHMARK_CLASSES)
        elif classes == "field":
            names = list(FIELD_CLASSES)
            if counts == [100] or not counts:
                counts = list(FIELD_COUNTS)
        else:
            names = classes.split(",")
        if len(counts) == 1:
            counts = counts * len(names)
        return GenConfig(
            class_names=names,
            class_counts=counts,
            channels=self.get_int("data.channels"),
            samples=self.get_int("data.samples"),
            sample_rate=self.get_float("data.sample_rate"),
            split=self.get_float("data.split"),
            seed=self.get_int("data.seed"),
        )

    def stft_config(self) -> StftConfig:
        return StftConfig(
            window=self.get_int("stft.window"),
            hop=self.get_int("stft.hop"),
            nfft=self.get_int("stft.nfft"),
            format=self.values["stft.format"],
            normalize=self.values["stft.normalize"],
        )

    def tube_extents(self) -> tuple[int, int, int]:
        return (self.get_int("tubes.cp"), self.get_int("tubes.tp"), self.get_int("tubes.fp"))

    def model_config(self, n_tokens: int, di: int = 1) -> ModelConfig:
        cp, tp, fp = self.tube_extents()
        return ModelConfig(
            cp=cp, tp=tp, fp=fp, di=di,
            enc_width=self.get_int("model.de"),
            enc_depth=self.get_int("model.le"),
            enc_heads=self.get_int("model.he"),
            dec_width=self.get_int("model.dd"),
            dec_depth=self.get_int("model.ld"),
            dec_heads=self.get_int("model.hd"),
            mlp_ratio=self.get_int("model.mlp_ratio"),
            n_tokens=n_tokens,
        )

    def train_config(self) -> TrainConfig:
        epochs = self.get_int("train.epochs")
        return TrainConfig(
            batch_size=self.get_int("train.batch"),
            epochs=epochs,
            schedule=LrSchedule(
                self.get_float("train.lr"), 0.0,
                self.get_int("train.warmup"), epochs,
            ),
            weight_decay=self.get_float("train.wd"),
            mask_ratio=self.get_float("tubes.ratio"),
            mask_strategy=self.values["tubes.strategy"],
            seed=self.get_int("train.seed"),
            normalize_targets=self.get_bool("train.normalize_targets"),
            stage=self.values["train.stage"],
        )

    # -- persistence ----------------------------------------------------------

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for key in sorted(self.values):
                fh.write(f"{key}={self.values[key]}\n")

    @staticmethod
    def read(path) -> "RunConfig":
        values: dict[str, str] = {}
        try:
            with open(path) as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    key, sep, value = line.partition("=")
                    if not sep:
                        raise UsageError(f"{path}:{lineno}: expected key=value")
                    values[key.strip()] = value.strip()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        return RunConfig(values)
