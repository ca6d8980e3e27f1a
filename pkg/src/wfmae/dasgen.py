"""Synthetic DAS waterfall-plot generation and dataset persistence.

Events are band-limited filtered-noise bursts placed on a subset of channels,
scaled per channel by a coupling profile and converted from strain to phase
through the interferometric sensitivity relation. Class identity is carried by
the spectral template and the amplitude-modulation kind, so frequency-domain
structure dominates -- matching how real fibre deployments behave.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError

# nano-strain * metre per radian for 1550 nm light in silica fibre
DEFAULT_K_PHI = 110.37
DEFAULT_GAUGE_LENGTH_M = 1.0

MAGIC = b"WFP1"
UNLABELED = -1


@dataclass
class WaterfallPlot:
    """2D channel x time strain matrix with acquisition metadata."""

    values: np.ndarray  # (C, S) float32
    sample_rate: float
    label: int = UNLABELED

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ContractError(f"waterfall values must be 2D non-empty, got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]


@dataclass
class SpectralLine:
    center_hz: float
    bandwidth_hz: float
    rel_power: float = 1.0


@dataclass
class EventSpec:
    class_id: int
    lines: list[SpectralLine]
    duration_s: float
    channel_first: int
    channel_last: int
    amplitude: float  # nano-strain RMS
    modulation: str = "stationary"  # stationary | impulsive | moving-source
    start_s: float = 0.0

    def validate(self, channels: int, samples: int, sample_rate: float) -> None:
        if not (0 <= self.channel_first <= self.channel_last < channels):
            raise ContractError(
                f"event channel extent [{self.channel_first}, {self.channel_last}] "
                f"outside [0, {channels})"
            )
        if self.duration_s <= 0 or self.duration_s > samples / sample_rate:
            raise ContractError("event duration must be positive and fit the record")
        nyquist = sample_rate / 2
        for line in self.lines:
            if line.center_hz >= nyquist:
                raise ContractError(
                    f"spectral line at {line.center_hz} Hz >= Nyquist {nyquist} Hz"
                )
        if self.modulation not in ("stationary", "impulsive", "moving-source"):
            raise ContractError(f"unknown modulation kind {self.modulation!r}")


@dataclass
class CouplingProfile:
    """Per-channel multiplicative gain in (0, 1]."""

    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.ndim != 1 or (self.gains <= 0).any():
            raise ContractError("coupling gains must be a 1D positive vector")

    @staticmethod
    def random_walk(channels: int, seed: int, lo: float = 0.3, hi: float = 1.0) -> "CouplingProfile":
        """Smooth random walk in [lo, hi], mimicking slow coupling variation."""
        rng = np.random.default_rng(seed)
        steps = rng.normal(0.0, 0.08, channels).cumsum()
        span = steps.max() - steps.min()
        if span < 1e-12:
            gains = np.full(channels, (lo + hi) / 2)
        else:
            gains = lo + (hi - lo) * (steps - steps.min()) / span
        return CouplingProfile(gains)


def phase_from_strain(strain, gauge_length_m: float = DEFAULT_GAUGE_LENGTH_M,
                      k_phi: float = DEFAULT_K_PHI):
    """Phase difference (rad) induced by `strain` (nano-strain) over one gauge."""
    if gauge_length_m <= 0:
        raise ContractError("gauge length must be positive")
    if k_phi <= 0:
        raise ContractError("sensitivity coefficient must be positive")
    return np.asarray(strain) * gauge_length_m / k_phi


def _event_waveform(spec: EventSpec, sample_rate: float, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS band-limited noise shaped by the event's spectral template."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    response = np.zeros_like(freqs)
    for line in spec.lines:
        response += line.rel_power * np.exp(
            -0.5 * ((freqs - line.center_hz) / max(line.bandwidth_hz, 1e-6)) ** 2
        )
    shaped = np.fft.irfft(spectrum * response, n=n)
    rms = np.sqrt(np.mean(shaped**2))
    if rms < 1e-12:
        return np.zeros(n)
    return shaped / rms


def _modulation_envelope(spec: EventSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.modulation == "stationary":
        return np.ones(n)
    t = np.arange(n, dtype=np.float64)
    if spec.modulation == "impulsive":
        n_bursts = max(2, int(rng.integers(3, 7)))
        centers = rng.uniform(0, n, n_bursts)
        width = max(4.0, n / (6.0 * n_bursts))
        env = np.zeros(n)
        for c in centers:
            env += np.exp(-0.5 * ((t - c) / width) ** 2)
        peak = env.max()
        return env / peak if peak > 0 else env
    # moving-source: one gaussian bump whose centre drifts with channel index;
    # the per-channel shift is applied in synth_waterfall
    width = n / 6.0
    return np.exp(-0.5 * ((t - n / 2) / width) ** 2)


def synth_waterfall(specs: list[EventSpec], coupling: CouplingProfile,
                    noise_sigma: float, channels: int, samples: int,
                    sample_rate: float, seed: int,
                    label: int = UNLABELED) -> WaterfallPlot:
    """Gaussian background noise plus coherent per-channel event copies."""
    if len(coupling.gains) != channels:
        raise ContractError(
            f"coupling profile has {len(coupling.gains)} gains for {channels} channels"
        )
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, noise_sigma, (channels, samples))
    for spec in specs:
        spec.validate(channels, samples, sample_rate)
        dur = int(round(spec.duration_s * sample_rate))
        start = int(round(spec.start_s * sample_rate))
        dur = min(dur, samples - start)
        if dur <= 0:
            continue
        # one synthesis per event: channels receive coherent copies
        wave = _event_waveform(spec, sample_rate, dur, rng)
        env = _modulation_envelope(spec, dur, rng)
        phase = phase_from_strain(wave * spec.amplitude)
        chans = range(spec.channel_first, spec.channel_last + 1)
        n_chans = spec.channel_last - spec.channel_first + 1
        for idx, ch in enumerate(chans):
            e = env
            if spec.modulation == "moving-source" and n_chans > 1:
                shift = int(round((idx / (n_chans - 1) - 0.5) * dur * 0.5))
                e = np.roll(env, shift)
            values[ch, start:start + dur] += coupling.gains[ch] * phase * e
    return WaterfallPlot(values.astype(np.float32), sample_rate, label)


# -- class presets -------------------------------------------------------------

BENCHMARK_CLASSES = ["background", "digging", "knocking", "watering", "shaking", "walking"]
FIELD_CLASSES = [
    "background", "roller-motion", "roller-compaction", "excavator-excavation",
    "excavator-motion", "drill", "forklift-loaded", "forklift-unloaded",
]
FIELD_COUNTS = [42, 100, 300, 332, 334, 38, 54, 186]

# (lines, modulation); centre frequencies overlap across classes on purpose so
# that amplitude and mean spectrum alone do not separate every pair
_BENCHMARK_TEMPLATES: dict[str, tuple[list[SpectralLine], str]] = {
    "background": ([], "stationary"),
    "digging": ([SpectralLine(18.0, 5.0), SpectralLine(36.0, 6.0, 0.6)], "impulsive"),
    "knocking": ([SpectralLine(18.0, 5.0), SpectralLine(36.0, 6.0, 0.6)], "stationary"),
    "watering": ([SpectralLine(55.0, 10.0), SpectralLine(75.0, 8.0, 0.7)], "stationary"),
    "shaking": ([SpectralLine(55.0, 10.0), SpectralLine(75.0, 8.0, 0.7)], "impulsive"),
    "walking": ([SpectralLine(30.0, 8.0), SpectralLine(62.0, 8.0)], "moving-source"),
}


@dataclass
class GenConfig:
    class_names: list[str]
    class_counts: list[int]
    channels: int = 12
    samples: int = 10000
    sample_rate: float = 200.0
    noise_sigma: float = 0.05
    split: float = 0.8  # train fraction
    seed: int = 0

    def __post_init__(self):
        if len(self.class_names) != len(self.class_counts):
            raise ContractError("class_names and class_counts length mismatch")
        if any(c < 1 for c in self.class_counts):
            raise ContractError("per-class counts must be >= 1")
        if not (0.0 < self.split < 1.0):
            raise ContractError("split ratio must be in (0, 1)")
        if self.sample_rate <= 0:
            raise ContractError("sample rate must be positive")

    @staticmethod
    def benchmark(per_class: int = 100, **kw) -> "GenConfig":
        return GenConfig(list(BENCHMARK_CLASSES), [per_class] * len(BENCHMARK_CLASSES), **kw)

    @staticmethod
    def field(**kw) -> "GenConfig":
        return GenConfig(list(FIELD_CLASSES), list(FIELD_COUNTS), **kw)


@dataclass
class DatasetManifest:
    class_names: list[str]
    class_counts: list[int]
    train_files: list[str]
    test_files: list[str]
    labels: dict[str, int]
    seed: int
    config: GenConfig


def _sample_seed(global_seed: int, index: int) -> np.random.SeedSequence:
    # order-independent: each sample's stream depends only on (seed, index)
    return np.random.SeedSequence(entropy=global_seed, spawn_key=(index,))


def _events_for_class(name: str, cfg: GenConfig, rng: np.random.Generator) -> list[EventSpec]:
    lines, modulation = _BENCHMARK_TEMPLATES.get(
        name, ([SpectralLine(20.0 + 7.0 * (hash(name) % 8), 6.0)], "stationary")
    )
    if not lines:
        return []
    jittered = [
        SpectralLine(
            ln.center_hz * rng.uniform(0.95, 1.05),
            ln.bandwidth_hz * rng.uniform(0.8, 1.2),
            ln.rel_power,
        )
        for ln in lines
    ]
    record_s = cfg.samples / cfg.sample_rate
    duration = rng.uniform(0.6, 0.95) * record_s
    start = rng.uniform(0.0, record_s - duration)
    first = int(rng.integers(0, max(1, cfg.channels // 3)))
    last = int(rng.integers(cfg.channels - max(1, cfg.channels // 3), cfg.channels))
    return [
        EventSpec(
            class_id=0,
            lines=jittered,
            duration_s=duration,
            channel_first=first,
            channel_last=min(last, cfg.channels - 1),
            amplitude=rng.uniform(30.0, 120.0),
            modulation=modulation,
            start_s=start,
        )
    ]


def synth_sample(cfg: GenConfig, class_index: int, sample_index: int) -> WaterfallPlot:
    """One deterministic sample: seed depends only on (global seed, index)."""
    ss = _sample_seed(cfg.seed, sample_index)
    rng = np.random.default_rng(ss)
    coupling = CouplingProfile.random_walk(cfg.channels, seed=int(rng.integers(2**31)))
    events = _events_for_class(cfg.class_names[class_index], cfg, rng)
    return synth_waterfall(
        events, coupling, cfg.noise_sigma, cfg.channels, cfg.samples,
        cfg.sample_rate, seed=int(rng.integers(2**31)), label=class_index,
    )


def synth_dataset(cfg: GenConfig) -> tuple[DatasetManifest, list[WaterfallPlot]]:
    """Generate all samples and a stratified train/test split."""
    samples: list[WaterfallPlot] = []
    labels: dict[str, int] = {}
    train_files: list[str] = []
    test_files: list[str] = []
    split_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0xC0FFEE,)))
    index = 0
    for ci, count in enumerate(cfg.class_counts):
        n_train = int(round(count * cfg.split))
        if n_train == 0 or n_train == count:
            raise DataError(
                f"class {cfg.class_names[ci]!r} with {count} samples cannot be "
                f"split {cfg.split:.2f}/{1 - cfg.split:.2f}"
            )
        order = split_rng.permutation(count)
        train_set = set(order[:n_train].tolist())
        for j in range(count):
            fname = f"sample_{index:05d}.wfp"
            samples.append(synth_sample(cfg, ci, index))
            labels[fname] = ci
            (train_files if j in train_set else test_files).append(fname)
            index += 1
    manifest = DatasetManifest(
        class_names=list(cfg.class_names),
        class_counts=list(cfg.class_counts),
        train_files=train_files,
        test_files=test_files,
        labels=labels,
        seed=cfg.seed,
        config=cfg,
    )
    return manifest, samples


# -- persistence ---------------------------------------------------------------

def write_waterfall(plot: WaterfallPlot, path) -> None:
    header = struct.pack(
        "<4sIIfi", MAGIC, plot.channels, plot.samples,
        float(plot.sample_rate), int(plot.label),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(plot.values.astype("<f4").tobytes(order="C"))


def read_waterfall(path) -> WaterfallPlot:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise DataError(f"bad magic in {path}")
    _, c, s, rate, label = struct.unpack("<4sIIfi", blob[:20])
    expected = 20 + 4 * c * s
    if len(blob) != expected:
        raise DataError(f"truncated payload in {path}: {len(blob)} != {expected} bytes")
    values = np.frombuffer(blob[20:], dtype="<f4").reshape(c, s)
    return WaterfallPlot(values.copy(), rate, label)


def write_dataset(manifest: DatasetManifest, samples: list[WaterfallPlot], path) -> None:
    import os

    os.makedirs(path, exist_ok=True)
    all_files = sorted(manifest.labels)
    if len(all_files) != len(samples):
        raise DataError(
            f"manifest lists {len(all_files)} files but {len(samples)} samples given"
        )
    for fname, plot in zip(all_files, samples):
        write_waterfall(plot, os.path.join(path, fname))
    cfg = manifest.config
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("format=wfmae-dataset-v1\n")
        fh.write(f"seed={manifest.seed}\n")
        fh.write(f"classes={','.join(manifest.class_names)}\n")
        fh.write(f"counts={','.join(str(c) for c in manifest.class_counts)}\n")
        fh.write(f"channels={cfg.channels}\n")
        fh.write(f"samples={cfg.samples}\n")
        fh.write(f"sample_rate={cfg.sample_rate}\n")
        fh.write(f"noise_sigma={cfg.noise_sigma}\n")
        fh.write(f"split={cfg.split}\n")
        for fname in manifest.train_files:
            fh.write(f"train={fname}:{manifest.labels[fname]}\n")
        for fname in manifest.test_files:
            fh.write(f"test={fname}:{manifest.labels[fname]}\n")


def read_dataset(path) -> tuple[DatasetManifest, dict[str, WaterfallPlot]]:
    import os

    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.txt under {path}")
    fields: dict[str, str] = {}
    train_files: list[str] = []
    test_files: list[str] = []
    labels: dict[str, int] = {}
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if key in ("train", "test"):
                fname, _, lab = value.partition(":")
                labels[fname] = int(lab)
                (train_files if key == "train" else test_files).append(fname)
            else:
                fields[key] = value
    if fields.get("format") != "wfmae-dataset-v1":
        raise DataError(f"unknown manifest format in {manifest_path}")
    cfg = GenConfig(
        class_names=fields["classes"].split(","),
        class_counts=[int(c) for c in fields["counts"].split(",")],
        channels=int(fields["channels"]),
        samples=int(fields["samples"]),
        sample_rate=float(fields["sample_rate"]),
        noise_sigma=float(fields["noise_sigma"]),
        split=float(fields["split"]),
        seed=int(fields["seed"]),
    )
    manifest = DatasetManifest(
        class_names=cfg.class_names,
        class_counts=cfg.class_counts,
        train_files=train_files,
        test_files=test_files,
        labels=labels,
        seed=cfg.seed,
        config=cfg,
    )
    plots: dict[str, WaterfallPlot] = {}
    for fname in labels:
        fpath = os.path.join(path, fname)
        if not os.path.exists(fpath):
            raise DataError(f"manifest lists {fname} but the file is missing")
        plot = read_waterfall(fpath)
        if plot.label != labels[fname]:
            raise DataError(f"label mismatch for {fname}")
        plots[fname] = plot
    return manifest, plots
