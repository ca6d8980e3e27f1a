"""Synthetic waterfall generation, physics helpers, and the WFP1 file format."""

import numpy as np
import pytest

from wfmae.dasgen import (
    BENCHMARK_CLASSES,
    DEFAULT_K_PHI,
    FIELD_CLASSES,
    FIELD_COUNTS,
    CouplingProfile,
    EventSpec,
    GenConfig,
    SpectralLine,
    WaterfallPlot,
    phase_from_strain,
    read_dataset,
    read_waterfall,
    synth_dataset,
    synth_sample,
    synth_waterfall,
    write_dataset,
    write_waterfall,
)
from wfmae.errors import ContractError, DataError


class TestPhaseFromStrain:
    def test_sensitivity_constant(self):
        assert DEFAULT_K_PHI == 110.37

    def test_unit_conversion(self):
        # 110.37 nano-strain over a 1 m gauge is exactly 1 rad
        assert phase_from_strain(110.37) == pytest.approx(1.0)
        assert phase_from_strain(110.37, gauge_length_m=2.0) == pytest.approx(2.0)
        assert phase_from_strain(220.74) == pytest.approx(2.0)

    def test_linearity_and_arrays(self):
        x = np.array([0.0, 55.185, -110.37])
        out = phase_from_strain(x)
        assert np.allclose(out, [0.0, 0.5, -1.0])

    def test_guards(self):
        with pytest.raises(ContractError):
            phase_from_strain(1.0, gauge_length_m=0.0)
        with pytest.raises(ContractError):
            phase_from_strain(1.0, k_phi=-1.0)


class TestCoupling:
    def test_random_walk_bounds_and_determinism(self):
        a = CouplingProfile.random_walk(64, seed=3)
        b = CouplingProfile.random_walk(64, seed=3)
        assert np.array_equal(a.gains, b.gains)
        assert a.gains.min() >= 0.3 and a.gains.max() <= 1.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ContractError):
            CouplingProfile(np.array([0.5, 0.0]))


class TestEventSpec:
    def base(self, **kw):
        defaults = dict(
            class_id=0,
            lines=[SpectralLine(20.0, 4.0)],
            duration_s=1.0,
            channel_first=0,
            channel_last=3,
            amplitude=10.0,
        )
        defaults.update(kw)
        return EventSpec(**defaults)

    def test_valid(self):
        self.base().validate(8, 2000, 200.0)

    def test_channel_extent(self):
        with pytest.raises(ContractError):
            self.base(channel_last=8).validate(8, 2000, 200.0)

    def test_line_above_nyquist(self):
        bad = self.base(lines=[SpectralLine(150.0, 4.0)])
        with pytest.raises(ContractError):
            bad.validate(8, 2000, 200.0)

    def test_unknown_modulation(self):
        with pytest.raises(ContractError):
            self.base(modulation="fancy").validate(8, 2000, 200.0)


class TestSynthWaterfall:
    def make(self, seed=0, modulation="stationary"):
        spec = EventSpec(
            class_id=1, lines=[SpectralLine(50.0, 3.0)], duration_s=5.0,
            channel_first=2, channel_last=5, amplitude=200.0,
            modulation=modulation,
        )
        coupling = CouplingProfile(np.full(8, 0.8))
        return synth_waterfall([spec], coupling, 0.01, 8, 2000, 200.0, seed=seed)

    def test_shape_dtype_determinism(self):
        a, b = self.make(3), self.make(3)
        assert a.values.shape == (8, 2000)
        assert a.values.dtype == np.float32
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, self.make(4).values)

    def test_event_energy_localized_to_channels(self):
        plot = self.make()
        power = (plot.values.astype(np.float64) ** 2).mean(axis=1)
        assert power[2:6].min() > 10 * power[[0, 1, 6, 7]].max()

    def test_spectral_content_at_line(self):
        plot = self.make()
        spectrum = np.abs(np.fft.rfft(plot.values[3].astype(np.float64)))
        freqs = np.fft.rfftfreq(2000, d=1 / 200.0)
        band = (freqs > 40) & (freqs < 60)
        assert spectrum[band].max() > 5 * spectrum[freqs > 80].max()

    def test_coupling_scales_channels(self):
        spec = EventSpec(
            class_id=0, lines=[SpectralLine(30.0, 3.0)], duration_s=5.0,
            channel_first=0, channel_last=1, amplitude=500.0,
        )
        gains = np.array([1.0, 0.5, 1.0, 1.0])
        plot = synth_waterfall([spec], CouplingProfile(gains), 0.0, 4, 2000, 200.0, seed=0)
        rms = np.sqrt((plot.values.astype(np.float64) ** 2).mean(axis=1))
        assert rms[0] / rms[1] == pytest.approx(2.0, rel=1e-3)

    def test_coupling_length_guard(self):
        with pytest.raises(ContractError):
            synth_waterfall([], CouplingProfile(np.ones(3)), 0.1, 8, 100, 200.0, seed=0)

    def test_moving_source_differs_from_stationary(self):
        a = self.make(0, "stationary")
        b = self.make(0, "moving-source")
        assert not np.array_equal(a.values, b.values)


class TestDataset:
    def test_benchmark_split_counts(self):
        cfg = GenConfig.benchmark(per_class=20, samples=500, seed=1)
        manifest, samples = synth_dataset(cfg)
        assert len(samples) == 120
        assert len(manifest.train_files) == 96  # round(20 * 0.8) = 16 per class
        assert len(manifest.test_files) == 24
        labels = [manifest.labels[f] for f in manifest.train_files]
        assert all(labels.count(c) == 16 for c in range(6))

    def test_field_preset_counts(self):
        cfg = GenConfig.field(samples=400)
        assert cfg.class_names == FIELD_CLASSES
        assert cfg.class_counts == [42, 100, 300, 332, 334, 38, 54, 186]
        assert sum(FIELD_COUNTS) == 1386

    def test_benchmark_class_names(self):
        assert len(BENCHMARK_CLASSES) == 6
        assert BENCHMARK_CLASSES[0] == "background"

    def test_sample_determinism_is_order_independent(self):
        cfg = GenConfig.benchmark(per_class=4, samples=300, seed=9)
        a = synth_sample(cfg, 2, 11)
        b = synth_sample(cfg, 2, 11)
        assert np.array_equal(a.values, b.values)
        assert a.label == 2

    def test_degenerate_split_rejected(self):
        with pytest.raises(DataError):
            synth_dataset(GenConfig(["a", "b"], [1, 1], samples=300))

    def test_config_guards(self):
        with pytest.raises(ContractError):
            GenConfig(["a"], [1, 2])
        with pytest.raises(ContractError):
            GenConfig(["a"], [0])
        with pytest.raises(ContractError):
            GenConfig(["a"], [4], split=1.0)


class TestWfpFormat:
    def test_roundtrip_bitwise(self, tmp_path):
        plot = WaterfallPlot(
            np.random.default_rng(0).normal(size=(6, 500)).astype(np.float32),
            sample_rate=200.0, label=3,
        )
        path = tmp_path / "x.wfp"
        write_waterfall(plot, path)
        back = read_waterfall(path)
        assert back.values.tobytes() == plot.values.tobytes()
        assert back.sample_rate == plot.sample_rate
        assert back.label == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.wfp"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            read_waterfall(path)

    def test_truncated_payload(self, tmp_path):
        plot = WaterfallPlot(np.ones((4, 100), dtype=np.float32), 200.0, 0)
        path = tmp_path / "t.wfp"
        write_waterfall(plot, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError):
            read_waterfall(path)

    def test_dataset_roundtrip(self, tmp_path):
        cfg = GenConfig.benchmark(per_class=3, samples=300, seed=2)
        manifest, samples = synth_dataset(cfg)
        root = tmp_path / "ds"
        write_dataset(manifest, samples, root)
        back_manifest, plots = read_dataset(root)
        assert back_manifest.train_files == manifest.train_files
        assert back_manifest.test_files == manifest.test_files
        name = manifest.train_files[0]
        idx = int(name.split("_")[1].split(".")[0])
        assert plots[name].values.tobytes() == samples[idx].values.tobytes()
        assert plots[name].label == manifest.labels[name]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path / "nowhere")
