"""Masked-autoencoder model: shapes, parameter budget, token mechanics."""

import numpy as np
import pytest

from wfmae.autodiff import Tensor
from wfmae.errors import ContractError
from wfmae.model import MaeModel, ModelConfig, param_count
from wfmae.tubes import TubeGrid, sample_mask

TINY = ModelConfig(
    cp=1, tp=2, fp=2, di=1, enc_width=16, enc_depth=2, enc_heads=2,
    dec_width=8, dec_depth=1, dec_heads=2, mlp_ratio=2, n_tokens=12,
)


def tiny_model(seed=0):
    return MaeModel(TINY, seed=seed)


def tiny_grid():
    return TubeGrid(1, 2, 2, 2, 4, 6)  # 2 * 2 * 3 = 12 tubes


def random_tubes(b, cfg=TINY, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(b, cfg.n_tokens, cfg.cp, cfg.tp, cfg.fp, cfg.di)).astype(np.float32)


class TestConfig:
    def test_full_preset_defaults(self):
        cfg = ModelConfig.full_preset()
        assert (cfg.enc_width, cfg.enc_depth, cfg.enc_heads) == (384, 12, 6)
        assert (cfg.dec_width, cfg.dec_depth, cfg.dec_heads) == (192, 4, 3)
        assert cfg.n_tokens == 216
        assert cfg.tube_dim == 2 * 16 * 16

    def test_head_divisibility(self):
        with pytest.raises(ContractError):
            ModelConfig(enc_width=10, enc_heads=3)


class TestParamCount:
    def test_full_preset_budget(self):
        n = param_count(ModelConfig.full_preset())
        assert n == 23_568_512
        assert 22_000_000 <= n <= 24_000_000

    def test_matches_actual_parameters(self):
        model = tiny_model()
        actual = sum(p.data.size for p in model.parameters())
        assert actual == param_count(TINY)

    def test_depth_linearity(self):
        # adding one encoder block adds exactly one block's worth of scalars
        from dataclasses import replace

        base = param_count(TINY)
        deeper = param_count(replace(TINY, enc_depth=TINY.enc_depth + 1))
        w, r = TINY.enc_width, TINY.mlp_ratio
        block = 4 * (w * w + w) + (w * r * w + r * w) + (r * w * w + w) + 4 * w
        assert deeper - base == block

    def test_hand_count_micro_model(self):
        cfg = ModelConfig(
            cp=1, tp=1, fp=2, di=1, enc_width=4, enc_depth=1, enc_heads=1,
            dec_width=2, dec_depth=1, dec_heads=1, mlp_ratio=2, n_tokens=3,
        )
        # embed 2*4+4=12, enc pos 12, enc block: attn 4*(16+4)=80,
        # mlp (4*8+8)+(8*4+4)=76, norms 16 -> 172, enc final norm 8,
        # proj 4*2+2=10, mask token 2, dec pos 6, dec block: attn 4*(4+2)=24,
        # mlp (2*4+4)+(4*2+2)=22, norms 8 -> 54, dec final norm 4,
        # head 2*2+2=6
        assert param_count(cfg) == 12 + 12 + 172 + 8 + 10 + 2 + 6 + 54 + 4 + 6


class TestEmbedAndEncode:
    def test_visible_token_shapes(self):
        model = tiny_model()
        tubes = random_tubes(3)
        grid = tiny_grid()
        mask = sample_mask(grid, 0.75, seed=0)  # 9 masked, 3 visible
        visible = tubes[:, mask.visible]
        pos = np.broadcast_to(mask.visible, (3, mask.n_visible))
        z = model.forward_visible(visible, pos)
        assert z.shape == (3, 3, TINY.enc_width)

    def test_full_scale_visible_shape(self):
        cfg = ModelConfig(enc_depth=1, dec_depth=1)  # widths as in the full preset
        model = MaeModel(cfg, seed=0)
        grid = TubeGrid(2, 16, 16, 12, 96, 96)
        mask = sample_mask(grid, 0.9, seed=0)
        tubes = np.zeros((1, 216, 2, 16, 16, 1), dtype=np.float32)
        z = model.forward_visible(tubes[:, mask.visible], mask.visible[None, :])
        assert z.shape == (1, 21, 384)

    def test_position_out_of_range(self):
        model = tiny_model()
        tubes = random_tubes(1)[:, :2]
        with pytest.raises(ContractError):
            model.tube_embed(tubes, np.array([[0, 99]]))

    def test_position_shape_mismatch(self):
        model = tiny_model()
        with pytest.raises(ContractError):
            model.tube_embed(random_tubes(2)[:, :3], np.zeros((2, 4), dtype=int))

    def test_input_perturbation_changes_output(self):
        model = tiny_model()
        tubes = random_tubes(1)
        pos = np.arange(TINY.n_tokens)[None, :]
        base = model.forward_visible(tubes, pos).data
        bumped = tubes.copy()
        bumped[0, 5] += 1.0
        out = model.forward_visible(bumped, pos).data
        assert not np.allclose(base, out)

    def test_permutation_equivariance_without_positions(self):
        # zero the positional table: encoding then permuting equals permuting
        # then encoding
        model = tiny_model()
        model.params["enc.pos"].data[:] = 0.0
        tubes = random_tubes(1)
        pos = np.arange(TINY.n_tokens)[None, :]
        perm = np.random.default_rng(3).permutation(TINY.n_tokens)
        a = model.forward_visible(tubes, pos).data[:, perm]
        b = model.forward_visible(tubes[:, perm], pos).data
        assert np.allclose(a, b, atol=1e-5)

    def test_positions_break_equivariance(self):
        model = tiny_model()
        tubes = random_tubes(1)
        pos = np.arange(TINY.n_tokens)[None, :]
        perm = np.roll(np.arange(TINY.n_tokens), 1)
        a = model.forward_visible(tubes, pos).data[:, perm]
        b = model.forward_visible(tubes[:, perm], pos).data
        assert not np.allclose(a, b, atol=1e-5)


class TestDecode:
    def test_full_mae_shapes(self):
        model = tiny_model()
        grid = tiny_grid()
        tubes = random_tubes(2)
        masks = [sample_mask(grid, 0.75, seed=s) for s in range(2)]
        preds, targets = model.forward_mae(tubes, masks)
        assert preds.shape == (2, 12, 1, 2, 2, 1)
        assert np.array_equal(targets, tubes)

    def test_shared_mask_token(self):
        # two masked positions fed through a depth-0 decoder see the same fill
        from dataclasses import replace

        cfg = replace(TINY, dec_depth=0)
        model = MaeModel(cfg, seed=0)
        grid = tiny_grid()
        mask = sample_mask(grid, 0.75, seed=0)
        tubes = random_tubes(1, cfg)
        z = model.forward_visible(tubes[:, mask.visible], mask.visible[None, :])
        # reconstruct the pre-norm decoder input by hand
        z_d = z.data @ model.proj_w.data + model.proj_b.data
        fill = model.mask_token.data
        x = np.zeros((1, cfg.n_tokens, cfg.dec_width), dtype=np.float32)
        x[0, mask.visible] = z_d[0]
        x[0, mask.masked] = fill
        x = x + model.dec_pos.data
        normed = (x - x.mean(-1, keepdims=True)) / np.sqrt(
            x.var(-1, keepdims=True) + 1e-6
        )
        expect = normed @ model.head_w.data + model.head_b.data
        preds = model.decode(z, [mask]).data.reshape(1, cfg.n_tokens, -1)
        assert np.allclose(preds, expect, atol=1e-4)

    def test_masked_prediction_independent_of_masked_input(self):
        # the encoder never sees masked tubes, so changing them changes nothing
        model = tiny_model()
        grid = tiny_grid()
        mask = sample_mask(grid, 0.75, seed=1)
        tubes = random_tubes(1)
        preds_a, _ = model.forward_mae(tubes, [mask])
        tampered = tubes.copy()
        tampered[0, mask.masked] += 5.0
        preds_b, _ = model.forward_mae(tampered, [mask])
        assert np.array_equal(preds_a.data, preds_b.data)

    def test_mask_count_mismatch(self):
        model = tiny_model()
        grid = tiny_grid()
        with pytest.raises(ContractError):
            model.forward_mae(random_tubes(2), [sample_mask(grid, 0.5, seed=0)])

    def test_latent_visible_mismatch(self):
        model = tiny_model()
        grid = tiny_grid()
        mask = sample_mask(grid, 0.75, seed=0)
        z = Tensor(np.zeros((1, 5, TINY.enc_width), dtype=np.float32))
        with pytest.raises(ContractError):
            model.decode(z, [mask])


class TestGradientsAndInit:
    def test_loss_reaches_every_parameter(self):
        model = tiny_model()
        grid = tiny_grid()
        tubes = random_tubes(2)
        masks = [sample_mask(grid, 0.75, seed=s) for s in range(2)]
        preds, _ = model.forward_mae(tubes, masks)
        (preds * preds).sum().backward()
        for p in model.parameters():
            assert p.grad is not None, p.name
            assert np.isfinite(p.grad).all(), p.name

    def test_init_determinism_and_trunc_normal(self):
        a, b = tiny_model(4), tiny_model(4)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)
        w = a.params["enc.embed.w"].data
        assert np.abs(w).max() <= 2 * 0.02 + 1e-9
        assert w.std() == pytest.approx(0.02, rel=0.25)

    def test_encoder_parameter_filter(self):
        model = tiny_model()
        names = {p.name for p in model.encoder_parameters()}
        assert all(n.startswith("enc.") for n in names)
        assert "enc.embed.w" in names and "head.w" not in names

    def test_attention_rows_sum_to_one(self):
        from wfmae.autodiff import softmax

        model = tiny_model()
        block = model.enc_blocks[0]
        x = Tensor(np.random.default_rng(0).normal(size=(1, 5, TINY.enc_width)).astype(np.float32))
        b, s, _ = x.shape
        h, hd = block.heads, block.head_dim
        q = (x @ block.wq + block.bq).reshape(b, s, h, hd).transpose(0, 2, 1, 3)
        k = (x @ block.wk + block.bk).reshape(b, s, h, hd).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        weights = softmax(scores, axis=-1).data
        assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)
