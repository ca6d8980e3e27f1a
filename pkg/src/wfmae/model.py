"""Asymmetric tube-masked autoencoder: embedding, encoder, decoder, head.

The encoder sees only visible tubes; the decoder rebuilds the full sequence
by inserting one shared learnable mask token at every masked position. Blocks
are pre-norm residual transformer blocks with a GELU MLP. One token per tube:
the stride-equals-kernel tube embedding collapses each tube to a single
vector, so sequence length is the visible (or total) tube count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tensor, gelu, layer_norm, softmax
from .errors import ContractError
from .tubes import MaskSpec


@dataclass
class ModelConfig:
    cp: int = 2
    tp: int = 16
    fp: int = 16
    di: int = 1
    enc_width: int = 384
    enc_depth: int = 12
    enc_heads: int = 6
    dec_width: int = 192
    dec_depth: int = 4
    dec_heads: int = 3
    mlp_ratio: int = 4
    n_tokens: int = 216

    def __post_init__(self):
        if self.enc_width % self.enc_heads != 0:
            raise ContractError("encoder width must divide evenly across heads")
        if self.dec_width % self.dec_heads != 0:
            raise ContractError("decoder width must divide evenly across heads")
        if self.n_tokens < 1:
            raise ContractError("token count must be positive")

    @property
    def tube_dim(self) -> int:
        return self.cp * self.tp * self.fp * self.di

    @staticmethod
    def full_preset() -> "ModelConfig":
        return ModelConfig()


def param_count(config: ModelConfig) -> int:
    """Exact learnable-scalar count for a model built from `config`."""

    def block(width: int) -> int:
        attn = 4 * (width * width + width)  # q, k, v, proj
        hidden = config.mlp_ratio * width
        mlp = (width * hidden + hidden) + (hidden * width + width)
        norms = 2 * 2 * width
        return attn + mlp + norms

    tube = config.tube_dim
    total = tube * config.enc_width + config.enc_width  # tube embedding
    total += config.n_tokens * config.enc_width  # encoder positions
    total += config.enc_depth * block(config.enc_width)
    total += 2 * config.enc_width  # encoder final norm
    total += config.enc_width * config.dec_width + config.dec_width  # projection
    total += config.dec_width  # mask token
    total += config.n_tokens * config.dec_width  # decoder positions
    total += config.dec_depth * block(config.dec_width)
    total += 2 * config.dec_width  # decoder final norm
    total += config.dec_width * tube + tube  # output head
    return total


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                  dtype=np.float32) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class _Block:
    """Pre-norm residual transformer block: x + Attn(LN(x)), x + MLP(LN(x))."""

    def __init__(self, prefix: str, width: int, heads: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype, params: dict):
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        hidden = mlp_ratio * width

        def p(name, array):
            param = Parameter(array, f"{prefix}.{name}", dtype=dtype)
            params[param.name] = param
            return param

        self.ln1_g = p("ln1.g", np.ones(width))
        self.ln1_b = p("ln1.b", np.zeros(width))
        self.wq = p("attn.q.w", _trunc_normal(rng, (width, width)))
        self.bq = p("attn.q.b", np.zeros(width))
        self.wk = p("attn.k.w", _trunc_normal(rng, (width, width)))
        self.bk = p("attn.k.b", np.zeros(width))
        self.wv = p("attn.v.w", _trunc_normal(rng, (width, width)))
        self.bv = p("attn.v.b", np.zeros(width))
        self.wo = p("attn.proj.w", _trunc_normal(rng, (width, width)))
        self.bo = p("attn.proj.b", np.zeros(width))
        self.ln2_g = p("ln2.g", np.ones(width))
        self.ln2_b = p("ln2.b", np.zeros(width))
        self.w1 = p("mlp.fc1.w", _trunc_normal(rng, (width, hidden)))
        self.b1 = p("mlp.fc1.b", np.zeros(hidden))
        self.w2 = p("mlp.fc2.w", _trunc_normal(rng, (hidden, width)))
        self.b2 = p("mlp.fc2.b", np.zeros(width))

    def attention(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        h, hd = self.heads, self.head_dim
        q = (x @ self.wq + self.bq).reshape(b, s, h, hd).transpose(0, 2, 1, 3)
        k = (x @ self.wk + self.bk).reshape(b, s, h, hd).transpose(0, 2, 1, 3)
        v = (x @ self.wv + self.bv).reshape(b, s, h, hd).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        weights = softmax(scores, axis=-1)
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, s, self.width)
        return out @ self.wo + self.bo

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(layer_norm(x, self.ln1_g, self.ln1_b))
        x = x + self._mlp(layer_norm(x, self.ln2_g, self.ln2_b))
        return x

    def _mlp(self, x: Tensor) -> Tensor:
        return gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2


class MaeModel:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}

        def p(name, array):
            param = Parameter(array, name, dtype=dtype)
            self.params[name] = param
            return param

        c = config
        self.embed_w = p("enc.embed.w", _trunc_normal(rng, (c.tube_dim, c.enc_width)))
        self.embed_b = p("enc.embed.b", np.zeros(c.enc_width))
        self.enc_pos = p("enc.pos", _trunc_normal(rng, (c.n_tokens, c.enc_width)))
        self.enc_blocks = [
            _Block(f"enc.blocks.{i}", c.enc_width, c.enc_heads, c.mlp_ratio,
                   rng, dtype, self.params)
            for i in range(c.enc_depth)
        ]
        self.enc_norm_g = p("enc.norm.g", np.ones(c.enc_width))
        self.enc_norm_b = p("enc.norm.b", np.zeros(c.enc_width))
        self.proj_w = p("dec.proj.w", _trunc_normal(rng, (c.enc_width, c.dec_width)))
        self.proj_b = p("dec.proj.b", np.zeros(c.dec_width))
        self.mask_token = p("dec.mask_token", _trunc_normal(rng, (c.dec_width,)))
        self.dec_pos = p("dec.pos", _trunc_normal(rng, (c.n_tokens, c.dec_width)))
        self.dec_blocks = [
            _Block(f"dec.blocks.{i}", c.dec_width, c.dec_heads, c.mlp_ratio,
                   rng, dtype, self.params)
            for i in range(c.dec_depth)
        ]
        self.dec_norm_g = p("dec.norm.g", np.ones(c.dec_width))
        self.dec_norm_b = p("dec.norm.b", np.zeros(c.dec_width))
        self.head_w = p("head.w", _trunc_normal(rng, (c.dec_width, c.tube_dim)))
        self.head_b = p("head.b", np.zeros(c.tube_dim))

    # -- pieces ---------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def encoder_parameters(self) -> list[Parameter]:
        return [p for name, p in self.params.items() if name.startswith("enc.")]

    def _position_onehot(self, positions: np.ndarray) -> np.ndarray:
        """(B, K) int positions -> (B, K, N) one-hot selector."""
        b, k = positions.shape
        n = self.config.n_tokens
        onehot = np.zeros((b, k, n), dtype=self.dtype)
        bb = np.repeat(np.arange(b), k)
        kk = np.tile(np.arange(k), b)
        onehot[bb, kk, positions.ravel()] = 1.0
        return onehot

    def tube_embed(self, tubes: np.ndarray, positions: np.ndarray) -> Tensor:
        """(B, K, C_p, T_p, F_p, D_i) tubes at (B, K) grid positions -> tokens."""
        b, k = tubes.shape[:2]
        if positions.shape != (b, k):
            raise ContractError("positions must align with the tube batch")
        if len(positions) and (positions.min() < 0 or positions.max() >= self.config.n_tokens):
            raise ContractError(
                f"tube position out of range [0, {self.config.n_tokens})"
            )
        flat = Tensor(tubes.reshape(b, k, self.config.tube_dim).astype(self.dtype))
        tokens = flat @ self.embed_w + self.embed_b
        onehot = Tensor(self._position_onehot(positions))
        return tokens + onehot @ self.enc_pos

    def encode(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.config.enc_width:
            raise ContractError(
                f"token width {tokens.shape[-1]} != encoder width {self.config.enc_width}"
            )
        x = tokens
        for block in self.enc_blocks:
            x = block(x)
        return layer_norm(x, self.enc_norm_g, self.enc_norm_b)

    def decode(self, z: Tensor, masks: list[MaskSpec]) -> Tensor:
        """Latents for visible tubes -> predicted tubes at every position."""
        b, n_v, _ = z.shape
        n = self.config.n_tokens
        if any(m.n_visible != n_v for m in masks) or len(masks) != b:
            raise ContractError("latent count does not match the masks' visible count")
        z_d = z @ self.proj_w + self.proj_b
        visible_pos = np.stack([m.visible for m in masks])
        onehot = self._position_onehot(visible_pos)  # (B, N_v, N)
        scatter = Tensor(onehot.transpose(0, 2, 1))  # (B, N, N_v)
        z_full = scatter @ z_d
        vis_indicator = Tensor(onehot.sum(axis=1).reshape(b, n, 1))
        mask_fill = self.mask_token.reshape(1, 1, self.config.dec_width)
        x = z_full + mask_fill * (1.0 - vis_indicator)
        x = x + self.dec_pos
        for block in self.dec_blocks:
            x = block(x)
        x = layer_norm(x, self.dec_norm_g, self.dec_norm_b)
        out = x @ self.head_w + self.head_b
        c = self.config
        return out.reshape(b, n, c.cp, c.tp, c.fp, c.di)

    def forward_visible(self, tubes: np.ndarray, positions: np.ndarray) -> Tensor:
        return self.encode(self.tube_embed(tubes, positions))

    def forward_mae(self, tube_batch: np.ndarray, masks: list[MaskSpec]
                    ) -> tuple[Tensor, np.ndarray]:
        """(B, N, ...) tubes + per-sample masks -> (predictions, targets)."""
        b = len(tube_batch)
        if len(masks) != b:
            raise ContractError("one mask per sample required")
        visible = np.stack([tube_batch[i][m.visible] for i, m in enumerate(masks)])
        positions = np.stack([m.visible for m in masks])
        z = self.forward_visible(visible, positions)
        predictions = self.decode(z, masks)
        return predictions, tube_batch
