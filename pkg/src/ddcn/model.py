"""DDCN encoder-decoder assembly.

Patch embedding feeds a stack of blocks, each wiring a spatio-temporal
attention gate, a spatial attention gate and a pointwise feed-forward pair
through additive residuals; patch back restores the grid resolution and
collapses the temporal axis into the single predicted frame.

Both attention gates share one structure: a value projection multiplied
elementwise (Hadamard) with an attention tensor produced by a dynamic
operator on a GELU-activated projection. The spatio-temporal gate uses 3D
involution over (T, H, W); the spatial gate folds batch and time together
and uses deformable dynamic convolution. Ablation flags swap either dynamic
operator for a plain shared-filter convolution of the same kernel size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import ops
from .numerics import F32, Module, ShapeError, Tensor, add, gelu, mul, reshape, transpose

__all__ = ["ModelConfig", "BlockActivations", "STAttBlock", "SpatialAttBlock",
           "FeedForward", "DDCNBlock", "DDCN"]


@dataclass
class ModelConfig:
    """Architecture hyperparameters; every knob the blocks consume.

    patch_size must divide the dataset grid height and width; embed_dim must
    be divisible by both reduction and groups.
    """

    in_channels: int = 2
    input_steps: int = 4
    patch_size: int = 2
    embed_dim: int = 64
    depth: int = 2
    ddc_kernel: int = 3
    involution_kernel: int = 3
    groups: int = 1
    reduction: int = 4
    ffn_expansion: int = 2
    use_ddc: bool = True
    use_involution3d: bool = True

    def validate(self):
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.input_steps < 1:
            raise ValueError(f"input_steps must be >= 1, got {self.input_steps}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 1 <= self.depth <= 8:
            raise ValueError(f"depth must be in 1..8, got {self.depth}")
        if self.embed_dim % self.reduction != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must be divisible by reduction {self.reduction}"
            )
        if self.embed_dim % self.groups != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must be divisible by groups {self.groups}"
            )
        for name in ("ddc_kernel", "involution_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be odd and positive, got {k}")
        if self.ffn_expansion < 1:
            raise ValueError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {unknown}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class BlockActivations:
    """Named intermediates of one block, retained only in debug mode.

    All tensors are stored in (B, T, D, H', W') layout.
    """

    x_ST: np.ndarray = None
    V_ST: np.ndarray = None
    Att_ST: np.ndarray = None
    x_S: np.ndarray = None
    V_S: np.ndarray = None
    Att_S: np.ndarray = None
    Enc_out: np.ndarray = None
    Dec_out: np.ndarray = None


class STAttBlock(Module):
    """Spatio-temporal attention gate: V (x) dynamic-attention over (T, H, W).

    V = PWConv3D(x); Att = Involution3D(GELU(PWConv3D(x))); output V (x) Att.
    With use_involution3d off, the attention operator is a shared 3^3 filter.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype=F32):
        d = cfg.embed_dim
        self.value_proj = ops.PointwiseConv(d, d, rng=rng, dtype=dtype)
        self.att_proj = ops.PointwiseConv(d, d, rng=rng, dtype=dtype)
        if cfg.use_involution3d:
            self.att_op = ops.Involution3D(
                d, cfg.involution_kernel, cfg.groups, cfg.reduction, rng=rng, dtype=dtype
            )
        else:
            self.att_op = ops.SharedConv(cfg.involution_kernel, dims=3, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, acts: BlockActivations | None = None) -> Tensor:
        # (B, T, D, H, W) -> channels-first (B, D, T, H, W) for the 3D ops
        xc = transpose(x, (0, 2, 1, 3, 4))
        v = self.value_proj.forward(xc)
        att = self.att_op.forward(gelu(self.att_proj.forward(xc)))
        out = mul(v, att)
        if acts is not None:
            acts.V_ST = v.data.transpose(0, 2, 1, 3, 4).copy()
            acts.Att_ST = att.data.transpose(0, 2, 1, 3, 4).copy()
        return transpose(out, (0, 2, 1, 3, 4))

    __call__ = forward


class SpatialAttBlock(Module):
    """Spatial attention gate on frames with batch and time folded together.

    V = PWConv(x); Att = DDC(GELU(PWConv(x))); output V (x) Att, unfolded
    back to (B, T, D, H, W). With use_ddc off, the attention operator is a
    shared 3x3 filter.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype=F32):
        d = cfg.embed_dim
        self.value_proj = ops.PointwiseConv(d, d, rng=rng, dtype=dtype)
        self.att_proj = ops.PointwiseConv(d, d, rng=rng, dtype=dtype)
        if cfg.use_ddc:
            self.att_op = ops.DDCLayer(d, cfg.ddc_kernel, cfg.groups, rng=rng, dtype=dtype)
        else:
            self.att_op = ops.SharedConv(cfg.ddc_kernel, dims=2, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, acts: BlockActivations | None = None) -> Tensor:
        b, t, d, h, w = x.shape
        folded = reshape(x, (b * t, d, h, w))
        v = self.value_proj.forward(folded)
        att = self.att_op.forward(gelu(self.att_proj.forward(folded)))
        out = mul(v, att)
        if acts is not None:
            acts.V_S = v.data.reshape(b, t, d, h, w).copy()
            acts.Att_S = att.data.reshape(b, t, d, h, w).copy()
        return reshape(out, (b, t, d, h, w))

    __call__ = forward


class FeedForward(Module):
    """Decoder feed-forward: two pointwise convs doubling then restoring D."""

    def __init__(self, cfg: ModelConfig, rng, dtype=F32):
        d = cfg.embed_dim
        hidden = d * cfg.ffn_expansion
        self.expand = ops.PointwiseConv(d, hidden, rng=rng, dtype=dtype)
        self.restore = ops.PointwiseConv(hidden, d, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, t, d, h, w = x.shape
        folded = reshape(x, (b * t, d, h, w))
        out = self.restore.forward(self.expand.forward(folded))
        return reshape(out, (b, t, d, h, w))

    __call__ = forward


class DDCNBlock(Module):
    """One encoder-decoder unit: three gated stages with additive residuals.

    x_S = STAtt(x_ST) + x_ST; Enc_out = SpatialAtt(x_S) + x_S;
    Dec_out = FeedForward(Enc_out) + Enc_out. Residuals add each stage's own
    input, not the network input.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype=F32):
        self.st_att = STAttBlock(cfg, rng, dtype)
        self.spatial_att = SpatialAttBlock(cfg, rng, dtype)
        self.ffn = FeedForward(cfg, rng, dtype)

    def forward(self, x: Tensor, acts: BlockActivations | None = None) -> Tensor:
        if acts is not None:
            acts.x_ST = x.data.copy()
        x_s = add(self.st_att.forward(x, acts), x)
        if acts is not None:
            acts.x_S = x_s.data.copy()
        enc = add(self.spatial_att.forward(x_s, acts), x_s)
        if acts is not None:
            acts.Enc_out = enc.data.copy()
        dec = add(self.ffn.forward(enc), enc)
        if acts is not None:
            acts.Dec_out = dec.data.copy()
        return dec

    __call__ = forward


class DDCN(Module):
    """Grid traffic forecaster: (B, T, C, H, W) history -> (B, C, H, W) next frame.

    Construction validates the patch size against the grid, so shape errors
    surface before any forward pass. A model instance is immutable during
    inference; training mutates its Params and must be externally serialized.
    """

    def __init__(self, config: ModelConfig, grid_size: tuple, dtype=F32, seed: int = 0):
        config.validate()
        h, w = grid_size
        if h % config.patch_size != 0 or w % config.patch_size != 0:
            raise ShapeError(
                f"patch size {config.patch_size} must divide grid H={h} and W={w}"
            )
        self.config = config
        self.grid_size = (int(h), int(w))
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.patch_embed = ops.PatchEmbed(
            config.in_channels, config.patch_size, config.embed_dim, rng=rng, dtype=dtype
        )
        self.blocks = [DDCNBlock(config, rng, dtype) for _ in range(config.depth)]
        self.patch_back = ops.PatchBack(
            config.input_steps, config.embed_dim, config.patch_size, config.in_channels,
            rng=rng, dtype=dtype,
        )
        self.bind_param_names()

    def forward(self, x: Tensor, debug: bool = False):
        expected = (self.config.input_steps, self.config.in_channels) + self.grid_size
        if len(x.shape) != 5 or x.shape[1:] != expected:
            raise ShapeError(
                f"DDCN: expected input (B,) + {expected}, got {x.shape}"
            )
        activations: list[BlockActivations] = []
        h = self.patch_embed.forward(x)
        for block in self.blocks:
            acts = BlockActivations() if debug else None
            h = block.forward(h, acts)
            if debug:
                activations.append(acts)
        out = self.patch_back.forward(h)
        if debug:
            return out, activations
        return out

    __call__ = forward

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Pure-inference forward on a numpy batch (no tape)."""
        out = self.forward(Tensor(np.asarray(batch, dtype=self.dtype)))
        return out.data.copy()

    def param_count(self) -> int:
        return sum(p.size for p in self.params() if p.trainable)
