"""Transformer context encoder g: Z -> C over masked feature frames.

Pre-norm blocks (self-attention + feed-forward, residuals around both)
with a final layer norm.  Positional information comes from a grouped
convolution over the frame axis whose GELU output is added to the input
before the first block; disabling it (test configs) makes the stack
exactly permutation-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import (Parameter, Tensor, concat, conv1d, gelu, layer_norm,
                     matmul, softmax)

__all__ = ["ContextConfig", "ContextEncoder"]


@dataclass(frozen=True)
class ContextConfig:
    layers: int = 2
    dim: int = 32
    heads: int = 4
    ffn_inner: int = 64
    pos_kernel: int = 9
    pos_groups: int = 4
    use_positional: bool = True

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.use_positional and self.dim % self.pos_groups != 0:
            raise ValueError(f"dim {self.dim} must be divisible by pos_groups {self.pos_groups}")


def _linear_init(rng: RngStream, shape, name, dtype):
    bound = 1.0 / np.sqrt(shape[0])
    return Parameter(rng.uniform(shape, -bound, bound), name, dtype=dtype)


class _Attention:
    def __init__(self, cfg: ContextConfig, rng: RngStream, name: str, dtype):
        d = cfg.dim
        self.heads = cfg.heads
        self.head_dim = d // cfg.heads
        self.w_q = _linear_init(rng, (d, d), f"{name}.q.weight", dtype)
        self.b_q = Parameter(np.zeros(d), f"{name}.q.bias", dtype=dtype)
        self.w_k = _linear_init(rng, (d, d), f"{name}.k.weight", dtype)
        self.b_k = Parameter(np.zeros(d), f"{name}.k.bias", dtype=dtype)
        self.w_v = _linear_init(rng, (d, d), f"{name}.v.weight", dtype)
        self.b_v = Parameter(np.zeros(d), f"{name}.v.bias", dtype=dtype)
        self.w_o = _linear_init(rng, (d, d), f"{name}.out.weight", dtype)
        self.b_o = Parameter(np.zeros(d), f"{name}.out.bias", dtype=dtype)

    def parameters(self):
        return [self.w_q, self.b_q, self.w_k, self.b_k,
                self.w_v, self.b_v, self.w_o, self.b_o]

    def forward(self, x: Tensor, return_weights: bool = False):
        t, d = x.shape
        h, hd = self.heads, self.head_dim

        def split(v):  # (T, D) -> (H, T, hd)
            return v.reshape(t, h, hd).swapaxes(0, 1)

        q = split(matmul(x, self.w_q) + self.b_q)
        k = split(matmul(x, self.w_k) + self.b_k)
        v = split(matmul(x, self.w_v) + self.b_v)
        scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
        attn = softmax(scores, axis=-1)            # rows are distributions
        ctx = matmul(attn, v).swapaxes(0, 1).reshape(t, d)
        out = matmul(ctx, self.w_o) + self.b_o
        return (out, attn) if return_weights else out


class _Block:
    def __init__(self, cfg: ContextConfig, rng: RngStream, name: str, dtype):
        d = cfg.dim
        self.attn = _Attention(cfg, rng, f"{name}.attn", dtype)
        self.ln1_g = Parameter(np.ones(d), f"{name}.ln1.scale", dtype=dtype)
        self.ln1_b = Parameter(np.zeros(d), f"{name}.ln1.shift", dtype=dtype)
        self.ln2_g = Parameter(np.ones(d), f"{name}.ln2.scale", dtype=dtype)
        self.ln2_b = Parameter(np.zeros(d), f"{name}.ln2.shift", dtype=dtype)
        self.w_ff1 = _linear_init(rng, (d, cfg.ffn_inner), f"{name}.ffn1.weight", dtype)
        self.b_ff1 = Parameter(np.zeros(cfg.ffn_inner), f"{name}.ffn1.bias", dtype=dtype)
        self.w_ff2 = _linear_init(rng, (cfg.ffn_inner, d), f"{name}.ffn2.weight", dtype)
        self.b_ff2 = Parameter(np.zeros(d), f"{name}.ffn2.bias", dtype=dtype)

    def parameters(self):
        return (self.attn.parameters()
                + [self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
                   self.w_ff1, self.b_ff1, self.w_ff2, self.b_ff2])

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn.forward(layer_norm(x, self.ln1_g, self.ln1_b))
        h = gelu(matmul(layer_norm(x, self.ln2_g, self.ln2_b), self.w_ff1) + self.b_ff1)
        return x + (matmul(h, self.w_ff2) + self.b_ff2)


class ContextEncoder:
    def __init__(self, cfg: ContextConfig, init_rng: RngStream,
                 name: str = "context", dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.blocks = [_Block(cfg, init_rng, f"{name}.block{i}", dtype)
                       for i in range(cfg.layers)]
        self.lnf_g = Parameter(np.ones(cfg.dim), f"{name}.ln_final.scale", dtype=dtype)
        self.lnf_b = Parameter(np.zeros(cfg.dim), f"{name}.ln_final.shift", dtype=dtype)
        if cfg.use_positional:
            group_in = cfg.dim // cfg.pos_groups
            bound = 1.0 / np.sqrt(group_in * cfg.pos_kernel)
            self.pos_w = Parameter(
                init_rng.uniform((cfg.pos_groups, group_in, group_in, cfg.pos_kernel),
                                 -bound, bound),
                f"{name}.pos_conv.weight", dtype=dtype)
            self.pos_b = Parameter(np.zeros(cfg.dim), f"{name}.pos_conv.bias", dtype=dtype)
        else:
            self.pos_w = None
            self.pos_b = None

    def parameters(self) -> list[Parameter]:
        params = []
        if self.pos_w is not None:
            params += [self.pos_w, self.pos_b]
        for b in self.blocks:
            params += b.parameters()
        params += [self.lnf_g, self.lnf_b]
        return params

    def _positional(self, x: Tensor) -> Tensor:
        """Grouped same-length convolution over frames, GELU'd."""
        t, d = x.shape
        k = self.cfg.pos_kernel
        pad_l, pad_r = k // 2, k - 1 - k // 2
        zeros_l = Tensor(np.zeros((pad_l, d), dtype=x.data.dtype))
        zeros_r = Tensor(np.zeros((pad_r, d), dtype=x.data.dtype))
        padded = concat([zeros_l, x, zeros_r], axis=0)
        group_in = d // self.cfg.pos_groups
        outs = []
        for g in range(self.cfg.pos_groups):
            xg = padded[:, g * group_in : (g + 1) * group_in]
            outs.append(conv1d(xg, self.pos_w[g], stride=1))
        return gelu(concat(outs, axis=-1) + self.pos_b)

    def forward(self, z: Tensor) -> Tensor:
        """(T, dim) masked features -> (T, dim) contextual representations."""
        if z.shape[-1] != self.cfg.dim:
            raise ValueError(f"expected feature dim {self.cfg.dim}, got {z.shape[-1]}")
        x = z + self._positional(z) if self.cfg.use_positional else z
        for i, block in enumerate(self.blocks):
            x = block.forward(x)
            if not np.all(np.isfinite(x.data)):
                raise FloatingPointError(f"non-finite activations after block {i}")
        return layer_norm(x, self.lnf_g, self.lnf_b)
