"""Numerical trend forecasters: a direct linear map and a patch transformer.

Both consume a [B, T'] input tensor (raw look-back, moving-average trend, or
backcast residual, depending on the assembly) and emit [B, H].
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .nn import TransformerBlock, add_layer_norm, apply_layer_norm
from .parameters import trunc_normal


class LinearForecaster:
    """y = W x + b with W [H, T']."""

    def __init__(self, store, input_len, horizon, rng, prefix="numerical"):
        self.input_len = input_len
        self.horizon = horizon
        self.weight = store.add(f"{prefix}.weight",
                                trunc_normal(rng, (horizon, input_len)), "numerical")
        self.bias = store.add(f"{prefix}.bias", np.zeros(horizon), "numerical")

    def forward(self, x, train=False):
        if x.shape[-1] != self.input_len:
            raise ShapeMismatch("linear_forecast", x.shape, (self.horizon, self.input_len))
        w = ad.transpose(self.weight.leaf(train), (1, 0))
        return ad.add(ad.matmul(x, w), self.bias.leaf(train))


class PatchTransformerForecaster:
    """Non-overlapping length-L patches (tail padded by repeating the final
    value), projected and position-encoded, run through transformer blocks,
    flattened into a linear head."""

    def __init__(self, store, input_len, horizon, rng, patch_len=16, dim=64,
                 depth=2, heads=4, prefix="numerical"):
        if input_len < patch_len:
            raise ShapeMismatch("patch_transformer", (input_len,), (patch_len,))
        self.input_len = input_len
        self.horizon = horizon
        self.patch_len = patch_len
        self.dim = dim
        self.n_patches = input_len // patch_len + 1
        self.w_pro = store.add(f"{prefix}.project",
                               trunc_normal(rng, (dim, patch_len)), "numerical")
        self.w_pos = store.add(f"{prefix}.positions",
                               trunc_normal(rng, (dim, self.n_patches)), "numerical")
        self.blocks = [
            TransformerBlock(store, f"{prefix}.block{i}", dim, heads, rng,
                             "numerical", "numerical")
            for i in range(depth)
        ]
        self.norm = add_layer_norm(store, f"{prefix}.norm", dim, "numerical")
        self.head_w = store.add(f"{prefix}.head.weight",
                                trunc_normal(rng, (horizon, dim * self.n_patches)),
                                "numerical")
        self.head_b = store.add(f"{prefix}.head.bias", np.zeros(horizon), "numerical")

    def forward(self, x, train=False):
        if x.shape[-1] != self.input_len:
            raise ShapeMismatch("patch_transformer", x.shape, (self.input_len,))
        b = x.shape[0]
        n, lp = self.n_patches, self.patch_len
        tail = ad.broadcast_to(
            ad.slice_(x, (slice(None), slice(self.input_len - 1, self.input_len))),
            (b, lp),
        )
        padded = ad.concat([x, tail], axis=1)
        patches = ad.reshape(ad.slice_(padded, (slice(None), slice(0, n * lp))),
                             (b, n, lp))
        tokens = ad.matmul(patches, ad.transpose(self.w_pro.leaf(train), (1, 0)))
        tokens = ad.add(tokens, ad.transpose(self.w_pos.leaf(train), (1, 0)))
        for blk in self.blocks:
            tokens = blk(tokens, train)
        tokens = apply_layer_norm(tokens, *self.norm, train=train)
        flat = ad.reshape(tokens, (b, n * self.dim))
        head = ad.transpose(self.head_w.leaf(train), (1, 0))
        return ad.add(ad.matmul(flat, head), self.head_b.leaf(train))


def build_numerical(store, kind, input_len, horizon, rng, patch_len=16, dim=64,
                    depth=2, heads=4, prefix="numerical"):
    if kind == "linear":
        return LinearForecaster(store, input_len, horizon, rng, prefix)
    if kind == "patch_transformer":
        return PatchTransformerForecaster(store, input_len, horizon, rng, patch_len,
                                          dim, depth, heads, prefix)
    raise ValueError(f"unknown numerical forecaster {kind!r}")
