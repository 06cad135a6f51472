"""Neural building blocks shared by the visual and numerical forecasters.

Pre-norm transformer blocks over [batch, tokens, dim] tensors; attention
logits are scaled by 1/sqrt(head_dim) and layer norms use eps=1e-6.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .parameters import trunc_normal

LN_EPS = 1e-6


def add_linear(store, prefix, d_in, d_out, rng, group):
    w = store.add(f"{prefix}.weight", trunc_normal(rng, (d_in, d_out)), group)
    b = store.add(f"{prefix}.bias", np.zeros(d_out), group)
    return w, b


def apply_linear(x, w, b, train):
    return ad.add(ad.matmul(x, w.leaf(train)), b.leaf(train))


def add_layer_norm(store, prefix, dim, norm_group):
    scale = store.add(f"{prefix}.scale", np.ones(dim), norm_group)
    shift = store.add(f"{prefix}.shift", np.zeros(dim), norm_group)
    return scale, shift


def apply_layer_norm(x, scale, shift, train):
    return ad.layer_norm(x, scale.leaf(train), shift.leaf(train), eps=LN_EPS)


def positional_routing_init(dim):
    """Attention q/k initializer: project onto the first half of the embedding
    (the row part of a 2-D sin-cos layout), so attention starts out routing by
    spatial position instead of having to discover routing from noise."""
    w = np.zeros((dim, dim))
    idx = np.arange(dim // 2)
    w[idx, idx] = 1.0
    return w


class TransformerBlock:
    """Pre-norm multi-head self-attention + GELU MLP with residuals.

    attention_init="positional" seeds q/k with a positional-routing projection
    and v/out with scaled identities; "standard" uses truncated-normal
    everywhere (used by the numerical forecaster).
    """

    def __init__(self, store, prefix, dim, heads, rng, norm_group, other_group,
                 mlp_ratio=4, attention_init="standard"):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.ln1 = add_layer_norm(store, f"{prefix}.ln1", dim, norm_group)
        self.wq = add_linear(store, f"{prefix}.attn.q", dim, dim, rng, other_group)
        self.wk = add_linear(store, f"{prefix}.attn.k", dim, dim, rng, other_group)
        self.wv = add_linear(store, f"{prefix}.attn.v", dim, dim, rng, other_group)
        self.wo = add_linear(store, f"{prefix}.attn.out", dim, dim, rng, other_group)
        if attention_init == "positional":
            self.wq[0].value[...] = positional_routing_init(dim)
            self.wk[0].value[...] = positional_routing_init(dim)
            self.wv[0].value[...] = 0.5 * np.eye(dim)
            self.wo[0].value[...] = 0.5 * np.eye(dim)
        self.ln2 = add_layer_norm(store, f"{prefix}.ln2", dim, norm_group)
        hidden = mlp_ratio * dim
        self.w1 = add_linear(store, f"{prefix}.mlp.fc1", dim, hidden, rng, other_group)
        self.w2 = add_linear(store, f"{prefix}.mlp.fc2", hidden, dim, rng, other_group)

    def _split_heads(self, x):
        b, n, _ = x.shape
        x = ad.reshape(x, (b, n, self.heads, self.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x, train):
        h = apply_layer_norm(x, *self.ln1, train=train)
        q = self._split_heads(apply_linear(h, *self.wq, train=train))
        k = self._split_heads(apply_linear(h, *self.wk, train=train))
        v = self._split_heads(apply_linear(h, *self.wv, train=train))
        logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                          1.0 / np.sqrt(self.head_dim))
        attn = ad.softmax(logits)
        ctx = ad.matmul(attn, v)
        b, _, n, _ = ctx.shape
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, self.dim))
        x = ad.add(x, apply_linear(ctx, *self.wo, train=train))
        h = apply_layer_norm(x, *self.ln2, train=train)
        h = apply_linear(h, *self.w1, train=train)
        h = ad.gelu(h)
        h = apply_linear(h, *self.w2, train=train)
        return ad.add(x, h)
