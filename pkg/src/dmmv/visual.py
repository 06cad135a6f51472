"""Toy masked-autoencoder visual forecaster over period-imaged windows.

The encoder sees only visible patch tokens; the decoder fills masked
positions with a shared learned mask token and predicts pixel patches. The
reconstructed image keeps input pixels at visible patches and uses
predictions at masked ones, so visible content is never altered.

Backcasting runs two reconstruction passes over complementary masks (left
half hidden then right half hidden) and stitches the predicted halves into a
full reconstruction of the look-back image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import codec
from .errors import AllMasked, ShapeMismatch
from .nn import TransformerBlock, add_layer_norm, add_linear, apply_layer_norm, apply_linear
from .parameters import trunc_normal


@dataclass(frozen=True)
class MaeConfig:
    image_size: int = 64
    patch_size: int = 8
    channels: int = 1
    enc_dim: int = 64
    enc_depth: int = 3
    enc_heads: int = 4
    dec_dim: int = 48
    dec_depth: int = 2
    dec_heads: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image size must be a multiple of patch size")
        if self.enc_dim % self.enc_heads or self.dec_dim % self.dec_heads:
            raise ValueError("dims must be divisible by head counts")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid * self.grid

    @property
    def token_dim(self):
        return self.patch_size * self.patch_size * self.channels


@dataclass
class PatchMask:
    """Boolean per-patch grid, True = masked; row-major patch order."""
    masked: np.ndarray

    def __post_init__(self):
        self.masked = np.asarray(self.masked, dtype=bool)

    @property
    def flat(self):
        return self.masked.reshape(-1)

    @property
    def n_masked(self):
        return int(self.flat.sum())

    def complement(self):
        return PatchMask(~self.masked)


def forecast_mask(geo):
    """Mask every patch whose pixel column lies in the forecast region."""
    g = geo.grid_patches
    cols = np.arange(g) * geo.patch_size
    row = cols >= geo.boundary_col
    return PatchMask(np.tile(row, (g, 1)))


def bc_masks(geo):
    """Complementary left/right half masks; the two masked sets partition the
    patch grid."""
    g = geo.grid_patches
    cols = np.arange(g) * geo.patch_size
    left = cols < geo.image_size // 2
    mask_l = PatchMask(np.tile(left, (g, 1)))
    return mask_l, mask_l.complement()


def random_mask(geo, rng, ratio=0.5):
    """Each patch masked independently; degenerate draws (all or none masked)
    are repaired so both sides of the partition stay non-empty."""
    g = geo.grid_patches
    m = rng.random((g, g)) < ratio
    flat = m.reshape(-1)
    if flat.all():
        flat[rng.integers(flat.size)] = False
    if not flat.any():
        flat[rng.integers(flat.size)] = True
    return PatchMask(flat.reshape(g, g))


def random_column_mask(geo, rng, ratio=0.5):
    """Mask whole patch columns at random (time-axis dropout of the imaged
    window). Column completion is the self-supervised task that matches how
    the forecaster is used: both the half-window backcast masks and the
    forecast mask are contiguous column blocks."""
    g = geo.grid_patches
    cols = rng.random(g) < ratio
    if cols.all():
        cols[rng.integers(g)] = False
    if not cols.any():
        cols[rng.integers(g)] = True
    return PatchMask(np.tile(cols, (g, 1)))


def patchify(pixels, patch_size):
    """[C, S, S] image -> [(S/p)^2, p*p*C] tokens, patches in row-major order."""
    out = patchify_graph(ad.constant(np.asarray(pixels)[None, ...]), patch_size)
    return out.data[0]


def unpatchify(tokens, patch_size, channels, image_size):
    out = unpatchify_graph(ad.constant(np.asarray(tokens)[None, ...]),
                           patch_size, channels, image_size)
    return out.data[0]


def patchify_graph(pixels, patch_size):
    b, c, s, _ = pixels.shape
    if s % patch_size != 0:
        raise ShapeMismatch("patchify", pixels.shape, (patch_size,))
    g = s // patch_size
    x = ad.reshape(pixels, (b, c, g, patch_size, g, patch_size))
    x = ad.transpose(x, (0, 2, 4, 1, 3, 5))
    return ad.reshape(x, (b, g * g, c * patch_size * patch_size))


def unpatchify_graph(tokens, patch_size, channels, image_size):
    b = tokens.shape[0]
    g = image_size // patch_size
    if tokens.shape[1] != g * g or tokens.shape[2] != channels * patch_size * patch_size:
        raise ShapeMismatch("unpatchify", tokens.shape, (g * g, channels * patch_size ** 2))
    x = ad.reshape(tokens, (b, g, g, channels, patch_size, patch_size))
    x = ad.transpose(x, (0, 3, 1, 4, 2, 5))
    return ad.reshape(x, (b, channels, image_size, image_size))


def sincos_positions(grid, dim):
    """2-D sin-cos positional table [grid*grid, dim]: first half of the dims
    encodes the patch row, second half the column."""
    half = dim // 2

    def axis(pos, d):
        omega = 1.0 / (10000.0 ** (np.arange(d // 2) / (d // 2)))
        args = np.outer(pos, omega)
        return np.concatenate([np.sin(args), np.cos(args)], axis=1)

    rows = np.repeat(np.arange(grid), grid)
    cols = np.tile(np.arange(grid), grid)
    return np.concatenate([axis(rows, half), axis(cols, dim - half)], axis=1)


def _glorot(rng, n_in, n_out):
    return trunc_normal(rng, (n_in, n_out), std=np.sqrt(2.0 / (n_in + n_out)))


class MaskedAutoencoder:
    """From-scratch toy MAE. Initialization is chosen so the untrained model
    already behaves like a positional copy machine: sin-cos positional tables
    (learnable), positional-routing attention, Glorot content embeddings, and
    a zero prediction head. Training then only has to refine content flow,
    which keeps the tiny model out of the dead uniform-attention regime."""

    def __init__(self, cfg, store, rng, prefix="visual"):
        self.cfg = cfg
        n, p = cfg.n_patches, prefix
        self.embed = add_linear(store, f"{p}.embed", cfg.token_dim, cfg.enc_dim,
                                rng, "visual_other")
        self.embed[0].value[...] = _glorot(rng, cfg.token_dim, cfg.enc_dim)
        self.enc_pos = store.add(f"{p}.enc_pos", sincos_positions(cfg.grid, cfg.enc_dim),
                                 "visual_other")
        self.enc_blocks = [
            TransformerBlock(store, f"{p}.enc{i}", cfg.enc_dim, cfg.enc_heads, rng,
                             "visual_norm", "visual_other", attention_init="positional")
            for i in range(cfg.enc_depth)
        ]
        self.enc_norm = add_layer_norm(store, f"{p}.enc_norm", cfg.enc_dim, "visual_norm")
        self.dec_embed = add_linear(store, f"{p}.dec_embed", cfg.enc_dim, cfg.dec_dim,
                                    rng, "visual_other")
        self.dec_embed[0].value[...] = _glorot(rng, cfg.enc_dim, cfg.dec_dim)
        self.mask_token = store.add(f"{p}.mask_token", trunc_normal(rng, (cfg.dec_dim,)),
                                    "visual_other")
        self.dec_pos = store.add(f"{p}.dec_pos", sincos_positions(cfg.grid, cfg.dec_dim),
                                 "visual_other")
        self.dec_blocks = [
            TransformerBlock(store, f"{p}.dec{i}", cfg.dec_dim, cfg.dec_heads, rng,
                             "visual_norm", "visual_other", attention_init="positional")
            for i in range(cfg.dec_depth)
        ]
        self.dec_norm = add_layer_norm(store, f"{p}.dec_norm", cfg.dec_dim, "visual_norm")
        self.head = add_linear(store, f"{p}.head", cfg.dec_dim, cfg.token_dim,
                               rng, "visual_other")
        self.head[0].value[...] = 0.0

    def predict_tokens(self, pixels, mask, train):
        """Run encoder on visible tokens and decode every patch position.

        Returns (input tokens, predicted tokens), both [B, G, token_dim].
        """
        cfg = self.cfg
        flat = mask.flat
        if flat.size != cfg.n_patches:
            raise ShapeMismatch("mask", mask.masked.shape, (cfg.grid, cfg.grid))
        vis_idx = np.flatnonzero(~flat)
        mask_idx = np.flatnonzero(flat)
        if vis_idx.size == 0:
            raise AllMasked("at least one patch must stay visible")
        tokens = patchify_graph(pixels, cfg.patch_size)
        b = tokens.shape[0]

        x = ad.index_select(tokens, 1, vis_idx)
        x = apply_linear(x, *self.embed, train=train)
        pos = ad.index_select(self.enc_pos.leaf(train), 0, vis_idx)
        x = ad.add(x, pos)
        for blk in self.enc_blocks:
            x = blk(x, train)
        x = apply_layer_norm(x, *self.enc_norm, train=train)

        y = apply_linear(x, *self.dec_embed, train=train)
        mask_tok = ad.broadcast_to(
            ad.reshape(self.mask_token.leaf(train), (1, 1, cfg.dec_dim)),
            (b, mask_idx.size, cfg.dec_dim),
        )
        order = np.concatenate([vis_idx, mask_idx])
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        full = ad.index_select(ad.concat([y, mask_tok], axis=1), 1, inverse)
        full = ad.add(full, self.dec_pos.leaf(train))
        for blk in self.dec_blocks:
            full = blk(full, train)
        full = apply_layer_norm(full, *self.dec_norm, train=train)
        pred = apply_linear(full, *self.head, train=train)
        return tokens, pred

    def reconstruct(self, pixels, mask, train=False):
        """Reconstruct [B, C, S, S] pixels: visible patches are copied from the
        input, masked patches come from the decoder."""
        if mask.n_masked == 0:
            return pixels
        tokens, pred = self.predict_tokens(pixels, mask, train)
        m = ad.constant(mask.flat.astype(np.float64)[None, :, None])
        keep = ad.constant((~mask.flat).astype(np.float64)[None, :, None])
        merged = ad.add(ad.mul(tokens, keep), ad.mul(pred, m))
        return unpatchify_graph(merged, self.cfg.patch_size, self.cfg.channels,
                                self.cfg.image_size)

    def reconstruction_loss(self, pixels, mask, train):
        """MSE between predicted and true tokens at masked positions only."""
        tokens, pred = self.predict_tokens(pixels, mask, train)
        mask_idx = np.flatnonzero(mask.flat)
        return ad.mse(ad.index_select(pred, 1, mask_idx),
                      ad.detach(ad.index_select(tokens, 1, mask_idx)))


class VisualForecaster:
    """Imaging + masked reconstruction + decoding, batched over windows."""

    def __init__(self, cfg, store, rng, prefix="visual"):
        self.cfg = cfg
        self.mae = MaskedAutoencoder(cfg, store, rng, prefix)

    def forecast(self, lookbacks, geo, horizon, train=False):
        """[B, T] look-backs -> [B, horizon] forecast tensor."""
        pixels, means, stds = codec.encode_batch(lookbacks, geo)
        recon = self.mae.reconstruct(ad.constant(pixels), forecast_mask(geo), train)
        return codec.decode_forecast_graph(recon, geo, means, stds, horizon)

    def backcast(self, lookbacks, geo, mask_mode="bcmask", rng=None, train=False):
        """[B, T] look-backs -> [B, n_lb*period] backcast tensor.

        bcmask: two passes over the left/right halves. random: two passes over
        a random partition, redrawn per call. none: copy path, the retained
        look-back itself.
        """
        x = np.asarray(lookbacks, dtype=np.float64)
        retained = x[:, x.shape[1] - geo.retained_len:]
        if mask_mode == "none":
            return ad.constant(retained.copy())
        if mask_mode == "bcmask":
            mask_a, mask_b = bc_masks(geo)
        elif mask_mode == "random":
            if rng is None:
                raise ValueError("random mask mode needs an rng")
            mask_a = random_mask(geo, rng)
            mask_b = mask_a.complement()
        else:
            raise ValueError(f"unknown mask mode {mask_mode!r}")
        pixels, means, stds = codec.encode_batch(x, geo)
        px = ad.constant(pixels)
        recon_a = self.mae.reconstruct(px, mask_a, train)
        recon_b = self.mae.reconstruct(px, mask_b, train)
        merged = ad.add(ad.mul(recon_a, ad.constant(_pixel_weight(mask_a, geo))),
                        ad.mul(recon_b, ad.constant(_pixel_weight(mask_b, geo))))
        return codec.decode_backcast_graph(merged, geo, means, stds)


def _pixel_weight(mask, geo):
    """Per-pixel 0/1 weight marking the patches masked (hence predicted) in a
    pass; shaped [1, 1, S, S] for broadcasting over batch and channels."""
    p = geo.patch_size
    grid = mask.masked.astype(np.float64)
    return np.kron(grid, np.ones((p, p)))[None, None, :, :]


def vf_forecast(window, geo, forecaster, horizon, train=False):
    """Single-window forecast; thin wrapper over the batched path."""
    out = forecaster.forecast(window.lookback[None, :], geo, horizon, train)
    return out.data[0]


def vf_backcast(window, geo, forecaster, mask_mode="bcmask", rng=None, train=False):
    """Single-window backcast; thin wrapper over the batched path."""
    out = forecaster.backcast(window.lookback[None, :], geo, mask_mode, rng, train)
    return out.data[0]
