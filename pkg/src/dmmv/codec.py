"""Period-based time-series <-> image codec.

A univariate window is z-scored, segmented into period-length subsequences,
stacked so each column holds one period, and bilinearly resized into the
look-back region of a square grayscale image. The forecast region (columns
right of the boundary) starts zeroed and is filled by the visual forecaster;
decoding inverts the chain (crop, invert the resize, unstack, denormalize).

Decoding exists in two faces: plain numpy for array inputs, and graph
functions over autodiff tensors so training losses can reach back through the
inverse transform into the visual model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import GeometryMismatch, NoDominantPeriod, PeriodTooLarge


# ---------------------------------------------------------------------------
# period detection and stacking
# ---------------------------------------------------------------------------

def detect_period(values, min_p, max_p):
    """Dominant period from the FFT amplitude spectrum.

    Scans nonzero frequency bins whose implied period round(n/k) falls in
    [min_p, max_p] and returns the period of the largest-amplitude bin.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if min_p < 2:
        raise ValueError("min_p must be at least 2")
    if n < 2 * max_p:
        raise ValueError(f"need at least 2*max_p={2 * max_p} samples, got {n}")
    amps = 2.0 * np.abs(np.fft.rfft(x)) / n
    rms = float(np.sqrt(np.mean(x * x)))
    best_k = -1
    best_amp = 0.0
    for k in range(1, amps.size):
        p = int(np.floor(n / k + 0.5))
        if min_p <= p <= max_p and amps[k] > best_amp:
            best_k = k
            best_amp = amps[k]
    if best_k < 0 or best_amp <= 1e-9 * rms:
        raise NoDominantPeriod(
            f"no frequency bin with period in [{min_p}, {max_p}] rises above "
            f"1e-9 of the signal RMS"
        )
    return int(np.floor(n / best_k + 0.5))


def segment_stack(values, period):
    """Stack a sequence into a [period, floor(T/period)] grid, one period per
    column; the T mod period oldest values are dropped."""
    x = np.asarray(values, dtype=np.float64)
    t = x.size
    if period > t:
        raise PeriodTooLarge(f"period {period} exceeds sequence length {t}")
    n_cols = t // period
    retained = x[t - n_cols * period:]
    return retained.reshape(n_cols, period).T.copy()


def unstack(grid):
    """Inverse of segment_stack on remainder-free input."""
    g = np.asarray(grid, dtype=np.float64)
    return g.T.reshape(-1).copy()


@dataclass
class NormStats:
    mean: float
    std: float
    eps: float = 1e-8

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / (self.std + self.eps)

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * (self.std + self.eps) + self.mean


def instance_normalize(values, eps=1e-8):
    """Per-window z-score with population std; constant input maps to zeros."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty sequence")
    stats = NormStats(mean=float(x.mean()), std=float(x.std()), eps=eps)
    return stats.normalize(x), stats


# ---------------------------------------------------------------------------
# bilinear resize (half-pixel centers, edge-clamped)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _resize_weights(n_in, n_out):
    w = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    w[rows, lo] += 1.0 - frac
    w[rows, hi] += frac
    w.flags.writeable = False
    return w


def resize_weights(n_in, n_out):
    """Row-interpolation matrix [n_out, n_in] for half-pixel-center bilinear
    sampling with edge clamping. Equal sizes yield the identity matrix."""
    return _resize_weights(int(n_in), int(n_out))


@lru_cache(maxsize=None)
def _decode_weights(n_region, n_raw):
    """Map an image-resolution axis back to raw-grid resolution [n_raw,
    n_region].

    When the image oversamples the raw grid the encode interpolation is
    injective, so its least-squares inverse recovers the raw values exactly
    (this is what makes the encode/decode round trip exact). When the image
    undersamples, plain bilinear interpolation fills in the missing
    resolution.
    """
    if n_raw == n_region:
        w = np.eye(n_raw)
    elif n_raw < n_region:
        w = np.linalg.pinv(resize_weights(n_raw, n_region))
    else:
        w = np.asarray(resize_weights(n_region, n_raw)).copy()
    w.flags.writeable = False
    return w


def bilinear_resize(grid, h_out, w_out):
    """Resize a 2-D grid; identity (bitwise) when sizes already match."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    if h < 1 or w < 1 or h_out < 1 or w_out < 1:
        raise ValueError("resize requires positive dimensions")
    if (h_out, w_out) == (h, w):
        return g.copy()
    return resize_weights(h, h_out) @ g @ resize_weights(w, w_out).T


# ---------------------------------------------------------------------------
# geometry and window containers
# ---------------------------------------------------------------------------

def _round_half_up(v):
    return int(np.floor(v + 0.5))


@dataclass(frozen=True)
class ImagingGeometry:
    period: int
    n_lb: int          # look-back columns in the raw stacked grid
    n_f: int           # forecast columns (0 for the backcast layout)
    image_size: int
    patch_size: int
    channels: int
    boundary_col: int  # pixel column where the forecast region begins

    def __post_init__(self):
        s, p = self.image_size, self.patch_size
        if s % p != 0 or (s // 2) % p != 0:
            raise GeometryMismatch(
                f"image size {s} must make both S and S/2 multiples of patch {p}"
            )
        if self.period < 1 or self.n_lb < 1 or self.channels < 1:
            raise GeometryMismatch("period, look-back columns and channels must be >= 1")
        b = self.boundary_col
        if b % p != 0 or b < p or b > s:
            raise GeometryMismatch(
                f"boundary {b} must be a patch multiple within [{p}, {s}]"
            )
        if self.n_f >= 1 and b > s - p:
            raise GeometryMismatch("forecast layout needs at least one patch column")

    @property
    def retained_len(self):
        return self.n_lb * self.period

    @property
    def grid_patches(self):
        return self.image_size // self.patch_size

    @classmethod
    def for_forecast(cls, lookback_len, horizon, period, image_size, patch_size,
                     channels=1):
        if period > lookback_len:
            raise PeriodTooLarge(f"period {period} exceeds look-back {lookback_len}")
        n_lb = lookback_len // period
        if n_lb < 2:
            raise PeriodTooLarge(
                f"look-back {lookback_len} holds fewer than two periods of {period}"
            )
        if horizon < 1:
            raise GeometryMismatch("forecast layout requires a positive horizon")
        n_f = -(-horizon // period)
        raw = _round_half_up(image_size * n_lb / (n_lb + n_f))
        b_col = _round_half_up(raw / patch_size) * patch_size
        b_col = min(max(b_col, patch_size), image_size - patch_size)
        return cls(period, n_lb, n_f, image_size, patch_size, channels, b_col)

    @classmethod
    def for_backcast(cls, lookback_len, period, image_size, patch_size, channels=1):
        """Square layout for backcasting: every pixel column is look-back."""
        if period > lookback_len:
            raise PeriodTooLarge(f"period {period} exceeds look-back {lookback_len}")
        n_lb = lookback_len // period
        if n_lb < 2:
            raise PeriodTooLarge(
                f"look-back {lookback_len} holds fewer than two periods of {period}"
            )
        return cls(period, n_lb, 0, image_size, patch_size, channels, image_size)


@dataclass
class UnivariateWindow:
    """One variate's look-back plus (optionally) its target horizon."""
    lookback: np.ndarray
    target: np.ndarray | None = None
    variate_id: int = 0

    def __post_init__(self):
        self.lookback = np.asarray(self.lookback, dtype=np.float64)
        if not np.isfinite(self.lookback).all():
            raise ValueError("look-back contains non-finite values")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=np.float64)
            if not np.isfinite(self.target).all():
                raise ValueError("target contains non-finite values")


@dataclass
class ImagedWindow:
    pixels: np.ndarray  # [C, S, S]
    geometry: ImagingGeometry
    stats: NormStats
    retained_len: int = field(default=0)

    def __post_init__(self):
        if self.retained_len == 0:
            self.retained_len = self.geometry.retained_len


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def encode_window(window, geo):
    """Image one window: normalize the retained look-back, stack, resize into
    the look-back region; forecast columns start at zero."""
    pixels, means, stds = encode_batch(window.lookback[None, :], geo)
    stats = NormStats(mean=float(means[0]), std=float(stds[0]))
    return ImagedWindow(pixels[0], geo, stats)


def encode_batch(lookbacks, geo):
    """Vectorized encode of [B, T] look-backs -> ([B, C, S, S], means, stds)."""
    x = np.asarray(lookbacks, dtype=np.float64)
    t = x.shape[1]
    if geo.period > t:
        raise PeriodTooLarge(f"period {geo.period} exceeds look-back {t}")
    if t // geo.period != geo.n_lb:
        raise GeometryMismatch(
            f"geometry expects {geo.n_lb} look-back columns, window yields "
            f"{t // geo.period}"
        )
    retained = x[:, t - geo.retained_len:]
    means = retained.mean(axis=1)
    stds = retained.std(axis=1)
    normed = (retained - means[:, None]) / (stds[:, None] + 1e-8)
    grids = normed.reshape(-1, geo.n_lb, geo.period).transpose(0, 2, 1)
    s, b = geo.image_size, geo.boundary_col
    rows = resize_weights(geo.period, s)
    cols_t = resize_weights(geo.n_lb, b).T
    lb_region = np.matmul(np.matmul(rows, grids), cols_t)
    pixels = np.zeros((x.shape[0], geo.channels, s, s))
    pixels[:, :, :, :b] = lb_region[:, None, :, :]
    return pixels, means, stds


def decode_forecast(img, horizon):
    """Recover a length-`horizon` forecast from a reconstructed image."""
    geo = img.geometry
    out = decode_forecast_graph(
        ad.constant(img.pixels[None, ...]),
        geo,
        np.array([img.stats.mean]),
        np.array([img.stats.std]),
        horizon,
    )
    return out.data[0]


def decode_forecast_graph(pixels, geo, means, stds, horizon):
    """Graph decode of the forecast region: [B, C, S, S] tensor -> [B, H]."""
    if geo.n_f < 1:
        raise GeometryMismatch("geometry has no forecast region")
    if horizon > geo.n_f * geo.period:
        raise GeometryMismatch(
            f"horizon {horizon} exceeds forecast capacity {geo.n_f * geo.period}"
        )
    s, b = geo.image_size, geo.boundary_col
    region = ad.slice_(pixels, (slice(None), 0, slice(None), slice(b, s)))
    seq = _region_to_sequence(region, s - b, geo.period, geo.n_f)
    seq = ad.slice_(seq, (slice(None), slice(0, horizon)))
    return _denormalize_graph(seq, means, stds)


def decode_backcast(pixels, geo, stats):
    """Recover the retained look-back sequence from a full image [C, S, S]."""
    out = decode_backcast_graph(
        ad.constant(np.asarray(pixels)[None, ...]),
        geo,
        np.array([stats.mean]),
        np.array([stats.std]),
    )
    return out.data[0]


def decode_backcast_graph(pixels, geo, means, stds):
    """Graph decode of the look-back region: [B, C, S, S] -> [B, n_lb*period]."""
    s, b = geo.image_size, geo.boundary_col
    region = ad.slice_(pixels, (slice(None), 0, slice(None), slice(0, b)))
    seq = _region_to_sequence(region, b, geo.period, geo.n_lb)
    return _denormalize_graph(seq, means, stds)


def _region_to_sequence(region, width, period, n_cols):
    """Map [B, S, width] back to the raw grid [B, period, n_cols] and unstack
    to [B, n_cols*period] (time runs down each column, then across)."""
    s = region.shape[1]
    rows = ad.constant(_decode_weights(s, period))
    cols_t = ad.constant(_decode_weights(width, n_cols).T)
    grid = ad.matmul(ad.matmul(rows, region), cols_t)
    return ad.reshape(ad.transpose(grid, (0, 2, 1)), (grid.shape[0], n_cols * period))


def _denormalize_graph(seq, means, stds):
    scale = ad.constant((np.asarray(stds) + 1e-8)[:, None])
    shift = ad.constant(np.asarray(means)[:, None])
    return ad.add(ad.mul(seq, scale), shift)
