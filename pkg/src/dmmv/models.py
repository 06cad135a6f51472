"""DMMV model assemblies: decomposition, gate fusion, and full forward passes.

The S variant splits each window into moving-average trend and seasonal parts
and routes them to the numerical and visual forecasters. The A variant lets
the visual forecaster backcast the look-back through complementary masked
reconstructions; the backcast residual (what the period-biased visual model
cannot express) feeds the numerical forecaster. Either way the two horizon
forecasts merge through a single learned sigmoid gate (or a plain sum under
the ablation switch).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import autodiff as ad
from .codec import ImagingGeometry
from .errors import ConfigError, ShapeMismatch
from .numerical import build_numerical
from .parameters import ParameterStore
from .visual import MaeConfig, VisualForecaster


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

@dataclass
class DecompositionResult:
    trend: np.ndarray
    seasonal: np.ndarray
    backcast: np.ndarray | None = None


def moving_average_batch(x, period):
    """Centered moving average with kernel 2*floor(P/2)+1 over replicate-padded
    rows; [B, T] -> [B, T]."""
    x = np.asarray(x, dtype=np.float64)
    half = period // 2
    kernel = 2 * half + 1
    if half == 0:
        return x.copy()
    padded = np.concatenate(
        [np.repeat(x[:, :1], half, axis=1), x, np.repeat(x[:, -1:], half, axis=1)],
        axis=1,
    )
    return sliding_window_view(padded, kernel, axis=1).mean(axis=-1)


def moving_average_decompose(x, period):
    """Split one window into trend (moving average) and seasonal (residual)."""
    x = np.asarray(x, dtype=np.float64)
    trend = moving_average_batch(x[None, :], period)[0]
    return DecompositionResult(trend=trend, seasonal=x - trend)


def gate_value(w_g):
    return float(expit(np.asarray(w_g, dtype=np.float64)).reshape(-1)[0])


def fuse(y_season, y_trend, g=None):
    """Convex combination g*season + (1-g)*trend; g=None means plain sum."""
    a = np.asarray(y_season, dtype=np.float64)
    b = np.asarray(y_trend, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("fuse", a.shape, b.shape)
    if g is None:
        return a + b
    return g * a + (1.0 - g) * b


# ---------------------------------------------------------------------------
# assembly configuration
# ---------------------------------------------------------------------------

VARIANTS = ("s", "a")
FUSIONS = ("gate", "sum")
MASK_MODES = ("bcmask", "none", "random")
NUMERICAL_KINDS = ("linear", "patch_transformer")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "a"
    lookback: int = 336
    horizon: int = 96
    period: int = 24
    image_size: int = 64
    patch_size: int = 8
    channels: int = 1
    enc_dim: int = 64
    enc_depth: int = 3
    enc_heads: int = 4
    dec_dim: int = 48
    dec_depth: int = 2
    dec_heads: int = 4
    numerical: str = "linear"
    patch_len: int = 16
    num_dim: int = 64
    num_depth: int = 2
    num_heads: int = 4
    fusion: str = "gate"
    mask_mode: str = "bcmask"
    decomposition: bool = True
    detach_backcast: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.numerical not in NUMERICAL_KINDS:
            raise ConfigError(f"numerical must be one of {NUMERICAL_KINDS}")
        if self.lookback < 2 * self.period:
            raise ConfigError(
                f"look-back {self.lookback} must cover at least two periods of "
                f"{self.period}"
            )

    def mae_config(self):
        return MaeConfig(self.image_size, self.patch_size, self.channels,
                         self.enc_dim, self.enc_depth, self.enc_heads,
                         self.dec_dim, self.dec_depth, self.dec_heads)

    def numerical_input_len(self):
        if self.variant == "a" and self.decomposition:
            return (self.lookback // self.period) * self.period
        return self.lookback


# ---------------------------------------------------------------------------
# full DMMV assembly
# ---------------------------------------------------------------------------

class DmmvModel:
    kind = "dmmv"

    def __init__(self, config, seed=0):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        self.forecast_geo = ImagingGeometry.for_forecast(
            config.lookback, config.horizon, config.period, config.image_size,
            config.patch_size, config.channels)
        self.backcast_geo = ImagingGeometry.for_backcast(
            config.lookback, config.period, config.image_size, config.patch_size,
            config.channels)
        self.visual = VisualForecaster(config.mae_config(), self.store, rng)
        self.numerical = build_numerical(
            self.store, config.numerical, config.numerical_input_len(),
            config.horizon, rng, config.patch_len, config.num_dim,
            config.num_depth, config.num_heads)
        self.gate = self.store.add("gate.logit", np.zeros(1), "gate")

    # -- assembly description ------------------------------------------------
    def assembly(self):
        return {"kind": self.kind, **asdict(self.config)}

    @property
    def has_visual(self):
        return True

    def visual_is_deterministic(self):
        return self.config.mask_mode != "random"

    def warmup_source(self, x):
        """Series the visual forecaster images: seasonal component for the S
        variant, the raw window for A."""
        if self.config.variant == "s" and self.config.decomposition:
            return np.asarray(x, dtype=np.float64) - moving_average_batch(
                x, self.config.period)
        return np.asarray(x, dtype=np.float64)

    # -- forward pieces --------------------------------------------------------
    def visual_branch(self, x, train=False, rng=None):
        """Season forecast plus the numerical forecaster's input, as tensors."""
        x = np.asarray(x, dtype=np.float64)
        cfg = self.config
        if cfg.variant == "s":
            if cfg.decomposition:
                trend = moving_average_batch(x, cfg.period)
                seasonal = x - trend
                season = self.visual.forecast(seasonal, self.forecast_geo,
                                              cfg.horizon, train)
                trend_input = ad.constant(trend)
            else:
                season = self.visual.forecast(x, self.forecast_geo, cfg.horizon, train)
                trend_input = ad.constant(x)
            return {"season": season, "trend_input": trend_input}

        season = self.visual.forecast(x, self.forecast_geo, cfg.horizon, train)
        if not cfg.decomposition:
            return {"season": season, "trend_input": ad.constant(x)}
        retained = x[:, x.shape[1] - self.backcast_geo.retained_len:]
        if cfg.mask_mode == "none":
            # copy-path backcast equals the look-back, so the residual is zero
            trend_input = ad.constant(np.zeros_like(retained))
        else:
            bc = self.visual.backcast(x, self.backcast_geo, cfg.mask_mode, rng, train)
            if cfg.detach_backcast:
                bc = ad.detach(bc)
            trend_input = ad.add(ad.constant(retained), ad.scale(bc, -1.0))
        return {"season": season, "trend_input": trend_input}

    def head(self, branch, train=False):
        trend = self.numerical.forward(branch["trend_input"], train)
        season = branch["season"]
        if self.config.fusion == "sum":
            return ad.add(season, trend)
        g = ad.sigmoid(self.gate.leaf(train))
        one_minus = ad.add(ad.constant(np.ones(1)), ad.scale(g, -1.0))
        return ad.add(ad.mul(season, g), ad.mul(trend, one_minus))

    def forward(self, x, train=False, rng=None):
        return self.head(self.visual_branch(x, train, rng), train)

    # -- evaluation helpers ----------------------------------------------------
    def frozen_branch(self, x, rng=None, chunk=256):
        """Visual-branch outputs as plain arrays, valid while the visual
        parameters stay frozen (stage-1 caching)."""
        seasons, trends = [], []
        for lo in range(0, len(x), chunk):
            b = self.visual_branch(x[lo:lo + chunk], train=False, rng=rng)
            seasons.append(b["season"].data)
            trends.append(b["trend_input"].data)
        return {"season": np.concatenate(seasons), "trend_input": np.concatenate(trends)}

    def head_cached(self, season_np, trend_input_np, train=False):
        return self.head({"season": ad.constant(season_np),
                          "trend_input": ad.constant(trend_input_np)}, train)

    def predict(self, x, rng=None, chunk=256):
        out = []
        for lo in range(0, len(x), chunk):
            out.append(self.forward(x[lo:lo + chunk], train=False, rng=rng).data)
        return np.concatenate(out)

    def gate_weight(self):
        return gate_value(self.gate.value)


# ---------------------------------------------------------------------------
# single-view baselines (harness ablations)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisualOnlyConfig:
    lookback: int = 336
    horizon: int = 96
    period: int = 24
    image_size: int = 64
    patch_size: int = 8
    channels: int = 1
    enc_dim: int = 64
    enc_depth: int = 3
    enc_heads: int = 4
    dec_dim: int = 48
    dec_depth: int = 2
    dec_heads: int = 4

    def mae_config(self):
        return MaeConfig(self.image_size, self.patch_size, self.channels,
                         self.enc_dim, self.enc_depth, self.enc_heads,
                         self.dec_dim, self.dec_depth, self.dec_heads)


class VisualOnlyModel:
    kind = "visual_only"

    def __init__(self, config, seed=0):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        self.forecast_geo = ImagingGeometry.for_forecast(
            config.lookback, config.horizon, config.period, config.image_size,
            config.patch_size, config.channels)
        self.backcast_geo = ImagingGeometry.for_backcast(
            config.lookback, config.period, config.image_size, config.patch_size,
            config.channels)
        self.visual = VisualForecaster(config.mae_config(), self.store, rng)

    def assembly(self):
        return {"kind": self.kind, **asdict(self.config)}

    @property
    def has_visual(self):
        return True

    def warmup_source(self, x):
        return np.asarray(x, dtype=np.float64)

    def forward(self, x, train=False, rng=None):
        return self.visual.forecast(np.asarray(x, dtype=np.float64),
                                    self.forecast_geo, self.config.horizon, train)

    def predict(self, x, rng=None, chunk=256):
        out = []
        for lo in range(0, len(x), chunk):
            out.append(self.forward(x[lo:lo + chunk], train=False).data)
        return np.concatenate(out)


@dataclass(frozen=True)
class NumericalOnlyConfig:
    lookback: int = 336
    horizon: int = 96
    numerical: str = "linear"
    patch_len: int = 16
    num_dim: int = 64
    num_depth: int = 2
    num_heads: int = 4


class NumericalOnlyModel:
    kind = "numerical_only"

    def __init__(self, config, seed=0):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        self.numerical = build_numerical(
            self.store, config.numerical, config.lookback, config.horizon, rng,
            config.patch_len, config.num_dim, config.num_depth, config.num_heads)

    def assembly(self):
        return {"kind": self.kind, **asdict(self.config)}

    @property
    def has_visual(self):
        return False

    def forward(self, x, train=False, rng=None):
        return self.numerical.forward(ad.constant(np.asarray(x, dtype=np.float64)),
                                      train)

    def predict(self, x, rng=None, chunk=1024):
        out = []
        for lo in range(0, len(x), chunk):
            out.append(self.forward(x[lo:lo + chunk], train=False).data)
        return np.concatenate(out)


def build_model(assembly, seed=0):
    """Instantiate a model from an assembly description (checkpoint metadata)."""
    kind = assembly.get("kind", "dmmv")
    fields = {k: v for k, v in assembly.items() if k != "kind"}
    if kind == "dmmv":
        return DmmvModel(ModelConfig(**fields), seed)
    if kind == "visual_only":
        return VisualOnlyModel(VisualOnlyConfig(**fields), seed)
    if kind == "numerical_only":
        return NumericalOnlyModel(NumericalOnlyConfig(**fields), seed)
    raise ConfigError(f"unknown model kind {kind!r}")
