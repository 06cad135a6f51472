"""MSE objective, AdamW, early stopping, and the two-stage training procedure.

Stage 1 trains the numerical forecaster and the gate with the visual
forecaster frozen; stage 2 additionally unfreezes the visual normalization
layers. Validation MSE drives early stopping, and the best-validation
parameters are restored at the end of each stage.

Because no pretrained weights exist at toy scale, an optional stage-0
self-supervised warm-up first trains the whole visual model to reconstruct
randomly masked patches of the training windows' images; without it the
frozen visual forecaster of stage 1 would be random noise.

When the frozen visual branch is deterministic (any mask mode except random),
its per-window outputs are precomputed once per stage instead of re-running
the visual model every batch; the cached values are exactly what the full
forward would produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .codec import encode_batch
from .errors import ConfigError, DivergedLoss
from .visual import random_column_mask


def mse_loss(pred, truth):
    """Mean squared error over every element of [B, H] arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    diff = pred - truth
    return float(np.mean(diff * diff))


class AdamW:
    """Decoupled-weight-decay Adam over Parameter objects.

    Weight decay skips the gate scalar and normalization parameters.
    """

    NO_DECAY_GROUPS = ("gate", "visual_norm")

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]
        self._t = [0] * len(self.params)

    def step(self):
        for i, p in enumerate(self.params):
            if not p.trainable:
                continue
            g = p.grad
            self._t[i] += 1
            t = self._t[i]
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / (1.0 - self.beta1 ** t)
            v_hat = self._v[i] / (1.0 - self.beta2 ** t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and p.group not in self.NO_DECAY_GROUPS:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


@dataclass(frozen=True)
class StageConfig:
    lr: float
    max_epochs: int
    patience: int

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")


@dataclass(frozen=True)
class TrainConfig:
    stage1: StageConfig = field(default_factory=lambda: StageConfig(0.01, 50, 10))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(0.005, 5, 2))
    warmup: StageConfig = field(default_factory=lambda: StageConfig(3e-3, 25, 0))
    warmup_mask_ratio: float = 0.5  # final ratio; ramps up from half of this
    visual_lr: float = 5e-3  # norm-layer rate when training a visual-only model
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    freeze_visual: bool = False  # ablation: keep the whole visual model frozen


@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


@dataclass
class TrainResult:
    history: list
    snapshots: dict
    best_val: dict

    def history_rows(self):
        header = ["stage", "epoch", "train_mse", "val_mse", "gate_value"]
        rows = [[h["stage"], h["epoch"], h["train_mse"], h["val_mse"],
                 h["gate_value"]] for h in self.history]
        return header, rows


def _check_finite(value, stage, epoch, where):
    if not np.isfinite(value):
        raise DivergedLoss(f"non-finite {where} loss {value} at {stage} epoch {epoch}")


def _gate_of(model):
    return model.gate_weight() if hasattr(model, "gate_weight") else float("nan")


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo:lo + batch_size]


def _optimizer(store, cfg, lr):
    return AdamW([p for p in store if p.trainable], lr, cfg.beta1, cfg.beta2,
                 cfg.eps, cfg.weight_decay)


def _run_stage(model, data, cfg, stage_cfg, stage_name, history, rng_shuffle,
               batch_loss, val_mse):
    """Shared epoch loop: shuffled minibatches, per-epoch validation, early
    stopping, best-validation restore."""
    store = model.store
    opt = _optimizer(store, cfg, stage_cfg.lr)
    n = len(data.x_train)
    best = np.inf
    best_epoch = 0
    best_snap = None
    for epoch in range(1, stage_cfg.max_epochs + 1):
        losses = []
        for idx in _batches(n, cfg.batch_size, rng_shuffle):
            store.zero_grad()
            loss = batch_loss(idx, epoch)
            _check_finite(loss.data, stage_name, epoch, "train")
            ad.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        train_mse = float(np.mean(losses))
        val = val_mse(epoch)
        _check_finite(val, stage_name, epoch, "validation")
        history.append({"stage": stage_name, "epoch": epoch,
                        "train_mse": train_mse, "val_mse": val,
                        "gate_value": _gate_of(model)})
        if val < best:
            best = val
            best_epoch = epoch
            best_snap = store.snapshot()
        elif stage_cfg.patience > 0 and epoch - best_epoch >= stage_cfg.patience:
            break
    if best_snap is not None:
        store.restore(best_snap)
    return best


def _warmup_visual(model, data, cfg, history, rng_shuffle, rng_mask):
    """Stage 0: self-supervised reconstruction of randomly masked patch
    columns of the training windows' images.

    Column masks (rather than scattered patch masks) force the cross-column
    routing the forecaster later relies on: the half-window backcast masks and
    the forecast mask are both contiguous column blocks, so column completion
    is the matching pretext task.
    """
    store = model.store
    store.set_trainable(("visual_norm", "visual_other"), True)
    store.set_trainable(("numerical", "gate"), False)
    geo = model.backcast_geo
    mae = model.visual.mae
    src_train = model.warmup_source(data.x_train)
    src_val = model.warmup_source(data.x_val)

    def batch_loss(idx, epoch):
        pixels, _, _ = encode_batch(src_train[idx], geo)
        mask = random_column_mask(geo, rng_mask, cfg.warmup_mask_ratio)
        return mae.reconstruction_loss(ad.constant(pixels), mask, train=True)

    def val_mse(epoch, chunk=256):
        rng_val = np.random.default_rng([cfg.seed, 77, epoch])
        mask = random_column_mask(geo, rng_val, cfg.warmup_mask_ratio)
        total, count = 0.0, 0
        for lo in range(0, len(src_val), chunk):
            pixels, _, _ = encode_batch(src_val[lo:lo + chunk], geo)
            loss = mae.reconstruction_loss(ad.constant(pixels), mask, train=False)
            total += float(loss.data) * (min(lo + chunk, len(src_val)) - lo)
            count += min(lo + chunk, len(src_val)) - lo
        return total / count

    return _run_stage(model, data, cfg, cfg.warmup, "warmup", history,
                      rng_shuffle, batch_loss, val_mse)


def _supervised_stage(model, data, cfg, stage_cfg, stage_name, history,
                      rng_shuffle, rng_mask, cache_visual):
    """One supervised stage of the gated forecaster, optionally with the
    frozen visual branch precomputed per window."""
    if cache_visual:
        cache_tr = model.frozen_branch(data.x_train)
        cache_va = model.frozen_branch(data.x_val)

        def batch_loss(idx, epoch):
            out = model.head_cached(cache_tr["season"][idx],
                                    cache_tr["trend_input"][idx], train=True)
            return ad.mse(out, ad.constant(data.y_train[idx]))

        def val_mse(epoch, chunk=512):
            preds = [
                model.head_cached(cache_va["season"][lo:lo + chunk],
                                  cache_va["trend_input"][lo:lo + chunk],
                                  train=False).data
                for lo in range(0, len(data.x_val), chunk)
            ]
            return mse_loss(np.concatenate(preds), data.y_val)
    else:
        def batch_loss(idx, epoch):
            out = model.forward(data.x_train[idx], train=True, rng=rng_mask)
            return ad.mse(out, ad.constant(data.y_train[idx]))

        def val_mse(epoch):
            rng_val = np.random.default_rng([cfg.seed, 88, epoch])
            return mse_loss(model.predict(data.x_val, rng=rng_val), data.y_val)

    return _run_stage(model, data, cfg, stage_cfg, stage_name, history,
                      rng_shuffle, batch_loss, val_mse)


def train_two_stage(model, data, cfg):
    """Full DMMV training: optional warm-up, then the two supervised stages
    with the group freeze policy."""
    store = model.store
    history = []
    snapshots = {"init": store.snapshot()}
    best_val = {}
    rng_shuffle = np.random.default_rng([cfg.seed, 11])
    rng_mask = np.random.default_rng([cfg.seed, 22])

    if model.has_visual and cfg.warmup.max_epochs > 0:
        best_val["warmup"] = _warmup_visual(model, data, cfg, history,
                                            rng_shuffle, rng_mask)
    snapshots["post_warmup"] = store.snapshot()

    store.set_trainable(("visual_norm", "visual_other"), False)
    store.set_trainable(("numerical", "gate"), True)
    cacheable = model.visual_is_deterministic()
    best_val["stage1"] = _supervised_stage(model, data, cfg, cfg.stage1, "stage1",
                                           history, rng_shuffle, rng_mask,
                                           cache_visual=cacheable)
    snapshots["post_stage1"] = store.snapshot()

    if not cfg.freeze_visual:
        store.set_trainable(("visual_norm",), True)
    best_val["stage2"] = _supervised_stage(
        model, data, cfg, cfg.stage2, "stage2", history, rng_shuffle, rng_mask,
        cache_visual=cfg.freeze_visual and cacheable)
    snapshots["post_stage2"] = store.snapshot()
    return TrainResult(history, snapshots, best_val)


def train_visual_only(model, data, cfg):
    """Warm-up, then supervised fine-tuning of the normalization layers only
    on the forecast objective (stage-1 epoch budget at the visual rate).

    Keeping the backbone frozen after warm-up mirrors the norm-layers-only
    fine-tuning regime of the full model, so the forecast behavior stays
    dominated by the reconstruction prior rather than task-specific fitting.
    """
    store = model.store
    history = []
    snapshots = {"init": store.snapshot()}
    best_val = {}
    rng_shuffle = np.random.default_rng([cfg.seed, 11])
    rng_mask = np.random.default_rng([cfg.seed, 22])

    if cfg.warmup.max_epochs > 0:
        best_val["warmup"] = _warmup_visual(model, data, cfg, history,
                                            rng_shuffle, rng_mask)
    snapshots["post_warmup"] = store.snapshot()

    store.set_trainable(("visual_other",), False)
    store.set_trainable(("visual_norm",), True)
    stage = StageConfig(cfg.visual_lr, cfg.stage1.max_epochs, cfg.stage1.patience)

    def batch_loss(idx, epoch):
        out = model.forward(data.x_train[idx], train=True)
        return ad.mse(out, ad.constant(data.y_train[idx]))

    def val_mse(epoch):
        return mse_loss(model.predict(data.x_val), data.y_val)

    best_val["finetune"] = _run_stage(model, data, cfg, stage, "finetune", history,
                                      rng_shuffle, batch_loss, val_mse)
    snapshots["final"] = store.snapshot()
    return TrainResult(history, snapshots, best_val)


def train_numerical_only(model, data, cfg):
    """Supervised training of a bare numerical forecaster (stage-1 settings)."""
    history = []
    snapshots = {"init": model.store.snapshot()}
    rng_shuffle = np.random.default_rng([cfg.seed, 11])

    def batch_loss(idx, epoch):
        out = model.forward(data.x_train[idx], train=True)
        return ad.mse(out, ad.constant(data.y_train[idx]))

    def val_mse(epoch):
        return mse_loss(model.predict(data.x_val), data.y_val)

    best = _run_stage(model, data, cfg, cfg.stage1, "stage1", history,
                      rng_shuffle, batch_loss, val_mse)
    snapshots["final"] = model.store.snapshot()
    return TrainResult(history, snapshots, {"stage1": best})
