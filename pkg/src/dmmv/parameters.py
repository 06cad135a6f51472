"""Trainable parameters, grouped freeze policy, and checkpoint I/O.

Every parameter carries a group tag that the two-stage trainer uses to decide
what trains when: `numerical` and `gate` train from stage 1, `visual_norm`
joins in stage 2, `visual_other` only ever updates during the optional
self-supervised warm-up.

Checkpoints are numpy .npz archives holding one array per parameter plus
per-parameter group/trainable metadata and a JSON snapshot of the model
assembly, so a checkpoint is self-describing.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor
from .errors import ConfigMismatch

GROUPS = ("numerical", "visual_norm", "visual_other", "gate")


class Parameter:
    __slots__ = ("name", "value", "grad", "group", "trainable")

    def __init__(self, name, value, group, trainable=True):
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.group = group
        self.trainable = trainable

    def leaf(self, train=True):
        """Bind this parameter into a graph. With train=False the leaf is
        frozen regardless of the trainable flag (pure evaluation)."""
        t = Tensor(self.value, requires_grad=train and self.trainable)
        t._param = self if t.requires_grad else None
        return t

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape}, group={self.group})"


class ParameterStore:
    """Ordered name -> Parameter registry shared by one model assembly."""

    def __init__(self):
        self._params = {}

    def add(self, name, value, group, trainable=True):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, group, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def group(self, *groups):
        return [p for p in self._params.values() if p.group in groups]

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def set_trainable(self, groups, flag):
        for p in self._params.values():
            if p.group in groups:
                p.trainable = flag

    def snapshot(self):
        """Deep copy of all values, keyed by name."""
        return {p.name: p.value.copy() for p in self._params.values()}

    def restore(self, snap):
        for p in self._params.values():
            p.value[...] = snap[p.name]

    def save(self, path, assembly=None):
        arrays = {f"param/{p.name}": p.value for p in self._params.values()}
        meta = {
            "names": list(self._params.keys()),
            "groups": {p.name: p.group for p in self._params.values()},
            "trainable": {p.name: bool(p.trainable) for p in self._params.values()},
            "assembly": assembly or {},
        }
        arrays["meta_json"] = np.array(json.dumps(meta))
        np.savez(path, **arrays)

    def load(self, path, expect_assembly=None):
        """Load values into existing parameters; returns the stored assembly.

        Raises ConfigMismatch when names/shapes or the expected assembly
        disagree with the checkpoint.
        """
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta_json"]))
            stored_names = meta["names"]
            if stored_names != list(self._params.keys()):
                raise ConfigMismatch(
                    f"checkpoint parameters {stored_names[:3]}... do not match model "
                    f"({list(self._params.keys())[:3]}...)"
                )
            if expect_assembly is not None and meta["assembly"] != expect_assembly:
                stored = meta["assembly"]
                diffs = sorted(set(stored) | set(expect_assembly))
                diffs = [k for k in diffs
                         if stored.get(k) != expect_assembly.get(k)]
                detail = ", ".join(
                    f"{k}: checkpoint={stored.get(k)!r} requested={expect_assembly.get(k)!r}"
                    for k in diffs)
                raise ConfigMismatch(f"checkpoint assembly differs ({detail})")
            for name, p in self._params.items():
                stored = archive[f"param/{name}"]
                if stored.shape != p.value.shape:
                    raise ConfigMismatch(
                        f"parameter {name}: checkpoint shape {stored.shape} vs model "
                        f"shape {p.value.shape}"
                    )
                p.value[...] = stored
        return meta["assembly"]


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out
