"""AdamW and plain SGD over named trainable tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _check


@dataclass
class OptimizerState:
    kind: str = "adamw"
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    def current_lr(self):
        """Learning rate for the step being applied; linear warmup, then constant."""
        if self.warmup_steps and self.step < self.warmup_steps:
            return self.lr * self.step / self.warmup_steps
        return self.lr


def make_optimizer(kind="adamw", lr=1e-4, **kw):
    return OptimizerState(kind=kind, lr=float(lr), **kw)


def optimizer_step(state, params, grads=None):
    """Update ``params`` (name -> Tensor) in place and advance ``state.step``.

    ``grads`` maps names to arrays; when omitted each tensor's ``.grad`` is
    used, and a missing gradient counts as zero.
    """
    state.step += 1
    t = state.step
    lr = state.current_lr()
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        if state.kind == "sgd":
            if lr != 0.0:
                p.data = p.data - p.data.dtype.type(lr) * g
                _check(p.data, name)
            continue
        b1, b2 = state.betas
        if name not in state.m:
            state.m[name] = Tensor(np.zeros_like(p.data))
            state.v[name] = Tensor(np.zeros_like(p.data))
        m, v = state.m[name], state.v[name]
        m.data = b1 * m.data + (1.0 - b1) * g
        v.data = b2 * v.data + (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        mhat = m.data / (1.0 - b1 ** t)
        vhat = v.data / (1.0 - b2 ** t)
        new = p.data
        if state.weight_decay:
            new = new * (1.0 - lr * state.weight_decay)
        p.data = (new - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
        _check(p.data, name)
    return params


def zero_grads(params):
    for p in params.values():
        p.grad = None
