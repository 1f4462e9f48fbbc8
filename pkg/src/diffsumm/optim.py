"""Adam with decoupled weight decay, operating on named tensor dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .predictor import PredictorParams


@dataclass
class OptimizerState:
    """First/second moment accumulators plus the step counter."""

    base_lr: float = 0.0002
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls, params: PredictorParams, base_lr: float = 0.0002, weight_decay: float = 0.01
    ) -> "OptimizerState":
        state = cls(base_lr=base_lr, weight_decay=weight_decay)
        for name, tensor in params.tensors.items():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def adam_step(
    params: PredictorParams,
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    lr: float | None = None,
) -> None:
    """One in-place Adam update with bias correction.

    Weight decay is decoupled: a plain -lr * wd * theta shrinkage applied
    outside the moment estimates, so decay strength does not interact with
    gradient normalization.
    """
    if lr is None:
        lr = opt.base_lr
    if set(grads) != set(params.tensors):
        missing = set(params.tensors) ^ set(grads)
        raise ShapeError(f"gradient/parameter name mismatch: {sorted(missing)}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, theta in params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {theta.shape} ({name})")
        m = opt.m[name]
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        theta -= lr * update
        if opt.weight_decay:
            theta -= lr * opt.weight_decay * theta
