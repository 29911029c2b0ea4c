"""SGD (with optional momentum) and Adam, with one learning rate per layer.

Each layer's rate multiplies the final update direction. Momentum and moment
buffers accumulate raw gradients, so they do not depend on the rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .schedulers import RateSchedule, rate_at

KINDS = ("sgd", "adam")


@dataclass
class OptimizerState:
    kind: str = "sgd"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    buffers: dict = field(default_factory=dict)  # depth index -> list of arrays
    steps: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("adam betas must lie in [0, 1)")

    @classmethod
    def for_network(cls, net, kind="sgd", **hyper) -> "OptimizerState":
        state = cls(kind=kind, **hyper)
        for j, w, b in net.parameters():
            if kind == "sgd":
                state.buffers[j] = [np.zeros_like(w), np.zeros_like(b)]
            else:
                state.buffers[j] = [np.zeros_like(w), np.zeros_like(b),
                                    np.zeros_like(w), np.zeros_like(b)]
        return state


def _rate_lookup(rates, j):
    try:
        return rates[j] if isinstance(rates, dict) else rates[j - 1]
    except (KeyError, IndexError):
        raise ValidationError(f"no learning rate for layer {j}") from None


def step(net, grads, state: OptimizerState, rates):
    """Apply one update to every trainable layer of ``net`` in place.

    ``rates`` maps depth index -> rate (a dict) or is a sequence indexed from
    layer 1. Returns ``net``.
    """
    indices = [j for j, _, _ in net.parameters()]
    missing = [j for j in indices if j not in grads]
    if missing:
        raise ValidationError(f"gradients missing for layers {missing}")
    if not isinstance(rates, dict) and len(rates) != len(indices):
        raise ValidationError(f"expected {len(indices)} rates, got {len(rates)}")
    lrs = {j: _rate_lookup(rates, j) for j in indices}
    if state.buffers.keys() != set(indices):
        raise ValidationError("optimizer state does not match the network's layers")

    state.steps += 1
    t = state.steps
    for layer in net.trainable_layers:
        j = layer.depth_index
        lr = lrs[j]
        gw, gb = grads[j]
        buf = state.buffers[j]
        if state.kind == "sgd":
            if state.momentum:
                for i, g in enumerate((gw, gb)):
                    buf[i] *= state.momentum
                    buf[i] += g
                dw, db = buf[0], buf[1]
            else:
                dw, db = gw, gb
            layer.weights -= lr * dw
            layer.bias -= lr * db
        else:
            b1, b2 = state.beta1, state.beta2
            corr1 = 1 - b1 ** t
            corr2 = 1 - b2 ** t
            updates = []
            for i, g in enumerate((gw, gb)):
                m, v = buf[i], buf[i + 2]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                updates.append((m / corr1) / (np.sqrt(v / corr2) + state.eps))
            layer.weights -= (lr * updates[0]).astype(layer.weights.dtype)
            layer.bias -= (lr * updates[1]).astype(layer.bias.dtype)
    return net


def resolve_rates(sched: RateSchedule, epoch: int, plateau_scale: float = 1.0) -> dict:
    """Per-layer rates for ``epoch``: the curriculum rate times the plateau scale."""
    if not 0 < plateau_scale <= 1:
        raise ValidationError(f"plateau_scale must lie in (0, 1], got {plateau_scale}")
    return {j: rate_at(sched, j, epoch) * plateau_scale for j in range(1, sched.n + 1)}
