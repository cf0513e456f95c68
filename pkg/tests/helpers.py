"""Shared test utilities."""

import numpy as np

from mixrl import net
from mixrl.a3c import RolloutSegment

SMALL = (6, 5, 4, 3)  # input, hidden1, hidden2, actions


def random_segment(gen, shapes=SMALL, k=None, dtype=np.float64):
    k = k or int(gen.integers(1, 6))
    return RolloutSegment(
        obs=gen.normal(size=(k, shapes[0])).astype(dtype),
        actions=gen.integers(0, shapes[3], size=k),
        rewards=gen.normal(size=k),
        values=gen.normal(size=k),
        bootstrap_value=float(gen.normal()),
        terminal=bool(gen.integers(0, 2)),
    )


def smooth_gradient_case(gen, shapes=SMALL, margin=1e-3):
    """Random (params, segment) whose ReLU pre-activations stay `margin` away
    from zero, so central finite differences probe a differentiable region.

    Biases are randomised: zero-initialised biases make a dead first layer
    produce pre-activations exactly on the kink.
    """
    while True:
        params = net.init_params(int(gen.integers(0, 2**31)), shapes,
                                 dtype=np.float64)
        for name in ("b1", "b2", "bp", "bv"):
            bias = getattr(params, name)
            bias += gen.normal(scale=0.3, size=bias.shape)
        segment = random_segment(gen, shapes)
        pre1 = segment.obs @ params.w1 + params.b1
        pre2 = np.maximum(pre1, 0) @ params.w2 + params.b2
        if min(np.abs(pre1).min(), np.abs(pre2).min()) > margin:
            return params, segment


def finite_difference_grads(loss, params, h=1e-5):
    """Central finite differences of `loss(params)` over every tensor entry."""
    grads = params.zeros_like()
    for name, grad in grads.items():
        tensor = getattr(params, name)
        for idx in np.ndindex(tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + h
            up = loss(params)
            tensor[idx] = original - h
            down = loss(params)
            tensor[idx] = original
            grad[idx] = (up - down) / (2 * h)
    return grads


def max_relative_error(analytic, fd, floor=1e-6):
    worst = 0.0
    for (_, a), (_, b) in zip(analytic.items(), fd.items()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst
