"""Actor-critic network with hand-written backprop.

A dense trunk (input -> 256 -> 128, ReLU) feeds two heads: a softmax policy
over the actions and a scalar state value. Gradients are exact analytic
chain-rule products seeded by dLoss/dpolicy and dLoss/dvalue, so they can be
checked against central finite differences. Training runs in float32; tests
use float64.

Checkpoint format (little-endian throughout):
  magic "MXP1" | u32 version | u32 layer count | per layer: u32 in, u32 out |
  parameter arrays as f32 in declaration order | RMSProp accumulators in the
  same order | u64 global step.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import ioutil, rng

TRUNK_HIDDEN = (256, 128)

PARAM_FIELDS = ("w1", "b1", "w2", "b2", "wp", "bp", "wv", "bv")

CHECKPOINT_MAGIC = b"MXP1"
CHECKPOINT_VERSION = 1


class TrainingFault(RuntimeError):
    """Non-finite numbers or a dead trainer; training cannot continue."""


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


@dataclass
class ParamTree:
    """All arrays of one network, in declaration (= checkpoint) order.

    The same container holds parameters, gradients, and optimizer
    accumulators, which must stay shape-congruent.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    def items(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_FIELDS]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    @property
    def shapes(self) -> tuple[int, int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1], self.wp.shape[1])

    def copy(self) -> "ParamTree":
        return ParamTree(*(a.copy() for a in self.arrays()))

    def astype(self, dtype) -> "ParamTree":
        return ParamTree(*(a.astype(dtype) for a in self.arrays()))

    def zeros_like(self) -> "ParamTree":
        return ParamTree(*(np.zeros_like(a) for a in self.arrays()))

    def ravel(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def allclose(self, other: "ParamTree", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))


def layer_dims(shapes: tuple[int, int, int, int]) -> list[tuple[int, int]]:
    input_dim, h1, h2, n_actions = shapes
    return [(input_dim, h1), (h1, h2), (h2, n_actions), (h2, 1)]


def init_params(seed: int, shapes: tuple[int, int, int, int],
                dtype=np.float32) -> ParamTree:
    """Fan-in scaled uniform weights (+-sqrt(6/fan_in)), zero biases."""
    gen = rng.generator(seed, rng.STREAM_INIT)
    arrays = []
    for fan_in, fan_out in layer_dims(shapes):
        limit = np.sqrt(6.0 / fan_in)
        arrays.append(gen.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        arrays.append(np.zeros(fan_out, dtype=dtype))
    w1, b1, w2, b2, wp, bp, wv, bv = arrays
    return ParamTree(w1, b1, w2, b2, wp, bp, wv.reshape(-1), bv)


@dataclass
class ForwardCache:
    """Activations retained for the backward pass (single row or a batch)."""

    obs: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    policy: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def entropy(policy: np.ndarray) -> np.ndarray | float:
    """H = -sum p ln p with 0 ln 0 := 0; reduces over the last axis."""
    safe = np.where(policy > 0, policy, 1.0)
    h = -(safe * np.log(safe)).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def forward(params: ParamTree, obs: np.ndarray) -> tuple[np.ndarray, float, ForwardCache]:
    """Policy distribution, state value, and cache for one observation."""
    obs = np.asarray(obs)
    if obs.ndim != 1 or obs.shape[0] != params.w1.shape[0]:
        raise ValueError(f"expected observation of shape ({params.w1.shape[0]},), "
                         f"got {obs.shape}")
    obs = obs.astype(params.dtype, copy=False)
    h1 = obs @ params.w1 + params.b1
    np.maximum(h1, 0, out=h1)
    h2 = h1 @ params.w2 + params.b2
    np.maximum(h2, 0, out=h2)
    policy = softmax(h2 @ params.wp + params.bp)
    value = float(h2 @ params.wv + params.bv[0])
    return policy, value, ForwardCache(obs, h1, h2, policy)


def forward_batch(params: ParamTree, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Vectorised forward over rows of `obs` (k, input_dim)."""
    obs = np.asarray(obs)
    if obs.ndim != 2 or obs.shape[1] != params.w1.shape[0]:
        raise ValueError(f"expected observations of shape (k, {params.w1.shape[0]}), "
                         f"got {obs.shape}")
    obs = obs.astype(params.dtype, copy=False)
    h1 = obs @ params.w1 + params.b1
    np.maximum(h1, 0, out=h1)
    h2 = h1 @ params.w2 + params.b2
    np.maximum(h2, 0, out=h2)
    policy = softmax(h2 @ params.wp + params.bp)
    value = h2 @ params.wv + params.bv[0]
    return policy, value, ForwardCache(obs, h1, h2, policy)


def backward(params: ParamTree, cache: ForwardCache, policy_grad_seed: np.ndarray,
             value_grad_seed, out: ParamTree | None = None) -> ParamTree:
    """Exact gradients of any scalar loss L given dL/dpolicy and dL/dvalue.

    Accepts single-row or batched caches; batched seeds produce the sum of
    the per-row gradients. `out`, when given, receives the result in place
    (its arrays are overwritten) to avoid reallocation in hot loops.
    """
    obs = np.atleast_2d(cache.obs)
    h1 = np.atleast_2d(cache.h1)
    h2 = np.atleast_2d(cache.h2)
    policy = np.atleast_2d(cache.policy)
    pseed = np.atleast_2d(np.asarray(policy_grad_seed, dtype=obs.dtype))
    vseed = np.atleast_1d(np.asarray(value_grad_seed, dtype=obs.dtype))

    k = obs.shape[0]
    if (h1.shape != (k, params.w1.shape[1]) or h2.shape != (k, params.w2.shape[1])
            or policy.shape != (k, params.wp.shape[1])):
        raise ValueError("cache does not match the given parameters")
    if pseed.shape != policy.shape or vseed.shape != (k,):
        raise ValueError("gradient seeds do not match the cache")

    grads = out if out is not None else params.zeros_like()

    # Softmax jacobian product: dlogits = p * (seed - <p, seed>).
    dlogits = policy * (pseed - (policy * pseed).sum(axis=1, keepdims=True))
    np.matmul(h2.T, dlogits, out=grads.wp)
    np.sum(dlogits, axis=0, out=grads.bp)
    np.matmul(h2.T, vseed, out=grads.wv)
    grads.bv[0] = vseed.sum()

    dh2 = dlogits @ params.wp.T
    dh2 += vseed[:, None] * params.wv[None, :]
    dh2 *= h2 > 0
    np.matmul(h1.T, dh2, out=grads.w2)
    np.sum(dh2, axis=0, out=grads.b2)

    dh1 = dh2 @ params.w2.T
    dh1 *= h1 > 0
    np.matmul(obs.T, dh1, out=grads.w1)
    np.sum(dh1, axis=0, out=grads.b1)
    return grads


def global_norm(tree: ParamTree) -> float:
    total = 0.0
    for a in tree.arrays():
        total += float(np.dot(a.ravel(), a.ravel()))
    return float(np.sqrt(total))


def clip_global_norm(grads: ParamTree, max_norm: float = 40.0) -> ParamTree:
    """Rescale all components by max_norm/||g|| when ||g|| exceeds max_norm.

    Modifies `grads` in place and returns it."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingFault(f"non-finite gradient norm {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for a in grads.arrays():
            a *= scale
    return grads


@dataclass
class OptState:
    """RMSProp accumulators plus the learning-rate schedule."""

    acc: ParamTree
    decay: float = 0.99
    epsilon: float = 1e-6
    base_lr: float = 0.004
    total_steps: int = 2_000_000
    anneal: bool = True

    def learning_rate(self, step: int) -> float:
        if not self.anneal:
            return self.base_lr
        return self.base_lr * max(0.0, 1.0 - step / self.total_steps)

    @classmethod
    def fresh(cls, params: ParamTree, **kw) -> "OptState":
        return cls(acc=params.zeros_like(), **kw)


def rmsprop_update_tensor(acc: np.ndarray, param: np.ndarray, grad: np.ndarray,
                          lr: float, decay: float, epsilon: float,
                          scratch: np.ndarray | None = None) -> None:
    """acc <- decay*acc + (1-decay)*g^2; param <- param - lr*g/sqrt(acc+eps).

    `scratch` (same shape) avoids temporaries in hot loops."""
    if scratch is None:
        scratch = np.empty_like(grad)
    np.multiply(acc, decay, out=acc)
    np.multiply(grad, grad, out=scratch)
    np.multiply(scratch, 1.0 - decay, out=scratch)
    np.add(acc, scratch, out=acc)
    np.add(acc, epsilon, out=scratch)
    np.sqrt(scratch, out=scratch)
    np.divide(grad, scratch, out=scratch)
    np.multiply(scratch, lr, out=scratch)
    np.subtract(param, scratch, out=param)


def rmsprop_apply(opt: OptState, params: ParamTree, grads: ParamTree, step: int) -> None:
    """Apply one RMSProp update in place at the annealed rate for `step`."""
    lr = opt.learning_rate(step)
    for (_, acc), (_, param), (_, grad) in zip(opt.acc.items(), params.items(), grads.items()):
        rmsprop_update_tensor(acc, param, grad, lr, opt.decay, opt.epsilon)


def save_checkpoint(path: str, params: ParamTree, acc: ParamTree, global_step: int) -> None:
    """Serialize params + optimizer accumulators + step counter (atomically).

    Arrays are stored as little-endian float32 regardless of training dtype.
    """
    dims = layer_dims(params.shapes)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(dims))
    for fan_in, fan_out in dims:
        blob += struct.pack("<II", fan_in, fan_out)
    for tree in (params, acc):
        for a in tree.arrays():
            blob += np.ascontiguousarray(a, dtype="<f4").tobytes()
    blob += struct.pack("<Q", global_step)
    ioutil.atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path: str) -> tuple[ParamTree, ParamTree, int]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    offset = 4
    version, n_layers = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if n_layers != 4:
        raise CheckpointError(f"{path}: expected 4 layers, found {n_layers}")
    dims = []
    for _ in range(n_layers):
        fan_in, fan_out = struct.unpack_from("<II", blob, offset)
        offset += 8
        dims.append((fan_in, fan_out))

    def read_array(shape) -> np.ndarray:
        nonlocal offset
        count = 1
        for s in shape:
            count *= s
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated parameter data")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
        return arr

    shapes = _tree_shapes(dims)
    trees = []
    for _ in range(2):
        trees.append(ParamTree(*(read_array(s) for s in shapes)))
    if offset + 8 > len(blob):
        raise CheckpointError(f"{path}: missing step counter")
    (global_step,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return trees[0], trees[1], int(global_step)


def _tree_shapes(dims: list[tuple[int, int]]) -> list[tuple[int, ...]]:
    (d_in, h1), (_, h2), (_, n_act), (_, _) = dims
    return [(d_in, h1), (h1,), (h1, h2), (h2,), (h2, n_act), (n_act,), (h2,), (1,)]
