"""Bidirectional LSTM regressor: parameters, forward pass and BPTT.

Gate blocks are laid out ``(i, f, g, o)`` along the last axis of every
kernel and bias. Gates use the logistic sigmoid; the candidate and the
cell-output activation are ReLU. The dense head reads the concatenation
``[h_fwd(L-1), h_bwd(0)]`` after inverted dropout (train mode only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

PARAM_NAMES: tuple[str, ...] = (
    "W_fwd", "U_fwd", "b_fwd",
    "W_bwd", "U_bwd", "b_bwd",
    "w_dense", "b_dense",
)
DIRECTIONS = ("fwd", "bwd")


class ShapeError(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer: str, step: int):
        self.layer = layer
        self.step = step
        super().__init__(f"non-finite activation in {layer} at time step {step}")


@dataclass(frozen=True)
class ModelConfig:
    units: int = 100
    lookback: int = 60
    input_dim: int = 10
    dropout_p: float = 0.2
    learning_rate: float = 1e-5
    patience: int = 10
    max_epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    # Compute precision of the recurrent passes; parameters stay float64.
    dtype: str = "float64"

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("units must be >= 1")
        if self.lookback < 1:
            raise ValueError("lookback must be >= 1")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, h = self.input_dim, self.units
        shapes = {}
        for tag in DIRECTIONS:
            shapes[f"W_{tag}"] = (d, 4 * h)
            shapes[f"U_{tag}"] = (h, 4 * h)
            shapes[f"b_{tag}"] = (4 * h,)
        shapes["w_dense"] = (2 * h,)
        shapes["b_dense"] = (1,)
        return shapes


@dataclass
class Weights:
    W_fwd: np.ndarray
    U_fwd: np.ndarray
    b_fwd: np.ndarray
    W_bwd: np.ndarray
    U_bwd: np.ndarray
    b_bwd: np.ndarray
    w_dense: np.ndarray
    b_dense: np.ndarray

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(iter(self))

    def copy(self) -> "Weights":
        return Weights(**{k: v.copy() for k, v in self})

    def zeros_like(self) -> "Weights":
        return Weights(**{k: np.zeros_like(v) for k, v in self})

    @property
    def units(self) -> int:
        return self.U_fwd.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_fwd.shape[0]

    def direction(self, tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return getattr(self, f"W_{tag}"), getattr(self, f"U_{tag}"), getattr(self, f"b_{tag}")

    def check(self, cfg: ModelConfig | None = None) -> None:
        """Raise ``ShapeError`` naming the first inconsistent tensor."""
        if cfg is None:
            cfg_shapes = ModelConfig(units=self.units, input_dim=self.input_dim).param_shapes()
        else:
            cfg_shapes = cfg.param_shapes()
        for name, arr in self:
            if arr.shape != cfg_shapes[name]:
                raise ShapeError(f"{name}: shape {arr.shape}, expected {cfg_shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"{name}: contains non-finite values")

    def swapped_directions(self) -> "Weights":
        """Exchange forward/backward parameters and the dense-head halves."""
        h = self.units
        w = np.concatenate([self.w_dense[h:], self.w_dense[:h]])
        return Weights(self.W_bwd.copy(), self.U_bwd.copy(), self.b_bwd.copy(),
                       self.W_fwd.copy(), self.U_fwd.copy(), self.b_fwd.copy(),
                       w, self.b_dense.copy())


def init_weights(cfg: ModelConfig, rng: np.random.Generator | int | None = None) -> Weights:
    """Glorot-uniform kernels, zero biases except forget-gate bias 1."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    d, h = cfg.input_dim, cfg.units

    def glorot(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    params = {}
    for tag in DIRECTIONS:
        params[f"W_{tag}"] = glorot((d, 4 * h), d, 4 * h)
        params[f"U_{tag}"] = glorot((h, 4 * h), h, 4 * h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params[f"b_{tag}"] = b
    params["w_dense"] = glorot((2 * h,), 2 * h, 1)
    params["b_dense"] = np.zeros(1)
    return Weights(**params)


def _sigmoid(z: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    # exp overflow for very negative z yields 1/inf = 0, the correct limit
    out = np.negative(z, out=out)
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    return np.reciprocal(out, out=out)


def _activate(z: np.ndarray, h: int) -> np.ndarray:
    act = np.empty_like(z)
    _sigmoid(z[..., :2 * h], out=act[..., :2 * h])
    np.maximum(z[..., 2 * h:3 * h], 0.0, out=act[..., 2 * h:3 * h])
    _sigmoid(z[..., 3 * h:], out=act[..., 3 * h:])
    return act


def lstm_cell_step(x, h, c, W, U, b):
    """One LSTM step; works on single vectors or ``[n, ...]`` batches."""
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    units = U.shape[0]
    if W.shape != (x.shape[-1], 4 * units) or U.shape != (units, 4 * units) \
            or b.shape != (4 * units,) or h.shape[-1] != units or c.shape != h.shape:
        raise ShapeError(
            f"cell shapes x{x.shape} h{h.shape} c{c.shape} W{W.shape} U{U.shape} b{b.shape}"
        )
    act = _activate(x @ W + h @ U + b, units)
    i, f, g, o = (act[..., k * units:(k + 1) * units] for k in range(4))
    c_new = f * c + i * g
    h_new = o * np.maximum(c_new, 0.0)
    return h_new, c_new


def _internal_perm(units: int) -> np.ndarray:
    """Column order (i, f, o, g): the three sigmoid gates become contiguous."""
    blocks = [np.arange(k * units, (k + 1) * units) for k in (0, 1, 3, 2)]
    return np.concatenate(blocks)


@dataclass
class ForwardCache:
    """Activations of a forward pass, both directions stacked on axis 0.

    Arrays are feature-major (``[..., features, n]``) so every gate block is
    contiguous. Step ``k`` of direction 0 (forward) consumed time ``k``;
    step ``k`` of direction 1 (backward) consumed time ``L-1-k``. Gate
    blocks in ``acts`` use the internal ``(i, f, o, g)`` order.
    """

    inputs: np.ndarray  # [n, L, D]
    weights: Weights
    xhs: np.ndarray  # [2, L, D+H, n] step input stacked over the previous h
    acts: np.ndarray  # [2, L, 4H, n] post-activation gates
    cs: np.ndarray  # [2, L+1, H, n], cs[:, 0] is the zero initial state
    hs: np.ndarray  # [2, L+1, H, n]
    h_cat: np.ndarray  # [n, 2H] before dropout
    mask: np.ndarray | None  # inverted-dropout scale per element, None in infer mode
    preds: np.ndarray = field(repr=False, default=None)

    def hidden(self, tag: str) -> np.ndarray:
        """Hidden states of one direction indexed by time, ``[L, n, H]``."""
        if tag == "fwd":
            return self.hs[0, 1:].transpose(0, 2, 1)
        return self.hs[1, 1:][::-1].transpose(0, 2, 1)


def _stacked_kernels(weights: Weights, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Per-direction ``[4H, D+H]`` fused kernels and ``[4H, 1]`` biases."""
    perm = _internal_perm(weights.units)
    WU = np.stack([
        np.concatenate([weights.W_fwd, weights.U_fwd])[:, perm].T,
        np.concatenate([weights.W_bwd, weights.U_bwd])[:, perm].T,
    ]).astype(dtype)
    b = np.stack([weights.b_fwd[perm], weights.b_bwd[perm]])[:, :, None].astype(dtype)
    return np.ascontiguousarray(WU), b


def forward(inputs: np.ndarray, weights: Weights, mode: str = "infer",
            dropout_p: float = 0.0, rng: np.random.Generator | int | None = None,
            dtype=np.float64):
    """Run both directions and the dense head.

    Returns ``(predictions[n], cache)``. In ``train`` mode a dropout mask
    drawn from ``rng`` (a Generator or seed) is applied to the concatenated
    final states; ``infer`` mode never masks. ``dtype`` selects the compute
    precision; predictions are always returned as float64.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != weights.input_dim:
        raise ShapeError(f"inputs must be [n, lookback, {weights.input_dim}], got {x.shape}")
    n, L, D = x.shape
    H = weights.units
    h2, h3 = 2 * H, 3 * H
    WU, b = _stacked_kernels(weights, dtype)

    xhs = np.empty((2, L, D + H, n), dtype=dtype)
    xt = x.transpose(1, 2, 0)  # [L, D, n]
    xhs[0, :, :D] = xt
    xhs[1, :, :D] = xt[::-1]
    acts = np.empty((2, L, 4 * H, n), dtype=dtype)
    cs = np.zeros((2, L + 1, H, n), dtype=dtype)
    hs = np.zeros((2, L + 1, H, n), dtype=dtype)
    z = np.empty((2, 4 * H, n), dtype=dtype)
    # non-finite values are detected after the loop, so silence the per-op warnings
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(L):
            xh = xhs[:, k]
            xh[:, D:] = hs[:, k]
            np.matmul(WU, xh, out=z)
            z += b
            a = acts[:, k]
            _sigmoid(z[:, :h3], out=a[:, :h3])
            np.maximum(z[:, h3:], 0.0, out=a[:, h3:])
            c = cs[:, k + 1]
            np.multiply(a[:, H:h2], cs[:, k], out=c)
            c += a[:, :H] * a[:, h3:]
            h = hs[:, k + 1]
            np.maximum(c, 0.0, out=h)
            h *= a[:, h2:h3]
    if not (np.isfinite(hs[:, -1]).all() and np.isfinite(cs[:, -1]).all()):
        finite = np.isfinite(hs[:, 1:]).all(axis=(2, 3)) & np.isfinite(cs[:, 1:]).all(axis=(2, 3))
        d, k = np.argwhere(~finite)[0]
        raise NonFiniteActivation(f"lstm_{DIRECTIONS[d]}", int(k if d == 0 else L - 1 - k))
    h_cat = np.concatenate([hs[0, -1], hs[1, -1]], axis=0).T.astype(np.float64)

    mask = None
    if mode == "train" and dropout_p > 0.0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        mask = (gen.random(h_cat.shape) >= dropout_p) / (1.0 - dropout_p)
        hd = h_cat * mask
    else:
        hd = h_cat
    preds = hd @ weights.w_dense + weights.b_dense[0]
    if not np.isfinite(preds).all():
        raise NonFiniteActivation("dense", L - 1)
    cache = ForwardCache(x, weights, xhs, acts, cs, hs, h_cat, mask, preds)
    return preds, cache


def predict_normalized(inputs: np.ndarray, weights: Weights, batch_size: int = 1024,
                       dtype=np.float64) -> np.ndarray:
    """Infer-mode predictions in fixed-size chunks."""
    n = inputs.shape[0]
    out = np.empty(n)
    for s in range(0, n, batch_size):
        out[s:s + batch_size], _ = forward(inputs[s:s + batch_size], weights, dtype=dtype)
    return out


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss of an empty batch")
    diff = pred - target
    return float(np.dot(diff.ravel(), diff.ravel()) / diff.size)


def backward(cache: ForwardCache | None, targets: np.ndarray) -> Weights:
    """Exact gradients of ``mse_loss(preds, targets)`` w.r.t. every weight.

    Full backpropagation through time over both directions; the ReLU
    subgradient at 0 is 0. Gradients are returned as float64.
    """
    if cache is None:
        raise ValueError("backward needs the cache of a train-mode forward pass")
    targets = np.asarray(targets, dtype=np.float64)
    preds = cache.preds
    if targets.shape != preds.shape:
        raise ShapeError(f"targets {targets.shape} vs predictions {preds.shape}")
    n = preds.shape[0]
    w = cache.weights
    H = w.units
    h2, h3 = 2 * H, 3 * H
    acts, cs, xhs = cache.acts, cache.cs, cache.xhs
    dtype = acts.dtype
    L = acts.shape[1]
    D = xhs.shape[2] - H
    dy = 2.0 * (preds - targets) / n

    hd = cache.h_cat if cache.mask is None else cache.h_cat * cache.mask
    grads = {"w_dense": hd.T @ dy, "b_dense": np.array([dy.sum()])}
    dh_cat = np.outer(dy, w.w_dense)
    if cache.mask is not None:
        dh_cat *= cache.mask

    WU, _ = _stacked_kernels(w, dtype)
    U = np.ascontiguousarray(WU[:, :, D:].transpose(0, 2, 1))  # [2, H, 4H]
    dWU = np.zeros((2, 4 * H, D + H), dtype=dtype)
    db = np.zeros((2, 4 * H), dtype=dtype)
    dWU_k = np.empty_like(dWU)
    dz = np.empty((2, 4 * H, n), dtype=dtype)
    dsig = np.empty((2, h3, n), dtype=dtype)
    dh = np.ascontiguousarray(np.stack([dh_cat[:, :H].T, dh_cat[:, H:].T]), dtype=dtype)
    dc = np.zeros((2, H, n), dtype=dtype)
    for k in range(L - 1, -1, -1):
        a = acts[:, k]
        c = cs[:, k + 1]
        i, f, o, g = a[:, :H], a[:, H:h2], a[:, h2:h3], a[:, h3:]
        np.subtract(1.0, a[:, :h3], out=dsig)
        dsig *= a[:, :h3]
        np.maximum(c, 0.0, out=dz[:, h2:h3])
        dz[:, h2:h3] *= dh
        dc += dh * o * (c > 0)
        np.multiply(dc, g, out=dz[:, :H])
        np.multiply(dc, cs[:, k], out=dz[:, H:h2])
        dz[:, :h3] *= dsig
        np.multiply(dc, i, out=dz[:, h3:])
        dz[:, h3:] *= g > 0
        np.matmul(dz, xhs[:, k].transpose(0, 2, 1), out=dWU_k)
        dWU += dWU_k
        db += dz.sum(axis=2)
        dh = np.matmul(U, dz)
        dc *= f

    inv = np.argsort(_internal_perm(H))
    dWU = dWU.astype(np.float64)[:, inv, :].transpose(0, 2, 1)
    db = db.astype(np.float64)[:, inv]
    for d, tag in enumerate(DIRECTIONS):
        grads[f"W_{tag}"] = np.ascontiguousarray(dWU[d, :D])
        grads[f"U_{tag}"] = np.ascontiguousarray(dWU[d, D:])
        grads[f"b_{tag}"] = db[d]
    return Weights(**grads)
