"""Central finite-difference check of the analytic BPTT gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PARAM_NAMES, ModelConfig, backward, forward, init_weights, mse_loss

DENOM_FLOOR = 1e-8


@dataclass
class TensorReport:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradcheckReport:
    tensors: list[TensorReport]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max(t.max_rel_err for t in self.tensors)

    @property
    def worst(self) -> TensorReport:
        return max(self.tensors, key=lambda t: t.max_rel_err)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def gradient_check(seed: int = 7, units: int = 2, lookback: int = 5, input_dim: int = 3,
                   n: int = 4, eps: float = 1e-4, dropout_p: float = 0.2,
                   tolerance: float = 1e-3, corrupt: str | None = None) -> GradcheckReport:
    """Compare every analytic gradient entry against central differences.

    ``corrupt`` names a tensor whose analytic gradient is deliberately
    perturbed; it exists to prove the harness can fail.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(units=units, lookback=lookback, input_dim=input_dim,
                      dropout_p=dropout_p, seed=seed)
    weights = init_weights(cfg, rng)
    # Small random biases so no gate sits at a symmetric point.
    for name in ("b_fwd", "b_bwd", "b_dense"):
        getattr(weights, name)[...] += rng.normal(0.0, 0.1, getattr(weights, name).shape)
    x = rng.uniform(0.0, 1.0, size=(n, lookback, input_dim))
    y = rng.uniform(0.0, 1.0, size=n)
    mask_seed = int(rng.integers(2**31))

    def loss() -> float:
        pred, _ = forward(x, weights, mode="train", dropout_p=dropout_p, rng=mask_seed)
        return mse_loss(pred, y)

    _, cache = forward(x, weights, mode="train", dropout_p=dropout_p, rng=mask_seed)
    grads = backward(cache, y)
    if corrupt is not None:
        g = getattr(grads, corrupt)
        g.flat[0] += 1.0 + abs(g.flat[0])

    reports = []
    for name in PARAM_NAMES:
        param = getattr(weights, name)
        analytic = getattr(grads, name)
        worst = (-1.0, (0,), 0.0, 0.0)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + eps
            up = loss()
            param[idx] = orig - eps
            down = loss()
            param[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic[idx])
            rel = abs(a - numeric) / (abs(a) + DENOM_FLOOR)
            if rel > worst[0]:
                worst = (rel, idx, a, numeric)
        reports.append(TensorReport(name, worst[0], worst[1], worst[2], worst[3]))
    return GradcheckReport(reports, tolerance)
