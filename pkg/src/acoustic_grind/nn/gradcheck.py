"""Central finite-difference check of analytic backpropagation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Dropout, ReLU, mse_loss

# Denominator floor: gradients that are analytically zero (e.g. a conv bias
# followed by batch norm) only carry round-off in the numeric estimate.
ABS_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ABS_FLOOR)


def _relu_signs(network) -> list[np.ndarray]:
    return [layer.x > 0 for layer in network.layers if isinstance(layer, ReLU)]


def gradient_check(network, x: np.ndarray, target: np.ndarray, h: float = 1e-5,
                   max_per_tensor: int | None = None, check_input: bool = True,
                   seed: int = 0) -> GradCheckResult:
    """Compare backprop with central differences of the MSE loss.

    ``network`` needs ``layers``, ``forward(x, training)``, ``backward(dout)``
    and ``named_parameters()``. Runs in training mode with dropout disabled.
    Coordinates whose perturbation flips any ReLU input are skipped. With
    ``max_per_tensor`` a random subset of each tensor's entries is checked.
    """
    x = np.array(x, dtype=np.float64)
    dropouts = [l for l in network.layers if isinstance(l, Dropout)]
    saved = [d.enabled for d in dropouts]
    for d in dropouts:
        d.enabled = False
    # freeze BN running statistics: they do not affect a train-mode forward,
    # but the check should leave the model untouched
    stats = [(l, l.running_mean.copy(), l.running_var.copy())
             for l in network.layers if hasattr(l, "running_mean")]
    rng = np.random.default_rng(seed)

    def loss_at() -> tuple[float, list[np.ndarray]]:
        pred = network.forward(x, training=True)
        return mse_loss(pred, target)[0], _relu_signs(network)

    try:
        pred = network.forward(x, training=True)
        _, dpred = mse_loss(pred, target)
        base_signs = _relu_signs(network)
        dx = network.backward(dpred)
        tensors = [(name, layer.params[pname], layer.grads[pname])
                   for name, layer, pname in network.named_parameters()]
        if check_input:
            tensors.append(("input", x, dx))

        result = GradCheckResult(0.0)
        for name, value, grad in tensors:
            flat = value.reshape(-1)
            gflat = np.array(grad).reshape(-1)
            idx = np.arange(flat.size)
            if max_per_tensor is not None and flat.size > max_per_tensor:
                idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                lp, sp = loss_at()
                flat[i] = orig - h
                lm, sm = loss_at()
                flat[i] = orig
                if any((a != b).any() for a, b in zip(sp, base_signs)) or \
                        any((a != b).any() for a, b in zip(sm, base_signs)):
                    result.skipped += 1
                    continue
                numeric = (lp - lm) / (2 * h)
                worst = max(worst, relative_error(gflat[i], numeric))
                result.checked += 1
            result.per_tensor[name] = worst
            result.max_rel_error = max(result.max_rel_error, worst)
        return result
    finally:
        for d, e in zip(dropouts, saved):
            d.enabled = e
        for layer, m, v in stats:
            layer.running_mean[...] = m
            layer.running_var[...] = v
