"""Central finite-difference checks of backpropagated gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctkit.nn.layers import ELU, LeakyReLU, ReLU
from ctkit.nn.losses import mse_loss
from ctkit.nn.network import Network


@dataclass
class TensorCheck:
    layer: int
    name: str
    rel_error: float
    checked: int
    skipped: int


def _branch_masks(net: Network):
    return [layer._cache if isinstance(layer, (ReLU, LeakyReLU)) else layer._cache[0]
            for layer in net.layers if isinstance(layer, (ReLU, LeakyReLU, ELU))]


def _same_branches(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(net: Network, x: np.ndarray, target: np.ndarray, step: float = 1e-3,
                    max_per_tensor: int | None = None, seed: int = 0) -> list[TensorCheck]:
    """Compare backprop gradients of the MSE loss against central differences.

    The network is converted to float64 in place. Coordinates whose
    ``+-step`` stencil switches any activation between branches are skipped
    (the loss is not differentiable across the switch). The error per
    parameter tensor is ``||g_bp - g_fd|| / max(||g_bp||, ||g_fd||)``.
    """
    net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rng = np.random.default_rng(seed)

    net.zero_grad()
    _, g = mse_loss(net.forward(x), target)
    base_masks = [m.copy() for m in _branch_masks(net)]
    net.backward(g)

    def loss_at():
        loss, _ = mse_loss(net.forward(x), target)
        return loss, _same_branches(_branch_masks(net), base_masks)

    results = []
    for li, layer in enumerate(net.layers):
        for pi, (p, bp) in enumerate(zip(layer.params, layer.grads)):
            idx = list(np.ndindex(p.shape))
            if max_per_tensor is not None and len(idx) > max_per_tensor:
                picks = rng.choice(len(idx), size=max_per_tensor, replace=False)
                idx = [idx[k] for k in sorted(picks)]
            fd, ref, skipped = [], [], 0
            for i in idx:
                old = p[i]
                p[i] = old + step
                lp, ok_p = loss_at()
                p[i] = old - step
                lm, ok_m = loss_at()
                p[i] = old
                if not (ok_p and ok_m):
                    skipped += 1
                    continue
                fd.append((lp - lm) / (2 * step))
                ref.append(bp[i])
            fd, ref = np.array(fd), np.array(ref)
            scale = max(np.linalg.norm(fd), np.linalg.norm(ref))
            err = float(np.linalg.norm(fd - ref) / scale) if scale > 0 else 0.0
            results.append(TensorCheck(li, "weight" if pi == 0 else "bias", err, len(fd), skipped))
    net.clear_cache()
    return results


def check_input_gradient(net: Network, x: np.ndarray, target: np.ndarray, step: float = 1e-3) -> float:
    """Relative error of the backpropagated input gradient (float64)."""
    net.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    net.zero_grad()
    _, g = mse_loss(net.forward(x), target)
    dx = net.backward(g)
    fd = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + step
        lp, _ = mse_loss(net.forward(x), target)
        x[i] = old - step
        lm, _ = mse_loss(net.forward(x), target)
        x[i] = old
        fd[i] = (lp - lm) / (2 * step)
    net.clear_cache()
    return float(np.linalg.norm(fd - dx) / max(np.linalg.norm(fd), np.linalg.norm(dx), 1e-300))
