import numpy as np


def mse_loss(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every element and its gradient.

    The normalizer is the element count, i.e. ``B*H*W`` for single-channel
    batches and ``B*C*H*W`` with channels.
    """
    if output.shape != target.shape:
        raise ValueError(f"output shape {output.shape} != target shape {target.shape}")
    diff = output.astype(np.float64) - target
    n = diff.size
    loss = float(np.dot(diff.ravel(), diff.ravel()) / n)
    return loss, (2.0 / n * diff).astype(output.dtype, copy=False)
