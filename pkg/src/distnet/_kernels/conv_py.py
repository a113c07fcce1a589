"""Numpy fallback for the 2-D convolution kernels.

Cross-correlation convention, stride 1, channels-last layout:
input (H, W, C_in), kernels (k, k, C_in, C_out). The forward pass uses an
im2col matmul; the backward pass scatters through the same patch geometry.
"""

import numpy as np

BACKEND = "numpy"


def _patches(padded, k, H, W):
    # (H, W, k, k, C) sliding view over the padded input, then flattened
    # to an (H*W, k*k*C) matrix for a single BLAS call.
    view = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    view = view.transpose(0, 1, 3, 4, 2)
    return np.ascontiguousarray(view[:H, :W]).reshape(H * W, -1)


def conv2d_forward(inp, kernels, bias, pad):
    """Return (out, padded_input); the padded input is reused by backward."""
    k = kernels.shape[0]
    c_out = kernels.shape[3]
    if pad > 0:
        padded = np.pad(inp, ((pad, pad), (pad, pad), (0, 0)))
    else:
        padded = inp
    H = padded.shape[0] - k + 1
    W = padded.shape[1] - k + 1
    cols = _patches(padded, k, H, W)
    out = cols @ kernels.reshape(-1, c_out) + bias
    return out.reshape(H, W, c_out), padded


def conv2d_backward(grad_out, padded, kernels, pad, in_shape):
    """Gradients w.r.t. (input, kernels, bias) for conv2d_forward."""
    k = kernels.shape[0]
    c_out = kernels.shape[3]
    H, W = grad_out.shape[0], grad_out.shape[1]
    g2 = grad_out.reshape(H * W, c_out)

    cols = _patches(padded, k, H, W)
    grad_k = (cols.T @ g2).reshape(kernels.shape)
    grad_b = g2.sum(axis=0)

    grad_pad = np.zeros_like(padded)
    # col2im: 9 (= k*k) vectorized scatter-adds instead of a per-pixel loop.
    gk = g2 @ kernels.reshape(-1, c_out).T
    gk = gk.reshape(H, W, k, k, padded.shape[2])
    for di in range(k):
        for dj in range(k):
            grad_pad[di:di + H, dj:dj + W, :] += gk[:, :, di, dj, :]
    if pad > 0:
        grad_in = grad_pad[pad:-pad, pad:-pad, :]
    else:
        grad_in = grad_pad
    return np.ascontiguousarray(grad_in), grad_k, grad_b
