# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython kernels for 2-D cross-correlation (stride 1, channels last).

Same call signatures and float64 semantics as conv_py; selected at import
by distnet._kernels when compiled.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(cnp.ndarray inp, cnp.ndarray kernels, cnp.ndarray bias, int pad):
    cdef int k = kernels.shape[0]
    cdef int c_in = kernels.shape[2]
    cdef int c_out = kernels.shape[3]
    cdef cnp.ndarray padded
    if pad > 0:
        padded = np.pad(inp, ((pad, pad), (pad, pad), (0, 0)))
    else:
        padded = np.ascontiguousarray(inp)
    cdef int H = padded.shape[0] - k + 1
    cdef int W = padded.shape[1] - k + 1
    cdef cnp.ndarray out_arr = np.empty((H, W, c_out), dtype=np.float64)

    cdef double[:, :, ::1] p = padded
    cdef double[:, :, :, ::1] ker = kernels
    cdef double[::1] b = bias
    cdef double[:, :, ::1] out = out_arr
    cdef int i, j, di, dj, ci, co
    cdef double v

    for i in range(H):
        for j in range(W):
            for co in range(c_out):
                out[i, j, co] = b[co]
            for di in range(k):
                for dj in range(k):
                    for ci in range(c_in):
                        v = p[i + di, j + dj, ci]
                        if v != 0.0:
                            for co in range(c_out):
                                out[i, j, co] += v * ker[di, dj, ci, co]
    return out_arr, padded


def conv2d_backward(cnp.ndarray grad_out, cnp.ndarray padded, cnp.ndarray kernels,
                    int pad, tuple in_shape):
    cdef int k = kernels.shape[0]
    cdef int c_in = kernels.shape[2]
    cdef int c_out = kernels.shape[3]
    cdef int H = grad_out.shape[0]
    cdef int W = grad_out.shape[1]

    cdef cnp.ndarray grad_pad_arr = np.zeros_like(padded)
    cdef cnp.ndarray grad_k_arr = np.zeros_like(kernels)
    cdef cnp.ndarray grad_b_arr = np.zeros(c_out, dtype=np.float64)

    grad_out = np.ascontiguousarray(grad_out)
    cdef double[:, :, ::1] go = grad_out
    cdef double[:, :, ::1] p = padded
    cdef double[:, :, :, ::1] ker = kernels
    cdef double[:, :, ::1] gp = grad_pad_arr
    cdef double[:, :, :, ::1] gk = grad_k_arr
    cdef double[::1] gb = grad_b_arr
    cdef int i, j, di, dj, ci, co
    cdef double g, v, acc

    for i in range(H):
        for j in range(W):
            for co in range(c_out):
                gb[co] += go[i, j, co]
            for di in range(k):
                for dj in range(k):
                    for ci in range(c_in):
                        v = p[i + di, j + dj, ci]
                        acc = 0.0
                        for co in range(c_out):
                            g = go[i, j, co]
                            acc += g * ker[di, dj, ci, co]
                            gk[di, dj, ci, co] += g * v
                        gp[i + di, j + dj, ci] += acc

    cdef cnp.ndarray grad_in
    if pad > 0:
        grad_in = np.ascontiguousarray(grad_pad_arr[pad:-pad, pad:-pad, :])
    else:
        grad_in = grad_pad_arr
    return grad_in, grad_k_arr, grad_b_arr
