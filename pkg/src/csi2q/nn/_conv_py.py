"""Pure numpy implementation of the dilated causal convolution kernels.

Same contract as the compiled ``_conv_ext`` module; used when the extension is
not built or ``CSI2Q_PURE_PYTHON=1`` is set.
"""

import numpy as np


def _columns(x, K, dilation):
    B, C, N = x.shape
    pad = (K - 1) * dilation
    xp = np.zeros((B, C, N + pad))
    xp[:, :, pad:] = x
    return np.stack([xp[:, :, k * dilation:k * dilation + N] for k in range(K)], axis=2)


def conv_forward(x, wt, bias, dilation, out):
    K = wt.shape[0]
    cols = _columns(x, K, dilation)  # B, C, K, N
    w = wt.transpose(1, 2, 0)  # O, C, K
    res = np.tensordot(w, cols, axes=([1, 2], [1, 2]))  # O, B, N
    out[...] = res.transpose(1, 0, 2) + bias[None, :, None]


def conv_backward(x, wt, dilation, gout, gx, gwt, need_gx=True):
    B, C, N = x.shape
    K = wt.shape[0]
    cols = _columns(x, K, dilation)
    # gwt[k, o, c] = sum_{b,n} gout[b, o, n] * cols[b, c, k, n]
    gwt += np.tensordot(gout, cols, axes=([0, 2], [0, 3])).transpose(2, 0, 1)
    if need_gx:
        pad = (K - 1) * dilation
        gcols = np.tensordot(wt, gout, axes=([1], [1]))  # K, C, B, N
        gxp = np.zeros((B, C, N + pad))
        for k in range(K):
            gxp[:, :, k * dilation:k * dilation + N] += gcols[k].transpose(1, 0, 2)
        gx += gxp[:, :, pad:]
