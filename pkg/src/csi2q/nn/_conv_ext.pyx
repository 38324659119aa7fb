# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Dilated causal 1-D convolution kernels on top of BLAS dgemm.

Each kernel tap is one gemm on a shifted view of the input, so no padded or
im2col copies are made.  Arrays are C-contiguous float64:
x [B, C, N], weights pre-transposed to wt [K, O, C], out/gout [B, O, N].
"""

from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                       double* a, int lda, double* b, int ldb, double beta,
                       double* c, int ldc) noexcept nogil:
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def conv_forward(double[:, :, ::1] x, double[:, :, ::1] wt, double[::1] bias,
                 int dilation, double[:, :, ::1] out):
    cdef int B = x.shape[0], C = x.shape[1], N = x.shape[2]
    cdef int K = wt.shape[0], O = wt.shape[1]
    cdef int b, k, s, o, n
    cdef char nt = b'N'
    with nogil:
        for b in range(B):
            for o in range(O):
                for n in range(N):
                    out[b, o, n] = bias[o]
            for k in range(K):
                s = (K - 1 - k) * dilation
                if s >= N:
                    continue
                # out[b][:, s:] += W_k @ x[b][:, :N-s]
                _gemm(nt, nt, N - s, O, C, 1.0, &x[b, 0, 0], N, &wt[k, 0, 0], C,
                      1.0, &out[b, 0, s], N)


def conv_backward(double[:, :, ::1] x, double[:, :, ::1] wt, int dilation,
                  double[:, :, ::1] gout, double[:, :, ::1] gx, double[:, :, ::1] gwt,
                  bint need_gx=True):
    """Accumulate input and weight gradients; gx and gwt must arrive zeroed."""
    cdef int B = x.shape[0], C = x.shape[1], N = x.shape[2]
    cdef int K = wt.shape[0], O = wt.shape[1]
    cdef int b, k, s
    cdef char nt = b'N', tr = b'T'
    with nogil:
        for b in range(B):
            for k in range(K):
                s = (K - 1 - k) * dilation
                if s >= N:
                    continue
                if need_gx:
                    # gx[b][:, :N-s] += W_k^T @ gout[b][:, s:]
                    _gemm(nt, tr, N - s, C, O, 1.0, &gout[b, 0, s], N, &wt[k, 0, 0], C,
                          1.0, &gx[b, 0, 0], N)
                # gW_k += gout[b][:, s:] @ x[b][:, :N-s]^T
                _gemm(tr, nt, C, O, N - s, 1.0, &x[b, 0, 0], N, &gout[b, 0, s], N,
                      1.0, &gwt[k, 0, 0], C)
