# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched k-level inference; mirrors ``reference.k_level_infer``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport copysign, exp, fabs

cnp.import_array()

DEF CELL_GRU = 1
DEF CELL_VRNN = 2


cdef inline double tanh(double x) noexcept nogil:
    # glibc tanh is several times slower than exp here; absolute error stays within 3e-16
    cdef double e = exp(-2.0 * fabs(x))
    return copysign((1.0 - e) / (1.0 + e), x)


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline void _row_matmul_acc(const double* x, const double* W, double* out, Py_ssize_t I, Py_ssize_t J) noexcept nogil:
    """out[j] += sum_i x[i] * W[i, j] for a row-major (I, J) matrix."""
    cdef Py_ssize_t i, j
    cdef double xi
    cdef const double* row
    for i in range(I):
        xi = x[i]
        if xi == 0.0:
            continue
        row = W + i * J
        for j in range(J):
            out[j] += xi * row[j]


def k_level_infer(
    double[:, :, ::1] enc_w0, double[:, ::1] enc_b0,
    double[:, :, ::1] enc_w1, double[:, ::1] enc_b1,
    int cell_kind,
    double[:, :, :, ::1] com_w, double[:, :, :, ::1] com_u, double[:, :, ::1] com_b,
    double[:, :, ::1] head_w, double[:, ::1] head_b,
    double[:, :, ::1] obs, double[:, ::1] mix, int K,
    noise=None, override=None, override_mask=None,
):
    cdef Py_ssize_t B = obs.shape[0], N = obs.shape[1], O = obs.shape[2]
    cdef Py_ssize_t H = enc_w0.shape[2], D = enc_w1.shape[2], A = head_w.shape[2]
    cdef Py_ssize_t b, n, j, hh, d, k
    cdef double w
    if K > 0 and cell_kind != CELL_GRU and cell_kind != CELL_VRNN:
        raise ValueError("K > 0 needs a communicative cell")

    lat_arr = np.empty((B, N, D))
    out_arr = np.empty((B, N, A))
    cdef double[:, :, ::1] lat = lat_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] hid = np.empty(H)
    cdef double[:, ::1] nxt = np.empty((N, D))
    cdef double[:, ::1] fused = np.empty((N, D))
    cdef double[::1] zacc = np.empty(D)
    cdef double[::1] racc = np.empty(D)
    cdef double[::1] cacc = np.empty(D)
    cdef double[::1] rh = np.empty(D)
    cdef double[:, :, ::1] nz
    cdef double[:, :, ::1] ov
    cdef unsigned char[::1] ovm
    cdef bint has_noise = noise is not None
    cdef bint has_ov = override is not None
    if has_noise:
        nz = np.ascontiguousarray(noise, dtype=np.float64)
    if has_ov:
        ov = np.ascontiguousarray(override, dtype=np.float64)
        ovm = np.ascontiguousarray(override_mask, dtype=np.uint8)

    cdef double* lp
    with nogil:
        for b in range(B):
            # level 0: two-layer tanh encoder
            for n in range(N):
                for hh in range(H):
                    hid[hh] = enc_b0[n, hh]
                _row_matmul_acc(&obs[b, n, 0], &enc_w0[n, 0, 0], &hid[0], O, H)
                for hh in range(H):
                    hid[hh] = tanh(hid[hh])
                lp = &lat[b, n, 0]
                for d in range(D):
                    lp[d] = enc_b1[n, d]
                _row_matmul_acc(&hid[0], &enc_w1[n, 0, 0], lp, H, D)
                for d in range(D):
                    lp[d] = tanh(lp[d])
                    if has_noise:
                        lp[d] = lp[d] + nz[b, n, d]

            for k in range(K):
                for n in range(N):
                    if has_ov and ovm[n]:
                        for d in range(D):
                            fused[n, d] = ov[b, n, d]
                        continue
                    for d in range(D):
                        fused[n, d] = 0.0
                    for j in range(N):
                        w = mix[n, j]
                        if w != 0.0:
                            for d in range(D):
                                fused[n, d] += w * lat[b, j, d]
                for n in range(N):
                    lp = &lat[b, n, 0]
                    if cell_kind == CELL_GRU:
                        for d in range(D):
                            zacc[d] = com_b[n, 0, d]
                            racc[d] = com_b[n, 1, d]
                            cacc[d] = com_b[n, 2, d]
                        _row_matmul_acc(&fused[n, 0], &com_w[n, 0, 0, 0], &zacc[0], D, D)
                        _row_matmul_acc(lp, &com_u[n, 0, 0, 0], &zacc[0], D, D)
                        _row_matmul_acc(&fused[n, 0], &com_w[n, 1, 0, 0], &racc[0], D, D)
                        _row_matmul_acc(lp, &com_u[n, 1, 0, 0], &racc[0], D, D)
                        _row_matmul_acc(&fused[n, 0], &com_w[n, 2, 0, 0], &cacc[0], D, D)
                        for d in range(D):
                            rh[d] = _sigmoid(racc[d]) * lp[d]
                        _row_matmul_acc(&rh[0], &com_u[n, 2, 0, 0], &cacc[0], D, D)
                        for d in range(D):
                            nxt[n, d] = lp[d] + _sigmoid(zacc[d]) * (tanh(cacc[d]) - lp[d])
                    else:
                        for d in range(D):
                            cacc[d] = com_b[n, 0, d]
                        _row_matmul_acc(lp, &com_u[n, 0, 0, 0], &cacc[0], D, D)
                        _row_matmul_acc(&fused[n, 0], &com_w[n, 0, 0, 0], &cacc[0], D, D)
                        for d in range(D):
                            nxt[n, d] = tanh(cacc[d])
                for n in range(N):
                    for d in range(D):
                        lat[b, n, d] = nxt[n, d]

            for n in range(N):
                for j in range(A):
                    out[b, n, j] = head_b[n, j]
                _row_matmul_acc(&lat[b, n, 0], &head_w[n, 0, 0], &out[b, n, 0], D, A)
    return out_arr, lat_arr
