# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched TPR kernels. Same contract as ``_reference``."""
import numpy as np

BACKEND = "cython"


cdef void _unbind(const double[:, :, ::1] F, const double[::1] e,
                  const double[::1] r, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t E = F.shape[0], R = F.shape[1], E2 = F.shape[2]
    cdef double a
    for k in range(E2):
        out[k] = 0.0
    for i in range(E):
        if e[i] == 0.0:
            continue
        for j in range(R):
            a = e[i] * r[j]
            for k in range(E2):
                out[k] += F[i, j, k] * a


cdef void _add_outer(double[:, :, ::1] out, const double[::1] a,
                     const double[::1] b, const double[::1] c,
                     double s) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double ab
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            ab = s * a[i] * b[j]
            for k in range(out.shape[2]):
                out[i, j, k] += ab * c[k]


cdef void _contract_12(const double[:, :, ::1] G, const double[::1] b,
                       const double[::1] c, double[::1] out) noexcept nogil:
    # out[i] += sum_{j,k} G[i,j,k] b[j] c[k]
    cdef Py_ssize_t i, j, k
    cdef double acc, inner
    for i in range(G.shape[0]):
        acc = 0.0
        for j in range(G.shape[1]):
            inner = 0.0
            for k in range(G.shape[2]):
                inner += G[i, j, k] * c[k]
            acc += inner * b[j]
        out[i] += acc


cdef void _contract_02(const double[:, :, ::1] G, const double[::1] a,
                       const double[::1] c, double[::1] out) noexcept nogil:
    # out[j] += sum_{i,k} G[i,j,k] a[i] c[k]
    cdef Py_ssize_t i, j, k
    cdef double inner
    for i in range(G.shape[0]):
        if a[i] == 0.0:
            continue
        for j in range(G.shape[1]):
            inner = 0.0
            for k in range(G.shape[2]):
                inner += G[i, j, k] * c[k]
            out[j] += inner * a[i]


cdef void _contract_all(const double[:, :, ::1] G, const double[::1] a,
                        const double[::1] b, const double[::1] c, double s,
                        double[::1] ga, double[::1] gb,
                        double[::1] gc) noexcept nogil:
    # one pass: ga += s*G.(b,c), gb += s*G.(a,c), gc += s*G.(a,b)
    cdef Py_ssize_t i, j, k
    cdef double inner, acc_i, ab, g
    for i in range(G.shape[0]):
        acc_i = 0.0
        for j in range(G.shape[1]):
            inner = 0.0
            ab = s * a[i] * b[j]
            for k in range(G.shape[2]):
                g = G[i, j, k]
                inner += g * c[k]
                gc[k] += g * ab
            acc_i += inner * b[j]
            gb[j] += s * inner * a[i]
        ga[i] += s * acc_i


def unbind3(F, e, r):
    cdef double[:, :, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    out = np.empty((Fv.shape[0], Fv.shape[3]))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t n
    with nogil:
        for n in range(Fv.shape[0]):
            _unbind(Fv[n], ev[n], rv[n], ov[n])
    return out


def outer3(a, b, c):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    out = np.zeros((av.shape[0], av.shape[1], bv.shape[1], cv.shape[1]))
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t n
    with nogil:
        for n in range(av.shape[0]):
            _add_outer(ov[n], av[n], bv[n], cv[n], 1.0)
    return out


def unbind3_backward(F, e, r, g):
    cdef double[:, :, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    dF = np.zeros_like(F, dtype=np.float64)
    de = np.zeros((Fv.shape[0], Fv.shape[1]))
    dr = np.zeros((Fv.shape[0], Fv.shape[2]))
    cdef double[:, :, :, ::1] dFv = dF
    cdef double[:, ::1] dev = de
    cdef double[:, ::1] drv = dr
    cdef Py_ssize_t n
    with nogil:
        for n in range(Fv.shape[0]):
            _add_outer(dFv[n], ev[n], rv[n], gv[n], 1.0)
            _contract_12(Fv[n], rv[n], gv[n], dev[n])
            _contract_02(Fv[n], ev[n], gv[n], drv[n])
    return dF, de, dr


def tpr_step(F, e1, e2, r1, r2, r3, mask, bint use_write, bint use_move,
             bint use_backlink):
    cdef double[:, :, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] e1v = np.ascontiguousarray(e1, dtype=np.float64)
    cdef double[:, ::1] e2v = np.ascontiguousarray(e2, dtype=np.float64)
    cdef double[:, ::1] r1v = np.ascontiguousarray(r1, dtype=np.float64)
    cdef double[:, ::1] r2v = np.ascontiguousarray(r2, dtype=np.float64)
    cdef double[:, ::1] r3v = np.ascontiguousarray(r3, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t B = Fv.shape[0], E = Fv.shape[1], E2 = Fv.shape[3]
    out = np.array(Fv, copy=True)
    w = np.zeros((B, E2))
    m = np.zeros((B, E2))
    b = np.zeros((B, E2))
    cdef double[:, :, :, ::1] ov = out
    cdef double[:, ::1] wv = w
    cdef double[:, ::1] mmv = m
    cdef double[:, ::1] bv = b
    cdef double[::1] tmp = np.empty(E2)
    cdef Py_ssize_t n, k
    cdef double s
    with nogil:
        for n in range(B):
            s = mv[n]
            _unbind(Fv[n], e1v[n], r1v[n], wv[n])
            if use_move:
                _unbind(Fv[n], e1v[n], r2v[n], mmv[n])
            if use_backlink:
                _unbind(Fv[n], e2v[n], r3v[n], bv[n])
            if s == 0.0:
                continue
            if use_write:
                for k in range(E2):
                    tmp[k] = e2v[n, k] - wv[n, k]
                _add_outer(ov[n], e1v[n], r1v[n], tmp, s)
            if use_move:
                for k in range(E2):
                    tmp[k] = wv[n, k] - mmv[n, k]
                _add_outer(ov[n], e1v[n], r2v[n], tmp, s)
            if use_backlink:
                for k in range(E2):
                    tmp[k] = e1v[n, k] - bv[n, k]
                _add_outer(ov[n], e2v[n], r3v[n], tmp, s)
    return out, w, m, b


def tpr_step_backward(G, F, e1, e2, r1, r2, r3, w, m, b, mask,
                      bint use_write, bint use_move, bint use_backlink):
    cdef double[:, :, :, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, :, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] e1v = np.ascontiguousarray(e1, dtype=np.float64)
    cdef double[:, ::1] e2v = np.ascontiguousarray(e2, dtype=np.float64)
    cdef double[:, ::1] r1v = np.ascontiguousarray(r1, dtype=np.float64)
    cdef double[:, ::1] r2v = np.ascontiguousarray(r2, dtype=np.float64)
    cdef double[:, ::1] r3v = np.ascontiguousarray(r3, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] mmv = np.ascontiguousarray(m, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t B = Fv.shape[0], E = Fv.shape[1], R = Fv.shape[2]
    cdef Py_ssize_t E2 = Fv.shape[3]
    dF = np.array(Gv, copy=True)
    de1 = np.zeros((B, E))
    de2 = np.zeros((B, E2))
    dr1 = np.zeros((B, R))
    dr2 = np.zeros((B, R))
    dr3 = np.zeros((B, R))
    cdef double[:, :, :, ::1] dFv = dF
    cdef double[:, ::1] de1v = de1
    cdef double[:, ::1] de2v = de2
    cdef double[:, ::1] dr1v = dr1
    cdef double[:, ::1] dr2v = dr2
    cdef double[:, ::1] dr3v = dr3
    cdef double[::1] c = np.empty(E2)
    cdef double[::1] gc = np.empty(E2)
    cdef double[::1] gw = np.empty(E2)
    cdef double[::1] gm = np.empty(E2)
    cdef double[::1] gb = np.empty(E2)
    cdef Py_ssize_t n, k
    cdef double s
    with nogil:
        for n in range(B):
            s = mv[n]
            for k in range(E2):
                gw[k] = 0.0
                gm[k] = 0.0
                gb[k] = 0.0
            if s == 0.0:
                continue
            if use_write:
                for k in range(E2):
                    c[k] = e2v[n, k] - wv[n, k]
                    gc[k] = 0.0
                _contract_all(Gv[n], e1v[n], r1v[n], c, s, de1v[n], dr1v[n], gc)
                for k in range(E2):
                    de2v[n, k] += gc[k]
                    gw[k] -= gc[k]
            if use_move:
                for k in range(E2):
                    c[k] = wv[n, k] - mmv[n, k]
                    gc[k] = 0.0
                _contract_all(Gv[n], e1v[n], r2v[n], c, s, de1v[n], dr2v[n], gc)
                for k in range(E2):
                    gw[k] += gc[k]
                    gm[k] -= gc[k]
            if use_backlink:
                for k in range(E2):
                    c[k] = e1v[n, k] - bv[n, k]
                    gc[k] = 0.0
                _contract_all(Gv[n], e2v[n], r3v[n], c, s, de2v[n], dr3v[n], gc)
                for k in range(E2):
                    de1v[n, k] += gc[k]
                    gb[k] -= gc[k]
            # retrievals read the incoming state
            if use_write or use_move:
                _add_outer(dFv[n], e1v[n], r1v[n], gw, 1.0)
                _contract_12(Fv[n], r1v[n], gw, de1v[n])
                _contract_02(Fv[n], e1v[n], gw, dr1v[n])
            if use_move:
                _add_outer(dFv[n], e1v[n], r2v[n], gm, 1.0)
                _contract_12(Fv[n], r2v[n], gm, de1v[n])
                _contract_02(Fv[n], e1v[n], gm, dr2v[n])
            if use_backlink:
                _add_outer(dFv[n], e2v[n], r3v[n], gb, 1.0)
                _contract_12(Fv[n], r3v[n], gb, de2v[n])
                _contract_02(Fv[n], e2v[n], gb, dr3v[n])
    return dF, de1, de2, dr1, dr2, dr3
