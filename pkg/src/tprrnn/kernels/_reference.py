"""Pure numpy implementation of the batched TPR kernels.

Shapes: ``F`` is ``(B, E, R, E)``, entity vectors ``(B, E)``, relation
vectors ``(B, R)``, ``mask`` is ``(B,)``. All arrays float64.
"""
import numpy as np

BACKEND = "numpy"


def unbind3(F, e, r):
    B, E, R, E2 = F.shape
    tmp = np.matmul(e[:, None, :], F.reshape(B, E, R * E2)).reshape(B, R, E2)
    return np.matmul(r[:, None, :], tmp)[:, 0, :]


def outer3(a, b, c):
    return a[:, :, None, None] * b[:, None, :, None] * c[:, None, None, :]


def _contract_02(G, a, c):
    # sum_{i,k} G[b,i,j,k] a[b,i] c[b,k] -> (B, R)
    B, E, R, E2 = G.shape
    tmp = np.matmul(a[:, None, :], G.reshape(B, E, R * E2)).reshape(B, R, E2)
    return np.matmul(tmp, c[:, :, None])[:, :, 0]


def _contract_12(G, b, c):
    # sum_{j,k} G[b,i,j,k] b[b,j] c[b,k] -> (B, E)
    B, E, R, E2 = G.shape
    tmp = np.matmul(G.reshape(B, E * R, E2), c[:, :, None]).reshape(B, E, R)
    return np.matmul(tmp, b[:, :, None])[:, :, 0]


def unbind3_backward(F, e, r, g):
    """Gradients of ``unbind3(F, e, r)`` given upstream ``g`` of shape (B, E)."""
    dF = outer3(e, r, g)
    de = _contract_12(F, r, g)
    dr = _contract_02(F, e, g)
    return dF, de, dr


def tpr_step(F, e1, e2, r1, r2, r3, mask, use_write, use_move, use_backlink):
    """One masked write/move/backlink update.

    All three retrievals read the incoming ``F``. Returns the new state and
    the retrieved vectors ``(w, m, b)`` (zeros for disabled operations).
    """
    w = unbind3(F, e1, r1)
    m = unbind3(F, e1, r2) if use_move else np.zeros_like(w)
    b = unbind3(F, e2, r3) if use_backlink else np.zeros_like(w)
    delta = np.zeros_like(F)
    if use_write:
        delta += outer3(e1, r1, e2 - w)
    if use_move:
        delta += outer3(e1, r2, w - m)
    if use_backlink:
        delta += outer3(e2, r3, e1 - b)
    return F + mask[:, None, None, None] * delta, w, m, b


def tpr_step_backward(G, F, e1, e2, r1, r2, r3, w, m, b, mask,
                      use_write, use_move, use_backlink):
    """Vector-Jacobian product of :func:`tpr_step` for upstream ``G``."""
    Gm = mask[:, None, None, None] * G
    dF = G.copy()
    de1 = np.zeros_like(e1)
    de2 = np.zeros_like(e2)
    dr1 = np.zeros_like(r1)
    dr2 = np.zeros_like(r2)
    dr3 = np.zeros_like(r3)
    gw = np.zeros_like(w)
    gm = np.zeros_like(w)
    gb = np.zeros_like(w)
    if use_write:
        c = e2 - w
        de1 += _contract_12(Gm, r1, c)
        dr1 += _contract_02(Gm, e1, c)
        gc = unbind3(Gm, e1, r1)
        de2 += gc
        gw -= gc
    if use_move:
        c = w - m
        de1 += _contract_12(Gm, r2, c)
        dr2 += _contract_02(Gm, e1, c)
        gc = unbind3(Gm, e1, r2)
        gw += gc
        gm -= gc
    if use_backlink:
        c = e1 - b
        de2 += _contract_12(Gm, r3, c)
        dr3 += _contract_02(Gm, e2, c)
        gc = unbind3(Gm, e2, r3)
        de1 += gc
        gb -= gc
    # retrievals read the incoming state
    if use_write or use_move:
        dF += outer3(e1, r1, gw)
        de1 += _contract_12(F, r1, gw)
        dr1 += _contract_02(F, e1, gw)
    if use_move:
        dF += outer3(e1, r2, gm)
        de1 += _contract_12(F, r2, gm)
        dr2 += _contract_02(F, e1, gm)
    if use_backlink:
        dF += outer3(e2, r3, gb)
        de2 += _contract_12(F, r3, gb)
        dr3 += _contract_02(F, e2, gb)
    return dF, de1, de2, dr1, dr2, dr3
