"""Fused tanh-jet kernels.

Channel layout conventions match ``autodiff.JetLayout``: second-order
channels are sums of terms ``coef * d_a d_b`` given by the parallel arrays
``tc`` (target channel), ``ta``/``tb`` (first-derivative channels) and ``tk``
(coefficients).  Arrays whose leading axis is 1 are constant in the inputs:
their derivative channels are implicitly zero.  ``A`` is ``tanh(Z[0])``,
computed by numpy beforehand because its vectorised tanh beats the scalar
libm call by an order of magnitude.

Loops run channel by channel over contiguous memory so that they vectorise.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _derivs(a):
    d1 = 1.0 - a * a
    d2 = -2.0 * a * d1
    return d1, d2


@njit(cache=True)
def tanh_fwd(A, Z, tc, ta, tb, tk, out):
    C = Z.shape[0]
    M = A.size
    a = A.ravel()
    z = Z.reshape(C, M)
    o = out.reshape(C, M)
    d1, d2 = _derivs(a)
    o[0] = a
    for c in range(1, C):
        for i in range(M):
            o[c, i] = d1[i] * z[c, i]
    for k in range(tc.shape[0]):
        cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
        for i in range(M):
            o[cc, i] += kk * d2[i] * z[ca, i] * z[cb, i]


@njit(cache=True)
def tanh_bwd(G, A, Z, tc, ta, tb, tk, gz):
    C = Z.shape[0]
    M = A.size
    a = A.ravel()
    z = Z.reshape(C, M)
    g = G.reshape(C, M)
    o = gz.reshape(C, M)
    d1, d2 = _derivs(a)
    g0 = g[0] * d1
    for c in range(1, C):
        for i in range(M):
            o[c, i] = g[c, i] * d1[i]
            g0[i] += g[c, i] * d2[i] * z[c, i]
    if tc.shape[0] > 0:
        d3 = d1 * (4.0 * a * a - 2.0 * d1)
        for k in range(tc.shape[0]):
            cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
            for i in range(M):
                gk = g[cc, i] * kk
                za = z[ca, i]
                zb = z[cb, i]
                g0[i] += gk * d3[i] * za * zb
                o[ca, i] += gk * d2[i] * zb
                o[cb, i] += gk * d2[i] * za
    o[0] = g0


@njit(cache=True)
def gate_parts(A, Zp, U, V, tc, ta, tb, tk, zl, dl):
    """Jets of the gate Z = tanh(Zp) and of D = V - U, written to zl, dl."""
    C = zl.shape[0]
    M = A.size
    cz, cu, cv = Zp.shape[0], U.shape[0], V.shape[0]
    a = A.ravel()
    zp = Zp.reshape(cz, M)
    u = U.reshape(cu, M)
    v = V.reshape(cv, M)
    z = zl.reshape(C, M)
    d = dl.reshape(C, M)
    z[0] = a
    if cz == 1:
        z[1:] = 0.0
    else:
        d1, d2 = _derivs(a)
        for c in range(1, C):
            for i in range(M):
                z[c, i] = d1[i] * zp[c, i]
        for k in range(tc.shape[0]):
            cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
            for i in range(M):
                z[cc, i] += kk * d2[i] * zp[ca, i] * zp[cb, i]
    for c in range(C):
        if c < cv and c < cu:
            for i in range(M):
                d[c, i] = v[c, i] - u[c, i]
        elif c < cv:
            d[c] = v[c]
        elif c < cu:
            for i in range(M):
                d[c, i] = -u[c, i]
        else:
            d[c] = 0.0


@njit(cache=True)
def gate_fwd(zl, dl, U, tc, ta, tb, tk, H):
    """H = U + Z * D with the jet product rule."""
    C = H.shape[0]
    M = U[0].size
    cu = U.shape[0]
    u = U.reshape(cu, M)
    h = H.reshape(C, M)
    z = zl.reshape(C, M)
    d = dl.reshape(C, M)
    for i in range(M):
        h[0, i] = u[0, i] + z[0, i] * d[0, i]
    for c in range(1, C):
        if c < cu:
            for i in range(M):
                h[c, i] = u[c, i] + z[c, i] * d[0, i] + z[0, i] * d[c, i]
        else:
            for i in range(M):
                h[c, i] = z[c, i] * d[0, i] + z[0, i] * d[c, i]
    for k in range(tc.shape[0]):
        cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
        for i in range(M):
            h[cc, i] += kk * (z[ca, i] * d[cb, i] + z[cb, i] * d[ca, i])


@njit(cache=True)
def gate_bwd(G, A, Zp, zl, dl, tc, ta, tb, tk, gZp, gU, gV):
    C = G.shape[0]
    M = A.size
    cz, cu, cv = Zp.shape[0], gU.shape[0], gV.shape[0]
    g = G.reshape(C, M)
    zp = Zp.reshape(cz, M)
    z = zl.reshape(C, M)
    d = dl.reshape(C, M)
    gzl = np.empty((C, M), dtype=A.dtype)
    gdl = np.empty((C, M), dtype=A.dtype)
    # cotangents of the product P = Z * D
    for i in range(M):
        gzl[0, i] = g[0, i] * d[0, i]
        gdl[0, i] = g[0, i] * z[0, i]
    for c in range(1, C):
        for i in range(M):
            gc = g[c, i]
            gzl[0, i] += gc * d[c, i]
            gdl[0, i] += gc * z[c, i]
            gzl[c, i] = gc * d[0, i]
            gdl[c, i] = gc * z[0, i]
    for k in range(tc.shape[0]):
        cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
        for i in range(M):
            gk = g[cc, i] * kk
            gzl[ca, i] += gk * d[cb, i]
            gzl[cb, i] += gk * d[ca, i]
            gdl[ca, i] += gk * z[cb, i]
            gdl[cb, i] += gk * z[ca, i]
    gu = gU.reshape(cu, M)
    gv = gV.reshape(cv, M)
    for c in range(cu):
        for i in range(M):
            gu[c, i] = g[c, i] - gdl[c, i]
    for c in range(cv):
        gv[c] = gdl[c]
    # back through tanh
    a = A.ravel()
    o = gZp.reshape(cz, M)
    if cz == 1:
        for i in range(M):
            o[0, i] = gzl[0, i] * (1.0 - a[i] * a[i])
        return
    d1, d2 = _derivs(a)
    for i in range(M):
        o[0, i] = gzl[0, i] * d1[i]
    for c in range(1, C):
        for i in range(M):
            o[c, i] = gzl[c, i] * d1[i]
            o[0, i] += gzl[c, i] * d2[i] * zp[c, i]
    if tc.shape[0] > 0:
        for k in range(tc.shape[0]):
            cc, ca, cb, kk = tc[k], ta[k], tb[k], tk[k]
            for i in range(M):
                gk = gzl[cc, i] * kk
                za = zp[ca, i]
                zb = zp[cb, i]
                d3 = d1[i] * (4.0 * a[i] * a[i] - 2.0 * d1[i])
                o[0, i] += gk * d3 * za * zb
                o[ca, i] += gk * d2[i] * zb
                o[cb, i] += gk * d2[i] * za
