"""Hot loops of the FTRL-Proximal learner.

Rows are described by a block CSR (``indptr``/``indices``/``values``) plus a
``row_block`` map, so identical listing-level feature blocks are stored once.
An optional dense block (image embeddings) is appended at ``dense_offset``;
``row_dense[r] == -1`` means the row has no dense part.

Every kernel exists twice: a scalar loop compiled by numba and a row-vectorized
numpy version.  ``fit_rows`` / ``predict_rows`` dispatch on ``_accel.USE_NUMBA``.
The two paths agree to rounding, not bit-for-bit (dot products sum in a
different order).
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel

OK = -1


def _fit_loop(z, n, indptr, indices, values, row_block, dense, row_dense, dense_offset,
              labels, weights, order, alpha, beta, l1, l2, eps, wbuf):
    loss = 0.0
    wsum = 0.0
    ddim = dense.shape[1]
    for t in range(order.shape[0]):
        r = order[t]
        b = row_block[r]
        s = indptr[b]
        e = indptr[b + 1]
        d = row_dense[r]
        a = 0.0
        m = 0
        for k in range(s, e):
            i = indices[k]
            zi = z[i]
            if abs(zi) <= l1:
                wi = 0.0
            else:
                sg = 1.0 if zi > 0.0 else -1.0
                wi = -(zi - sg * l1) / ((beta + math.sqrt(n[i])) / alpha + l2)
            wbuf[m] = wi
            m += 1
            a += wi * values[k]
        if d >= 0:
            for j in range(ddim):
                v = dense[d, j]
                if v != 0.0:
                    i = dense_offset + j
                    zi = z[i]
                    if abs(zi) <= l1:
                        wi = 0.0
                    else:
                        sg = 1.0 if zi > 0.0 else -1.0
                        wi = -(zi - sg * l1) / ((beta + math.sqrt(n[i])) / alpha + l2)
                    wbuf[m] = wi
                    m += 1
                    a += wi * v
        p = 1.0 / (1.0 + math.exp(-a))
        if p < eps:
            p = eps
        elif p > 1.0 - eps:
            p = 1.0 - eps
        y = labels[r]
        wt = weights[r]
        if y > 0.5:
            loss -= wt * math.log(p)
        else:
            loss -= wt * math.log(1.0 - p)
        wsum += wt
        gbase = wt * (p - y)
        m = 0
        for k in range(s, e):
            i = indices[k]
            g = gbase * values[k]
            ni = n[i]
            sigma = (math.sqrt(ni + g * g) - math.sqrt(ni)) / alpha
            z[i] += g - sigma * wbuf[m]
            n[i] = ni + g * g
            m += 1
            if not (math.isfinite(z[i]) and math.isfinite(n[i])):
                return loss, wsum, r
        if d >= 0:
            for j in range(ddim):
                v = dense[d, j]
                if v != 0.0:
                    i = dense_offset + j
                    g = gbase * v
                    ni = n[i]
                    sigma = (math.sqrt(ni + g * g) - math.sqrt(ni)) / alpha
                    z[i] += g - sigma * wbuf[m]
                    n[i] = ni + g * g
                    m += 1
                    if not (math.isfinite(z[i]) and math.isfinite(n[i])):
                        return loss, wsum, r
    return loss, wsum, -1


def _predict_loop(w, indptr, indices, values, row_block, dense, row_dense, dense_offset, eps, out):
    ddim = dense.shape[1]
    for r in range(row_block.shape[0]):
        b = row_block[r]
        a = 0.0
        for k in range(indptr[b], indptr[b + 1]):
            a += w[indices[k]] * values[k]
        d = row_dense[r]
        if d >= 0:
            for j in range(ddim):
                v = dense[d, j]
                if v != 0.0:
                    a += w[dense_offset + j] * v
        p = 1.0 / (1.0 + math.exp(-a))
        if p < eps:
            p = eps
        elif p > 1.0 - eps:
            p = 1.0 - eps
        out[r] = p


def _weights_loop(z, n, alpha, beta, l1, l2, out):
    for i in range(z.shape[0]):
        zi = z[i]
        if abs(zi) <= l1:
            out[i] = 0.0
        else:
            sg = 1.0 if zi > 0.0 else -1.0
            out[i] = -(zi - sg * l1) / ((beta + math.sqrt(n[i])) / alpha + l2)


_fit_jit = _accel.njit(_fit_loop)
_predict_jit = _accel.njit(_predict_loop)
_weights_jit = _accel.njit(_weights_loop)


# --- numpy fallback -------------------------------------------------------

def weights_numpy(z, n, alpha, beta, l1, l2):
    with np.errstate(invalid="ignore", divide="ignore"):
        w = -(z - np.sign(z) * l1) / ((beta + np.sqrt(n)) / alpha + l2)
    w[np.abs(z) <= l1] = 0.0
    return w


def _row_entries(r, indptr, indices, values, row_block, dense, row_dense, dense_offset):
    b = row_block[r]
    idx = indices[indptr[b]:indptr[b + 1]]
    val = values[indptr[b]:indptr[b + 1]]
    d = row_dense[r]
    if d >= 0:
        dv = dense[d].astype(np.float64)
        nz = np.flatnonzero(dv)
        idx = np.concatenate([idx, dense_offset + nz])
        val = np.concatenate([val, dv[nz]])
    return idx, val


def fit_numpy(z, n, indptr, indices, values, row_block, dense, row_dense, dense_offset,
              labels, weights, order, alpha, beta, l1, l2, eps):
    loss = 0.0
    wsum = 0.0
    for r in order:
        idx, val = _row_entries(r, indptr, indices, values, row_block, dense, row_dense, dense_offset)
        zi = z[idx]
        ni = n[idx]
        w = weights_numpy(zi, ni, alpha, beta, l1, l2)
        a = float(np.dot(w, val))
        p = 1.0 / (1.0 + math.exp(-a)) if a > -709.0 else 0.0
        p = min(max(p, eps), 1.0 - eps)
        y = labels[r]
        wt = weights[r]
        loss -= wt * (math.log(p) if y > 0.5 else math.log(1.0 - p))
        wsum += wt
        with np.errstate(over="ignore", invalid="ignore"):  # caught by the finiteness check
            g = wt * (p - y) * val
            nn = ni + g * g
            z[idx] = zi + g - (np.sqrt(nn) - np.sqrt(ni)) / alpha * w
        n[idx] = nn
        if not (np.isfinite(z[idx]).all() and np.isfinite(n[idx]).all()):
            return loss, wsum, int(r)
    return loss, wsum, -1


def predict_numpy(w, indptr, indices, values, row_block, dense, row_dense, dense_offset, eps):
    nblocks = indptr.shape[0] - 1
    owner = np.repeat(np.arange(nblocks), np.diff(indptr))
    block_margin = np.bincount(owner, weights=w[indices] * values, minlength=nblocks)
    a = block_margin[row_block]
    has = row_dense >= 0
    if has.any() and dense.shape[1]:
        wd = w[dense_offset:dense_offset + dense.shape[1]]
        a[has] += dense[row_dense[has]].astype(np.float64) @ wd
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-a))
    return np.clip(p, eps, 1.0 - eps)


# --- dispatch -------------------------------------------------------------

def fit_rows(z, n, indptr, indices, values, row_block, dense, row_dense, dense_offset,
             labels, weights, order, alpha, beta, l1, l2, eps, use_numba=None):
    """Run one pass of per-coordinate FTRL-Proximal updates in ``order``.

    Mutates ``z`` and ``n`` in place.  Returns ``(loss_sum, weight_sum,
    bad_row)``; ``bad_row`` is ``-1`` unless an update went non-finite.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba:
        width = int(np.diff(indptr).max(initial=0)) + dense.shape[1]
        wbuf = np.empty(max(width, 1), dtype=np.float64)
        loss, wsum, bad = _fit_jit(z, n, indptr, indices, values, row_block, dense, row_dense,
                                   dense_offset, labels, weights, order, alpha, beta, l1, l2,
                                   eps, wbuf)
        return float(loss), float(wsum), int(bad)
    return fit_numpy(z, n, indptr, indices, values, row_block, dense, row_dense, dense_offset,
                     labels, weights, order, alpha, beta, l1, l2, eps)


def closed_form_weights(z, n, alpha, beta, l1, l2, use_numba=None):
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba:
        out = np.empty_like(z)
        _weights_jit(z, n, alpha, beta, l1, l2, out)
        return out
    return weights_numpy(z, n, alpha, beta, l1, l2)


def predict_rows(w, indptr, indices, values, row_block, dense, row_dense, dense_offset, eps,
                 use_numba=None):
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba:
        out = np.empty(row_block.shape[0], dtype=np.float64)
        _predict_jit(w, indptr, indices, values, row_block, dense, row_dense, dense_offset, eps, out)
        return out
    return predict_numpy(w, indptr, indices, values, row_block, dense, row_dense, dense_offset, eps)
