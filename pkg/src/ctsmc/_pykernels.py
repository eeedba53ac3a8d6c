"""Pure-numpy implementations of the hot loops.

Signatures mirror the compiled ``_kernels`` module exactly; ``kernels``
selects one of the two at import time.
"""
import numpy as np

__all__ = [
    "table_eval",
    "packed_eval",
    "forward_interval",
    "backward_interval",
    "pair_sums",
]


def _hermite(y0, d0, y1, d1, t, width):
    t2 = t * t
    t3 = t2 * t
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + t) * width * d0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * width * d1
    )


def _eval(params, lv, ld, uv, ud, s):
    s_lo, s_sw, du, ds, head, log_head = params
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape)
    nl, nu = lv.shape[0], uv.shape[0]

    low = s < s_lo
    if np.any(low):
        sl = s[low]
        if log_head:
            with np.errstate(divide="ignore"):
                out[low] = lv[0] + head * np.log(sl / s_lo)
        else:
            out[low] = np.where(sl > 0, lv[0] * (np.maximum(sl, 0) / s_lo) ** head, 0.0)

    mid = (~low) & (s < s_sw)
    if np.any(mid):
        u = np.log(s[mid] / s_lo) / du
        i = np.minimum(np.floor(u).astype(np.intp), nl - 2)
        t = u - i
        out[mid] = _hermite(lv[i], ld[i], lv[i + 1], ld[i + 1], t, du)

    hi = s >= s_sw
    if np.any(hi):
        x = (s[hi] - s_sw) / ds
        i = np.floor(x).astype(np.intp)
        over = i >= nu - 1
        i = np.minimum(i, nu - 2)
        t = x - i
        val = _hermite(uv[i], ud[i], uv[i + 1], ud[i + 1], t, ds)
        if np.any(over):
            xe = s[hi][over] - s_sw - ds * (nu - 1)
            val[over] = uv[-1] + ud[-1] * xe
        out[hi] = val
    return out


def table_eval(table, s):
    return _eval(table.params(), table.log_vals, table.log_ders, table.uni_vals, table.uni_ders, s)


def packed_eval(packed, x, s):
    """Evaluate row ``x`` of a packed table set at lags ``s``."""
    p = packed
    return _eval(
        tuple(p.params[x]), p.log_vals[x, : p.n_log[x]], p.log_ders[x, : p.n_log[x]],
        p.uni_vals[x, : p.n_uni[x]], p.uni_ders[x, : p.n_uni[x]], s,
    )


def _solve_small(d, M, a, transpose_side=False):
    """Solve (I - diag(d) M) psi = a, or (I - M diag(d)) psi = M a."""
    n = a.shape[0]
    if transpose_side:
        return np.linalg.solve(np.eye(n) - M * d[None, :], M @ a)
    return np.linalg.solve(np.eye(n) - d[:, None] * M, a)


def forward_interval(t, n0, n1, Mf, Ftab, Itab, A, phi_post, psi, phi, alpha_raw, bpsi, bp, bcell, trunc, lattice=None):
    """Step nodes n0+1..n1 of the forward current equations.

    ``A`` holds cell averages of the entry current in the running frame; on
    return cells n0..n1-1 are filled.  ``phi_post[:, n0]`` must be set.
    ``bcell`` is added to each cell average: the exact boundary part minus
    its two-node average.  ``lattice`` (piece starts, piece of each node,
    step) lets the compiled kernel reuse lag values; it is ignored here.
    """
    S = Mf.shape[0]
    a = np.empty(S)
    d = np.empty(S)
    wL = np.empty(S)
    accL = np.empty(S)
    for n in range(n0 + 1, n1 + 1):
        tn = t[n]
        for x in range(S):
            lo = int(np.searchsorted(t, tn - trunc[x], side="left")) - 1
            lo = min(max(lo, 0), n - 1)
            lags = tn - t[lo:n]
            Fv = packed_eval(Ftab, x, lags)
            Iv = packed_eval(Itab, x, lags)
            # cells lo..n-2 from history, last entry is the self cell
            wF_hist = Fv[:-1] - Fv[1:]
            wI_hist = Iv[:-1] - Iv[1:]
            hist = A[x, lo : n - 1]
            accF = float(np.dot(wF_hist, hist))
            accL[x] = float(np.dot(wI_hist, hist))
            d[x] = 0.5 * Fv[-1]
            wL[x] = Iv[-1]
            a[x] = accF + d[x] * (phi_post[x, n - 1] + 2.0 * bcell[x, n - 1]) + bpsi[x, n]
        ps = _solve_small(d, Mf, a)
        ph = Mf @ ps
        for x in range(S):
            A[x, n - 1] = 0.5 * (phi_post[x, n - 1] + ph[x]) + bcell[x, n - 1]
            alpha_raw[x, n] = accL[x] + wL[x] * A[x, n - 1] + bp[x, n]
            psi[x, n] = ps[x]
            phi[x, n] = ph[x]
            phi_post[x, n] = ph[x]


def backward_interval(t, n0, n1, Mb, Ftab, Itab, B, psi_node, phi_plus, psi_plus, beta_plus, bphi, bp, trunc, lattice=None):
    """Step nodes n1-1 down to n0 of the backward current equations.

    Right-limit values are written to ``*_plus``; interior nodes also get
    ``psi_node``.  ``psi_node[:, n1]`` must be set.  ``lattice`` as in
    :func:`forward_interval`.
    """
    S = Mb.shape[0]
    N = t.shape[0]
    a = np.empty(S)
    d = np.empty(S)
    wL = np.empty(S)
    accL = np.empty(S)
    for n in range(n1 - 1, n0 - 1, -1):
        tn = t[n]
        for x in range(S):
            hi = int(np.searchsorted(t, tn + trunc[x], side="right"))
            hi = max(min(hi, N - 1), n + 1)
            lags = t[n + 1 : hi + 1] - tn
            Fv = packed_eval(Ftab, x, lags)
            Iv = packed_eval(Itab, x, lags)
            wF_hist = Fv[1:] - Fv[:-1]
            wI_hist = Iv[1:] - Iv[:-1]
            fut = B[x, n + 1 : hi]
            accF = float(np.dot(wF_hist, fut))
            accL[x] = float(np.dot(wI_hist, fut))
            d[x] = 0.5 * Fv[0]
            wL[x] = Iv[0]
            a[x] = accF + d[x] * psi_node[x, n + 1] + bphi[x, n]
        ps = _solve_small(d, Mb, a, transpose_side=True)
        ph = a + d * ps
        for x in range(S):
            B[x, n] = 0.5 * (ps[x] + psi_node[x, n + 1])
            beta_plus[x, n] = accL[x] + wL[x] * B[x, n] + bp[x, n]
            phi_plus[x, n] = ph[x]
            psi_plus[x, n] = ps[x]
            if n > n0:
                psi_node[x, n] = ps[x]


def pair_sums(t, Itab, A, B, seg, lu_seg, trunc, out, inn):
    """Two-sided sojourn sums over cell pairs c < c'.

    P[c, c'] = A[c] * K[c, c'] * exp(lu[c'] - lu[c]) * B[c'] with
    K the double integral of f over the cell pair.  ``out[c]`` gets the row
    sums, ``inn[c']`` the column sums.
    """
    S, C = A.shape
    out[:] = 0.0
    inn[:] = 0.0
    for x in range(S):
        lu = lu_seg[x, seg]
        for c in range(C - 1):
            hi = int(np.searchsorted(t, t[c + 1] + trunc[x], side="right"))
            hi = max(min(hi, C), c + 2)
            js = np.arange(c + 1, hi + 1)
            lag0 = t[js] - t[c]
            lag1 = t[js] - t[c + 1]
            q0 = lag0 - packed_eval(Itab, x, lag0)
            q1 = lag1 - packed_eval(Itab, x, lag1)
            K = (q0[1:] - q0[:-1]) - (q1[1:] - q1[:-1])
            cp = slice(c + 1, hi)
            P = A[x, c] * K * np.exp(lu[cp] - lu[c]) * B[x, cp]
            out[x, c] += P.sum()
            inn[x, cp] += P
