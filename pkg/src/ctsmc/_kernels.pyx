# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""
import numpy as np

from cpython.mem cimport PyMem_Free, PyMem_Malloc
from libc.math cimport exp, fabs, floor, log, pow
from libc.stdlib cimport free, realloc


cdef struct Tab:
    double s_lo
    double s_sw
    double du
    double ds
    double head
    int log_head
    int nl
    int nu
    const double* lv
    const double* ld
    const double* uv
    const double* ud


cdef inline double _herm(double y0, double d0, double y1, double d1, double t, double w) noexcept nogil:
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * w * d0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * w * d1)


cdef inline double tab_eval(const Tab* tb, double s) noexcept nogil:
    cdef double u, x, t
    cdef int i
    if s < tb.s_lo:
        if tb.log_head:
            return tb.lv[0] + tb.head * log(s / tb.s_lo)
        if s <= 0:
            return 0.0
        return tb.lv[0] * pow(s / tb.s_lo, tb.head)
    if s < tb.s_sw:
        u = log(s / tb.s_lo) / tb.du
        i = <int>floor(u)
        if i > tb.nl - 2:
            i = tb.nl - 2
        t = u - i
        return _herm(tb.lv[i], tb.ld[i], tb.lv[i + 1], tb.ld[i + 1], t, tb.du)
    x = (s - tb.s_sw) / tb.ds
    i = <int>floor(x)
    if i >= tb.nu - 1:
        return tb.uv[tb.nu - 1] + tb.ud[tb.nu - 1] * (s - tb.s_sw - tb.ds * (tb.nu - 1))
    t = x - i
    return _herm(tb.uv[i], tb.ud[i], tb.uv[i + 1], tb.ud[i + 1], t, tb.ds)


cdef class _Packed:
    cdef object keep
    cdef Tab* tabs
    cdef int S

    def __cinit__(self, packed):
        cdef int x
        cdef double[:, ::1] lv = packed.log_vals
        cdef double[:, ::1] ld = packed.log_ders
        cdef double[:, ::1] uv = packed.uni_vals
        cdef double[:, ::1] ud = packed.uni_ders
        cdef double[:, ::1] pr = packed.params
        self.keep = packed
        self.S = pr.shape[0]
        self.tabs = <Tab*> PyMem_Malloc(self.S * sizeof(Tab))
        for x in range(self.S):
            self.tabs[x].s_lo = pr[x, 0]
            self.tabs[x].s_sw = pr[x, 1]
            self.tabs[x].du = pr[x, 2]
            self.tabs[x].ds = pr[x, 3]
            self.tabs[x].head = pr[x, 4]
            self.tabs[x].log_head = <int>pr[x, 5]
            self.tabs[x].nl = packed.n_log[x]
            self.tabs[x].nu = packed.n_uni[x]
            self.tabs[x].lv = &lv[x, 0]
            self.tabs[x].ld = &ld[x, 0]
            self.tabs[x].uv = &uv[x, 0]
            self.tabs[x].ud = &ud[x, 0]

    def __dealloc__(self):
        PyMem_Free(self.tabs)



def packed_eval(packed, int x, s):
    cdef _Packed P = _Packed(packed)
    cdef double[::1] sv = np.ascontiguousarray(s, dtype=float).ravel()
    out = np.empty(sv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(sv.shape[0]):
        ov[i] = tab_eval(&P.tabs[x], sv[i])
    return out.reshape(np.shape(s))


cdef int _solve(double* Mat, double* b, int n) noexcept nogil:
    """In-place Gaussian elimination with partial pivoting (row-major n x n)."""
    cdef int i, j, k, p
    cdef double m, tmp
    for k in range(n):
        p = k
        for i in range(k + 1, n):
            if fabs(Mat[i * n + k]) > fabs(Mat[p * n + k]):
                p = i
        if Mat[p * n + k] == 0.0:
            return -1
        if p != k:
            for j in range(n):
                tmp = Mat[k * n + j]; Mat[k * n + j] = Mat[p * n + j]; Mat[p * n + j] = tmp
            tmp = b[k]; b[k] = b[p]; b[p] = tmp
        for i in range(k + 1, n):
            m = Mat[i * n + k] / Mat[k * n + k]
            for j in range(k, n):
                Mat[i * n + j] -= m * Mat[k * n + j]
            b[i] -= m * b[k]
    for i in range(n - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, n):
            tmp -= Mat[i * n + j] * b[j]
        b[i] = tmp / Mat[i * n + i]
    return 0


cdef Py_ssize_t _lower(const double[::1] t, Py_ssize_t hi, double v) noexcept nogil:
    # first index j in [0, hi] with t[j] >= v
    cdef Py_ssize_t lo = 0, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if t[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _upper(const double[::1] t, Py_ssize_t lo, double v) noexcept nogil:
    # first index j in [lo, N] with t[j] > v
    cdef Py_ssize_t hi = t.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if t[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


# Lag values shared by a whole grid piece. Nodes of piece p sit at
# t = a_p + i*h, so for a node n in piece q every lag to a node of piece p
# is (a_q - a_p) + k*h up to rounding: one table evaluation per (p, k)
# replaces one per (n, c).
DEF LAG_BUDGET = 4194304


cdef class _Lags:
    cdef const double[::1] t
    cdef const Py_ssize_t[::1] starts
    cdef const Py_ssize_t[::1] pid
    cdef double step
    cdef int S
    cdef int fwd
    cdef Py_ssize_t q, total, cap
    cdef double* F
    cdef double* I
    cdef Py_ssize_t[::1] off

    def __cinit__(self, const double[::1] t, lattice, int S, int forward):
        self.t = t
        self.starts, self.pid, self.step = lattice
        self.S = S
        self.fwd = forward
        self.q = -1
        self.cap = 0
        self.F = NULL
        self.I = NULL
        self.off = np.zeros(self.pid.shape[0], dtype=np.intp)

    def __dealloc__(self):
        free(self.F)
        free(self.I)

    cdef bint build(self, Py_ssize_t q, Py_ssize_t c_lo, Py_ssize_t c_hi, _Packed FT, _Packed IT) noexcept nogil:
        """Fill lags from piece q to the pieces covering nodes c_lo..c_hi; False if over budget."""
        cdef Py_ssize_t p, p_lo = self.pid[c_lo], p_hi = self.pid[c_hi], k, kmin, kmax, c, tot = 0, b
        cdef Py_ssize_t nq = self.starts[q + 1] - self.starts[q], np_
        cdef double D, s
        cdef int x
        cdef double* buf
        for p in range(p_lo, p_hi + 1):
            np_ = self.starts[p + 1] - self.starts[p]
            if self.fwd:
                kmin, kmax = (1 if p == q else 1 - np_), nq - 1
            else:
                kmin, kmax = (1 if p == q else 1 - nq), np_ - 1
            tot += kmax - kmin + 1
        self.q = -1
        if tot * self.S > LAG_BUDGET:
            return False
        if tot * self.S > self.cap:
            buf = <double*> realloc(self.F, tot * self.S * sizeof(double))
            if buf == NULL:
                return False
            self.F = buf
            buf = <double*> realloc(self.I, tot * self.S * sizeof(double))
            if buf == NULL:
                return False
            self.I = buf
            self.cap = tot * self.S
        self.total = tot
        b = 0
        for p in range(p_lo, p_hi + 1):
            np_ = self.starts[p + 1] - self.starts[p]
            if self.fwd:
                kmin, kmax = (1 if p == q else 1 - np_), nq - 1
                D = self.t[self.starts[q]] - self.t[self.starts[p]]
            else:
                kmin, kmax = (1 if p == q else 1 - nq), np_ - 1
                D = self.t[self.starts[p]] - self.t[self.starts[q]]
            for x in range(self.S):
                for k in range(kmin, kmax + 1):
                    s = D + k * self.step
                    self.F[x * tot + b + k - kmin] = tab_eval(&FT.tabs[x], s)
                    self.I[x * tot + b + k - kmin] = tab_eval(&IT.tabs[x], s)
            for c in range(self.starts[p], self.starts[p + 1]):
                # forward reads off[c] + m (k = m - i), backward off[c] - m (k = i - m)
                if self.fwd:
                    self.off[c] = b - kmin - (c - self.starts[p])
                else:
                    self.off[c] = b - kmin + (c - self.starts[p])
            b += kmax - kmin + 1
        self.q = q
        return True


def forward_interval(const double[::1] t, Py_ssize_t n0, Py_ssize_t n1, const double[:, ::1] Mf,
                     Ftab, Itab, double[:, ::1] A, double[:, ::1] phi_post, double[:, ::1] psi,
                     double[:, ::1] phi, double[:, ::1] alpha_raw, const double[:, ::1] bpsi,
                     const double[:, ::1] bp, const double[:, ::1] bcell, const double[::1] trunc,
                     lattice=None):
    cdef _Packed FT = _Packed(Ftab)
    cdef _Packed IT = _Packed(Itab)
    cdef int S = Mf.shape[0]
    cdef bint have_lat = lattice is not None, cached = False
    cdef _Lags L = _Lags(t, lattice, S, 1) if have_lat else None
    cdef Py_ssize_t q, last_q = -1, m = 0, lo_min, c_hi, base = 0
    cdef double tmax = np.max(trunc)
    cdef double[::1] a = np.empty(S)
    cdef double[::1] d = np.empty(S)
    cdef double[::1] wL = np.empty(S)
    cdef double[::1] accL = np.empty(S)
    cdef double[::1] ps = np.empty(S)
    cdef double[::1] Mat = np.empty(S * S)
    cdef Py_ssize_t n, c, lo
    cdef int x, y
    cdef double tn, accF, aL, Fp, Ip, Fn, In_, h, ph
    with nogil:
        for n in range(n0 + 1, n1 + 1):
            tn = t[n]
            if have_lat:
                q = L.pid[n]
                if q != last_q:
                    last_q = q
                    lo_min = _lower(t, n, tn - tmax) - 1
                    lo_min = min(max(lo_min, 0), n - 1)
                    c_hi = max(n - 1, min(n1, L.starts[q + 1] - 1) - 1)
                    cached = L.build(q, lo_min, c_hi, FT, IT)
                m = n - L.starts[q]
            for x in range(S):
                lo = _lower(t, n, tn - trunc[x]) - 1
                if lo < 0:
                    lo = 0
                if lo > n - 1:
                    lo = n - 1
                if cached:
                    base = x * L.total + m
                    Fp = L.F[base + L.off[lo]]
                    Ip = L.I[base + L.off[lo]]
                else:
                    Fp = tab_eval(&FT.tabs[x], tn - t[lo])
                    Ip = tab_eval(&IT.tabs[x], tn - t[lo])
                accF = 0.0
                aL = 0.0
                for c in range(lo, n - 1):
                    if cached:
                        Fn = L.F[base + L.off[c + 1]]
                        In_ = L.I[base + L.off[c + 1]]
                    else:
                        Fn = tab_eval(&FT.tabs[x], tn - t[c + 1])
                        In_ = tab_eval(&IT.tabs[x], tn - t[c + 1])
                    h = A[x, c]
                    accF += (Fp - Fn) * h
                    aL += (Ip - In_) * h
                    Fp = Fn
                    Ip = In_
                accL[x] = aL
                d[x] = 0.5 * Fp
                wL[x] = Ip
                a[x] = accF + d[x] * (phi_post[x, n - 1] + 2.0 * bcell[x, n - 1]) + bpsi[x, n]
            for x in range(S):
                ps[x] = a[x]
                for y in range(S):
                    Mat[x * S + y] = (1.0 if x == y else 0.0) - d[x] * Mf[x, y]
            if _solve(&Mat[0], &ps[0], S) != 0:
                with gil:
                    raise FloatingPointError("singular implicit step")
            for x in range(S):
                ph = 0.0
                for y in range(S):
                    ph += Mf[x, y] * ps[y]
                A[x, n - 1] = 0.5 * (phi_post[x, n - 1] + ph) + bcell[x, n - 1]
                alpha_raw[x, n] = accL[x] + wL[x] * A[x, n - 1] + bp[x, n]
                psi[x, n] = ps[x]
                phi[x, n] = ph
                phi_post[x, n] = ph


def backward_interval(const double[::1] t, Py_ssize_t n0, Py_ssize_t n1, const double[:, ::1] Mb,
                      Ftab, Itab, double[:, ::1] B, double[:, ::1] psi_node, double[:, ::1] phi_plus,
                      double[:, ::1] psi_plus, double[:, ::1] beta_plus, const double[:, ::1] bphi,
                      const double[:, ::1] bp, const double[::1] trunc, lattice=None):
    cdef _Packed FT = _Packed(Ftab)
    cdef _Packed IT = _Packed(Itab)
    cdef int S = Mb.shape[0]
    cdef bint have_lat = lattice is not None, cached = False
    cdef _Lags L = _Lags(t, lattice, S, 0) if have_lat else None
    cdef Py_ssize_t q, last_q = -1, m = 0, c_lo, hi_max, base = 0
    cdef double tmax = np.max(trunc)
    cdef Py_ssize_t N = t.shape[0]
    cdef double[::1] a = np.empty(S)
    cdef double[::1] d = np.empty(S)
    cdef double[::1] wL = np.empty(S)
    cdef double[::1] accL = np.empty(S)
    cdef double[::1] ps = np.empty(S)
    cdef double[::1] Mat = np.empty(S * S)
    cdef Py_ssize_t n, c, hi
    cdef int x, y
    cdef double tn, accF, aL, Fp, Ip, Fn, In_, h, F0, I0
    with nogil:
        for n in range(n1 - 1, n0 - 1, -1):
            tn = t[n]
            if have_lat:
                q = L.pid[n]
                if q != last_q:
                    last_q = q
                    hi_max = _upper(t, n, tn + tmax)
                    hi_max = max(min(hi_max, N - 1), n + 1)
                    c_lo = min(n + 1, max(n0, L.starts[q]) + 1)
                    cached = L.build(q, c_lo, hi_max, FT, IT)
                m = n - L.starts[q]
            for x in range(S):
                hi = _upper(t, n, tn + trunc[x])
                if hi > N - 1:
                    hi = N - 1
                if hi < n + 1:
                    hi = n + 1
                if cached:
                    base = x * L.total - m
                    F0 = L.F[base + L.off[n + 1]]
                    I0 = L.I[base + L.off[n + 1]]
                else:
                    F0 = tab_eval(&FT.tabs[x], t[n + 1] - tn)
                    I0 = tab_eval(&IT.tabs[x], t[n + 1] - tn)
                Fp = F0
                Ip = I0
                accF = 0.0
                aL = 0.0
                for c in range(n + 1, hi):
                    if cached:
                        Fn = L.F[base + L.off[c + 1]]
                        In_ = L.I[base + L.off[c + 1]]
                    else:
                        Fn = tab_eval(&FT.tabs[x], t[c + 1] - tn)
                        In_ = tab_eval(&IT.tabs[x], t[c + 1] - tn)
                    h = B[x, c]
                    accF += (Fn - Fp) * h
                    aL += (In_ - Ip) * h
                    Fp = Fn
                    Ip = In_
                accL[x] = aL
                d[x] = 0.5 * F0
                wL[x] = I0
                a[x] = accF + d[x] * psi_node[x, n + 1] + bphi[x, n]
            # (I - Mb diag(d)) psi = Mb a
            for x in range(S):
                ps[x] = 0.0
                for y in range(S):
                    ps[x] += Mb[x, y] * a[y]
                    Mat[x * S + y] = (1.0 if x == y else 0.0) - Mb[x, y] * d[y]
            if _solve(&Mat[0], &ps[0], S) != 0:
                with gil:
                    raise FloatingPointError("singular implicit step")
            for x in range(S):
                B[x, n] = 0.5 * (ps[x] + psi_node[x, n + 1])
                beta_plus[x, n] = accL[x] + wL[x] * B[x, n] + bp[x, n]
                phi_plus[x, n] = a[x] + d[x] * ps[x]
                psi_plus[x, n] = ps[x]
                if n > n0:
                    psi_node[x, n] = ps[x]


def pair_sums(const double[::1] t, Itab, const double[:, ::1] A, const double[:, ::1] B,
              const Py_ssize_t[::1] seg, const double[:, ::1] lu_seg, const double[::1] trunc,
              double[:, ::1] out, double[:, ::1] inn):
    cdef _Packed IT = _Packed(Itab)
    cdef int S = A.shape[0]
    cdef Py_ssize_t C = A.shape[1]
    cdef Py_ssize_t c, cp, hi, cur_seg
    cdef int x
    cdef double q0p, q1p, q0n, q1n, lag0, lag1, K, P, fac, rowsum, ac
    out[:, :] = 0.0
    inn[:, :] = 0.0
    with nogil:
        for x in range(S):
            for c in range(C - 1):
                hi = _upper(t, c + 1, t[c + 1] + trunc[x])
                if hi > C:
                    hi = C
                if hi < c + 2:
                    hi = c + 2
                ac = A[x, c]
                lag0 = t[c + 1] - t[c]
                q0p = lag0 - tab_eval(&IT.tabs[x], lag0)
                q1p = 0.0
                cur_seg = -1
                fac = 0.0
                rowsum = 0.0
                for cp in range(c + 1, hi):
                    lag0 = t[cp + 1] - t[c]
                    lag1 = t[cp + 1] - t[c + 1]
                    q0n = lag0 - tab_eval(&IT.tabs[x], lag0)
                    q1n = lag1 - tab_eval(&IT.tabs[x], lag1)
                    K = (q0n - q0p) - (q1n - q1p)
                    q0p = q0n
                    q1p = q1n
                    if seg[cp] != cur_seg:
                        cur_seg = seg[cp]
                        fac = exp(lu_seg[x, cur_seg] - lu_seg[x, seg[c]])
                    P = ac * K * fac * B[x, cp]
                    rowsum += P
                    inn[x, cp] += P
                out[x, c] += rowsum
