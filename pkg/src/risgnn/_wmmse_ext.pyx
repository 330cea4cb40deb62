# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled WMMSE kernel. Same algorithm as _wmmse_py, step for step."""
import numpy as np
from libc.math cimport sqrt, log1p, isfinite

ctypedef double complex cplx

cdef int BISECTION_STEPS = 200
cdef double LN2 = 0.6931471805599453


cdef inline double abs2(cplx z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline cplx cj(cplx z) noexcept nogil:
    return z.conjugate()


cdef double wsr_of(const cplx[:, ::1] H, cplx[:, ::1] F, const double[::1] w,
                   double noise, int K, int N) noexcept nogil:
    cdef int k, j, n
    cdef cplx s
    cdef double total = 0.0, sig, interf
    for k in range(K):
        sig = 0.0
        interf = noise
        for j in range(K):
            s = 0.0
            for n in range(N):
                s = s + H[k, n] * F[n, j]
            if j == k:
                sig = abs2(s)
            else:
                interf += abs2(s)
        total += w[k] * log1p(sig / interf)
    return total / LN2


cdef double power_of(cplx[:, ::1] F, int N, int K) noexcept nogil:
    cdef int n, k
    cdef double p = 0.0
    for n in range(N):
        for k in range(K):
            p += abs2(F[n, k])
    return p


cdef int gauss_solve(cplx[:, ::1] A, cplx[:, ::1] B, int n, int m) noexcept nogil:
    """Solve A X = B in place (X lands in B); -1 on an exactly zero pivot."""
    cdef int col, r, c, piv
    cdef double best, cand
    cdef cplx f, tmp, inv, s
    for col in range(n):
        piv = col
        best = abs2(A[col, col])
        for r in range(col + 1, n):
            cand = abs2(A[r, col])
            if cand > best:
                best = cand
                piv = r
        if best == 0.0:
            return -1
        if piv != col:
            for c in range(n):
                tmp = A[col, c]
                A[col, c] = A[piv, c]
                A[piv, c] = tmp
            for c in range(m):
                tmp = B[col, c]
                B[col, c] = B[piv, c]
                B[piv, c] = tmp
        inv = 1.0 / A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] * inv
            if f.real != 0.0 or f.imag != 0.0:
                for c in range(col, n):
                    A[r, c] = A[r, c] - f * A[col, c]
                for c in range(m):
                    B[r, c] = B[r, c] - f * B[col, c]
    for col in range(n - 1, -1, -1):
        for c in range(m):
            s = B[col, c]
            for r in range(col + 1, n):
                s = s - A[col, r] * B[r, c]
            s = s / A[col, col]
            if not (isfinite(s.real) and isfinite(s.imag)):
                return -1
            B[col, c] = s
    return 0


cdef int transmit(const cplx[:, ::1] H, double[::1] d, cplx[::1] b, double mu,
                  int K, int N, int[::1] act, int nact,
                  cplx[:, ::1] A, cplx[:, ::1] B, cplx[:, ::1] F) noexcept nogil:
    cdef int p, q, n, r, c, kp, kq
    cdef cplx s
    for n in range(N):
        for q in range(K):
            F[n, q] = 0.0
    if nact == 0:
        return 0
    if nact <= N:
        # user-dimension form: F_a = H_a^H (D G + mu I)^-1 diag(b)
        for p in range(nact):
            kp = act[p]
            for q in range(nact):
                kq = act[q]
                s = 0.0
                for n in range(N):
                    s = s + H[kp, n] * cj(H[kq, n])
                A[p, q] = d[kp] * s
                B[p, q] = 0.0
            A[p, p] = A[p, p] + mu
            B[p, p] = b[kp]
        if gauss_solve(A, B, nact, nact) < 0:
            return -1
        for q in range(nact):
            kq = act[q]
            for n in range(N):
                s = 0.0
                for p in range(nact):
                    s = s + cj(H[act[p], n]) * B[p, q]
                F[n, kq] = s
    else:
        for r in range(N):
            for c in range(N):
                s = 0.0
                for p in range(nact):
                    kp = act[p]
                    s = s + d[kp] * cj(H[kp, r]) * H[kp, c]
                A[r, c] = s
            A[r, r] = A[r, r] + mu
            for q in range(nact):
                B[r, q] = cj(H[act[q], r]) * b[act[q]]
        if gauss_solve(A, B, N, nact) < 0:
            return -1
        for q in range(nact):
            for n in range(N):
                F[n, act[q]] = B[n, q]
    return 0


cdef void init_beamformer(const cplx[:, ::1] H, double p_max, int K, int N,
                          cplx[:, ::1] F) noexcept nogil:
    # full budget split over users with a nonzero channel
    cdef int k, n, live = 0
    cdef double nrm
    for k in range(K):
        for n in range(N):
            if abs2(H[k, n]) > 0.0:
                live += 1
                break
    for k in range(K):
        nrm = 0.0
        for n in range(N):
            nrm += abs2(H[k, n])
        nrm = sqrt(nrm)
        for n in range(N):
            if nrm > 0.0:
                F[n, k] = cj(H[k, n]) * (sqrt(p_max / live) / nrm)
            else:
                F[n, k] = 0.0


cdef void copy_into(cplx[:, ::1] dst, cplx[:, ::1] src, int N, int K) noexcept nogil:
    cdef int n, k
    for n in range(N):
        for k in range(K):
            dst[n, k] = src[n, k]


cdef int run(const cplx[:, ::1] H, const double[::1] w, double noise, double p_max,
             int max_iters, double tol, cplx[:, ::1] F, double[::1] hist,
             cplx[:, ::1] Fn, cplx[:, ::1] Fm, cplx[:, ::1] A, cplx[:, ::1] B,
             cplx[::1] sig, double[::1] interf, double[::1] d, cplx[::1] b,
             int[::1] act) noexcept nogil:
    cdef int K = H.shape[0], N = H.shape[1]
    cdef int it, k, j, n, nact, step, ok
    cdef cplx s, g
    cdef double den, W, lo, hi, mid, acc, hn
    hist[0] = wsr_of(H, F, w, noise, K, N)
    for it in range(max_iters):
        for k in range(K):
            interf[k] = noise
            for j in range(K):
                s = 0.0
                for n in range(N):
                    s = s + H[k, n] * F[n, j]
                if j == k:
                    sig[k] = s
                else:
                    interf[k] += abs2(s)
        nact = 0
        for k in range(K):
            den = interf[k] + abs2(sig[k])
            g = cj(sig[k]) / den
            W = den / interf[k]
            d[k] = w[k] * W * abs2(g)
            b[k] = w[k] * W * cj(g)
            if d[k] > 0.0:
                act[nact] = k
                nact += 1

        ok = transmit(H, d, b, 0.0, K, N, act, nact, A, B, Fn)
        if ok < 0 or power_of(Fn, N, K) > p_max:
            acc = 0.0
            for k in range(K):
                hn = 0.0
                for n in range(N):
                    hn += abs2(H[k, n])
                acc += abs2(b[k]) * hn
            lo = 0.0
            hi = sqrt(acc / p_max)
            transmit(H, d, b, hi, K, N, act, nact, A, B, Fn)
            for step in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                ok = transmit(H, d, b, mid, K, N, act, nact, A, B, Fm)
                if ok == 0 and power_of(Fm, N, K) <= p_max:
                    hi = mid
                    copy_into(Fn, Fm, N, K)
                else:
                    lo = mid
        copy_into(F, Fn, N, K)
        hist[it + 1] = wsr_of(H, F, w, noise, K, N)
        if abs(hist[it + 1] - hist[it]) <= tol * abs(hist[it + 1]):
            return it + 1
    return max_iters


def _buffers(int K, int N):
    cdef int n = max(K, N)
    return (np.zeros((N, K), complex), np.zeros((N, K), complex),
            np.zeros((n, n), complex), np.zeros((n, n), complex),
            np.zeros(K, complex), np.zeros(K), np.zeros(K), np.zeros(K, complex),
            np.zeros(K, np.intc))


def initial_beamformer(H, double p_max):
    cdef const cplx[:, ::1] Hv = np.ascontiguousarray(H, dtype=complex)
    F = np.zeros((Hv.shape[1], Hv.shape[0]), complex)
    init_beamformer(Hv, p_max, Hv.shape[0], Hv.shape[1], F)
    return F


def wmmse(H, weights, double noise, double p_max, int max_iters=100, double tol=1e-6, F0=None):
    """Run WMMSE on fixed effective channels H (K x N_t); returns (F, history)."""
    H = np.ascontiguousarray(H, dtype=complex)
    cdef const cplx[:, ::1] Hv = H
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=float)
    cdef int K = Hv.shape[0], N = Hv.shape[1]
    if F0 is None:
        F = initial_beamformer(H, p_max)
    else:
        F = np.array(F0, dtype=complex, order="C")
    hist = np.zeros(max_iters + 1)
    Fn, Fm, A, B, sig, interf, d, b, act = _buffers(K, N)
    cdef int n_it
    cdef cplx[:, ::1] Fv = F
    cdef double[::1] hv = hist
    cdef cplx[:, ::1] Fnv = Fn, Fmv = Fm, Av = A, Bv = B
    cdef cplx[::1] sv = sig, bv = b
    cdef double[::1] iv = interf, dv = d
    cdef int[::1] av = act
    with nogil:
        n_it = run(Hv, wv, noise, p_max, max_iters, tol, Fv, hv, Fnv, Fmv, Av, Bv, sv, iv, dv, bv, av)
    return F, hist[:n_it + 1].copy()


def wmmse_batch(H, weights, double noise, double p_max, int max_iters=100, double tol=1e-6):
    """WMMSE over a stack of channel matrices (S, K, N_t); returns (F, wsr, iters)."""
    H = np.ascontiguousarray(H, dtype=complex)
    cdef const cplx[:, :, ::1] Hv = H
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=float)
    cdef int S = Hv.shape[0], K = Hv.shape[1], N = Hv.shape[2]
    F_out = np.zeros((S, N, K), complex)
    wsr = np.zeros(S)
    iters = np.zeros(S, dtype=np.int64)
    hist = np.zeros(max_iters + 1)
    Fn, Fm, A, B, sig, interf, d, b, act = _buffers(K, N)
    cdef cplx[:, :, ::1] Fo = F_out
    cdef double[::1] wo = wsr, hv = hist
    cdef long long[::1] io = iters
    cdef cplx[:, ::1] Fnv = Fn, Fmv = Fm, Av = A, Bv = B
    cdef cplx[::1] sv = sig, bv = b
    cdef double[::1] iv = interf, dv = d
    cdef int[::1] av = act
    cdef int s, n_it
    with nogil:
        for s in range(S):
            init_beamformer(Hv[s], p_max, K, N, Fo[s])
            n_it = run(Hv[s], wv, noise, p_max, max_iters, tol, Fo[s], hv, Fnv, Fmv, Av, Bv, sv, iv, dv, bv, av)
            wo[s] = hv[n_it]
            io[s] = n_it
    return F_out, wsr, iters
