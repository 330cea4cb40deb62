"""Pure-numpy WMMSE kernel; reference semantics for the compiled version."""
from __future__ import annotations

import numpy as np

BISECTION_STEPS = 200


def _sinr_terms(H, F, noise):
    S = H @ F  # S[k, j] = h_k f_j
    sig = np.diag(S).copy()
    P = np.abs(S) ** 2
    np.fill_diagonal(P, 0.0)
    return sig, P.sum(axis=1) + noise


def _wsr(H, F, weights, noise):
    sig, interf = _sinr_terms(H, F, noise)
    return float(np.sum(weights * np.log1p(np.abs(sig) ** 2 / interf)) / np.log(2.0))


def _solve(A, B):
    # near-singular systems give huge X; the power test then forces bisection
    try:
        X = np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        return None
    return X if np.all(np.isfinite(X)) else None


def _transmit(H, d, b, mu):
    """Minimiser of the weighted MSE for multiplier mu; None if singular."""
    K, N = H.shape
    F = np.zeros((N, K), dtype=complex)
    act = np.flatnonzero(d > 0)
    if act.size == 0:
        return F
    Ha = H[act]
    if act.size <= N:
        A = d[act, None] * (Ha @ Ha.conj().T) + mu * np.eye(act.size)
        X = _solve(A, np.diag(b[act]))
        if X is None:
            return None
        F[:, act] = Ha.conj().T @ X
    else:
        A = (Ha.conj().T * d[act]) @ Ha + mu * np.eye(N)
        X = _solve(A, Ha.conj().T * b[act])
        if X is None:
            return None
        F[:, act] = X
    return F


def _power(F):
    return float(np.sum(F.real ** 2 + F.imag ** 2))


def initial_beamformer(H, p_max):
    K, N = H.shape
    F = H.conj().T.copy()
    norms = np.linalg.norm(F, axis=0)
    nz = norms > 0
    # full budget split over users with a nonzero channel
    F[:, nz] *= np.sqrt(p_max / max(int(nz.sum()), 1)) / norms[nz]
    return F


def wmmse(H, weights, noise, p_max, max_iters=100, tol=1e-6, F0=None):
    """Run WMMSE on fixed effective channels H (K x N_t).

    Returns ``(F, history)`` where history holds the WSR before the first
    iteration and after each one.
    """
    H = np.ascontiguousarray(H, dtype=complex)
    weights = np.asarray(weights, dtype=float)
    F = initial_beamformer(H, p_max) if F0 is None else np.array(F0, dtype=complex)
    history = [_wsr(H, F, weights, noise)]
    for _ in range(max_iters):
        sig, interf = _sinr_terms(H, F, noise)
        den = interf + np.abs(sig) ** 2
        g = sig.conj() / den
        W = den / interf  # 1 / mse
        d = weights * W * np.abs(g) ** 2
        b = weights * W * g.conj()

        F_new = _transmit(H, d, b, 0.0)
        if F_new is None or _power(F_new) > p_max:
            lo = 0.0
            hi = np.sqrt(np.sum(np.abs(b) ** 2 * np.sum(np.abs(H) ** 2, axis=1)) / p_max)
            F_new = _transmit(H, d, b, hi)
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                F_mid = _transmit(H, d, b, mid)
                if F_mid is not None and _power(F_mid) <= p_max:
                    hi, F_new = mid, F_mid
                else:
                    lo = mid
        F = F_new
        history.append(_wsr(H, F, weights, noise))
        prev, cur = history[-2], history[-1]
        if abs(cur - prev) <= tol * abs(cur):
            break
    return F, np.array(history)


def wmmse_batch(H, weights, noise, p_max, max_iters=100, tol=1e-6):
    H = np.asarray(H, dtype=complex)
    S, K, N = H.shape
    F_out = np.zeros((S, N, K), dtype=complex)
    wsr = np.zeros(S)
    iters = np.zeros(S, dtype=np.int64)
    for s in range(S):
        F, hist = wmmse(H[s], weights, noise, p_max, max_iters, tol)
        F_out[s], wsr[s], iters[s] = F, hist[-1], len(hist) - 1
    return F_out, wsr, iters
