"""Compiled two-state Gaussian HMM routines.

State 0 is the lower-mean state (s = -1), state 1 the upper one (s = +1).
Parameters travel as flat arrays: ``mu[2]``, ``sig[2]``, ``A[2, 2]``,
``pi[2]``. Log-likelihoods are natural logs of densities.
"""

import numpy as np
from numba import njit

LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def _log_emission(x, mu, sig, out):
    for i in range(2):
        z = (x - mu[i]) / sig[i]
        out[i] = -0.5 * z * z - np.log(sig[i]) - 0.5 * LOG_2PI


@njit(cache=True)
def forward_step(x, mu, sig, A, alpha, first, pi):
    """Advance filtered probabilities by one observation in place.

    Returns the log of the one-step predictive density.
    """
    lb = np.empty(2)
    _log_emission(x, mu, sig, lb)
    m = max(lb[0], lb[1])
    if first:
        p0 = pi[0]
        p1 = pi[1]
    else:
        p0 = alpha[0] * A[0, 0] + alpha[1] * A[1, 0]
        p1 = alpha[0] * A[0, 1] + alpha[1] * A[1, 1]
    a0 = p0 * np.exp(lb[0] - m)
    a1 = p1 * np.exp(lb[1] - m)
    c = a0 + a1
    if c <= 0.0:
        # Both states assign zero mass; fall back to an uninformative update.
        alpha[0] = 0.5
        alpha[1] = 0.5
        return -np.inf
    alpha[0] = a0 / c
    alpha[1] = a1 / c
    return m + np.log(c)


@njit(cache=True)
def forward_loglik(x, mu, sig, A, pi, alpha_out):
    ll = 0.0
    for t in range(x.size):
        ll += forward_step(x[t], mu, sig, A, alpha_out, t == 0, pi)
    return ll


@njit(cache=True)
def _estep(x, mu, sig, A, pi, alpha, beta, scale, bs):
    n = x.size
    lb = np.empty(2)
    ll = 0.0
    for t in range(n):
        _log_emission(x[t], mu, sig, lb)
        m = max(lb[0], lb[1])
        bs[t, 0] = np.exp(lb[0] - m)
        bs[t, 1] = np.exp(lb[1] - m)
        if t == 0:
            p0 = pi[0]
            p1 = pi[1]
        else:
            p0 = alpha[t - 1, 0] * A[0, 0] + alpha[t - 1, 1] * A[1, 0]
            p1 = alpha[t - 1, 0] * A[0, 1] + alpha[t - 1, 1] * A[1, 1]
        a0 = p0 * bs[t, 0]
        a1 = p1 * bs[t, 1]
        c = a0 + a1
        if c <= 0.0:
            c = 1e-300
            a0 = 0.5e-300
            a1 = 0.5e-300
        alpha[t, 0] = a0 / c
        alpha[t, 1] = a1 / c
        scale[t] = c
        ll += m + np.log(c)
    beta[n - 1, 0] = 1.0
    beta[n - 1, 1] = 1.0
    for t in range(n - 2, -1, -1):
        for i in range(2):
            beta[t, i] = (
                A[i, 0] * bs[t + 1, 0] * beta[t + 1, 0] + A[i, 1] * bs[t + 1, 1] * beta[t + 1, 1]
            ) / scale[t + 1]
    return ll


@njit(cache=True)
def baum_welch(x, mu0, sig0, A0, pi0, floor, max_iter, tol):
    """EM for a two-state Gaussian HMM.

    Returns ``(mu, sig, A, pi, loglik, n_iter, alpha_last)`` where ``loglik``
    belongs to the returned parameters and ``alpha_last`` is the filtered
    state distribution at the final observation.
    """
    n = x.size
    mu = mu0.copy()
    sig = sig0.copy()
    A = A0.copy()
    pi = pi0.copy()
    for i in range(2):
        sig[i] = max(sig[i], floor)
    alpha = np.empty((n, 2))
    beta = np.empty((n, 2))
    scale = np.empty(n)
    bs = np.empty((n, 2))
    ll_prev = -np.inf
    ll = -np.inf
    it = 0
    for it in range(max_iter + 1):
        ll = _estep(x, mu, sig, A, pi, alpha, beta, scale, bs)
        if it > 0 and abs(ll - ll_prev) <= tol * max(abs(ll_prev), 1e-300):
            break
        if it == max_iter:
            break
        ll_prev = ll
        # M step.
        g0 = np.zeros(2)
        g1 = np.zeros(2)
        g2 = np.zeros(2)
        xi = np.zeros((2, 2))
        for t in range(n):
            w0 = alpha[t, 0] * beta[t, 0]
            w1 = alpha[t, 1] * beta[t, 1]
            s = w0 + w1
            if s > 0:
                w0 /= s
                w1 /= s
            else:
                w0 = 0.5
                w1 = 0.5
            if t == 0:
                pi[0] = w0
                pi[1] = w1
            g0[0] += w0
            g0[1] += w1
            g1[0] += w0 * x[t]
            g1[1] += w1 * x[t]
            if t < n - 1:
                for i in range(2):
                    for j in range(2):
                        xi[i, j] += (
                            alpha[t, i] * A[i, j] * bs[t + 1, j] * beta[t + 1, j] / scale[t + 1]
                        )
        for i in range(2):
            if g0[i] > 1e-12:
                mu[i] = g1[i] / g0[i]
        for t in range(n):
            w0 = alpha[t, 0] * beta[t, 0]
            w1 = alpha[t, 1] * beta[t, 1]
            s = w0 + w1
            if s > 0:
                w0 /= s
                w1 /= s
            d0 = x[t] - mu[0]
            d1 = x[t] - mu[1]
            g2[0] += w0 * d0 * d0
            g2[1] += w1 * d1 * d1
        for i in range(2):
            if g0[i] > 1e-12:
                sig[i] = max(np.sqrt(g2[i] / g0[i]), floor)
            rs = xi[i, 0] + xi[i, 1]
            if rs > 0:
                A[i, 0] = xi[i, 0] / rs
                A[i, 1] = 1.0 - A[i, 0]
    if mu[0] > mu[1]:
        mu = mu[::-1].copy()
        sig = sig[::-1].copy()
        pi = pi[::-1].copy()
        B = np.empty((2, 2))
        B[0, 0] = A[1, 1]
        B[0, 1] = A[1, 0]
        B[1, 0] = A[0, 1]
        B[1, 1] = A[0, 0]
        A = B
        a_last = np.array([alpha[n - 1, 1], alpha[n - 1, 0]])
    else:
        a_last = np.array([alpha[n - 1, 0], alpha[n - 1, 1]])
    return mu, sig, A, pi, ll, it, a_last


@njit(cache=True)
def fresh_init(x, floor):
    q25 = np.percentile(x, 25.0)
    q75 = np.percentile(x, 75.0)
    mu = np.array([q25, q75])
    s = max(0.5 * (q75 - q25), floor)
    sig = np.array([s, s])
    A = np.array([[0.9, 0.1], [0.1, 0.9]])
    pi = np.array([0.5, 0.5])
    return mu, sig, A, pi


@njit(cache=True)
def viterbi(x, mu, sig, A, pi):
    n = x.size
    out = np.empty(n, dtype=np.int8)
    if n == 0:
        return out
    la = np.log(A + 1e-300)
    lb = np.empty(2)
    delta = np.empty(2)
    back = np.empty((n, 2), dtype=np.int8)
    _log_emission(x[0], mu, sig, lb)
    for i in range(2):
        delta[i] = np.log(pi[i] + 1e-300) + lb[i]
    nd = np.empty(2)
    for t in range(1, n):
        _log_emission(x[t], mu, sig, lb)
        for j in range(2):
            c0 = delta[0] + la[0, j]
            c1 = delta[1] + la[1, j]
            if c1 > c0:
                nd[j] = c1 + lb[j]
                back[t, j] = 1
            else:
                nd[j] = c0 + lb[j]
                back[t, j] = 0
        delta[0] = nd[0]
        delta[1] = nd[1]
    k = 1 if delta[1] > delta[0] else 0
    for t in range(n - 1, -1, -1):
        out[t] = k
        if t > 0:
            k = back[t, k]
    return out


@njit(cache=True)
def split_init(x, floor):
    """Initial parameters from the optimal two-cluster split of the values."""
    n = x.size
    v = np.sort(x)
    c = np.cumsum(v)
    c2 = np.cumsum(v * v)
    best = np.inf
    k_best = 1
    for k in range(1, n):
        m1 = c[k - 1] / k
        ss1 = c2[k - 1] - k * m1 * m1
        m2 = (c[n - 1] - c[k - 1]) / (n - k)
        ss2 = (c2[n - 1] - c2[k - 1]) - (n - k) * m2 * m2
        if ss1 + ss2 < best:
            best = ss1 + ss2
            k_best = k
    k = k_best
    m1 = c[k - 1] / k
    m2 = (c[n - 1] - c[k - 1]) / (n - k)
    v1 = max(c2[k - 1] / k - m1 * m1, 0.0)
    v2 = max((c2[n - 1] - c2[k - 1]) / (n - k) - m2 * m2, 0.0)
    mu = np.array([m1, m2])
    sig = np.array([max(np.sqrt(v1), floor), max(np.sqrt(v2), floor)])
    A = np.array([[0.9, 0.1], [0.1, 0.9]])
    pi = np.array([0.5, 0.5])
    return mu, sig, A, pi


@njit(cache=True)
def _fit_best(x, mu, sig, A, pi, have, thorough, floor, max_iter, tol):
    # Warm fit from the current parameters. A fresh percentile start is added
    # when the warm solution collapsed onto one mean, and both the percentile
    # and the two-cluster starts when ``thorough``; the best likelihood wins.
    if have:
        r = baum_welch(x, mu, sig, A, pi, floor, max_iter, tol)
        degenerate = abs(r[0][1] - r[0][0]) < 0.5 * floor
    else:
        m2, s2, A2, p2 = fresh_init(x, floor)
        r = baum_welch(x, m2, s2, A2, p2, floor, max_iter, tol)
        degenerate = False
    if have and (degenerate or thorough):
        m2, s2, A2, p2 = fresh_init(x, floor)
        r2 = baum_welch(x, m2, s2, A2, p2, floor, max_iter, tol)
        if r2[4] > r[4]:
            r = r2
    if thorough and x.size >= 2:
        m3, s3, A3, p3 = split_init(x, floor)
        r3 = baum_welch(x, m3, s3, A3, p3, floor, max_iter, tol)
        if r3[4] > r[4]:
            r = r3
    return r


@njit(cache=True)
def _final_fit(x, mu, sig, A, pi, floor, max_iter, tol):
    return _fit_best(x, mu, sig, A, pi, True, True, floor, max_iter, tol)


@njit(cache=True)
def segment_scan(x, floor, lam, l_min, max_iter, tol, want_models):
    """Sequential likelihood-threshold segmentation.

    Every new point is appended to the current segment. The segment model is
    refreshed by Baum-Welch while the segment is short and at every doubling
    of its length; in between the likelihood is updated online. When the
    per-point log10 likelihood drops below ``lam`` the model is refitted and,
    if the threshold is still violated and the segment holds at least
    ``l_min`` points, a new segment starts at the current point.

    Returns ``(starts, models, mean_ll)``; ``models`` rows are
    ``(mu0, mu1, sig0, sig1, a00, a01, a10, a11, pi0, pi1)``.
    """
    n = x.size
    ln10 = np.log(10.0)
    cap = n // max(l_min, 1) + 2 if want_models else 1
    starts = np.empty(n + 1, dtype=np.int64)
    models = np.zeros((cap, 10))
    mll = np.zeros(cap)
    nseg = 0
    starts[0] = 0
    s = 0
    mu = np.zeros(2)
    sig = np.ones(2)
    A = np.eye(2)
    pi = np.full(2, 0.5)
    alpha = np.full(2, 0.5)
    have = False
    ll = 0.0
    next_refresh = 32
    t = 1
    while t <= n:
        if t < n:
            L = t - s + 1
            if L <= 16 or L == next_refresh:
                mu, sig, A, pi, ll, _, alpha = _fit_best(
                    x[s:t + 1], mu, sig, A, pi, have, False, floor, max_iter, tol
                )
                have = True
                if L == next_refresh:
                    next_refresh *= 2
            else:
                ll += forward_step(x[t], mu, sig, A, alpha, False, pi)
            if ll / (L * ln10) >= lam:
                t += 1
                continue
            refreshed = L <= 16 or L == next_refresh // 2
            if not refreshed:
                mu, sig, A, pi, ll, _, alpha = _fit_best(
                    x[s:t + 1], mu, sig, A, pi, True, False, floor, max_iter, tol
                )
            if ll / (L * ln10) < lam:
                mu, sig, A, pi, ll, _, alpha = _fit_best(
                    x[s:t + 1], mu, sig, A, pi, True, True, floor, max_iter, tol
                )
            if ll / (L * ln10) >= lam or t - s < l_min:
                t += 1
                continue
        # Close the segment [s, t).
        if want_models:
            seg = x[s:t]
            if seg.size >= 2:
                if not have:
                    mu, sig, A, pi = fresh_init(seg, floor)
                fm, fs, fA, fp, fll, _, _ = _final_fit(seg, mu, sig, A, pi, floor, max_iter, tol)
            else:
                fm = np.array([seg[0], seg[0]])
                fs = np.array([floor, floor])
                fA = np.array([[0.9, 0.1], [0.1, 0.9]])
                fp = np.array([0.5, 0.5])
                fll = (-np.log(floor) - 0.5 * LOG_2PI)
            models[nseg, 0] = fm[0]
            models[nseg, 1] = fm[1]
            models[nseg, 2] = fs[0]
            models[nseg, 3] = fs[1]
            models[nseg, 4] = fA[0, 0]
            models[nseg, 5] = fA[0, 1]
            models[nseg, 6] = fA[1, 0]
            models[nseg, 7] = fA[1, 1]
            models[nseg, 8] = fp[0]
            models[nseg, 9] = fp[1]
            mll[nseg] = fll / (seg.size * ln10)
        nseg += 1
        if t == n:
            break
        starts[nseg] = t
        s = t
        have = False
        next_refresh = 32
        t += 1
    if not want_models:
        return starts[:nseg].copy(), models[:0], mll[:0]
    return starts[:nseg].copy(), models[:nseg].copy(), mll[:nseg].copy()
