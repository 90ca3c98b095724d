"""Compiled kernels for the per-slice noise-model regression.

Parameter vectors are ``(delta_f, gamma_1, gamma_phi)``. Basis codes are
0 = X, 1 = Y, 2 = Z. Observed probabilities have shape ``(n_tau, n_bases)``.
"""

import numpy as np
from numba import njit

DEGRADED = 1
LOW_SENSITIVITY = 2
EDGE = 4


@njit(cache=True)
def _phasors(x, tau, uniform, out_z_re, out_z_im, out_e1):
    # z_k = exp((-gamma + 2 pi i df) tau_k), e1_k = exp(-gamma_1 tau_k)
    gam = 0.5 * x[1] + x[2]
    w = 2.0 * np.pi * x[0]
    n = tau.size
    if uniform and n > 1:
        dt = tau[1] - tau[0]
        a = np.exp(-gam * tau[0])
        zr = a * np.cos(w * tau[0])
        zi = a * np.sin(w * tau[0])
        b = np.exp(-gam * dt)
        sr = b * np.cos(w * dt)
        si = b * np.sin(w * dt)
        e = np.exp(-x[1] * tau[0])
        es = np.exp(-x[1] * dt)
        for k in range(n):
            out_z_re[k] = zr
            out_z_im[k] = zi
            out_e1[k] = e
            zr, zi = zr * sr - zi * si, zr * si + zi * sr
            e *= es
    else:
        for k in range(n):
            a = np.exp(-gam * tau[k])
            out_z_re[k] = a * np.cos(w * tau[k])
            out_z_im[k] = a * np.sin(w * tau[k])
            out_e1[k] = np.exp(-x[1] * tau[k])


@njit(cache=True)
def model(x, tau, codes, uniform):
    n = tau.size
    zr = np.empty(n)
    zi = np.empty(n)
    e1 = np.empty(n)
    _phasors(x, tau, uniform, zr, zi, e1)
    out = np.empty((n, codes.size))
    for k in range(n):
        for j in range(codes.size):
            c = codes[j]
            if c == 0:
                out[k, j] = 0.5 * (1.0 - zi[k])
            elif c == 1:
                out[k, j] = 0.5 * (1.0 - zr[k])
            else:
                out[k, j] = 1.0 - 0.5 * e1[k]
    return out


@njit(cache=True)
def sse(x, pobs, wts, tau, codes, uniform, zr, zi, e1):
    _phasors(x, tau, uniform, zr, zi, e1)
    s = 0.0
    for k in range(tau.size):
        for j in range(codes.size):
            c = codes[j]
            if c == 0:
                m = 0.5 * (1.0 - zi[k])
            elif c == 1:
                m = 0.5 * (1.0 - zr[k])
            else:
                m = 1.0 - 0.5 * e1[k]
            d = m - pobs[k, j]
            s += wts[k, j] * d * d
    return s


@njit(cache=True)
def _residual_jacobian(x, pobs, wts, tau, codes, r, jac):
    gam = 0.5 * x[1] + x[2]
    w = 2.0 * np.pi * x[0]
    i = 0
    for k in range(tau.size):
        t = tau[k]
        a = np.exp(-gam * t)
        c = np.cos(w * t)
        s = np.sin(w * t)
        e1 = np.exp(-x[1] * t)
        for j in range(codes.size):
            sw = np.sqrt(wts[k, j])
            code = codes[j]
            if code == 0:
                m = 0.5 * (1.0 - a * s)
                d_df = -np.pi * t * a * c
                d_g = 0.5 * t * a * s
                d1 = 0.5 * d_g
                dp = d_g
            elif code == 1:
                m = 0.5 * (1.0 - a * c)
                d_df = np.pi * t * a * s
                d_g = 0.5 * t * a * c
                d1 = 0.5 * d_g
                dp = d_g
            else:
                m = 1.0 - 0.5 * e1
                d_df = 0.0
                d1 = 0.5 * t * e1
                dp = 0.0
            r[i] = sw * (m - pobs[k, j])
            jac[i, 0] = sw * d_df
            jac[i, 1] = sw * d1
            jac[i, 2] = sw * dp
            i += 1


@njit(cache=True)
def _solve3(a, b, out):
    # Cholesky solve of a symmetric positive definite 3x3 system.
    l00 = np.sqrt(a[0, 0])
    l10 = a[1, 0] / l00
    l20 = a[2, 0] / l00
    d1 = a[1, 1] - l10 * l10
    if not d1 > 0.0:
        return False
    l11 = np.sqrt(d1)
    l21 = (a[2, 1] - l20 * l10) / l11
    d2 = a[2, 2] - l20 * l20 - l21 * l21
    if not d2 > 0.0:
        return False
    l22 = np.sqrt(d2)
    y0 = b[0] / l00
    y1 = (b[1] - l10 * y0) / l11
    y2 = (b[2] - l20 * y0 - l21 * y1) / l22
    out[2] = y2 / l22
    out[1] = (y1 - l21 * out[2]) / l11
    out[0] = (y0 - l10 * out[1] - l20 * out[2]) / l00
    return True


@njit(cache=True)
def _normal_equations(r, jac, jtj, g):
    for p in range(3):
        g[p] = 0.0
        for q in range(3):
            jtj[p, q] = 0.0
    for i in range(r.size):
        for p in range(3):
            g[p] += jac[i, p] * r[i]
            for q in range(p + 1):
                jtj[p, q] += jac[i, p] * jac[i, q]
    for p in range(3):
        for q in range(p):
            jtj[q, p] = jtj[p, q]


@njit(cache=True)
def levenberg_marquardt(x0, pobs, wts, tau, codes, lb, ub, maxit):
    """Bounded LM with projection onto the box. Returns (x, sse, nit)."""
    npts = tau.size * codes.size
    r = np.empty(npts)
    jac = np.empty((npts, 3))
    x = x0.copy()
    for q in range(3):
        x[q] = min(max(x[q], lb[q]), ub[q])
    _residual_jacobian(x, pobs, wts, tau, codes, r, jac)
    f = np.dot(r, r)
    mu = 1e-3
    jtj = np.empty((3, 3))
    a = np.empty((3, 3))
    g = np.empty(3)
    step = np.empty(3)
    xn = np.empty(3)
    rn = np.empty(npts)
    jn = np.empty((npts, 3))
    nit = 0
    rel = 1.0
    for it in range(maxit):
        nit = it + 1
        _normal_equations(r, jac, jtj, g)
        for p in range(3):
            g[p] = -g[p]
        # Freeze parameters sitting on a bound whose descent direction points outward.
        for p in range(3):
            if (x[p] <= lb[p] and g[p] < 0.0) or (x[p] >= ub[p] and g[p] > 0.0):
                g[p] = 0.0
                for q in range(3):
                    jtj[p, q] = 0.0
                    jtj[q, p] = 0.0
                jtj[p, p] = 1.0
        improved = False
        for _ in range(30):
            for p in range(3):
                for q in range(3):
                    a[p, q] = jtj[p, q]
                # Tiny absolute term keeps parameters with zero sensitivity solvable.
                a[p, p] = jtj[p, p] * (1.0 + mu) + 1e-30
            if not _solve3(a, g, step):
                mu *= 10.0
                if mu > 1e12:
                    break
                continue
            for q in range(3):
                xn[q] = min(max(x[q] + step[q], lb[q]), ub[q])
            _residual_jacobian(xn, pobs, wts, tau, codes, rn, jn)
            fn = np.dot(rn, rn)
            if fn < f:
                rel = (f - fn) / max(f, 1e-300)
                moved = 0.0
                for q in range(3):
                    moved = max(moved, abs(xn[q] - x[q]) / (abs(x[q]) + 1e-9 * (ub[q] - lb[q])))
                if moved < 1e-10:
                    rel = 0.0
                x[:] = xn
                r[:] = rn
                jac[:, :] = jn
                f = fn
                mu = max(mu * 0.3, 1e-12)
                improved = True
                break
            mu *= 10.0
            if mu > 1e12:
                break
        if not improved or rel < 1e-10:
            break
    return x, f, nit


@njit(cache=True)
def spectral_seed(pobs, tau, codes, lb, ub, n_grid):
    """Moment-style starting point from the X/Y phasor and the Z decay."""
    ix = -1
    iy = -1
    iz = -1
    for j in range(codes.size):
        if codes[j] == 0:
            ix = j
        elif codes[j] == 1:
            iy = j
        else:
            iz = j
    x = np.empty(3)
    g1 = 0.0
    if iz >= 0:
        num = 0.0
        den = 0.0
        for k in range(tau.size):
            v = 2.0 * (1.0 - pobs[k, iz])
            if v > 0.05 and tau[k] > 0:
                num += -tau[k] * np.log(min(v, 1.0))
                den += tau[k] * tau[k]
        if den > 0:
            g1 = num / den
    df = 0.5 * (lb[0] + ub[0])
    gam = 0.5 * g1
    if ix >= 0 and iy >= 0:
        best = -1.0
        for m in range(n_grid):
            f = lb[0] + (ub[0] - lb[0]) * m / (n_grid - 1)
            sr = 0.0
            si = 0.0
            for k in range(tau.size):
                zr = 1.0 - 2.0 * pobs[k, iy]
                zi = 1.0 - 2.0 * pobs[k, ix]
                ph = 2.0 * np.pi * f * tau[k]
                c = np.cos(ph)
                s = np.sin(ph)
                sr += zr * c + zi * s
                si += zi * c - zr * s
            p = sr * sr + si * si
            if p > best:
                best = p
                df = f
        num = 0.0
        den = 0.0
        for k in range(tau.size):
            zr = 1.0 - 2.0 * pobs[k, iy]
            zi = 1.0 - 2.0 * pobs[k, ix]
            amp = np.sqrt(zr * zr + zi * zi)
            if amp > 0.05 and tau[k] > 0:
                num += -tau[k] * np.log(min(amp, 1.0))
                den += tau[k] * tau[k]
        if den > 0:
            gam = num / den
    x[0] = df
    x[1] = g1
    x[2] = max(gam - 0.5 * g1, 0.0)
    for q in range(3):
        x[q] = min(max(x[q], lb[q]), ub[q])
    return x


@njit(cache=True)
def differential_evolution(pobs, wts, tau, codes, uniform, lb, ub, seeds, n_seeds,
                           popsize, mutation, recombination, maxiter, tol, atol):
    """best/1/bin differential evolution with immediate updating.

    Returns (x_best, e_best, converged, n_generations).
    """
    nd = 3
    span = ub - lb
    pop = np.empty((popsize, nd))
    # Latin hypercube initialisation in unit coordinates.
    for d in range(nd):
        perm = np.random.permutation(popsize)
        for i in range(popsize):
            pop[i, d] = (perm[i] + np.random.random()) / popsize
    for s in range(min(n_seeds, popsize)):
        for d in range(nd):
            u = (seeds[s, d] - lb[d]) / span[d] if span[d] > 0 else 0.0
            pop[s, d] = min(max(u, 0.0), 1.0)
    n = tau.size
    zr = np.empty(n)
    zi = np.empty(n)
    e1 = np.empty(n)
    x = np.empty(nd)
    energies = np.empty(popsize)
    for i in range(popsize):
        for d in range(nd):
            x[d] = lb[d] + pop[i, d] * span[d]
        energies[i] = sse(x, pobs, wts, tau, codes, uniform, zr, zi, e1)
    best = np.argmin(energies)
    trial = np.empty(nd)
    converged = False
    gen = 0
    for gen in range(1, maxiter + 1):
        for i in range(popsize):
            r1 = i
            while r1 == i:
                r1 = np.random.randint(popsize)
            r2 = i
            while r2 == i or r2 == r1:
                r2 = np.random.randint(popsize)
            fill = np.random.randint(nd)
            for d in range(nd):
                if d == fill or np.random.random() < recombination:
                    v = pop[best, d] + mutation * (pop[r1, d] - pop[r2, d])
                    if v < 0.0 or v > 1.0:
                        v = np.random.random()
                    trial[d] = v
                else:
                    trial[d] = pop[i, d]
            for d in range(nd):
                x[d] = lb[d] + trial[d] * span[d]
            e = sse(x, pobs, wts, tau, codes, uniform, zr, zi, e1)
            if e <= energies[i]:
                energies[i] = e
                pop[i, :] = trial
                if e <= energies[best]:
                    best = i
        if np.std(energies) <= atol + tol * abs(np.mean(energies)):
            converged = True
            break
    out = np.empty(nd)
    for d in range(nd):
        out[d] = lb[d] + pop[best, d] * span[d]
    return out, energies[best], converged, gen


@njit(cache=True)
def delta_f_sensitivity(x, tau, codes):
    # Ratio of the X/Y delta_f Fisher weight to its undamped value.
    gam = 0.5 * x[1] + x[2]
    has_xy = False
    for j in range(codes.size):
        if codes[j] < 2:
            has_xy = True
    if not has_xy:
        return 0.0
    num = 0.0
    den = 0.0
    for k in range(tau.size):
        t2 = tau[k] * tau[k]
        num += t2 * np.exp(-2.0 * gam * tau[k])
        den += t2
    return num / den if den > 0 else 0.0


@njit(cache=True)
def fit_one(pobs, wts, tau, codes, uniform, lb, ub, prev, has_prev, seed,
            popsize, mutation, recombination, maxiter, tol, atol, polish, sens_thresh):
    np.random.seed(seed)
    seeds = np.empty((2, 3))
    ns = 0
    if has_prev:
        seeds[ns, :] = prev
        ns += 1
    seeds[ns, :] = spectral_seed(pobs, tau, codes, lb, ub, 401)
    ns += 1
    x, e, conv, gen = differential_evolution(
        pobs, wts, tau, codes, uniform, lb, ub, seeds, ns,
        popsize, mutation, recombination, maxiter, tol, atol,
    )
    if polish:
        xp, ep, _ = levenberg_marquardt(x, pobs, wts, tau, codes, lb, ub, 100)
        if ep < e:
            x = xp
            e = ep
    flags = 0
    if not conv:
        flags |= DEGRADED
    if delta_f_sensitivity(x, tau, codes) < sens_thresh:
        flags |= LOW_SENSITIVITY
    return x, e, flags, gen


@njit(cache=True)
def fit_sweep(P, W, tau, codes, uniform, lb, ub, warm, seed,
              popsize, mutation, recombination, maxiter, tol, atol, polish, sens_thresh):
    n = P.shape[0]
    params = np.empty((n, 3))
    energy = np.empty(n)
    flags = np.zeros(n, dtype=np.int64)
    ngen = np.zeros(n, dtype=np.int64)
    prev = np.zeros(3)
    for r in range(n):
        x, e, fl, g = fit_one(
            P[r], W[r], tau, codes, uniform, lb, ub, prev, warm and r > 0,
            (seed * 1000003 + r) % 4294967296,
            popsize, mutation, recombination, maxiter, tol, atol, polish, sens_thresh,
        )
        params[r] = x
        energy[r] = e
        flags[r] = fl
        ngen[r] = g
        prev[:] = x
    return params, energy, flags, ngen


@njit(cache=True)
def bootstrap_one(pobs, wts, x_fit, resid, n_trials, tau, codes, uniform, lb, ub,
                  n_boot, seed, full_de, popsize, mutation, recombination, maxiter,
                  tol, atol):
    """Replica parameter estimates, shape (n_boot, 3)."""
    np.random.seed(seed)
    nt, nb = pobs.shape
    flat = resid.ravel()
    m = flat.size
    out = np.empty((n_boot, 3))
    pt = np.empty((nt, nb))
    seeds = np.empty((1, 3))
    seeds[0, :] = x_fit
    for b in range(n_boot):
        for k in range(nt):
            for j in range(nb):
                p = min(max(pobs[k, j], 0.0), 1.0)
                v = np.random.binomial(n_trials, p) / n_trials + flat[np.random.randint(m)]
                pt[k, j] = min(max(v, 0.0), 1.0)
        if full_de:
            x, e, _, _ = differential_evolution(
                pt, wts, tau, codes, uniform, lb, ub, seeds, 1,
                popsize, mutation, recombination, maxiter, tol, atol,
            )
            x, _, _ = levenberg_marquardt(x, pt, wts, tau, codes, lb, ub, 100)
        else:
            x, _, _ = levenberg_marquardt(x_fit, pt, wts, tau, codes, lb, ub, 100)
        out[b, :] = x
    return out


@njit(cache=True)
def bootstrap_sweep(P, W, X, R, n_trials, tau, codes, uniform, lb, ub, n_boot, seed,
                    full_de, popsize, mutation, recombination, maxiter, tol, atol):
    n = P.shape[0]
    sig = np.zeros((n, 3))
    for r in range(n):
        reps = bootstrap_one(
            P[r], W[r], X[r], R[r], n_trials[r], tau, codes, uniform, lb, ub, n_boot,
            (seed * 7919 + r * 104729 + 17) % 4294967296, full_de,
            popsize, mutation, recombination, maxiter, tol, atol,
        )
        if n_boot > 1:
            for q in range(3):
                sig[r, q] = np.std(reps[:, q]) * np.sqrt(n_boot / (n_boot - 1.0))
    return sig
