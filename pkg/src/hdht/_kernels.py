"""Compiled inner loops: the Lasso homotopy and per-subset statistics.

Both loops handle many tiny problems (active sets and subsets of a few
columns), where interpreter overhead dominates unless compiled.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _cholesky_solve(g, rhs):
    """Solve ``g x = rhs`` for symmetric positive definite ``g``; ``ok=False`` if not PD."""
    k = g.shape[0]
    low = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            s = g[i, j]
            for t in range(j):
                s -= low[i, t] * low[j, t]
            if i == j:
                if s <= 0.0:
                    return rhs, False
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    z = np.empty(k)
    for i in range(k):
        s = rhs[i]
        for t in range(i):
            s -= low[i, t] * z[t]
        z[i] = s / low[i, i]
    x = np.empty(k)
    for i in range(k - 1, -1, -1):
        s = z[i]
        for t in range(i + 1, k):
            s -= low[t, i] * x[t]
        x[i] = s / low[i, i]
    return x, True


@njit(cache=True)
def lars_kernel(gram, wty, max_active, max_covariates, p, scale):
    """Follow the path; returns ``(lambdas, coefs, support_masks, n_drops, complete)``.

    ``max_covariates < 0`` disables the covariate stop.  Knots are capped at
    ``4 nvar + 16``; hitting the cap ends the path with ``complete=False``.
    """
    nvar = wty.shape[0]
    cap = 4 * nvar + 16
    lams = np.empty(cap)
    coefs = np.zeros((cap, nvar))
    masks = np.zeros((cap, nvar), dtype=np.bool_)
    theta = np.zeros(nvar)
    corr = wty.copy()
    cmax = 0.0
    for j in range(nvar):
        cmax = max(cmax, abs(corr[j]))
    if cmax <= 1e-300:
        return lams[:0], coefs[:0], masks[:0], 0, True
    tiny = 1e-12 * cmax
    active = np.empty(nvar, dtype=np.int64)
    in_active = np.zeros(nvar, dtype=np.bool_)
    na = 0
    for j in range(nvar):
        if abs(corr[j]) >= cmax * (1 - 1e-12):
            active[na] = j
            na += 1
            in_active[j] = True
    lams[0] = 2.0 * cmax
    coefs[0] = theta * scale
    masks[0] = in_active
    m = 1
    just_dropped = -1
    n_drops = 0
    complete = False
    seen = np.zeros(p, dtype=np.bool_)

    while m < cap - 1:
        # with every variable active only drops or the final segment remain
        if na >= max_active and na < nvar:
            break
        if max_covariates >= 0:
            seen[:] = False
            ncov = 0
            for i in range(na):
                c = active[i] % p
                if not seen[c]:
                    seen[c] = True
                    ncov += 1
            if ncov >= max_covariates:
                break
        g = np.empty((na, na))
        signs = np.empty(na)
        for i in range(na):
            signs[i] = np.sign(corr[active[i]])
            for t in range(na):
                g[i, t] = gram[active[i], active[t]]
        d, ok = _cholesky_solve(g, signs)
        if not ok:
            break
        a = np.zeros(nvar)
        for j in range(nvar):
            s = 0.0
            for i in range(na):
                s += gram[j, active[i]] * d[i]
            a[j] = s

        gamma = cmax
        event = 0  # 0 end, 1 add, 2 drop
        event_var = -1
        best = np.inf
        best_j = -1
        for j in range(nvar):
            if in_active[j]:
                continue
            cj = corr[j]
            aj = a[j]
            gj = np.inf
            if 1.0 - aj > tiny:
                gj = (cmax - cj) / (1.0 - aj)
            if 1.0 + aj > tiny:
                gj = min(gj, (cmax + cj) / (1.0 + aj))
            if gj < 0:
                gj = np.inf
            if j == just_dropped:
                if gj <= tiny:
                    gj = np.inf
            elif abs(cj) >= cmax - tiny:
                gj = 0.0
            if gj < best:
                best = gj
                best_j = j
        if best_j >= 0 and best < gamma:
            gamma = best
            event = 1
            event_var = best_j
        best = np.inf
        best_i = -1
        for i in range(na):
            if d[i] != 0.0:
                gd = -theta[active[i]] / d[i]
                if gd > tiny and gd < best:
                    best = gd
                    best_i = i
        if best_i >= 0 and best < gamma:
            gamma = best
            event = 2
            event_var = active[best_i]

        for i in range(na):
            theta[active[i]] += gamma * d[i]
        cmax -= gamma
        for j in range(nvar):
            s = wty[j]
            for i in range(na):
                s -= gram[j, active[i]] * theta[active[i]]
            corr[j] = s
        just_dropped = -1
        if event == 0 or cmax <= tiny:
            if lams[m - 1] > 0:
                lams[m] = 0.0
                coefs[m] = theta * scale
                masks[m] = in_active
                m += 1
            complete = True
            break
        if event == 1:
            active[na] = event_var
            na += 1
            in_active[event_var] = True
        else:
            pos = 0
            while active[pos] != event_var:
                pos += 1
            for i in range(pos, na - 1):
                active[i] = active[i + 1]
            na -= 1
            in_active[event_var] = False
            theta[event_var] = 0.0
            just_dropped = event_var
            n_drops += 1
        lam = 2.0 * cmax
        if lams[m - 1] - lam <= 1e-13 * lams[0]:
            # zero-length step: several events at the same knot
            masks[m - 1] = in_active
        else:
            lams[m] = lam
            coefs[m] = theta * scale
            masks[m] = in_active
            m += 1

    return lams[:m], coefs[:m], masks[:m], n_drops, complete


@njit(cache=True)
def _householder_r(m, rank_tol):
    """In-place Householder triangularization of ``m`` (rows >= cols).

    Returns ``(r, full_rank)``; the rank test applies to the first
    ``cols - 1`` columns (the last column is the response).
    """
    n, c = m.shape
    for j in range(c):
        norm = 0.0
        for i in range(j, n):
            norm += m[i, j] * m[i, j]
        norm = np.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if m[j, j] >= 0 else norm
        v0 = m[j, j] - alpha
        vnorm2 = v0 * v0 + norm * norm - m[j, j] * m[j, j]
        if vnorm2 <= 0.0:
            continue
        for t in range(j + 1, c):
            s = v0 * m[j, t]
            for i in range(j + 1, n):
                s += m[i, j] * m[i, t]
            f = 2.0 * s / vnorm2
            m[j, t] -= f * v0
            for i in range(j + 1, n):
                m[i, t] -= f * m[i, j]
        m[j, j] = alpha
        for i in range(j + 1, n):
            m[i, j] = 0.0
    k = c - 1
    dmax = 0.0
    for i in range(k):
        dmax = max(dmax, abs(m[i, i]))
    ok = dmax > 0.0
    for i in range(k):
        if abs(m[i, i]) <= rank_tol * dmax:
            ok = False
    return m[:c, :c], ok


@njit(cache=True)
def _augmented(x, y, cols, k):
    n = x.shape[0]
    m = np.empty((n, k + 1))
    for i in range(n):
        for j in range(k):
            m[i, j] = x[i, cols[j]]
        m[i, k] = y[i]
    return m


@njit(cache=True)
def _back_solve(r, b, k):
    x = np.empty(k)
    for i in range(k - 1, -1, -1):
        s = b[i]
        for t in range(i + 1, k):
            s -= r[i, t] * x[t]
        x[i] = s / r[i, i]
    return x


@njit(cache=True)
def score_kernel(x1, y1, x2, y2, idx, sizes, fisher, rank_tol):
    """Statistics and chi-square weights for every row of ``idx``.

    ``idx[j, :sizes[j]]`` lists subset ``j``; all sizes must be >= 1.
    Returns ``(f_v, f_1, f_2, a1, a2, fi, valid)``.  ``a1``/``a2`` rows are
    right-padded with zeros.
    """
    nsub, kmax = idx.shape
    n1 = x1.shape[0]
    n2 = x2.shape[0]
    f_v = np.zeros(nsub)
    f_1 = np.zeros(nsub)
    f_2 = np.zeros(nsub)
    fi = np.zeros(nsub)
    a1 = np.zeros((nsub, max(kmax, 1)))
    a2 = np.zeros((nsub, max(kmax, 1)))
    valid = np.zeros(nsub, dtype=np.bool_)
    if fisher:
        xp = np.vstack((x1, x2))
        yp = np.concatenate((y1, y2))
    for j in range(nsub):
        k = sizes[j]
        cols = idx[j, :k]
        r1, ok1 = _householder_r(_augmented(x1, y1, cols, k), rank_tol)
        r2, ok2 = _householder_r(_augmented(x2, y2, cols, k), rank_tol)
        rss1 = r1[k, k] * r1[k, k]
        rss2 = r2[k, k] * r2[k, k]
        if not (ok1 and ok2) or rss1 <= 0.0 or rss2 <= 0.0:
            continue
        beta1 = _back_solve(r1, r1[:k, k], k)
        beta2 = _back_solve(r2, r2[:k, k], k)
        v1 = rss1 / n1
        v2 = rss2 / n2
        c1 = 0.0
        c2 = 0.0
        for i in range(k):
            s1 = 0.0
            s2 = 0.0
            for t in range(i, k):
                dt = beta1[t] - beta2[t]
                s1 += r1[i, t] * dt
                s2 += r2[i, t] * dt
            c1 += s1 * s1
            c2 += s2 * s2
        # t = R1^-T R2^T by forward substitution; mu = eig(t t^T) = eig(A1^-1 A2)
        tm = np.zeros((k, k))
        for col in range(k):
            for i in range(k):
                s = r2[col, i]
                for q in range(i):
                    s -= r1[q, i] * tm[q, col]
                tm[i, col] = s / r1[i, i]
        mu = np.linalg.eigvalsh(tm @ tm.T)
        if mu[0] <= 0.0:
            continue
        ratio = v1 / v2
        f_v[j] = max(ratio + 1.0 / ratio - 2.0, 0.0)
        f_1[j] = c2 / n2 / v1
        f_2[j] = c1 / n1 / v2
        for i in range(k):
            a1[j, i] = (mu[i] + 1.0) * n1 / (n2 * (n1 - k))
            a2[j, i] = (1.0 / mu[i] + 1.0) * n2 / (n1 * (n2 - k))
        if fisher:
            rp, okp = _householder_r(_augmented(xp, yp, cols, k), rank_tol)
            within = rss1 + rss2
            dof = n1 + n2 - 2 * k
            fi[j] = max(rp[k, k] * rp[k, k] - within, 0.0) / within * dof / k
        valid[j] = True
    return f_v, f_1, f_2, a1, a2, fi, valid
