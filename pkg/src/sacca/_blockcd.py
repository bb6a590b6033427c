"""Compiled block coordinate descent for the group-lasso subproblem.

Kept apart from the solver module so that numba's on-disk cache survives
edits there.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _solve_block(r, q, t_pen, out):
    """Minimize ``0.5 c'diag(q)c - r'c + t_pen ||c||`` into ``out``.

    The minimizer is ``c = r t / (q t + t_pen)`` with ``t = ||c||`` the root
    of ``h(t) = sum(r^2 / (q t + t_pen)^2) ** -0.5 = 1``; ``h`` is close to
    linear in ``t`` and bracketed by the extreme entries of ``q``.
    """
    m = r.size
    nr2 = 0.0
    for i in range(m):
        nr2 += r[i] * r[i]
    nr = np.sqrt(nr2)
    if nr <= t_pen:
        for i in range(m):
            out[i] = 0.0
        return
    if t_pen == 0.0:
        for i in range(m):
            out[i] = r[i] / q[i]
        return
    qmin = q.min()
    qmax = q.max()
    lo = (nr - t_pen) / qmax
    hi = (nr - t_pen) / qmin
    t = lo
    for _ in range(100):
        S = 0.0
        dS = 0.0
        for i in range(m):
            den = q[i] * t + t_pen
            S += r[i] * r[i] / (den * den)
            dS += r[i] * r[i] * q[i] / (den * den * den)
        h = S ** -0.5
        if abs(h - 1.0) <= 1e-14:
            break
        if h > 1.0:
            hi = t
        else:
            lo = t
        t_new = t - (h - 1.0) / (dS * S ** -1.5)
        if not (lo <= t_new <= hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-15 * t_new or hi - lo <= 1e-15 * hi:
            t = t_new
            break
        t = t_new
    for i in range(m):
        out[i] = r[i] * (t / (q[i] * t + t_pen))


@njit(cache=True)
def bcd(Q, b, edges, pen, c, tol, max_sweeps):
    """Minimize ``0.5 c'Qc - b'c + pen * sum_j ||c_j||`` in place from ``c``.

    Groups are the slices ``edges[j]:edges[j + 1]``; each block update is
    exact for the diagonal of ``Q``'s block, which is diagonal here.
    """
    p = edges.size - 1
    dim = b.size
    Qc = Q @ c
    is_active = np.zeros(p, dtype=np.bool_)
    for j in range(p):
        for i in range(edges[j], edges[j + 1]):
            if c[i] != 0.0:
                is_active[j] = True
                break
    full_pass = True
    buf = np.empty(dim)
    r = np.empty(dim)
    qd = np.empty(dim)
    for i in range(dim):
        qd[i] = Q[i, i]
    for _ in range(max_sweeps):
        biggest = 0.0
        any_active = False
        for j in range(p):
            if is_active[j]:
                any_active = True
        for j in range(p):
            if not (full_pass or not any_active or is_active[j]):
                continue
            s0 = edges[j]
            s1 = edges[j + 1]
            for i in range(s0, s1):
                r[i] = b[i] - Qc[i] + qd[i] * c[i]
            _solve_block(r[s0:s1], qd[s0:s1], pen, buf[s0:s1])
            dn2 = 0.0
            for i in range(s0, s1):
                dn2 += (buf[i] - c[i]) ** 2
            if dn2 > 0.0:
                for i in range(s0, s1):
                    delta = buf[i] - c[i]
                    if delta != 0.0:
                        for k in range(dim):
                            Qc[k] += Q[k, i] * delta
                    c[i] = buf[i]
                dn = np.sqrt(dn2)
                if dn > biggest:
                    biggest = dn
            nz = False
            for i in range(s0, s1):
                if c[i] != 0.0:
                    nz = True
                    break
            is_active[j] = nz
        scale = 0.0
        for i in range(dim):
            scale += c[i] * c[i]
        scale = max(np.sqrt(scale), 1e-300)
        converged = biggest <= tol * scale
        if full_pass:
            if converged:
                break
            full_pass = False
        elif converged:
            full_pass = True
    return c
