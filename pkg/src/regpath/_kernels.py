"""Compiled inner loops for the coefficient solvers.

All kernels work on the quadratic ``f(b) = 0.5 b'Gb - c'b`` and update ``b``
in place. Coordinates are visited in ascending index order.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _enet_value(G, c, b, grad, l1, l2):
    v = 0.0
    for j in range(b.shape[0]):
        bj = b[j]
        if bj != 0.0:
            v += 0.5 * bj * grad[j] - c[j] * bj + l1[j] * abs(bj) + 0.5 * l2[j] * bj * bj
    return v


@njit(cache=True)
def enet_cd(G, c, b, l1, l2, max_sweeps, tol):
    """Cyclic coordinate descent for ``f(b) + sum_j l1_j |b_j| + 0.5 l2_j b_j^2``.

    Returns ``(sweeps, converged, trace)``; ``trace[s]`` is the objective
    (without constant) after sweep ``s`` and ``trace[0]`` the starting value.
    """
    k = b.shape[0]
    grad = G @ b
    trace = np.empty(max_sweeps + 1)
    trace[0] = _enet_value(G, c, b, grad, l1, l2)
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        max_abs = 0.0
        for j in range(k):
            old = b[j]
            gjj = G[j, j]
            denom = gjj + l2[j]
            if denom <= 0.0:
                new = 0.0
            else:
                rho = c[j] - grad[j] + gjj * old
                new = _soft(rho, l1[j]) / denom
            if new != old:
                d = new - old
                for i in range(k):
                    grad[i] += d * G[i, j]
                b[j] = new
                if abs(d) > max_change:
                    max_change = abs(d)
            if abs(new) > max_abs:
                max_abs = abs(new)
        trace[sweep] = _enet_value(G, c, b, grad, l1, l2)
        if max_change <= tol * (1.0 + max_abs):
            return sweep, True, trace[: sweep + 1]
    return max_sweeps, False, trace


@njit(cache=True)
def _group_value(c, b, grad, free, gidx, gsize, lam):
    v = 0.0
    for j in range(b.shape[0]):
        v += 0.5 * b[j] * grad[j] - c[j] * b[j]
    for g in range(gsize.shape[0]):
        s = 0.0
        for a in range(gsize[g]):
            s += b[gidx[g, a]] ** 2
        v += lam * np.sqrt(s)
    return v


@njit(cache=True)
def group_bcd(G, c, b, free, gidx, gsize, evals, evecs, lam, max_sweeps, tol):
    """Block coordinate descent for ``f(b) + lam * sum_g ||b_g||_2``.

    ``free`` lists unpenalized coordinates (updated one at a time). Each group
    block is minimized exactly: with ``G_gg = Q diag(d) Q'`` and partial
    residual ``r``, the nonzero solution is ``(G_gg + (lam/t) I)^{-1} r`` where
    ``t = ||b_g||`` solves ``sum_i rhat_i^2 / (d_i t + lam)^2 = 1``.
    """
    k = b.shape[0]
    grad = G @ b
    trace = np.empty(max_sweeps + 1)
    trace[0] = _group_value(c, b, grad, free, gidx, gsize, lam)
    maxg = gidx.shape[1]
    r = np.empty(maxg)
    rhat = np.empty(maxg)
    newb = np.empty(maxg)
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        max_abs = 0.0
        for f in range(free.shape[0]):
            j = free[f]
            old = b[j]
            if G[j, j] > 0.0:
                new = (c[j] - grad[j] + G[j, j] * old) / G[j, j]
            else:
                new = 0.0
            if new != old:
                d = new - old
                for i in range(k):
                    grad[i] += d * G[i, j]
                b[j] = new
                max_change = max(max_change, abs(d))
            max_abs = max(max_abs, abs(new))
        for g in range(gsize.shape[0]):
            s = gsize[g]
            rnorm2 = 0.0
            for a in range(s):
                j = gidx[g, a]
                acc = c[j] - grad[j]
                for e in range(s):
                    acc += G[j, gidx[g, e]] * b[gidx[g, e]]
                r[a] = acc
                rnorm2 += acc * acc
            if np.sqrt(rnorm2) <= lam:
                for a in range(s):
                    newb[a] = 0.0
            else:
                for a in range(s):
                    acc = 0.0
                    for e in range(s):
                        acc += evecs[g, e, a] * r[e]
                    rhat[a] = acc
                t = 0.0
                for _ in range(200):
                    h = -1.0
                    dh = 0.0
                    for a in range(s):
                        den = evals[g, a] * t + lam
                        h += rhat[a] ** 2 / (den * den)
                        dh -= 2.0 * rhat[a] ** 2 * evals[g, a] / (den * den * den)
                    if dh == 0.0:
                        break
                    step = h / dh
                    t_new = t - step
                    if abs(t_new - t) <= 1e-15 * t_new:
                        t = t_new
                        break
                    t = t_new
                for a in range(s):
                    acc = 0.0
                    for e in range(s):
                        den = evals[g, e] * t + lam
                        acc += evecs[g, a, e] * t * rhat[e] / den
                    newb[a] = acc
            for a in range(s):
                j = gidx[g, a]
                d = newb[a] - b[j]
                if d != 0.0:
                    for i in range(k):
                        grad[i] += d * G[i, j]
                    b[j] = newb[a]
                    max_change = max(max_change, abs(d))
                max_abs = max(max_abs, abs(newb[a]))
        trace[sweep] = _group_value(c, b, grad, free, gidx, gsize, lam)
        if max_change <= tol * (1.0 + max_abs):
            return sweep, True, trace[: sweep + 1]
    return max_sweeps, False, trace
