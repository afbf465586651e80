"""Independent reference computations used only by the tests.

Everything here is written with plain Python loops so it shares no code path
with the vectorised implementation under test.
"""
import itertools
import math

import numpy as np


def naive_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i][p] * b[p][j]
            out[i][j] = acc
    return np.array(out)


def jacobi_eigenvalues(s, tol=1e-14, max_rot=10000):
    """Classical two-sided Jacobi on a symmetric matrix (largest off-diagonal first)."""
    a = [list(map(float, row)) for row in s]
    n = len(a)
    for _ in range(max_rot):
        p, q, big = 0, 1, 0.0
        for i in range(n):
            for j in range(i + 1, n):
                if abs(a[i][j]) > big:
                    p, q, big = i, j, abs(a[i][j])
        scale = math.sqrt(sum(a[i][i] ** 2 for i in range(n))) or 1.0
        if big <= tol * scale:
            break
        theta = (a[q][q] - a[p][p]) / (2 * a[p][q])
        t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1))
        c = 1 / math.sqrt(t * t + 1)
        s_ = t * c
        for k in range(n):
            akp, akq = a[k][p], a[k][q]
            a[k][p], a[k][q] = c * akp - s_ * akq, s_ * akp + c * akq
        for k in range(n):
            apk, aqk = a[p][k], a[q][k]
            a[p][k], a[q][k] = c * apk - s_ * aqk, s_ * apk + c * aqk
    return sorted((a[i][i] for i in range(n)), reverse=True)


def halfspace_moments(x, y, r):
    """Sigma and beta over {x : r.x > 0} by explicit enumeration."""
    d = len(x[0])
    sig = [[0.0] * d for _ in range(d)]
    beta = [0.0] * d
    n = 0
    for xi, yi in zip(x, y):
        if sum(a * b for a, b in zip(xi, r)) > 0:
            n += 1
            for i in range(d):
                beta[i] += yi * xi[i]
                for j in range(d):
                    sig[i][j] += xi[i] * xi[j]
    return np.array(sig) / n, np.array(beta) / n


def finite_difference(fun, params, h=1e-5):
    """Central differences of scalar ``fun(list_of_arrays)`` for every entry."""
    grads = []
    for l, w in enumerate(params):
        g = np.zeros_like(w)
        for idx in itertools.product(*[range(s) for s in w.shape]):
            plus = [p.copy() for p in params]
            minus = [p.copy() for p in params]
            plus[l][idx] += h
            minus[l][idx] -= h
            g[idx] = (fun(plus) - fun(minus)) / (2 * h)
        grads.append(g)
    return grads


def max_margin_enumeration(x, y):
    """Hard-margin direction by trying every active set.

    For each subset S, solve min ||w|| s.t. y_i w.x_i = 1 on S (minimum-norm
    solution); keep it when all constraints hold and the multipliers are
    non-negative. The smallest feasible ||w|| wins.
    """
    z = [np.asarray(xi, dtype=float) * yi for xi, yi in zip(x, y)]
    best = None
    for k in range(1, len(z) + 1):
        for subset in itertools.combinations(range(len(z)), k):
            zs = np.array([z[i] for i in subset])
            gram = zs @ zs.T
            try:
                lam = np.linalg.solve(gram, np.ones(k))
            except np.linalg.LinAlgError:
                continue
            if np.any(lam < -1e-12):
                continue
            w = zs.T @ lam
            if all(float(zi @ w) >= 1 - 1e-9 for zi in z):
                if best is None or np.linalg.norm(w) < np.linalg.norm(best) - 1e-12:
                    best = w
    return best


def plateau_curve(t, t_drop1, t_flat, levels=(1.0, 0.5, 0.1), width=2.0):
    """Loss that falls from levels[0] to levels[1] around t_drop1, stays flat for
    t_flat, then falls to levels[2]; transitions are linear ramps of ``width``."""
    t = np.asarray(t, dtype=float)
    a, b, c = levels
    first = np.clip((t - t_drop1) / width, 0, 1)
    start2 = t_drop1 + width + t_flat
    second = np.clip((t - start2) / width, 0, 1)
    return a - (a - b) * first - (b - c) * second
