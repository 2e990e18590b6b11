"""Compiled inner loops for the linear SVM and the decision tree."""

import numba
import numpy as np


@numba.njit(cache=True)
def svm_dual_cd(X, y, C, max_iter, tol, order):
    """Dual coordinate descent for the L1-loss (hinge) linear SVM.

    ``X`` already carries the bias column; ``y`` is in {-1, +1}.
    Returns (w, iterations).
    """
    n, p = X.shape
    w = np.zeros(p)
    alpha = np.zeros(n)
    qd = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * X[i, j]
        qd[i] = s
    it = 0
    while it < max_iter:
        it += 1
        max_pg = -np.inf
        min_pg = np.inf
        for t in range(n):
            i = order[t]
            if qd[i] <= 0.0:
                continue
            g = 0.0
            for j in range(p):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            pg = g
            if alpha[i] == 0.0:
                if g > 0.0:
                    pg = 0.0
            elif alpha[i] == C:
                if g < 0.0:
                    pg = 0.0
            if pg > max_pg:
                max_pg = pg
            if pg < min_pg:
                min_pg = pg
            if abs(pg) > 1e-12:
                old = alpha[i]
                a = old - g / qd[i]
                if a < 0.0:
                    a = 0.0
                elif a > C:
                    a = C
                alpha[i] = a
                d = (a - old) * y[i]
                for j in range(p):
                    w[j] += d * X[i, j]
        if max_pg - min_pg <= tol:
            break
    return w, it


@numba.njit(cache=True)
def best_split(X, y, rows, min_leaf):
    """Gini-optimal axis-aligned split of ``rows``.

    Returns (feature, threshold, weighted_impurity); feature is -1 when no
    admissible split lowers the impurity. Ties keep the first feature and
    the smallest threshold.
    """
    n = rows.shape[0]
    pos = 0.0
    for r in range(n):
        pos += y[rows[r]]
    best = n - (pos * pos + (n - pos) * (n - pos)) / n
    best_f = -1
    best_t = 0.0
    vals = np.empty(n)
    lab = np.empty(n)
    for j in range(X.shape[1]):
        for r in range(n):
            vals[r] = X[rows[r], j]
        o = np.argsort(vals, kind="mergesort")
        for r in range(n):
            lab[r] = y[rows[o[r]]]
        left_pos = 0.0
        for i in range(1, n):
            left_pos += lab[i - 1]
            if i < min_leaf or n - i < min_leaf:
                continue
            a = vals[o[i - 1]]
            b = vals[o[i]]
            if not a < b:
                continue
            right_pos = pos - left_pos
            nl = float(i)
            nr = float(n - i)
            imp = (nl - (left_pos * left_pos + (nl - left_pos) * (nl - left_pos)) / nl
                   + nr - (right_pos * right_pos + (nr - right_pos) * (nr - right_pos)) / nr)
            if imp < best - 1e-12:
                best = imp
                best_f = j
                t = a + (b - a) / 2.0
                if not t < b:
                    t = a
                best_t = t
    return best_f, best_t, best
