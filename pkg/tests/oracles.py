"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from scratch with plain loops and
classic textbook algorithms. None of it calls into noisegeom, and the
eigenvalue oracle avoids LAPACK's eigensolvers entirely, so a test that
compares package output against these routines exercises two genuinely
different computational routes.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# symmetric eigenvalues via Householder tridiagonalization + Sturm bisection
# ---------------------------------------------------------------------------

def householder_tridiagonal(A):
    """Reduce a symmetric matrix to tridiagonal form; returns (diag, offdiag)."""
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    for j in range(n - 2):
        x = A[j + 1:, j].copy()
        norm_x = math.sqrt(float(x @ x))
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(norm_x, x[0] if x[0] != 0 else 1.0)
        vnorm2 = float(v @ v)
        if vnorm2 == 0.0:
            continue
        # apply P = I - 2 v v^T / (v^T v) on both sides of the trailing block
        sub = A[j + 1:, j + 1:]
        w = sub @ v * (2.0 / vnorm2)
        K = (v @ w) / vnorm2
        sub -= np.outer(v, w) + np.outer(w, v) - 2.0 * K * np.outer(v, v)
        A[j + 1:, j + 1:] = sub
        A[j + 1, j] = A[j, j + 1] = -math.copysign(norm_x, x[0] if x[0] != 0 else 1.0)
        A[j + 2:, j] = 0.0
        A[j, j + 2:] = 0.0
    return np.diag(A).copy(), np.diag(A, 1).copy()


def sturm_count_below(diag, off, x):
    """Number of eigenvalues of the tridiagonal matrix strictly below x."""
    count = 0
    d = 1.0
    tiny = 1e-300
    for i in range(len(diag)):
        b2 = off[i - 1] ** 2 if i > 0 else 0.0
        d = (diag[i] - x) - b2 / d
        if d == 0.0:
            d = -tiny
        if d < 0.0:
            count += 1
    return count


def eig_oracle(A, tol=1e-12):
    """All eigenvalues of a symmetric matrix, descending, by bisection."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    diag, off = householder_tridiagonal(A)
    # Gershgorin bounds for the tridiagonal form
    radii = np.zeros(n)
    for i in range(n):
        r = abs(off[i - 1]) if i > 0 else 0.0
        r += abs(off[i]) if i < n - 1 else 0.0
        radii[i] = r
    lo = float(np.min(diag - radii)) - 1.0
    hi = float(np.max(diag + radii)) + 1.0
    scale = max(abs(lo), abs(hi), 1.0)

    eigs = []
    for m in range(1, n + 1):
        a, b = lo, hi
        while b - a > tol * scale:
            mid = 0.5 * (a + b)
            if sturm_count_below(diag, off, mid) >= m:
                b = mid
            else:
                a = mid
        eigs.append(0.5 * (a + b))
    return np.array(sorted(eigs, reverse=True))


# ---------------------------------------------------------------------------
# power-law covariance sums
# ---------------------------------------------------------------------------

def power_law_srk(D):
    """Effective rank of diag(1/sqrt(k)) for k=1..D, by direct summation."""
    return math.fsum(1.0 / math.sqrt(k) for k in range(1, D + 1))


def power_law_dim(target_srk):
    """Smallest D with sum_{k<=D} 1/sqrt(k) >= target_srk, by incrementing."""
    total = 0.0
    k = 0
    while total < target_srk:
        k += 1
        total += 1.0 / math.sqrt(k)
        if k > 10 ** 7:
            raise RuntimeError("target unreachable")
    return k


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J


# ---------------------------------------------------------------------------
# brute-force second-moment matrices (plain python loops)
# ---------------------------------------------------------------------------

def fisher_bruteforce(grads):
    """(1/n) sum of gradient outer products, one sample at a time."""
    n = len(grads)
    p = len(grads[0])
    G = np.zeros((p, p))
    for g in grads:
        g = np.asarray(g, dtype=float)
        G += np.outer(g, g)
    return G / n


def sigma1_bruteforce(grads, residuals):
    """(1/n) sum of u_i^2 * outer(grad_i, grad_i)."""
    n = len(grads)
    p = len(grads[0])
    S = np.zeros((p, p))
    for g, u in zip(grads, residuals):
        g = np.asarray(g, dtype=float)
        S += (u * u) * np.outer(g, g)
    return S / n


def quadratic_form(M, v):
    return float(np.asarray(v) @ np.asarray(M) @ np.asarray(v))


# ---------------------------------------------------------------------------
# escape recursions evaluated the naive way
# ---------------------------------------------------------------------------

def gd_escape_ratio_naive(lams, w0, eta, T):
    """D_{t,1} for zero-noise dynamics, by literal per-step recursion.

    Overflows for large T at big steps; callers keep T modest.
    """
    lams = np.asarray(lams, dtype=float)
    w = np.array(w0, dtype=float)
    out = []
    for t in range(T + 1):
        head = lams[0] * w[0] ** 2
        tail = float(np.sum(lams[1:] * w[1:] ** 2))
        out.append(tail / head)
        w = w * (1.0 - eta * lams)
    return np.array(out)
