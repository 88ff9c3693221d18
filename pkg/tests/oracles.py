"""Independent reference computations used by the tests.

Everything here is written with explicit loops and textbook formulas and
shares no code with the package beyond the dataclasses.
"""

import itertools

import numpy as np


def random_instance(rng, M=5, K=2, N=3, lam_scale=0.1):
    A = rng.normal(size=(N, M, M))
    gammas = 0.5 * (A + A.transpose(0, 2, 1))
    y = rng.normal(size=N)
    B = rng.normal(size=(M, K))
    C = rng.uniform(0.1, 1.0, size=(K, N))
    w = rng.normal(size=K)
    D = rng.normal(size=(N, M, K))
    Lam = lam_scale * rng.normal(size=(N, M, K))
    return gammas, y, B, C, w, D, Lam


def naive_objective(gammas, y, B, C, w, gamma, l1, l2, l3):
    total = 0.0
    N = len(gammas)
    for n in range(N):
        R = gammas[n] - B @ np.diag(C[:, n]) @ B.T
        total += np.sum(R * R)
    for n in range(N):
        total += gamma * (y[n] - C[:, n] @ w) ** 2
    total += l1 * np.sum(np.abs(B)) + l2 * np.sum(C * C) + l3 * np.sum(w * w)
    return total


def naive_smooth_augmented(gammas, y, B, C, w, D, Lam, gamma):
    """Augmented objective without the l1/l2 regularizers."""
    total = 0.0
    for n in range(len(gammas)):
        V = np.diag(C[:, n])
        R = gammas[n] - D[n] @ B.T
        total += np.sum(R * R)
        G = D[n] - B @ V
        total += np.trace(Lam[n].T @ G)
        total += 0.5 * np.sum(G * G)
        total += gamma * (y[n] - C[:, n] @ w) ** 2
    return total


def naive_augmented(gammas, y, B, C, w, D, Lam, gamma, l1, l2, l3):
    return (naive_smooth_augmented(gammas, y, B, C, w, D, Lam, gamma)
            + l1 * np.sum(np.abs(B)) + l2 * np.sum(C * C) + l3 * np.sum(w * w))


def central_difference(func, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp = X.copy()
        Xm = X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (func(Xp) - func(Xm)) / (2 * h)
    return G


def enumerate_nonneg_qp(H, f):
    """Exact minimizer of 1/2 c'Hc + f'c over c >= 0 by trying every free set."""
    K = len(f)
    best, best_val = np.zeros(K), 0.0
    for r in range(1, K + 1):
        for free in itertools.combinations(range(K), r):
            free = list(free)
            c = np.zeros(K)
            c[free] = np.linalg.solve(H[np.ix_(free, free)], -f[free])
            if np.all(c >= 0):
                val = 0.5 * c @ H @ c + f @ c
                if val < best_val:
                    best, best_val = c, val
    return best, best_val


def random_pd(rng, K, cond=1e3):
    Q, _ = np.linalg.qr(rng.normal(size=(K, K)))
    evals = np.exp(rng.uniform(0, np.log(cond), size=K))
    return (Q * evals) @ Q.T


def coordinate_descent_nonneg_qp(H, f, sweeps=20000):
    """Exact-minimization coordinate descent; slow but simple."""
    K = len(f)
    c = np.zeros(K)
    for _ in range(sweeps):
        for k in range(K):
            rest = H[k] @ c - H[k, k] * c[k]
            c[k] = max(0.0, -(f[k] + rest) / H[k, k])
    return c
