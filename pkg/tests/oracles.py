"""Independent reference computations used as test oracles.

Each one is written from the defining formula without calling the package code
it checks.
"""
import itertools

import numpy as np


def brute_force_assignment(neg_ll, beta, alpha):
    """Exhaustive minimum over every ``K ** (r_w * T)`` labelling."""
    T, r_w, K = neg_ll.shape
    labs = np.array(list(itertools.product(range(K), repeat=T * r_w)), dtype=int).reshape(-1, T, r_w)
    t_idx, r_idx = np.meshgrid(np.arange(T), np.arange(r_w), indexing="ij")
    cost = neg_ll[t_idx, r_idx, labs].sum(axis=(1, 2))
    cost = cost + beta * (labs[:, 1:, :] != labs[:, :-1, :]).sum(axis=(1, 2))
    cost = cost + alpha * (labs[:, :, 1:] != labs[:, :, :-1]).sum(axis=(1, 2))
    i = int(np.argmin(cost))
    return float(cost[i]), labs[i]


def dense_log_density(x, mu, A):
    """Gaussian log density via an LU determinant and an explicit quadratic form."""
    n = len(x)
    d = x - mu
    return 0.5 * np.log(np.linalg.det(A)) - 0.5 * d @ A @ d - 0.5 * n * np.log(2 * np.pi)


def propagation_by_projected_gradient(adj_norm, s, c, tol=1e-14, max_iter=200000):
    """Minimize ``c b^T (I - A) b + (1 - c) ||b - s||^2`` over ``b >= 0`` by projected gradient."""
    n = len(s)
    H = 2 * (c * (np.eye(n) - adj_norm) + (1 - c) * np.eye(n))
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    b = np.zeros(n)
    for _ in range(max_iter):
        grad = H @ b - 2 * (1 - c) * s
        nxt = np.maximum(b - step * grad, 0.0)
        if np.max(np.abs(nxt - b)) < tol:
            return nxt
        b = nxt
    return b


def single_layer_rca(gt, obs, c, xi, theta, eps, max_iter, tol):
    """Plain one-network causal ranking written out step by step.

    Degree-normalize ``|gt|``, propagate with ``(1 - c)(I - c A)^-1``, mark the
    ground-truth edges whose observed strength fell below ``theta`` of it, then
    run the quarter-power multiplicative updates on ``s`` until the objective
    stalls.
    """
    n = gt.shape[0]
    W = np.abs(gt).copy()
    for i in range(n):
        W[i, i] = 0.0
    deg = W.sum(axis=1)
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if deg[i] > 0 and deg[j] > 0:
                A[i, j] = W[i, j] / np.sqrt(deg[i] * deg[j])
    E = (1 - c) * np.linalg.solve(np.eye(n) - c * A, np.eye(n))
    M = np.zeros((n, n))
    B = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and abs(gt[i, j]) > eps:
                M[i, j] = 1.0
                if abs(obs[i, j]) < theta * abs(gt[i, j]):
                    B[i, j] = A[i, j]

    def objective(s):
        b = E @ s
        return np.sum((np.outer(b, b) * M - B) ** 2) + xi * np.sum(np.abs(s))

    s = np.full(n, 0.5)
    prev = objective(s)
    for _ in range(max_iter):
        b = E @ s
        pos = 4 * E.T @ ((np.outer(b, b) * M) @ b) + xi
        neg = 2 * E.T @ (((B + B.T) * M) @ b)
        s = s * (neg / np.maximum(pos, 1e-12)) ** 0.25
        cur = objective(s)
        if abs(prev - cur) <= tol * max(abs(prev), 1e-12):
            break
        prev = cur
    return s
