"""Reference implementations used only by the tests.

They share no code with the package: plain loops, dense solves and a
textbook accelerated proximal gradient method.
"""

import numpy as np


def sem_objective_loop(a, s, mask, y, mu, lambda1, lambda2):
    """Term-by-term SEM objective; ``mask``/``y`` are node-by-slot arrays."""
    n, t_len = s.shape
    total = 0.0
    for t in range(t_len):
        for i in range(n):
            r = s[i, t]
            for j in range(n):
                r -= a[i, j] * s[j, t]
            total += r * r
        m = int(mask[:, t].sum())
        if m:
            fit = 0.0
            for i in range(n):
                if mask[i, t]:
                    fit += (y[i, t] - s[i, t]) ** 2
            total += mu / m * fit
    for i in range(n):
        for j in range(n):
            total += lambda1 * abs(a[i, j]) + lambda2 * a[i, j] ** 2
    return total


def svarm_objective_loop(a0, a1, s, z0, mask, y, mu, lambda1, lambda2):
    """Term-by-term SVAR objective; ``s`` has columns ``0..T``, ``mask``/``y`` columns ``1..T``."""
    n = s.shape[0]
    t_len = mask.shape[1]
    total = sum((s[i, 0] - z0[i]) ** 2 for i in range(n))
    for t in range(1, t_len + 1):
        for i in range(n):
            r = s[i, t]
            for j in range(n):
                r -= a0[i, j] * s[j, t] + a1[i, j] * s[j, t - 1]
            total += r * r
        m = int(mask[:, t - 1].sum())
        for i in range(n):
            if mask[i, t - 1]:
                total += mu / m * (y[i, t - 1] - s[i, t]) ** 2
    for a in (a0, a1):
        for i in range(n):
            for j in range(n):
                total += 2 * lambda1 * abs(a[i, j]) + lambda2 * a[i, j] ** 2
    return total


def _prox_l1(x, level):
    return np.sign(x) * np.maximum(np.abs(x) - level, 0.0)


def fista(target, design, l1, l2, free, n_iter=20000):
    """Minimise ``||target - X design||_F^2 + l1 ||X||_1 + l2 ||X||_F^2`` over ``X``.

    Entries where ``free`` is False are held at zero.
    """
    lip = 2 * (np.linalg.eigvalsh(design @ design.T)[-1] + l2)
    step = 1.0 / lip
    x = np.zeros((target.shape[0], design.shape[0]))
    z = x.copy()
    theta = 1.0
    for _ in range(n_iter):
        grad = -2 * (target - z @ design) @ design.T + 2 * l2 * z
        x_new = _prox_l1(z - step * grad, step * l1) * free
        theta_new = (1 + np.sqrt(1 + 4 * theta**2)) / 2
        z = x_new + (theta - 1) / theta_new * (x_new - x)
        x, theta = x_new, theta_new
    return x


def sem_topology_reference(s, lambda1, lambda2, n_iter=20000):
    n = s.shape[0]
    return fista(s, s, lambda1, lambda2, ~np.eye(n, dtype=bool), n_iter)


def svarm_topology_reference(cur, prev, lambda1, lambda2, n_iter=20000):
    n = cur.shape[0]
    design = np.vstack([cur, prev])
    free = np.hstack([~np.eye(n, dtype=bool), np.ones((n, n), dtype=bool)])
    x = fista(cur, design, 2 * lambda1, lambda2, free, n_iter)
    return x[:, :n], x[:, n:]


def slot_minimiser(a, idx, y, mu):
    """Dense normal equations of ``(M/mu)||(I - A)s||^2 + ||y - M s||^2``."""
    n = a.shape[0]
    m = len(idx)
    sel = np.zeros((m, n))
    sel[np.arange(m), idx] = 1.0
    d = np.eye(n) - a
    c = m / mu if m else 1.0
    return np.linalg.solve(c * d.T @ d + sel.T @ sel, sel.T @ y)


def multilag_recursion(a0, lags, noise):
    """``s(t) = A0 s(t) + sum_k A_k s(t-k) + e(t)`` from a zero past, one column per slot."""
    n, t_len = noise.shape
    inv = np.linalg.inv(np.eye(n) - a0)
    s = np.zeros((n, t_len))
    for t in range(t_len):
        rhs = noise[:, t].copy()
        for k, ak in enumerate(lags, 1):
            if t - k >= 0:
                rhs += ak @ s[:, t - k]
        s[:, t] = inv @ rhs
    return s


def central_difference(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g
