"""Instance generators and independent oracles shared by the tests.

The oracles deliberately avoid the package's own prox and factorization
code: the prox is computed by exhaustive face enumeration (cross-checked
against cvxpy), orthogonalization by a hand-written Gram-Schmidt.
"""

import itertools

import cvxpy as cp
import numpy as np

from gslope.data import GroupedProblem, GroupPartition, oscar_lambdas


def random_problem(rng, n, m, max_size, *, duplicated=False, p=None, index=None, tau=3.0,
                   weights="unit"):
    """OSCAR-penalized problem with ``m`` groups of size ``U{1..max_size}``."""
    sizes = rng.integers(1, max_size, size=m, endpoint=True)
    return sized_problem(rng, n, sizes, duplicated=duplicated, p=p, index=index, tau=tau,
                         weights=weights)


def sized_problem(rng, n, sizes, *, duplicated=False, p=None, index=None, tau=3.0,
                  weights="unit"):
    """OSCAR-penalized problem with the given group sizes.

    ``duplicated`` builds every group from copies of one feature, otherwise
    blocks are independent Gaussian columns. Columns have variance ``1/n`` so
    their norms are close to 1. The response is a noisy combination of
    roughly 10% of the groups; ``p`` defaults to ``index * exp(-tau)`` with a
    random index in 1..3.
    """
    sizes = np.asarray(sizes)
    m = sizes.size
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    groups = [np.arange(bounds[i], bounds[i + 1]) for i in range(m)]
    if duplicated:
        X = np.repeat(rng.standard_normal((n, m)) / np.sqrt(n), sizes, axis=1)
    else:
        X = rng.standard_normal((n, bounds[-1])) / np.sqrt(n)
    beta = np.zeros(bounds[-1])
    for i in rng.choice(m, max(1, m // 10), replace=False):
        beta[groups[i]] = rng.standard_normal(sizes[i]) * 2
    y = X @ beta + 0.1 * rng.standard_normal(n)
    w = np.sqrt(sizes) if weights == "gl" else np.ones(m)
    prob = GroupedProblem(X, y, GroupPartition(tuple(groups), w))
    if p is None:
        p = (index or int(rng.integers(1, 4))) * np.exp(-tau)
    return prob.with_lambdas(oscar_lambdas(prob, p))


def sorted_l1_expr(u_abs, lam):
    """``J_lam`` of a non-negative cvxpy vector as a sum of ``sum_largest`` terms."""
    lam = np.asarray(lam, dtype=float)
    diffs = lam - np.append(lam[1:], 0.0)
    terms = [diffs[k] * cp.sum_largest(u_abs, k + 1) for k in range(lam.size) if diffs[k] != 0]
    return sum(terms) if terms else 0


def _solve(problem):
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError("cvxpy failed: %s" % problem.status)


def cvx_prox_sorted(v, lam, step=1.0):
    """Interior-point solution of the sorted-l1 prox (accurate to ~1e-5)."""
    v = np.asarray(v, dtype=float)
    u = cp.Variable(v.size)
    _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(u - v)
                                  + step * sorted_l1_expr(cp.abs(u), lam))))
    return u.value


def cvx_prox_group(b, groups, lam, step=1.0):
    b = np.asarray(b, dtype=float)
    u = cp.Variable(b.size)
    norms = cp.hstack([cp.norm(u[g], 2) for g in groups])
    _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(u - b)
                                  + step * sorted_l1_expr(norms, lam))))
    return u.value


def _faces(m):
    """Every face of ``{x_1 >= ... >= x_m >= 0}`` as (blocks, last block pinned to 0)."""
    for mask in itertools.product((False, True), repeat=m):
        blocks, cur = [], [0]
        for i in range(1, m):
            if mask[i - 1]:
                cur.append(i)
            else:
                blocks.append(cur)
                cur = [i]
        blocks.append(cur)
        yield blocks, mask[m - 1]


def exact_prox_sorted(v, lam, step=1.0):
    """Sorted-l1 prox by enumerating faces of the monotone cone.

    The optimum of a strictly convex quadratic over a polyhedral cone is the
    minimizer over the affine hull of some face; every feasible face
    minimizer is a candidate, the best one is exact.
    """
    v = np.asarray(v, dtype=float)
    m = v.size
    order = np.argsort(-np.abs(v))
    z = np.abs(v)[order]
    shift = z - step * np.asarray(lam, dtype=float)
    best, best_val = None, np.inf
    for blocks, pinned in _faces(m):
        x = np.empty(m)
        for blk in blocks:
            x[blk] = shift[blk].mean()
        if pinned:
            x[blocks[-1]] = 0.0
        if np.any(np.diff(x) > 1e-13) or np.any(x < -1e-13):
            continue
        val = 0.5 * np.sum((x - z) ** 2) + step * float(np.asarray(lam) @ x)
        if val < best_val:
            best, best_val = x, val
    out = np.empty(m)
    out[order] = best
    return np.sign(v) * out


def exact_prox_group(b, groups, lam, step=1.0):
    """Group prox: the optimum keeps each block parallel to ``b_I``.

    Rotating ``u_I`` towards ``b_I`` keeps the penalty and shrinks the
    distance, so only the block norms are unknown; those solve the sorted
    prox of the norms, found by :func:`exact_prox_sorted`.
    """
    b = np.asarray(b, dtype=float)
    norms = np.array([np.linalg.norm(b[g]) for g in groups])
    target = exact_prox_sorted(norms, lam, step)
    out = np.zeros_like(b)
    for g, c, t in zip(groups, norms, target):
        if c > 0:
            out[g] = b[g] * (t / c)
    return out


def gram_schmidt(A):
    """Modified Gram-Schmidt ``A = Q R`` for a full column rank ``A``."""
    A = np.array(A, dtype=float)
    n, k = A.shape
    Q = np.zeros((n, k))
    R = np.zeros((k, k))
    for j in range(k):
        v = A[:, j].copy()
        for i in range(j):
            R[i, j] = Q[:, i] @ v
            v -= R[i, j] * Q[:, i]
        R[j, j] = np.linalg.norm(v)
        Q[:, j] = v / R[j, j]
    return Q, R


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def group_lasso_solve(X, y, groups, c, weights, tol=1e-14, max_iter=200000):
    """``min 1/2||y - X beta||^2 + c sum_i w_i ||X_I beta_I||`` by FISTA.

    Each block is orthonormalized with Gram-Schmidt, turning the penalty into
    a plain group lasso on ``eta_I = R_I beta_I``; blocks must be full rank.
    """
    Qs, Rs = zip(*(gram_schmidt(X[:, g]) for g in groups))
    Q = np.hstack(Qs)
    sizes = [len(g) for g in groups]
    cuts = np.cumsum(sizes)[:-1]
    L = np.linalg.norm(Q, 2) ** 2
    eta = np.zeros(Q.shape[1])
    z, t = eta.copy(), 1.0
    thresh = c * np.asarray(weights) / L
    for _ in range(max_iter):
        u = z - Q.T @ (Q @ z - y) / L
        blocks = np.split(u, cuts)
        new = np.concatenate([
            max(0.0, 1.0 - th / np.linalg.norm(ub)) * ub if np.linalg.norm(ub) > 0 else ub
            for ub, th in zip(blocks, thresh)])
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = new + (t - 1) / t_new * (new - eta)
        done = np.max(np.abs(new - eta)) < tol
        eta, t = new, t_new
        if done:
            break
    beta = np.zeros(X.shape[1])
    for g, R, e in zip(groups, Rs, np.split(eta, cuts)):
        beta[g] = np.linalg.solve(R, e)
    return beta


def slope_solve(X, y, lam, tol=1e-14, max_iter=200000):
    """Plain SLOPE ``min 1/2||y - X beta||^2 + J_lam(beta)`` by FISTA.

    The sorted prox comes from cvxpy-free PAVA written out here so the
    reduction test does not lean on the package.
    """
    L = np.linalg.norm(X, 2) ** 2
    beta = np.zeros(X.shape[1])
    z, t = beta.copy(), 1.0
    for _ in range(max_iter):
        new = _pava_prox(z - X.T @ (X @ z - y) / L, np.asarray(lam) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = new + (t - 1) / t_new * (new - beta)
        done = np.max(np.abs(new - beta)) < tol
        beta, t = new, t_new
        if done:
            break
    return beta


def _pava_prox(v, lam):
    order = np.argsort(-np.abs(v))
    w = np.abs(v)[order] - lam
    # pool adjacent violators, quadratic but fine for small inputs
    blocks = [[x] for x in w]
    i = 0
    while i < len(blocks) - 1:
        if np.mean(blocks[i]) <= np.mean(blocks[i + 1]):
            blocks[i] = blocks[i] + blocks.pop(i + 1)
            i = max(i - 1, 0)
        else:
            i += 1
    fitted = np.concatenate([[max(np.mean(b), 0.0)] * len(b) for b in blocks])
    out = np.empty_like(v)
    out[order] = fitted
    return np.sign(v) * out


#: acceptance outcomes, criterion number -> (passed, detail); printed by conftest
CRITERIA = {}


def record(k, ok, detail):
    CRITERIA[k] = (bool(ok), detail)
    print("criterion %d: %s  %s" % (k, "PASS" if ok else "FAIL", detail))
    return ok
