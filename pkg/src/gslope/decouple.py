"""Per-group orthogonalization of the design.

Writing each block as ``X_I = U R`` (thin QR) turns the group effect
``||X_I beta_I||`` into the plain norm ``||R beta_I||``. Folding the group
weight in as well gives the equivalent problem

    min_b  1/2 ||y - Xhat b||^2 + J_lambda(||b_I1||, ..., ||b_Im||)

with ``Xhat_I = U_i / w_i`` and ``b_I = w_i R_i beta_I``.

Blocks built by duplicating a feature are rank deficient. Those are factored
with column pivoting; ``U`` keeps ``k`` columns but the ones past the
numerical rank are zero (and so are the matching rows of ``R``), and mapping
back uses the minimum-norm solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import GroupedProblem, GroupPartition, LambdaSequence
from .sorted_l1 import eval_sorted_l1


class DecouplingError(ValueError):
    pass


@dataclass(frozen=True)
class GroupFactor:
    """``X_block[:, perm] = U @ R`` with ``R`` upper triangular, ``diag(R) >= 0``."""

    U: np.ndarray
    R: np.ndarray
    perm: np.ndarray
    rank: int

    @property
    def full_rank(self) -> bool:
        return self.rank == self.R.shape[0]

    def forward(self, beta_block):
        """``eta = R beta`` for a block of original coefficients."""
        return self.R @ np.asarray(beta_block)[self.perm]

    def backward(self, eta):
        """Minimum-norm ``beta`` with ``R beta = eta`` (exact when full rank)."""
        k = self.R.shape[0]
        r = self.rank
        z = np.zeros(k)
        if self.full_rank:
            z = linalg.solve_triangular(self.R, eta, lower=False)
        elif r > 0:
            z = np.linalg.lstsq(self.R[:r], eta[:r], rcond=None)[0]
        beta = np.empty(k)
        beta[self.perm] = z
        return beta


def factor_group(block, rtol: float = 1e-10) -> GroupFactor:
    """Thin pivoted QR of one ``n x k`` block.

    Columns of ``U`` beyond the numerical rank (``|R_jj| <= rtol * |R_00|``)
    are set to zero together with the trailing rows of ``R``.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2 or min(block.shape) < 1:
        raise DecouplingError("block must be a non-empty n x k matrix")
    n, k = block.shape
    if not np.any(block):
        raise DecouplingError("all-zero group block")
    Q, R, perm = linalg.qr(block, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0]))
    U = np.zeros((n, k))
    Rf = np.zeros((k, k))
    U[:, :rank] = Q[:, :rank]
    Rf[:rank] = R[:rank]
    signs = np.sign(np.diag(Rf)[:rank])
    signs[signs == 0] = 1.0
    U[:, :rank] *= signs
    Rf[:rank] *= signs[:, None]
    return GroupFactor(U, Rf, np.asarray(perm, dtype=np.intp), rank)


@dataclass(frozen=True)
class DecoupledProblem:
    Xhat: np.ndarray
    y: np.ndarray
    partition: GroupPartition
    lambdas: LambdaSequence
    factors: tuple

    @property
    def n(self):
        return self.Xhat.shape[0]

    @property
    def d(self):
        return self.Xhat.shape[1]

    @property
    def m(self):
        return self.partition.m

    @property
    def z_diag(self) -> np.ndarray:
        """Per-column scaling ``1 / w_g(j)``."""
        z = np.empty(self.d)
        for g, w in zip(self.partition.groups, self.partition.weights):
            z[g] = 1.0 / w
        return z

    @property
    def block_norms(self) -> np.ndarray:
        """Spectral norm of every ``Xhat_I``, which is ``1 / w_i`` by construction."""
        return 1.0 / self.partition.weights

    def live_columns(self, i: int) -> np.ndarray:
        """Columns of group ``i`` that are not zero padding."""
        g = self.partition.groups[i]
        return g[: self.factors[i].rank]

    def objective(self, b) -> float:
        """``1/2 ||y - Xhat b||^2 + J_lambda(||b||_I)``."""
        b = np.asarray(b, dtype=float)
        r = self.y - self.Xhat @ b
        norms = np.array([np.linalg.norm(b[g]) for g in self.partition.groups])
        return 0.5 * float(r @ r) + eval_sorted_l1(norms, self.lambdas.values)


def decouple(problem: GroupedProblem) -> DecoupledProblem:
    if problem.lambdas is None:
        raise ValueError("problem has no lambda sequence")
    part = problem.partition
    Xhat = np.zeros_like(problem.X)
    factors = []
    for i, (g, w) in enumerate(zip(part.groups, part.weights)):
        try:
            f = factor_group(problem.X[:, g])
        except DecouplingError as exc:
            raise DecouplingError("group %d: %s" % (i, exc)) from None
        # padding columns of U are zero, so live columns come first in g
        Xhat[:, g] = f.U / w
        factors.append(f)
    return DecoupledProblem(Xhat, problem.y, part, problem.lambdas, tuple(factors))


def forward_map(beta, dec: DecoupledProblem) -> np.ndarray:
    """Original coefficients to decoupled ones: ``b_I = w_i R_i beta_I``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dec.d,):
        raise ValueError("beta must have length %d" % dec.d)
    b = np.empty(dec.d)
    for g, w, f in zip(dec.partition.groups, dec.partition.weights, dec.factors):
        b[g] = w * f.forward(beta[g])
    return b


def recover_beta(b, dec: DecoupledProblem) -> np.ndarray:
    """Decoupled coefficients back to the original ones, ``X beta = Xhat b``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (dec.d,):
        raise ValueError("b must have length %d" % dec.d)
    beta = np.empty(dec.d)
    for g, w, f in zip(dec.partition.groups, dec.partition.weights, dec.factors):
        beta[g] = f.backward(b[g] / w)
    return beta


def group_slope_objective(problem: GroupedProblem, beta) -> float:
    """``1/2 ||y - X beta||^2 + J_lambda(W (||X_I beta_I||)_I)`` on the original design."""
    beta = np.asarray(beta, dtype=float)
    r = problem.y - problem.X @ beta
    part = problem.partition
    effects = np.array([np.linalg.norm(problem.X[:, g] @ beta[g]) for g in part.groups])
    return 0.5 * float(r @ r) + eval_sorted_l1(part.weights * effects, problem.lambdas.values)
