"""Dual points, dual objective and duality gap for the decoupled problem.

For the squared loss ``f_i(z) = 1/2 (y_i - z)^2`` the conjugate is
``f_i*(theta) = 1/2 theta^2 + theta y_i`` and the dual problem reads

    max_theta  D(theta) = -sum_i f_i*(theta_i)
    s.t.       sum_{j<=i} ||Xhat_I^T theta||_[j] <= sum_{j<=i} lambda_j,  i = 1..m.

Dual points are obtained by shrinking the residual ``Xhat b - y`` just
enough to satisfy every prefix constraint. ``D`` is 1-strongly concave, so
``||theta - theta*|| <= sqrt(2 G)`` for the gap ``G = P(b) - D(theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sorted_l1 import eval_sorted_l1

#: slack on the prefix-sum feasibility test
FEASIBILITY_TOL = 1e-6
#: negative gaps above this are treated as rounding noise
GAP_NOISE = 1e-10


class DualityError(RuntimeError):
    """Infeasible dual point or a violation of weak duality."""


@dataclass(frozen=True)
class DualState:
    """A dual point; ``group_dual_norms`` is NaN for groups outside the active set."""

    theta: np.ndarray
    group_dual_norms: np.ndarray
    scale: float
    dual_value: float
    feasible: bool


@dataclass(frozen=True)
class GapCertificate:
    primal: float
    dual: float
    gap: float

    @property
    def radius(self) -> float:
        return math.sqrt(2.0 * max(self.gap, 0.0))


def conjugate_value(theta, y):
    """``f*(theta) = 1/2 theta^2 + theta y`` (elementwise)."""
    theta = np.asarray(theta, dtype=float)
    return 0.5 * theta * theta + theta * np.asarray(y, dtype=float)


def dual_objective(theta, y) -> float:
    return -float(np.sum(conjugate_value(theta, y)))


def feasibility_scale(rho, lam) -> float:
    """Largest ``s <= 1`` with every sorted prefix sum of ``s * rho`` within ``lam``'s.

    Prefixes whose ``rho`` sum is zero impose nothing.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.size == 0:
        return 1.0
    prefix = np.cumsum(np.sort(rho)[::-1])
    budget = np.cumsum(np.asarray(lam, dtype=float)[: rho.size])
    pos = prefix > 0
    if not np.any(pos):
        return 1.0
    return float(min(1.0, np.min(budget[pos] / prefix[pos])))


def is_feasible(group_dual_norms, lam, tol: float = FEASIBILITY_TOL) -> bool:
    """Prefix-sum test for membership in the dual ball."""
    t = np.sort(np.asarray(group_dual_norms, dtype=float))[::-1]
    budget = np.cumsum(np.asarray(lam, dtype=float)[: t.size])
    return bool(np.all(np.cumsum(t) <= budget + tol))


def _active_groups(dec, active):
    if active is None:
        return np.arange(dec.m)
    return np.asarray(active, dtype=np.intp)


def dual_candidate(b, dec, active=None) -> DualState:
    """Scaled residual ``theta = s (Xhat b - y)``.

    When ``active`` is given, the problem restricted to those groups (with the
    first ``|active|`` lambdas) is used; entries of ``b`` outside it must be 0.
    """
    b = np.asarray(b, dtype=float)
    groups = _active_groups(dec, active)
    lam = dec.lambdas.values[: groups.size]
    r = dec.Xhat @ b - dec.y
    rho = np.full(dec.m, np.nan)
    for i in groups:
        g = dec.partition.groups[i]
        rho[i] = np.linalg.norm(dec.Xhat[:, g].T @ r)
    s = feasibility_scale(rho[groups], lam)
    theta = s * r
    norms = s * rho
    return DualState(theta, norms, s, dual_objective(theta, dec.y),
                     is_feasible(norms[groups], lam))


def primal_objective(b, dec, active=None) -> float:
    groups = _active_groups(dec, active)
    b = np.asarray(b, dtype=float)
    r = dec.y - dec.Xhat @ b
    norms = np.array([np.linalg.norm(b[dec.partition.groups[i]]) for i in groups])
    return 0.5 * float(r @ r) + eval_sorted_l1(norms, dec.lambdas.values[: groups.size])


def _checked_gap(gap):
    if gap < -GAP_NOISE:
        raise DualityError("negative duality gap %.3e" % gap)
    return max(gap, 0.0)


def duality_gap(b, dual: DualState, dec, active=None) -> GapCertificate:
    """``G = P(b) - D(theta)``; raises :class:`DualityError` if ``theta`` is infeasible."""
    if not dual.feasible:
        raise DualityError("dual point is not feasible")
    primal = primal_objective(b, dec, active)
    return GapCertificate(primal, dual.dual_value, _checked_gap(primal - dual.dual_value))


def stable_gap(r, grad, b, penalty, scale) -> float:
    """Gap for ``theta = scale * r`` without the ``||y||^2`` cancellation.

    With ``r = Xhat b - y`` and ``grad = Xhat^T r`` the gap equals
    ``1/2 (1 - s)^2 ||r||^2 + J(b) + s <grad, b>``; both parts are >= 0 up to
    rounding (the second by Fenchel-Young).
    """
    gap = 0.5 * (1.0 - scale) ** 2 * float(r @ r) + penalty + scale * float(grad @ b)
    return _checked_gap(gap)
