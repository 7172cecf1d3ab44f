"""Doubly dynamic safe screening of groups.

A group is discarded when

    ||Xhat_I^T theta|| + ||Xhat_I||_2 sqrt(2 G) < lambda_|A|

where ``A`` is the current active set. The left side shrinks with the gap;
the right side grows as ``A`` shrinks because lambda is non-increasing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


class ScreeningError(RuntimeError):
    pass


class SafenessViolation(RuntimeError):
    """A screened group is not zero in the reference solution."""


@dataclass
class ActiveSet:
    """Surviving group ids (sorted) and the removal history."""

    active: np.ndarray
    removed_log: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=np.intp)

    @classmethod
    def full(cls, m: int) -> "ActiveSet":
        return cls(np.arange(m))

    @property
    def threshold_index(self) -> int:
        return int(self.active.size)

    @property
    def screened(self) -> set:
        return {g for _, g in self.removed_log}

    def __len__(self):
        return self.active.size

    def remove(self, groups, iteration: int) -> "ActiveSet":
        groups = np.asarray(groups, dtype=np.intp)
        keep = ~np.isin(self.active, groups)
        log = self.removed_log + [(iteration, int(g)) for g in groups]
        return ActiveSet(self.active[keep], log)


def screen_pass(dual, gap, active: ActiveSet, block_norms, lambdas,
                iteration: int = 0) -> Tuple[ActiveSet, np.ndarray]:
    """One application of the test at threshold ``lambda_|A|``.

    ``dual.group_dual_norms`` and ``block_norms`` are indexed by group id;
    ``gap`` is a :class:`~gslope.duality.GapCertificate`.
    """
    if len(active) == 0:
        raise ScreeningError("active set is empty")
    lam = np.asarray(getattr(lambdas, "values", lambdas))
    ids = active.active
    threshold = lam[active.threshold_index - 1]
    lhs = np.asarray(dual.group_dual_norms)[ids] + np.asarray(block_norms)[ids] * gap.radius
    removed = ids[lhs < threshold]
    if removed.size == 0:
        return active, removed
    return active.remove(removed, iteration), removed


def screen_fixpoint(dual, gap, active: ActiveSet, block_norms, lambdas,
                    iteration: int = 0) -> Tuple[ActiveSet, int]:
    """Repeat :func:`screen_pass` until nothing more is removed.

    Returns the new active set and the number of passes. If every group is
    removed the empty set is returned; the caller treats that as ``b* = 0``.
    """
    passes = 0
    while len(active):
        passes += 1
        active, removed = screen_pass(dual, gap, active, block_norms, lambdas, iteration)
        if removed.size == 0:
            break
    return active, passes


def block_spectral_norm(block, tol: float = 1e-8, max_iter: int = 10000,
                        seed: int = 0) -> float:
    """Largest singular value of ``block`` by power iteration.

    Needed for the test on designs that were not orthogonalized, where
    ``||X_I||_2`` is not known in closed form.
    """
    A = np.asarray(block, dtype=float)
    if not np.any(A):
        return 0.0
    G = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        new = float(np.linalg.norm(w))
        if new == 0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            return float(np.sqrt(new))
        est = new
    raise ScreeningError("power iteration did not converge")


def screening_rate(screened, optimal_inactive) -> float:
    """Share of the optimum's zero groups that have been screened.

    ``screened`` is an :class:`ActiveSet` (its removal log is used) or a set
    of group ids. Screening a group outside ``optimal_inactive`` raises
    :class:`SafenessViolation`.
    """
    if isinstance(screened, ActiveSet):
        screened = screened.screened
    screened = set(int(g) for g in screened)
    inactive = set(int(g) for g in optimal_inactive)
    bad = screened - inactive
    if bad:
        raise SafenessViolation("screened groups %s are active at the optimum" % sorted(bad))
    if not inactive:
        return 1.0
    return len(screened) / len(inactive)


@dataclass
class TraceRecord:
    iteration: int
    active_groups: int
    gap: float
    radius: float
    threshold: float
    rate: Optional[float] = None


class ScreeningTrace:
    """Per-iteration record of active-set size, gap and screening rate."""

    header = ("iter", "active_groups", "gap", "rate")

    def __init__(self):
        self.records: List[TraceRecord] = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, iteration, active_groups, gap, radius=np.nan, threshold=np.nan):
        if self.records and active_groups > self.records[-1].active_groups:
            raise ScreeningError("active set grew")
        self.records.append(TraceRecord(iteration, active_groups, gap, radius, threshold))

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    @property
    def active_counts(self) -> np.ndarray:
        return np.array([r.active_groups for r in self.records])

    @property
    def rates(self) -> np.ndarray:
        return np.array([np.nan if r.rate is None else r.rate for r in self.records])

    def fill_rates(self, removed_log, optimal_inactive) -> None:
        """Set the screening rate of every record from a removal log.

        A group removed during iteration ``k`` counts from record ``k`` on,
        matching when the active count drops in the trace.
        """
        removals = sorted(removed_log)
        j = 0
        screened = set()
        for rec in self.records:
            while j < len(removals) and removals[j][0] <= rec.iteration:
                screened.add(removals[j][1])
                j += 1
            rec.rate = screening_rate(screened, optimal_inactive)

    def rows(self, prefix=()):
        for r in self.records:
            rate = "" if r.rate is None else repr(r.rate)
            yield list(prefix) + [r.iteration, r.active_groups, repr(r.gap), rate]

    def to_csv(self, path_or_stream) -> None:
        if hasattr(path_or_stream, "write"):
            w = csv.writer(path_or_stream, lineterminator="\n")
            w.writerow(self.header)
            w.writerows(self.rows())
            return
        with open(path_or_stream, "w", newline="") as fh:
            self.to_csv(fh)
