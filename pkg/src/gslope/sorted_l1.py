"""Sorted (ordered weighted) l1 norm and its proximal operators."""

from __future__ import annotations

import numpy as np


def _check(v, lam):
    v = np.asarray(v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if v.shape != lam.shape or v.ndim != 1:
        raise ValueError("length mismatch: %s vs %s" % (v.shape, lam.shape))
    return v, lam


def eval_sorted_l1(v, lam) -> float:
    """``sum_i lam_i |v|_[i]`` with ``|v|`` sorted in decreasing order."""
    v, lam = _check(v, lam)
    return float(lam @ np.sort(np.abs(v))[::-1])


def _pava_stack(w):
    """Non-increasing isotonic fit of ``w`` by pool adjacent violators.

    Blocks are kept on a stack of (end, sum, count).
    """
    m = w.size
    ends = []
    sums = []
    counts = []
    for i in range(m):
        s = w[i]
        c = 1
        # merge while the new block's mean is >= the previous block's mean
        while sums and s * counts[-1] >= sums[-1] * c:
            s += sums.pop()
            c += counts.pop()
            ends.pop()
        ends.append(i)
        sums.append(s)
        counts.append(c)
    out = np.empty(m)
    start = 0
    for end, s, c in zip(ends, sums, counts):
        out[start:end + 1] = s / c
        start = end + 1
    return out


try:
    from scipy.optimize import isotonic_regression as _scipy_isotonic
except ImportError:  # scipy < 1.12
    _scipy_isotonic = None


def _isotonic_decreasing(w):
    if _scipy_isotonic is None or w.size < 2:
        return _pava_stack(w)
    return _scipy_isotonic(w, increasing=False).x


def _prox_sorted_decreasing(z, lam):
    """Prox of the sorted l1 norm for ``z`` already sorted decreasingly, ``z >= 0``.

    Non-increasing isotonic regression of ``z - lam``, clipped at zero.
    """
    out = _isotonic_decreasing(np.asarray(z - lam, dtype=float))
    np.maximum(out, 0.0, out=out)
    return out


def prox_sorted_l1(v, lam, step: float = 1.0) -> np.ndarray:
    """``argmin_u 1/2 ||u - v||^2 + step * J_lam(u)``.

    Magnitudes are sorted (stable, ties by index), shrunk through
    :func:`_prox_sorted_decreasing`, put back in place and re-signed.
    """
    v, lam = _check(v, lam)
    if not step > 0:
        raise ValueError("step must be positive")
    absv = np.abs(v)
    order = np.argsort(-absv, kind="stable")
    shrunk = _prox_sorted_decreasing(absv[order], step * lam)
    out = np.empty_like(v)
    out[order] = shrunk
    return np.sign(v) * out


def group_norms(b, groups) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.array([np.sqrt(b[g] @ b[g]) for g in groups])


def prox_group_slope(b, groups, lam, step: float = 1.0) -> np.ndarray:
    """Prox of ``step * J_lam(||b_I1||, ..., ||b_Im||)``.

    The penalty only sees group norms, so the prox is the sorted l1 prox on
    the norms followed by a radial rescaling of every block. ``groups`` is a
    sequence of index arrays or a :class:`~gslope.data.GroupPartition`.
    """
    groups = getattr(groups, "groups", groups)
    b = np.asarray(b, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if len(groups) != lam.size:
        raise ValueError("need one lambda per group")
    if not step > 0:
        raise ValueError("step must be positive")
    c = group_norms(b, groups)
    cstar = prox_sorted_l1(c, lam, step)
    out = np.zeros_like(b)
    for g, ci, cs in zip(groups, c, cstar):
        if ci > 0 and cs > 0:
            out[g] = b[g] * (cs / ci)
    return out


class BlockLayout:
    """Contiguous group layout for a working coefficient vector.

    The solvers keep active coordinates packed group after group; this holds
    the ``reduceat`` offsets so group norms and the group prox are vectorized.
    """

    def __init__(self, sizes):
        sizes = np.asarray(sizes, dtype=np.intp)
        self.sizes = sizes
        self.starts = (np.cumsum(sizes) - sizes).astype(np.intp)
        self.size = int(sizes.sum())

    @property
    def m(self):
        return self.sizes.size

    def norms(self, x):
        if self.size == 0:
            return np.zeros(0)
        return np.sqrt(np.add.reduceat(x * x, self.starts))

    def prox(self, x, lam):
        """Group sorted-l1 prox with already scaled ``lam`` (length ``m``)."""
        c = self.norms(x)
        order = np.argsort(-c, kind="stable")
        cs = np.empty_like(c)
        cs[order] = _prox_sorted_decreasing(c[order], lam)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(c > 0, cs / c, 0.0)
        return x * np.repeat(factor, self.sizes)
