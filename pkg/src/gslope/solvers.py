"""Accelerated and stochastic proximal gradient solvers with safe screening.

Both solvers work on the decoupled problem and keep the coefficients of the
active groups packed contiguously (zero-padding columns of rank-deficient
groups are never stored). At the start of every (outer) iteration they form
the scaled-residual dual point and evaluate the duality gap; when screening
is on they then run the screening fixpoint and physically drop the removed
groups, and stop once the gap is below ``gap_tol``. The returned point is
the certified one after a final objective-decreasing prox-gradient step, so
its gap is at most the last recorded one.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .decouple import DecoupledProblem, recover_beta
from .duality import GapCertificate, dual_objective, feasibility_scale, stable_gap
from .screening import ActiveSet, ScreeningTrace, screen_fixpoint
from .sorted_l1 import BlockLayout

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__("non-finite objective at iteration %d (step too large?)" % iteration)


@dataclass
class SolverConfig:
    """Solver settings.

    ``screen_gate`` is a gap level below which screening is allowed to start
    (``inf``: from the first iteration); ``gate_ratio`` instead sets it to
    ``gate_ratio * P(b0)``. Once open, the gate stays open.
    """

    max_iter: int = 100000
    gap_tol: float = 1e-6
    step: str = "fixed"
    backtrack_eta: float = 0.5
    lipschitz: Optional[float] = None
    gamma: Optional[float] = None
    batch_size: int = 30
    inner_iters: int = 30
    screening: bool = False
    screen_gate: float = math.inf
    gate_ratio: Optional[float] = None
    paper_literal: bool = False
    seed: int = 0
    record_duals: bool = False

    def __post_init__(self):
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if self.inner_iters < 1 or self.batch_size < 1:
            raise ValueError("inner_iters and batch_size must be >= 1")
        if self.step not in ("fixed", "backtracking"):
            raise ValueError("step must be 'fixed' or 'backtracking'")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass
class SolverRun:
    b_final: np.ndarray
    beta_final: np.ndarray
    n_iter: int
    converged: bool
    certificates: List[GapCertificate]
    trace: ScreeningTrace
    active: ActiveSet
    wall_time: float
    step: float
    restarts: List[int] = field(default_factory=list)
    thetas: Optional[List[np.ndarray]] = None

    @property
    def gaps(self) -> np.ndarray:
        return np.array([c.gap for c in self.certificates])

    @property
    def final_gap(self) -> float:
        return self.certificates[-1].gap

    def zero_groups(self, dec: DecoupledProblem) -> set:
        return {i for i, g in enumerate(dec.partition.groups) if not np.any(self.b_final[g])}


def lipschitz_estimate(X, tol: float = 1e-6, max_iter: int = 10000,
                       safety: float = 1.01, seed: int = 0) -> float:
    """``safety * sigma_max(X)^2`` by power iteration on the smaller Gram matrix."""
    X = np.asarray(getattr(X, "Xhat", X), dtype=float)
    if X.size == 0 or not np.any(X):
        raise ValueError("design is zero")
    G = X.T @ X if X.shape[1] <= X.shape[0] else X @ X.T
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        new = float(np.linalg.norm(w))
        v = w / new
        if abs(new - est) <= tol * new:
            # Rayleigh quotient is the sharper estimate at the final vector
            return safety * max(new, float(v @ G @ v))
        est = new
    raise RuntimeError("power iteration did not converge in %d steps" % max_iter)


class _Workspace:
    """Design columns, layout and lambdas of the currently active groups."""

    def __init__(self, dec: DecoupledProblem, active: ActiveSet):
        self.dec = dec
        self.ids = active.active
        cols = [dec.live_columns(i) for i in self.ids]
        sizes = [c.size for c in cols]
        self.cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.intp)
        self.layout = BlockLayout(sizes)
        self.X = dec.Xhat[:, self.cols]
        self.lam = dec.lambdas.values[: self.ids.size]

    def shrink(self, active: ActiveSet):
        """New workspace for a smaller active set, plus the coordinate mask."""
        keep_groups = np.isin(self.ids, active.active)
        mask = np.repeat(keep_groups, self.layout.sizes)
        return _Workspace(self.dec, active), mask, keep_groups

    def take(self, b_full):
        return np.asarray(b_full, dtype=float)[self.cols].copy()

    def certificate(self, b, Xb):
        """Gap at ``b`` for the scaled residual dual point."""
        y = self.dec.y
        r = Xb - y
        grad = self.X.T @ r
        rho = self.layout.norms(grad)
        s = feasibility_scale(rho, self.lam)
        c = self.layout.norms(b)
        penalty = float(self.lam @ np.sort(c)[::-1])
        primal = 0.5 * float(r @ r) + penalty
        if not math.isfinite(primal):
            return None, s, r, grad, rho
        gap = stable_gap(r, grad, b, penalty, s)
        cert = GapCertificate(primal, dual_objective(s * r, y), gap)
        return cert, s, r, grad, rho


class _DualView:
    """Group dual norms indexed by group id, as the screening functions expect."""

    def __init__(self, m, ids, norms):
        self.group_dual_norms = np.full(m, np.nan)
        self.group_dual_norms[ids] = norms


class _Screener:
    def __init__(self, dec, config):
        self.dec = dec
        self.enabled = config.screening
        self.gate = config.screen_gate
        self.gate_ratio = config.gate_ratio
        self.open = False

    def __call__(self, active, cert, s, rho, ids, k):
        if not self.enabled or len(active) == 0:
            return active
        if self.gate_ratio is not None:
            # relative gate is fixed by the first objective value seen
            self.gate = self.gate_ratio * cert.primal
            self.gate_ratio = None
        if not self.open:
            self.open = cert.gap <= self.gate
            if not self.open:
                return active
        view = _DualView(self.dec.m, ids, s * rho)
        new, _ = screen_fixpoint(view, cert, active, self.dec.block_norms,
                                 self.dec.lambdas.values, iteration=k)
        return new


@dataclass
class _Screened:
    """State after the certificate and screening stage of one iteration."""

    ws: _Workspace
    active: ActiveSet
    b: np.ndarray
    Xb: np.ndarray
    cert: GapCertificate
    theta: np.ndarray
    grad: np.ndarray
    mask: Optional[np.ndarray] = None


def _check_and_screen(ws, active, b, Xb, screener, k) -> _Screened:
    """Certificate at ``b``, then screening.

    The certificate is recomputed when screening zeroed coefficients that
    were not already zero.
    """
    cert, s, r, grad, rho = ws.certificate(b, Xb)
    if cert is None:
        raise DivergenceError(k)
    new = screener(active, cert, s, rho, ws.ids, k)
    if len(new) == len(active):
        return _Screened(ws, active, b, Xb, cert, s * r, grad)
    ws, mask, _ = ws.shrink(new)
    changed = bool(np.any(b[~mask]))
    b = b[mask]
    if changed:
        Xb = ws.X @ b
        cert, s, r, grad, rho = ws.certificate(b, Xb)
        if cert is None:
            raise DivergenceError(k)
    else:
        grad = grad[mask]
    return _Screened(ws, new, b, Xb, cert, s * r, grad, mask)


def _polish(ws, b, grad, cert, step):
    """One prox-gradient step from the certified point, kept if it does not
    increase the objective.

    The step can only lower ``P`` while the dual point is unchanged, so the
    recorded gap still bounds the gap of the returned point. It removes the
    error left when the gap is at rounding level.
    """
    if b.size == 0:
        return b
    new = ws.layout.prox(b - step * grad, step * ws.lam)
    r = ws.X @ new - ws.dec.y
    primal = 0.5 * float(r @ r) + float(ws.lam @ np.sort(ws.layout.norms(new))[::-1])
    return new if primal <= cert.primal else b


def _finish(dec, ws, b, k, converged, certs, trace, active, t0, step, restarts, thetas):
    b_full = np.zeros(dec.d)
    b_full[ws.cols] = b
    beta = recover_beta(b_full, dec)
    return SolverRun(b_full, beta, k, converged, certs, trace, active,
                     time.perf_counter() - t0, step, restarts, thetas)


def _start(dec, b0):
    active = ActiveSet.full(dec.m)
    ws = _Workspace(dec, active)
    b = np.zeros(ws.cols.size) if b0 is None else ws.take(b0)
    return active, ws, b


def apgd_solve(dec: DecoupledProblem, config: Optional[SolverConfig] = None,
               b0=None) -> SolverRun:
    """FISTA on the decoupled problem, optionally with screening.

    The prox step is ``1/L``; the scalar momentum sequence ``t_k`` is reset to
    1 whenever screening removes a group. ``b0`` (length ``d``) warm-starts.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    active, ws, b = _start(dec, b0)
    L = cfg.lipschitz
    if L is None and cfg.step == "fixed":
        L = lipschitz_estimate(ws.X) if ws.cols.size else 1.0
    if L is None:
        L = 1.0
    y = dec.y
    Xb = ws.X @ b
    bh, Xbh = b.copy(), Xb.copy()
    t = 1.0
    certs, trace, restarts = [], ScreeningTrace(), []
    thetas = [] if cfg.record_duals else None
    screener = _Screener(dec, cfg)
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        st = _check_and_screen(ws, active, b, Xb, screener, k)
        ws, active, b, Xb, cert = st.ws, st.active, st.b, st.Xb, st.cert
        if st.mask is not None:
            changed = np.any(bh[~st.mask])
            bh = bh[st.mask]
            if changed:
                Xbh = ws.X @ bh
            t = 1.0
            restarts.append(k)
        certs.append(cert)
        if thetas is not None:
            thetas.append(st.theta)
        trace.append(k, len(active), cert.gap, cert.radius, _threshold(ws))
        if cert.gap <= cfg.gap_tol:
            converged = True
            b = _polish(ws, b, st.grad, cert, 1.0 / L)
            break

        rh = Xbh - y
        gh = ws.X.T @ rh
        if cfg.step == "fixed":
            b_new = ws.layout.prox(bh - gh / L, ws.lam / L)
            Xb_new = ws.X @ b_new
        else:
            fh = 0.5 * float(rh @ rh)
            while True:
                b_new = ws.layout.prox(bh - gh / L, ws.lam / L)
                Xb_new = ws.X @ b_new
                diff = b_new - bh
                rn = Xb_new - y
                if 0.5 * float(rn @ rn) <= fh + float(gh @ diff) + 0.5 * L * float(diff @ diff) * (1 + 1e-12):
                    break
                L /= cfg.backtrack_eta
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        coef = (t - 1.0) / t_new
        bh = b_new + coef * (b_new - b)
        Xbh = Xb_new + coef * (Xb_new - Xb)
        b, Xb, t = b_new, Xb_new, t_new
    else:
        logger.warning("apgd: max_iter=%d reached with gap %.3e", cfg.max_iter, certs[-1].gap)
    return _finish(dec, ws, b, k, converged, certs, trace, active, t0, L, restarts, thetas)


def _threshold(ws):
    return float(ws.lam[-1]) if ws.lam.size else math.inf


def default_gamma(X, batch_size: int) -> float:
    """Step for the variance-reduced solver.

    ``1 / (L + c * n * max_i ||x_i||^2)`` with ``c = (n - l) / (l (n - 1))``,
    the without-replacement variance factor of a size-``l`` mini-batch; it is
    ``1/L`` when the batch is the whole sample.
    """
    X = np.asarray(X)
    n = X.shape[0]
    l = min(batch_size, n)
    L = lipschitz_estimate(X, safety=1.0)
    row_max = float(np.max(np.einsum("ij,ij->i", X, X)))
    c = (n - l) / (l * (n - 1)) if n > 1 else 0.0
    return 1.0 / (L + c * n * row_max)


def svrg_direction(XI, b_inner, b_snap, full_grad, n: int, paper_literal: bool = False):
    """Variance-reduced gradient from the mini-batch rows ``XI``.

    ``(n/l) (grad f_I(b_inner) - grad f_I(b_snap)) + full_grad``; with
    ``paper_literal`` the difference is divided by ``l`` instead, which is
    biased for a sum-form loss.
    """
    l = XI.shape[0]
    diff = XI.T @ (XI @ (b_inner - b_snap))
    scale = 1.0 / l if paper_literal else n / l
    return scale * diff + full_grad


def spgd_solve(dec: DecoupledProblem, config: Optional[SolverConfig] = None,
               b0=None) -> SolverRun:
    """Proximal SVRG with screening once per outer iteration.

    Each outer iteration takes the full gradient at the snapshot (also used
    for the gap) and then ``inner_iters`` prox steps of size ``gamma`` on
    mini-batches of ``batch_size`` rows drawn without replacement.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    active, ws, b = _start(dec, b0)
    n = dec.n
    l = min(cfg.batch_size, n)
    gamma = cfg.gamma
    if gamma is None:
        gamma = default_gamma(ws.X, l) if ws.cols.size else 1.0
    Xb = ws.X @ b
    certs, trace, restarts = [], ScreeningTrace(), []
    thetas = [] if cfg.record_duals else None
    screener = _Screener(dec, cfg)
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        st = _check_and_screen(ws, active, b, Xb, screener, k)
        ws, active, b, Xb, cert, grad = st.ws, st.active, st.b, st.Xb, st.cert, st.grad
        if st.mask is not None:
            restarts.append(k)
        certs.append(cert)
        if thetas is not None:
            thetas.append(st.theta)
        trace.append(k, len(active), cert.gap, cert.radius, _threshold(ws))
        if cert.gap <= cfg.gap_tol:
            converged = True
            b = _polish(ws, b, grad, cert, gamma)
            break

        lam = gamma * ws.lam
        bt = b.copy()
        for _ in range(cfg.inner_iters):
            batch = rng.choice(n, size=l, replace=False)
            v = svrg_direction(ws.X[batch], bt, b, grad, n, cfg.paper_literal)
            bt = ws.layout.prox(bt - gamma * v, lam)
        b = bt
        Xb = ws.X @ b
    else:
        logger.warning("spgd: max_iter=%d reached with gap %.3e", cfg.max_iter, certs[-1].gap)
    return _finish(dec, ws, b, k, converged, certs, trace, active, t0, gamma, restarts, thetas)
