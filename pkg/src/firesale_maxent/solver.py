"""Lagrange-multiplier solver for bipartite maximum-entropy ensembles.

Every entry of the ensemble has an exponential-family law whose natural
parameters are sums of a row multiplier and a column multiplier,
``R[n] + Q[k]`` (vectors of length ``d``: d=1 for strengths only, d=2 for
strengths plus degrees). The constraints are

    sum_k E[T(X_nk)] = row_target[n],   sum_n E[T(X_nk)] = col_target[k],

with T the sufficient statistic. Increasing a multiplier lowers the
corresponding mean at a rate given by the entry covariance, so the Jacobian
of the system is the (positive semi-definite) sum of entry covariances.

Scheme: damped block fixed-point sweeps (each row solves its own equations
by one Newton step with the columns frozen, then the columns), switching to
full Newton steps once the sweeps stall. The first multiplier component must
stay strictly positive summed over a pair (the geometric ratio is below 1);
steps are shortened so it never falls below a tenth of its current value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError

log = logging.getLogger(__name__)

StatsFn = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass
class SolveResult:
    row_params: np.ndarray
    col_params: np.ndarray
    residual: float
    iterations: int
    newton_steps: int
    residual_trace: list = field(default_factory=list)


def _node_steps(theta_min, dtheta, fraction=0.9):
    """Per-node version of ``_boundary_step`` for a shift shared by a whole row or column."""
    alpha = np.ones_like(dtheta)
    neg = dtheta < 0
    alpha[neg] = np.minimum(1.0, fraction * theta_min[neg] / -dtheta[neg])
    return alpha


def _capped(step, max_step):
    """Scale per-node steps so no component moves by more than ``max_step``."""
    big = np.max(np.abs(step), axis=1)
    scale = np.where(big > max_step, max_step / np.where(big > 0, big, 1.0), 1.0)
    return step * scale[:, None]


def _boundary_step(theta, dtheta, fraction=0.9):
    """Largest step in (0, 1] keeping every theta above (1 - fraction) of itself."""
    shrinking = dtheta < 0
    if not shrinking.any():
        return 1.0
    return float(min(1.0, fraction * np.min(theta[shrinking] / -dtheta[shrinking])))


def _rebalance(r, q, row_free, col_free):
    # gauge R + c, Q - c leaves every entry unchanged
    c = 0.5 * (np.min(r[:, 0]) - np.min(q[:, 0]))
    r[:, 0] -= c
    q[:, 0] += c
    for a in range(1, r.shape[1]):
        fr, fc = row_free[:, a], col_free[:, a]
        if fr.any() and fc.any():
            c = 0.5 * (r[fr, a].mean() - q[fc, a].mean())
            r[fr, a] -= c
            q[fc, a] += c


def _mask_system(cov, fr, fc, row_free, col_free):
    d = cov.shape[-1]
    mr = row_free.astype(float)
    mc = col_free.astype(float)
    eye = np.eye(d)
    hrc = cov * mr[:, None, :, None] * mc[None, :, None, :]
    hrr = cov.sum(axis=1) * mr[:, :, None] * mr[:, None, :] + eye * (1 - mr)[:, :, None]
    hcc = cov.sum(axis=0) * mc[:, :, None] * mc[:, None, :] + eye * (1 - mc)[:, :, None]
    return hrr, hcc, hrc, fr * mr, fc * mc


def _newton_direction(cov, fr, fc, row_free, col_free):
    hrr, hcc, hrc, fr, fc = _mask_system(cov, fr, fc, row_free, col_free)
    n, k, d, _ = hrc.shape
    hrr_inv = np.linalg.pinv(hrr)
    t = np.einsum("nab,njbc->njac", hrr_inv, hrc)
    schur = -np.einsum("nkba,njbc->kajc", hrc, t)
    idx = np.arange(k)
    schur[idx, :, idx, :] += hcc
    g = np.einsum("nab,nb->na", hrr_inv, fr)
    rhs = fc - np.einsum("nkba,nb->ka", hrc, g)
    s2 = schur.reshape(k * d, k * d)
    diag = np.abs(np.diag(s2))
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    sol, *_ = np.linalg.lstsq(scale[:, None] * s2 * scale[None, :], scale * rhs.ravel(), rcond=None)
    dq = (scale * sol).reshape(k, d)
    dr = np.einsum("nab,nb->na", hrr_inv, fr - np.einsum("nkab,kb->na", hrc, dq))
    return dr, dq


def _block_solve(cov_sum, f, free):
    d = cov_sum.shape[-1]
    m = free.astype(float)
    h = cov_sum * m[:, :, None] * m[:, None, :] + np.eye(d) * (1 - m)[:, :, None]
    return np.einsum("nab,nb->na", np.linalg.pinv(h), f * m)


def solve(stats: StatsFn, row_target, col_target, r0, q0, row_free=None, col_free=None,
          tol=1e-8, max_iter=100_000, damping=0.5, stall_window=10, stall_ratio=0.5,
          max_step=2.0, inert=None, newton_window=2000):
    """Find row/column multipliers matching the targets.

    Parameters
    ----------
    stats : callable
        ``stats(R, Q) -> (mean, cov)`` with ``mean`` of shape (N, K, d) and
        ``cov`` of shape (N, K, d, d).
    row_target, col_target : arrays (N, d) and (K, d)
        Strictly positive targets.
    r0, q0 : arrays (N, d) and (K, d)
        Starting multipliers; ``r0[:, 0] + q0[:, 0]`` must be positive.
    row_free, col_free : bool arrays, optional
        Components held fixed (their equations are satisfied identically).
    max_step : float
        Largest change of any multiplier in one step. Large jumps can push
        probabilities to exactly 0 or 1 in floating point, where the
        Jacobian vanishes and the iteration cannot recover.
    newton_window : int
        Newton iterations allowed to pass without halving the residual
        before the system is declared stuck (typically infeasible targets).
    inert : bool array (N, K), optional
        Entries whose law does not involve the first component (always
        zero); they are exempt from the positivity requirement.

    Returns
    -------
    SolveResult

    Raises
    ------
    ConvergenceError
        If the residual does not reach ``tol`` within ``max_iter`` iterations
        or a Newton step cannot reduce it.
    """
    r = np.array(r0, dtype=float)
    q = np.array(q0, dtype=float)
    row_target = np.asarray(row_target, dtype=float)
    col_target = np.asarray(col_target, dtype=float)
    if row_free is None:
        row_free = np.ones_like(r, dtype=bool)
    if col_free is None:
        col_free = np.ones_like(q, dtype=bool)
    # fixed components count as satisfied
    rt = np.where(row_free, row_target, 1.0)
    ct = np.where(col_free, col_target, 1.0)

    def first(r, q):
        theta = r[:, None, 0] + q[None, :, 0]
        return theta if inert is None else np.where(inert, np.inf, theta)

    def evaluate(r, q):
        mean, cov = stats(r, q)
        fr = np.where(row_free, mean.sum(axis=1) - rt, 0.0)
        fc = np.where(col_free, mean.sum(axis=0) - ct, 0.0)
        res = max(np.max(np.abs(fr) / rt), np.max(np.abs(fc) / ct))
        return mean, cov, fr, fc, res

    def merit(fr, fc):
        return float(np.sum((fr / rt) ** 2) + np.sum((fc / ct) ** 2))

    _rebalance(r, q, row_free, col_free)
    mean, cov, fr, fc, res = evaluate(r, q)
    trace = [res]
    newton = False
    newton_steps = 0
    guard_hit = False
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(f"multiplier system not solved in {max_iter} iterations", trace)
        it += 1
        if not newton:
            theta = first(r, q)
            dr = _capped(_block_solve(cov.sum(axis=1), fr, row_free), max_step)
            alpha = _node_steps(theta.min(axis=1), dr[:, 0])
            guard_hit |= bool(np.any(alpha < 1))
            r += damping * alpha[:, None] * dr
            mean, cov, fr, fc, res = evaluate(r, q)
            theta = first(r, q)
            dq = _capped(_block_solve(cov.sum(axis=0), fc, col_free), max_step)
            alpha = _node_steps(theta.min(axis=0), dq[:, 0])
            guard_hit |= bool(np.any(alpha < 1))
            q += damping * alpha[:, None] * dq
            _rebalance(r, q, row_free, col_free)
            mean, cov, fr, fc, res = evaluate(r, q)
            trace.append(res)
            if len(trace) > stall_window and res > stall_ratio * trace[-1 - stall_window]:
                log.debug("fixed-point sweeps stalled at %.3e after %d sweeps; switching to Newton",
                          res, it)
                newton = True
            continue

        dr, dq = _newton_direction(cov, fr, fc, row_free, col_free)
        theta = first(r, q)
        alpha = _boundary_step(theta, dr[:, None, 0] + dq[None, :, 0])
        biggest = max(np.max(np.abs(dr)), np.max(np.abs(dq)))
        alpha = min(alpha, max_step / biggest) if biggest > 0 else alpha
        guard_hit |= alpha < 1
        m0 = merit(fr, fc)
        for _ in range(60):
            r_new, q_new = r + alpha * dr, q + alpha * dq
            out = evaluate(r_new, q_new)
            if merit(out[2], out[3]) <= (1 - 1e-4 * alpha) * m0:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError("Newton step failed to reduce the residual", trace)
        r, q = r_new, q_new
        _rebalance(r, q, row_free, col_free)
        mean, cov, fr, fc, res = evaluate(r, q)
        newton_steps += 1
        trace.append(res)
        if newton_steps > newton_window and res > 0.5 * trace[-1 - newton_window]:
            raise ConvergenceError("Newton iterations stalled; the targets may be infeasible",
                                   trace)
    if guard_hit:
        log.info("step length limited to keep geometric ratios below 1")
    return SolveResult(r, q, res, it, newton_steps, trace)
