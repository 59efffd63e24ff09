"""Cross-entropy reconstruction of a holdings matrix from its marginals.

Without extra constraints the KL-closest matrix to the CAPM guess is the
CAPM matrix itself, so ``capm_matrix`` is the whole answer. With a support
mask (some banks may not hold some assets) or another prior, the problem is
solved by iterative proportional fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import HoldingsMatrix, StrengthSequences
from .errors import InfeasibleSupportError, MaxIterExceeded, ValidationError


@dataclass(frozen=True)
class SupportMask:
    """Boolean N x K matrix; True marks entries allowed to be nonzero."""

    allowed: np.ndarray

    def __post_init__(self):
        m = np.array(self.allowed, dtype=bool, copy=True)
        if m.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "allowed", m)

    @classmethod
    def full(cls, n_banks: int, n_assets: int) -> "SupportMask":
        return cls(np.ones((n_banks, n_assets), dtype=bool))

    def check(self, s: StrengthSequences):
        if self.allowed.shape != (s.n_banks, s.n_assets):
            raise ValidationError(f"mask shape {self.allowed.shape} does not match "
                                  f"strengths ({s.n_banks}, {s.n_assets})")
        problems = [f"bank {s.bank_ids[i]} has positive size but no allowed asset"
                    for i in np.nonzero((s.bank_sizes > 0) & ~self.allowed.any(axis=1))[0]]
        problems += [f"asset {s.asset_ids[j]} has positive capitalization but no allowed holder"
                     for j in np.nonzero((s.asset_caps > 0) & ~self.allowed.any(axis=0))[0]]
        if problems:
            raise InfeasibleSupportError("; ".join(problems))


@dataclass
class IPFResult:
    matrix: np.ndarray
    iterations: int
    residual: float
    residual_trace: list = field(default_factory=list)
    kl_trace: list = field(default_factory=list)


def capm_matrix(s: StrengthSequences) -> HoldingsMatrix:
    """X_nk = A_n C_k / L."""
    x = np.outer(s.bank_sizes, s.asset_caps) / s.total
    return HoldingsMatrix(x, s.bank_ids, s.asset_ids)


def kl_divergence(x: np.ndarray, prior: np.ndarray) -> float:
    """sum X log(X / prior) with 0 log 0 = 0."""
    pos = x > 0
    return float(np.sum(x[pos] * np.log(x[pos] / prior[pos])))


def _marginal_residual(x, rows, cols):
    def rel(got, want):
        out = np.abs(got - want)
        pos = want > 0
        out[pos] /= want[pos]
        return out.max() if out.size else 0.0
    return max(rel(x.sum(axis=1), rows), rel(x.sum(axis=0), cols))


def feasible_support(support: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Entries of ``support`` that are positive in at least one feasible matrix.

    A feasible matrix is a max flow source -> banks -> assets -> sink. An
    allowed entry with zero flow can carry flow in another feasible solution
    iff it lies on a cycle of the residual graph, i.e. its bank and asset
    share a strongly connected component.
    """
    n, k = support.shape
    total = rows.sum()
    g = nx.DiGraph()
    for i in range(n):
        if rows[i] > 0:
            g.add_edge("s", ("r", i), capacity=float(rows[i]))
    for j in range(k):
        if cols[j] > 0:
            g.add_edge(("c", j), "t", capacity=float(cols[j]))
    for i, j in zip(*np.nonzero(support)):
        if rows[i] > 0 and cols[j] > 0:
            g.add_edge(("r", i), ("c", j))
    if "s" not in g or "t" not in g:
        raise InfeasibleSupportError("no positive marginals")
    value, flow = nx.maximum_flow(g, "s", "t")
    if value < total * (1 - 1e-9):
        raise InfeasibleSupportError(
            f"support admits total flow {float(value)!r} < required {float(total)!r}")

    eps = 1e-12 * total
    f = np.zeros((n, k))
    for i in range(n):
        for node, amount in flow.get(("r", i), {}).items():
            f[i, node[1]] = amount
    live = support & (rows[:, None] > 0) & (cols[None, :] > 0)
    src, dst = np.nonzero(live)
    back_i, back_j = np.nonzero(f > eps)
    graph = csr_matrix(
        (np.ones(src.size + back_i.size),
         (np.concatenate([src, n + back_j]), np.concatenate([n + dst, back_i]))),
        shape=(n + k, n + k))
    _, label = connected_components(graph, directed=True, connection="strong")
    same = label[:n, None] == label[None, n:]
    return live & ((f > eps) | same)


def ipf(prior: np.ndarray, rows: np.ndarray, cols: np.ndarray, tol: float = 1e-10,
        max_iter: int = 10_000, stall_window: int = 100, stall_eps: float = 1e-15,
        track_kl: bool = False) -> IPFResult:
    """Alternate row and column rescaling of ``prior`` until both marginals hold.

    Residual is the largest relative marginal violation over rows and columns.
    Zero prior entries stay zero.
    """
    x = np.array(prior, dtype=float, copy=True)
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    res = _marginal_residual(x, rows, cols)
    trace = [res]
    kls = [kl_divergence(x, prior)] if track_kl else []
    it = 0
    while res > tol:
        if it >= max_iter:
            raise MaxIterExceeded(f"IPF did not converge in {max_iter} iterations", res)
        it += 1
        for axis, target in ((1, rows), (0, cols)):
            got = x.sum(axis=axis)
            if np.any((got <= 0) & (target > 0)):
                raise InfeasibleSupportError("a positive marginal has no support left")
            scale = np.divide(target, got, out=np.zeros_like(target), where=got > 0)
            x *= scale[:, None] if axis == 1 else scale[None, :]
        res = _marginal_residual(x, rows, cols)
        trace.append(res)
        if track_kl:
            kls.append(kl_divergence(x, prior))
        if it >= stall_window and trace[-1 - stall_window] - res < stall_eps and res > tol:
            raise InfeasibleSupportError(
                f"marginal residual stalled at {res:.3e} over {stall_window} iterations")
    return IPFResult(x, it, res, trace, kls)


def cross_entropy_min(prior: HoldingsMatrix, s: StrengthSequences,
                      mask: Optional[SupportMask] = None, tol: float = 1e-10,
                      max_iter: int = 10_000) -> HoldingsMatrix:
    """Matrix with marginals ``s`` minimising KL divergence from ``prior``.

    Entries forbidden by ``mask`` are zeroed in the prior first. Entries that
    are zero in every feasible matrix are pruned up front so IPF converges
    geometrically instead of creeping towards the boundary.
    """
    if prior.shape != (s.n_banks, s.n_assets):
        raise ValidationError(f"prior shape {prior.shape} does not match strengths")
    if mask is None:
        mask = SupportMask.full(*prior.shape)
    mask.check(s)
    support = mask.allowed & (prior.entries > 0)
    rows, cols = s.bank_sizes, s.asset_caps
    live = support & (rows[:, None] > 0) & (cols[None, :] > 0)
    if not np.array_equal(live, (rows[:, None] > 0) & (cols[None, :] > 0)):
        live = feasible_support(support, rows, cols)
    p = np.where(live, prior.entries, 0.0)
    result = ipf(p, rows, cols, tol=tol, max_iter=max_iter)
    return HoldingsMatrix(result.matrix, s.bank_ids, s.asset_ids)
