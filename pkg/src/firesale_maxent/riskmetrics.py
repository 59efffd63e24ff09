"""Fire-sale spillover metrics: systemicness, aggregate and indirect vulnerability.

Banks target leverage and sell proportionally to pre-shock holdings, so a
shock ``eps`` to asset returns propagates through common holdings with a
linear price impact ``ell`` per dollar sold. For bank n::

    Gamma_n = sum_k C_k ell_k W_nk            (C_k = sum_m A_m W_mk)
    S_n     = Gamma_n (A_n / E) B_n r_n       (r = W eps, E = total equity)
    AV      = sum_n S_n
    IV_n    = (1 + B_n) sum_k ell_k W_nk sum_m W_mk A_m B_m r_m

Summation order: AV is ``numpy.sum`` over the contiguous 1-D vector S, which
numpy evaluates by pairwise summation. Everything else is vectorised and
row-independent given the column aggregates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BankSheet, HoldingsMatrix, MarketParams, weights
from .errors import InconsistentSheetError, ValidationError, ZeroRowError

log = logging.getLogger(__name__)

SHEET_RTOL = 1e-9


@dataclass(frozen=True)
class RiskReport:
    systemicness: np.ndarray
    indirect_vulnerability: np.ndarray
    aggregate_vulnerability: float
    portfolio_returns: np.ndarray
    bank_ids: tuple
    total_equity: float
    dropped_banks: tuple = ()
    metadata: dict = field(default_factory=dict)


def _check_market(x: HoldingsMatrix, mkt: MarketParams):
    if mkt.n_assets != x.n_assets:
        raise ValidationError(f"market has {mkt.n_assets} assets, holdings have {x.n_assets}")


def _check_sheet(x: HoldingsMatrix, sheet: BankSheet):
    if sheet.n_banks != x.n_banks:
        raise InconsistentSheetError(f"sheet has {sheet.n_banks} banks, holdings have {x.n_banks}")
    rows = x.entries.sum(axis=1)
    gap = np.abs(sheet.sizes - rows)
    scale = np.maximum(np.abs(rows), np.abs(sheet.sizes))
    bad = np.nonzero(gap > SHEET_RTOL * scale)[0]
    if bad.size:
        names = [x.bank_ids[i] for i in bad[:10]]
        raise InconsistentSheetError(
            f"bank sizes disagree with holdings row sums for {bad.size} banks, e.g. {names}")


def evaluate_metrics(entries: np.ndarray, sizes: np.ndarray, leverages: np.ndarray,
                     total_equity: float, illiquidity: np.ndarray, shock: np.ndarray):
    """Compute (S, IV, r, Gamma) with ``sizes`` as the portfolio normaliser.

    For an observed matrix ``sizes`` are its row sums and this is the usual
    metric. For a matrix drawn from an ensemble the observed sizes are held
    fixed, so ``W = X / A*`` and ``sum_m A_m W_mk`` is the sampled column
    sum. Portfolio returns always use the sampled composition
    ``sum_k X_nk eps_k / sum_k X_nk``; rows that are empty give zero metrics.
    """
    x = np.asarray(entries, dtype=float)
    a = np.asarray(sizes, dtype=float)
    b = np.asarray(leverages, dtype=float)
    ell = np.asarray(illiquidity, dtype=float)
    eps = np.asarray(shock, dtype=float)

    w = np.zeros_like(x)
    pos = a > 0
    w[pos] = x[pos] / a[pos, None]
    rows = x.sum(axis=1)
    held = rows > 0
    r = np.zeros(x.shape[0])
    r[held] = (x[held] @ eps) / rows[held]

    col = a @ w
    gamma = w @ (col * ell)
    s = gamma * (a / total_equity) * b * r
    iv = (1.0 + b) * ((w * ell) @ (w.T @ (a * b * r)))
    return s, iv, r, gamma


def portfolio_returns(x: HoldingsMatrix, mkt: MarketParams) -> np.ndarray:
    """r_n = sum_k W_nk eps_k."""
    _check_market(x, mkt)
    return weights(x) @ mkt.shock


def gamma(x: HoldingsMatrix, mkt: MarketParams) -> np.ndarray:
    """Gamma_n = sum_k C_k ell_k W_nk."""
    _check_market(x, mkt)
    w = weights(x)
    return w @ (x.entries.sum(axis=0) * mkt.illiquidity)


def _prepared(x, sheet, mkt):
    _check_market(x, mkt)
    _check_sheet(x, sheet)
    weights(x)  # raises ZeroRowError
    return evaluate_metrics(x.entries, x.entries.sum(axis=1), sheet.leverages,
                            sheet.total_equity, mkt.illiquidity, mkt.shock)


def systemicness(x: HoldingsMatrix, sheet: BankSheet, mkt: MarketParams) -> np.ndarray:
    """S_n = Gamma_n (A_n / E) B_n r_n."""
    return _prepared(x, sheet, mkt)[0]


def aggregate_vulnerability(s) -> float:
    return float(np.sum(np.ascontiguousarray(s, dtype=float)))


def indirect_vulnerability(x: HoldingsMatrix, sheet: BankSheet, mkt: MarketParams) -> np.ndarray:
    """IV_n = (1 + B_n) sum_k ell_k W_nk sum_m W_mk A_m B_m r_m."""
    return _prepared(x, sheet, mkt)[1]


def risk_report(x: HoldingsMatrix, sheet: BankSheet, mkt: MarketParams) -> RiskReport:
    """All metrics for one observed matrix.

    Banks holding nothing are dropped with a warning; the total equity E
    then covers retained banks only.
    """
    _check_market(x, mkt)
    _check_sheet(x, sheet)
    rows = x.entries.sum(axis=1)
    keep = rows > 0
    dropped = tuple(b for b, k in zip(x.bank_ids, keep) if not k)
    if dropped:
        log.warning("dropping %d banks with zero holdings: %s", len(dropped), list(dropped)[:10])
        if not keep.any():
            raise ZeroRowError(dropped)
        ids = tuple(b for b, k in zip(x.bank_ids, keep) if k)
        x = HoldingsMatrix(x.entries[keep], ids, x.asset_ids)
        sheet = sheet.subset(keep)
    s, iv, r, _ = _prepared(x, sheet, mkt)
    return RiskReport(
        systemicness=s,
        indirect_vulnerability=iv,
        aggregate_vulnerability=aggregate_vulnerability(s),
        portfolio_returns=r,
        bank_ids=x.bank_ids,
        total_equity=sheet.total_equity,
        dropped_banks=dropped,
        metadata={"equity_scope": "retained banks only"},
    )


def fixed_size_metrics(entries: np.ndarray, sheet: BankSheet, mkt: MarketParams):
    """Metrics of a sampled matrix with balance-sheet sizes and leverage held at ``sheet``."""
    s, iv, _, _ = evaluate_metrics(entries, sheet.sizes, sheet.leverages, sheet.total_equity,
                                   mkt.illiquidity, mkt.shock)
    return s, iv, aggregate_vulnerability(s)
