"""Estimator accuracy: relative errors binned by quartile of the true metric,
plus a synthetic scenario generator to run the comparison on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import BankSheet, HoldingsMatrix, MarketParams, degrees, marginals
from .ensembles import (fit_bipecm, fit_bipwcm, fit_mecapm, mecapm_expected_indirect_vulnerability,
                        mecapm_expected_systemicness)
from .errors import FiresaleError, InfeasibleSparsityError, TooFewBanksError, ValidationError
from .reconstruct import capm_matrix
from .riskmetrics import risk_report
from .sampling import mc_metrics, sample_stream

log = logging.getLogger(__name__)

ESTIMATORS = ("CAPM", "MECAPM", "BIPWCM", "BIPECM")


class RelativeErrors(NamedTuple):
    errors: np.ndarray   # NaN where excluded
    excluded: tuple      # indices with zero truth


def relative_errors(estimated, truth) -> RelativeErrors:
    """(estimated - truth) / truth per bank; zero-truth banks are excluded."""
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValidationError(f"shapes differ: {est.shape} vs {tru.shape}")
    zero = tru == 0
    out = np.full(tru.shape, np.nan)
    out[~zero] = (est[~zero] - tru[~zero]) / tru[~zero]
    return RelativeErrors(out, tuple(int(i) for i in np.nonzero(zero)[0]))


@dataclass(frozen=True)
class QuartileErrorReport:
    metric: str
    estimator: str
    medians: tuple
    iqrs: tuple
    counts: tuple
    excluded: tuple = ()
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def rows(self):
        for q in range(4):
            yield {"quartile": q + 1, "estimator": self.estimator, "metric": self.metric,
                   "median": self.medians[q], "iqr": self.iqrs[q], "count": self.counts[q]}


def quartile_report(errors, truth, metric: str = "systemicness", estimator: str = "",
                    excluded: Sequence[int] = ()) -> QuartileErrorReport:
    """Median and interquartile range of errors within each quartile of truth.

    Banks are ranked by truth ascending (stable, so ties keep bank order)
    and split into four groups whose sizes differ by at most one; the first
    quartile holds the smallest truths. Banks with NaN errors or zero truth
    are dropped and listed in ``excluded``.
    """
    err = np.asarray(errors, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if err.shape != tru.shape or err.ndim != 1:
        raise ValidationError(f"errors and truth must be equal-length vectors, "
                              f"got {err.shape} and {tru.shape}")
    drop = np.isnan(err) | (tru == 0)
    drop[list(excluded)] = True
    keep = np.nonzero(~drop)[0]
    if keep.size < 4:
        raise TooFewBanksError(f"need at least 4 banks for quartiles, have {keep.size}")
    order = keep[np.argsort(tru[keep], kind="stable")]
    medians, iqrs, counts = [], [], []
    for group in np.array_split(order, 4):
        e = err[group]
        q25, q75 = np.quantile(e, [0.25, 0.75], method="linear")
        medians.append(float(np.median(e)))
        iqrs.append(float(q75 - q25))
        counts.append(int(group.size))
    return QuartileErrorReport(metric, estimator, tuple(medians), tuple(iqrs), tuple(counts),
                               tuple(int(i) for i in np.nonzero(drop)[0]))


# -- synthetic scenarios -------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    n_banks: int = 50
    n_assets: int = 20
    size_log_mean: float = 8.0
    size_log_sd: float = 1.5
    leverage_mean: float = 10.0
    leverage_sd: float = 2.0
    sparsity: float = 0.5
    cash_asset: bool = True

    def __post_init__(self):
        problems = []
        if self.n_banks < 4:
            problems.append(f"n_banks must be at least 4, got {self.n_banks}")
        if self.n_assets < 2:
            problems.append(f"n_assets must be at least 2, got {self.n_assets}")
        if not 0 <= self.sparsity < 1:
            problems.append(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.size_log_sd < 0 or self.leverage_sd < 0:
            problems.append("standard deviations must be non-negative")
        if self.leverage_mean <= 0:
            problems.append("leverage_mean must be positive")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class SyntheticScenario:
    seed: int
    holdings: HoldingsMatrix
    sheet: BankSheet
    config: Optional[ScenarioConfig] = None
    metadata: dict = field(default_factory=dict)

    @property
    def market(self) -> MarketParams:
        return MarketParams.default(self.holdings.asset_ids)

    @property
    def realized_sparsity(self) -> float:
        return float(np.mean(self.holdings.entries == 0))


def _support(rng, n, k, sparsity, cash):
    """Boolean support with exactly round(sparsity * n * k) zeros, no empty row or column."""
    total_zeros = int(round(sparsity * n * k))
    support = np.zeros((n, k), dtype=bool)
    protected = np.zeros((n, k), dtype=bool)
    first = 0
    if cash:
        protected[:, 0] = True
        first = 1
    else:
        protected[np.arange(n), rng.integers(0, k, n)] = True
    for j in range(first, k):
        if not protected[:, j].any():
            protected[rng.integers(0, n), j] = True
    free = np.flatnonzero(~protected)
    if total_zeros > free.size:
        raise InfeasibleSparsityError(
            f"sparsity {sparsity} needs {total_zeros} zeros but only {free.size} cells can be "
            "zero without emptying a row or column")
    zeros = rng.choice(free, size=total_zeros, replace=False)
    support[:] = True
    support.flat[zeros] = False
    return support


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    share = total * weights / weights.sum()
    base = np.floor(share)
    short = int(total - base.sum())
    order = np.argsort(-(share - base), kind="stable")
    base[order[:short]] += 1
    return base


def generate_scenario(cfg: ScenarioConfig, seed: int) -> SyntheticScenario:
    """Random integer holdings with heavy-tailed sizes and target sparsity.

    Every positive cell holds at least 1; the rest of each bank's size is
    spread over its positive cells in proportion to random weights and
    integerized by largest remainder, so row sums equal the drawn sizes.
    The first asset is cash (held by every bank) unless disabled.
    """
    rng = sample_stream(seed, 0)
    n, k = cfg.n_banks, cfg.n_assets
    sizes = np.maximum(k, np.round(rng.lognormal(cfg.size_log_mean, cfg.size_log_sd, n)))
    lev = rng.normal(cfg.leverage_mean, cfg.leverage_sd, n)
    while np.any(lev <= 0):
        bad = lev <= 0
        lev[bad] = rng.normal(cfg.leverage_mean, cfg.leverage_sd, bad.sum())
    support = _support(rng, n, k, cfg.sparsity, cfg.cash_asset)
    col_factor = rng.lognormal(0.0, 1.0, k)
    w = rng.exponential(1.0, (n, k)) * col_factor[None, :] * support
    x = support.astype(float)
    for i in range(n):
        pos = support[i]
        x[i, pos] += _largest_remainder(int(sizes[i] - pos.sum()), w[i, pos])
    asset_ids = (("cash",) if cfg.cash_asset else ()) + tuple(
        f"a{j:04d}" for j in range(1 if cfg.cash_asset else 0, k))
    bank_ids = tuple(f"b{i:04d}" for i in range(n))
    holdings = HoldingsMatrix(x, bank_ids, asset_ids)
    sheet = BankSheet(sizes, sizes / (1.0 + lev), bank_ids)
    return SyntheticScenario(seed, holdings, sheet, cfg, {"leverage": lev})


def mecapm_truth(base: SyntheticScenario, seed: int) -> SyntheticScenario:
    """A scenario whose holdings are one draw from MECAPM fitted to ``base``.

    Each bank keeps its leverage; equity is rescaled to the drawn size.
    """
    from .sampling import sample_matrix

    x = sample_matrix(fit_mecapm(marginals(base.holdings)), sample_stream(seed, 0))
    sizes = x.entries.sum(axis=1)
    if np.any(sizes <= 0):
        raise ValidationError("sampled truth has an empty bank; use a different seed")
    lev = base.sheet.leverages
    sheet = BankSheet(sizes, sizes / (1.0 + lev), base.sheet.bank_ids)
    return SyntheticScenario(seed, x, sheet, base.config, {"leverage": lev, "source": "MECAPM"})


def capm_truth(base: SyntheticScenario) -> SyntheticScenario:
    """A scenario whose holdings are the (real-valued) CAPM matrix of ``base``."""
    x = capm_matrix(marginals(base.holdings))
    return SyntheticScenario(base.seed, x, base.sheet, base.config, {"source": "CAPM"})


# -- estimator comparison -------------------------------------------------------

def _estimate(name, scenario, mkt, n_samples, seed):
    x, sheet = scenario.holdings, scenario.sheet
    s = marginals(x)
    if name == "CAPM":
        rep = risk_report(capm_matrix(s), sheet, mkt)
        return rep.systemicness, rep.indirect_vulnerability
    if name == "MECAPM":
        return (mecapm_expected_systemicness(s, sheet, mkt).expected,
                mecapm_expected_indirect_vulnerability(s, sheet, mkt).expected)
    if name == "BIPWCM":
        p = fit_bipwcm(s)
    elif name == "BIPECM":
        p = fit_bipecm(s, degrees(x))
    else:
        raise ValidationError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    batch = mc_metrics(p, sheet, mkt, n_samples, seed)
    return batch.systemicness.mean(axis=0), batch.iv.mean(axis=0)


def estimator_comparison(scenario: SyntheticScenario, estimators: Sequence[str] = ESTIMATORS,
                         n_samples: int = 1000, seed: int = 0,
                         mkt: Optional[MarketParams] = None) -> list:
    """Quartile error reports for each estimator and metric (S and IV).

    Estimators see only marginals (plus degrees for BIPECM). A failing
    estimator yields reports carrying the error message; the others run.
    """
    mkt = scenario.market if mkt is None else mkt
    truth = risk_report(scenario.holdings, scenario.sheet, mkt)
    if truth.dropped_banks:
        raise ValidationError(f"scenario has empty banks: {list(truth.dropped_banks)[:10]}")
    out = []
    for name in estimators:
        try:
            s_hat, iv_hat = _estimate(name, scenario, mkt, n_samples, seed)
        except FiresaleError as exc:
            log.warning("estimator %s failed: %s", name, exc)
            nan4 = (float("nan"),) * 4
            for metric in ("systemicness", "iv"):
                out.append(QuartileErrorReport(metric, name, nan4, nan4, (0,) * 4,
                                               error=f"{exc.code}: {exc}"))
            continue
        for metric, est, tru in (("systemicness", s_hat, truth.systemicness),
                                 ("iv", iv_hat, truth.indirect_vulnerability)):
            rel = relative_errors(est, tru)
            out.append(quartile_report(rel.errors, tru, metric, name, rel.excluded))
    return out
