"""Flag quarters whose observed systemicness leaves the reference band.

A reference quarter's ensemble gives the null distribution of each bank's
metric. Any quarter whose observed value is strictly above the reference
upper quantile is flagged. No multiple-testing correction is applied; the
number of comparisons is reported instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import BankSheet, HoldingsMatrix, MarketParams, marginals
from .core import degrees as degree_sequences
from .ensembles import fit_bipecm, fit_bipwcm, fit_mecapm
from .errors import MissingQuarterError, ValidationError
from .riskmetrics import risk_report
from .sampling import QuantileBand, mc_metrics, quantile_band


class QuarterRecord(NamedTuple):
    quarter: str
    observed: float
    ref_upper: float
    band_lower: float
    band_upper: float
    flag: bool


@dataclass(frozen=True)
class MonitorResult:
    bank_id: str
    reference_quarter: str
    records: tuple

    @property
    def n_comparisons(self) -> int:
        return len(self.records)

    @property
    def flagged_quarters(self) -> list:
        return [r.quarter for r in self.records if r.flag]


def monitor_bank(observed: Mapping[str, float], reference_band: QuantileBand,
                 per_quarter_bands: Optional[Mapping[str, QuantileBand]] = None, bank: int = 0,
                 reference_quarter: Optional[str] = None, bank_id: Optional[str] = None
                 ) -> MonitorResult:
    """Compare one bank's observed series with the reference upper quantile.

    ``observed`` maps quarter id to the observed metric, in time order.
    ``bank`` indexes the per-bank vectors of the bands. Quarters without a
    band of their own get NaN band columns.
    """
    quarters = list(observed)
    if not quarters:
        raise MissingQuarterError("no quarters observed")
    ref = quarters[0] if reference_quarter is None else reference_quarter
    if ref not in observed:
        raise MissingQuarterError(f"reference quarter {ref!r} not among observed quarters")
    upper = np.atleast_1d(reference_band.upper)
    if not 0 <= bank < upper.size:
        raise IndexError(f"bank index {bank} outside reference band of {upper.size} banks")
    u_ref = float(upper[bank])
    per_quarter_bands = per_quarter_bands or {}
    records = []
    for q in quarters:
        band = per_quarter_bands.get(q)
        lo = float(np.atleast_1d(band.lower)[bank]) if band is not None else float("nan")
        hi = float(np.atleast_1d(band.upper)[bank]) if band is not None else float("nan")
        value = float(observed[q])
        records.append(QuarterRecord(q, value, u_ref, lo, hi, value > u_ref))
    if bank_id is None:
        ids = reference_band.bank_ids
        bank_id = ids[bank] if ids else str(bank)
    return MonitorResult(bank_id, ref, tuple(records))


def _fit(kind, x: HoldingsMatrix):
    s = marginals(x)
    if kind == "MECAPM":
        return fit_mecapm(s)
    if kind == "BIPWCM":
        return fit_bipwcm(s)
    if kind == "BIPECM":
        return fit_bipecm(s, degree_sequences(x))
    raise ValidationError(f"unknown ensemble kind {kind!r}")


def _band_for(band: QuantileBand, ids) -> QuantileBand:
    """Reorder a per-bank band to follow ``ids``."""
    pos = {b: j for j, b in enumerate(band.bank_ids)}
    missing = [b for b in ids if b not in pos]
    if missing:
        raise MissingQuarterError(f"reference band lacks banks {missing[:10]}")
    idx = np.array([pos[b] for b in ids], dtype=int)
    return QuantileBand(band.metric, band.lower_prob, band.upper_prob, band.lower[idx],
                        band.upper[idx], band.point_estimate[idx], band.n_samples, tuple(ids))


def monitor_panel(quarters: Sequence[tuple], mkt: MarketParams, kind: str = "MECAPM",
                  n_samples: int = 1000, seed: int = 0, lower_prob: float = 0.05,
                  upper_prob: float = 0.95, banks: Optional[Sequence[str]] = None,
                  reference_quarter: Optional[str] = None,
                  reference_band: Optional[QuantileBand] = None,
                  quarter_bands: bool = True) -> list:
    """Run the monitoring workflow on a panel of observed quarters.

    ``quarters`` is a time-ordered sequence of ``(quarter_id, HoldingsMatrix,
    BankSheet)``. Observed systemicness comes from each quarter's own
    matrix and, if ``quarter_bands``, its band from an ensemble fitted to
    that quarter's marginals (quarter ``i`` samples with seed ``seed + i``).
    The reference upper bound comes from the reference quarter's ensemble,
    or from ``reference_band`` when given. Banks are matched by id.
    """
    if not quarters:
        raise MissingQuarterError("no quarters given")
    ids = [q[0] for q in quarters]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate quarter ids: {ids}")
    ref = ids[0] if reference_quarter is None else reference_quarter
    if ref not in ids:
        raise MissingQuarterError(f"reference quarter {ref!r} not in panel")

    observed, bands = {}, {}
    for i, (qid, x, sheet) in enumerate(quarters):
        if x.n_assets != mkt.n_assets:
            raise ValidationError(f"quarter {qid}: {x.n_assets} assets, market has {mkt.n_assets}")
        rep = risk_report(x, sheet, mkt)
        observed[qid] = dict(zip(rep.bank_ids, rep.systemicness))
        if not (quarter_bands or (qid == ref and reference_band is None)):
            continue
        keep = np.isin(np.asarray(x.bank_ids, dtype=object), np.asarray(rep.bank_ids, dtype=object))
        x_kept = HoldingsMatrix(x.entries[keep], rep.bank_ids, x.asset_ids)
        sheet_kept = BankSheet(x_kept.entries.sum(axis=1), sheet.equities[keep], rep.bank_ids)
        batch = mc_metrics(_fit(kind, x_kept), sheet_kept, mkt, n_samples, seed + i)
        bands[qid] = quantile_band(batch, "systemicness", lower_prob, upper_prob)

    ref_ids = list(observed[ref])
    if banks is None:
        banks = ref_ids
    absent = [b for b in banks if b not in observed[ref]]
    if absent:
        raise MissingQuarterError(f"banks {absent[:10]} absent from reference quarter {ref!r}")
    ref_band = _band_for(reference_band if reference_band is not None else bands[ref], banks)

    results = []
    for j, b in enumerate(banks):
        series = {q: observed[q][b] for q in ids if b in observed[q]}
        own = {q: _band_for(bands[q], [b]) for q in series if q in bands}
        one = QuantileBand(ref_band.metric, ref_band.lower_prob, ref_band.upper_prob,
                           ref_band.lower[j:j + 1], ref_band.upper[j:j + 1],
                           ref_band.point_estimate[j:j + 1], ref_band.n_samples, (b,))
        results.append(monitor_bank(series, one, own, 0, ref, b))
    return results
