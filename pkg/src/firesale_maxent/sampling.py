"""Monte-Carlo sampling of ensembles and quantile bands of risk metrics.

Sample ``i`` of a run with seed ``s`` uses its own PCG64 stream seeded by
``SeedSequence(s, spawn_key=(i,))`` and fills the matrix in row-major
order, so a batch is the same whether samples are drawn serially or by
several threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .core import BankSheet, HoldingsMatrix, MarketParams
from .ensembles import EnsembleParams, _entry_arrays, params_hash
from .errors import InconsistentSheetError, InsufficientSamplesError, ValidationError
from .riskmetrics import SHEET_RTOL, fixed_size_metrics

THREADS_ENV = "FIRESALE_THREADS"
METRICS = ("systemicness", "iv", "av")


def sample_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


class _Sampler:
    def __init__(self, p: EnsembleParams):
        self.theta, self.ppos = _entry_arrays(p)
        self.hurdle = p.kind == "BIPECM"

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        # inverse CDF: floor(Exp(1) / theta) is geometric with ratio exp(-theta)
        expo = -np.log1p(-rng.random(self.theta.shape))
        with np.errstate(invalid="ignore"):
            g = np.floor(expo / self.theta)
        g[~np.isfinite(self.theta)] = 0.0
        if not self.hurdle:
            return g
        present = rng.random(self.theta.shape) < self.ppos
        return np.where(present, 1.0 + g, 0.0)


def sample_matrix(p: EnsembleParams, rng_seed: Union[int, np.random.Generator]) -> HoldingsMatrix:
    """One integer-valued draw; an int seed gives sample 0 of that seed's run."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else sample_stream(rng_seed, 0)
    return HoldingsMatrix(_Sampler(p).draw(rng), p.bank_ids, p.asset_ids)


def iter_samples(p: EnsembleParams, seed: int, n_samples: int) -> Iterator[np.ndarray]:
    sampler = _Sampler(p)
    for i in range(n_samples):
        yield sampler.draw(sample_stream(seed, i))


@dataclass(frozen=True)
class SampleBatch:
    """Per-draw metrics: ``systemicness`` and ``iv`` are M x N, ``av`` has length M."""

    ensemble_hash: str
    seed: int
    n_samples: int
    systemicness: np.ndarray
    iv: np.ndarray
    av: np.ndarray
    bank_ids: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("a sample batch needs at least one draw")
        for name in ("systemicness", "iv", "av"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def draws(self, metric: str) -> np.ndarray:
        if metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")
        return getattr(self, metric)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def mc_metrics(p: EnsembleParams, sheet: BankSheet, mkt: MarketParams, n_samples: int,
               seed: int, workers: int = None) -> SampleBatch:
    """Evaluate the risk metrics on ``n_samples`` draws from ``p``.

    Sizes, leverage and total equity stay at the observed sheet values;
    only portfolio composition is random. Banks with an empty sampled row
    get zero metrics for that draw.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    if sheet.n_banks != p.shape[0]:
        raise InconsistentSheetError(f"sheet has {sheet.n_banks} banks, ensemble has {p.shape[0]}")
    a = p.strengths.bank_sizes
    if np.any(np.abs(sheet.sizes - a) > SHEET_RTOL * np.maximum(np.abs(a), np.abs(sheet.sizes))):
        raise InconsistentSheetError("sheet sizes differ from the ensemble's bank strengths")
    if mkt.n_assets != p.shape[1]:
        raise ValidationError(f"market has {mkt.n_assets} assets, ensemble has {p.shape[1]}")

    sampler = _Sampler(p)
    n = p.shape[0]
    s_out = np.empty((n_samples, n))
    iv_out = np.empty((n_samples, n))
    av_out = np.empty(n_samples)

    def run(lo, hi):
        for i in range(lo, hi):
            x = sampler.draw(sample_stream(seed, i))
            s_out[i], iv_out[i], av_out[i] = fixed_size_metrics(x, sheet, mkt)

    workers = workers or _default_workers()
    if workers == 1:
        run(0, n_samples)
    else:
        edges = np.linspace(0, n_samples, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, edges[:-1], edges[1:]))
    return SampleBatch(params_hash(p), int(seed), int(n_samples), s_out, iv_out, av_out,
                       p.bank_ids, {"kind": p.kind, "leverage": "fixed at observed sheet",
                                    "equity": "fixed at observed sheet"})


@dataclass(frozen=True)
class QuantileBand:
    metric: str
    lower_prob: float
    upper_prob: float
    lower: np.ndarray
    upper: np.ndarray
    point_estimate: np.ndarray
    n_samples: int
    bank_ids: tuple = ()


def min_samples(lower_prob: float, upper_prob: float) -> int:
    return int(np.ceil(1.0 / min(lower_prob, 1.0 - upper_prob)))


def band_from_draws(draws, lower_prob: float, upper_prob: float, metric: str = "value",
                    bank_ids: tuple = ()) -> QuantileBand:
    """Empirical band of ``draws`` along axis 0, linear interpolation rule (R-7)."""
    if not 0 < lower_prob < upper_prob < 1:
        raise ValidationError(f"need 0 < lower < upper < 1, got {lower_prob}, {upper_prob}")
    x = np.asarray(draws, dtype=float)
    m = x.shape[0]
    if m < min_samples(lower_prob, upper_prob):
        raise InsufficientSamplesError(
            f"{m} samples cannot resolve the {lower_prob}/{upper_prob} quantiles "
            f"(need {min_samples(lower_prob, upper_prob)})")
    lo, hi = np.quantile(x, [lower_prob, upper_prob], axis=0, method="linear")
    base = x.min(axis=0)
    # offset from the minimum keeps the mean of constant draws exact
    mean = base + np.mean(x - base, axis=0)
    return QuantileBand(metric, float(lower_prob), float(upper_prob), lo, hi, mean, m,
                        tuple(bank_ids))


def quantile_band(b: SampleBatch, metric: str = "systemicness", lower_prob: float = 0.05,
                  upper_prob: float = 0.95) -> QuantileBand:
    ids = () if metric == "av" else b.bank_ids
    return band_from_draws(b.draws(metric), lower_prob, upper_prob, metric, ids)
