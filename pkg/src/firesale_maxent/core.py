"""Shared domain types for bank-by-asset holdings networks.

All amounts are in thousands of dollars. Types are immutable: array fields
are copied on construction and flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleDegreesError, ValidationError, ZeroRowError

BALANCE_RTOL = 1e-9


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_ids(ids, expected_len, label):
    problems = []
    if len(ids) != expected_len:
        problems.append(f"{label} has {len(ids)} entries, expected {expected_len}")
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for i in ids:
            if i in seen:
                dups.append(i)
            seen.add(i)
        problems.append(f"duplicate {label}: {sorted(set(dups))}")
    return problems


def default_ids(prefix: str, n: int) -> tuple:
    width = max(4, len(str(n)))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n))


@dataclass(frozen=True)
class HoldingsMatrix:
    """Non-negative N x K matrix of dollar holdings (the network X)."""

    entries: np.ndarray
    bank_ids: tuple = None
    asset_ids: tuple = None

    def __post_init__(self):
        x = np.array(self.entries, dtype=float, copy=True)
        if x.ndim != 2:
            raise ValidationError(f"holdings must be 2-D, got shape {x.shape}")
        n, k = x.shape
        problems = []
        if n < 1 or k < 1:
            problems.append(f"holdings must have at least one bank and one asset, got {x.shape}")
        bank_ids = tuple(self.bank_ids) if self.bank_ids is not None else default_ids("b", n)
        asset_ids = tuple(self.asset_ids) if self.asset_ids is not None else default_ids("a", k)
        problems += _check_ids(bank_ids, n, "bank_ids")
        problems += _check_ids(asset_ids, k, "asset_ids")
        if not np.all(np.isfinite(x)):
            problems.append("holdings contain non-finite values")
        for i, j in zip(*np.nonzero(x < 0)):
            problems.append(f"negative holding {float(x[i, j])!r} at bank {bank_ids[i] if i < len(bank_ids) else i}, "
                            f"asset {asset_ids[j] if j < len(asset_ids) else j}")
        if problems:
            raise ValidationError(problems)
        x.setflags(write=False)
        object.__setattr__(self, "entries", x)
        object.__setattr__(self, "bank_ids", bank_ids)
        object.__setattr__(self, "asset_ids", asset_ids)

    @property
    def n_banks(self) -> int:
        return self.entries.shape[0]

    @property
    def n_assets(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class StrengthSequences:
    """Bank sizes A_n (row sums) and asset capitalizations C_k (column sums)."""

    bank_sizes: np.ndarray
    asset_caps: np.ndarray
    bank_ids: Optional[tuple] = None
    asset_ids: Optional[tuple] = None

    def __post_init__(self):
        a = np.array(self.bank_sizes, dtype=float, copy=True).ravel()
        c = np.array(self.asset_caps, dtype=float, copy=True).ravel()
        problems = []
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            problems.append("bank sizes must be finite and non-negative")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            problems.append("asset capitalizations must be finite and non-negative")
        sa, sc = a.sum(), c.sum()
        if sa <= 0 or sc <= 0:
            problems.append("total strength must be positive")
        elif abs(sa - sc) > BALANCE_RTOL * max(sa, sc):
            problems.append(f"unbalanced strengths: sum(A)={float(sa)!r} vs sum(C)={float(sc)!r}")
        bank_ids = tuple(self.bank_ids) if self.bank_ids is not None else default_ids("b", a.size)
        asset_ids = tuple(self.asset_ids) if self.asset_ids is not None else default_ids("a", c.size)
        problems += _check_ids(bank_ids, a.size, "bank_ids")
        problems += _check_ids(asset_ids, c.size, "asset_ids")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "bank_sizes", _frozen(a))
        object.__setattr__(self, "asset_caps", _frozen(c))
        object.__setattr__(self, "bank_ids", bank_ids)
        object.__setattr__(self, "asset_ids", asset_ids)

    @property
    def total(self) -> float:
        return float(self.bank_sizes.sum())

    @property
    def n_banks(self) -> int:
        return self.bank_sizes.size

    @property
    def n_assets(self) -> int:
        return self.asset_caps.size


@dataclass(frozen=True)
class DegreeSequences:
    """Number of held assets per bank and number of holders per asset."""

    bank_degrees: np.ndarray
    asset_degrees: np.ndarray

    def __post_init__(self):
        dr = np.array(self.bank_degrees, copy=True).ravel()
        dc = np.array(self.asset_degrees, copy=True).ravel()
        if not (np.all(dr == np.round(dr)) and np.all(dc == np.round(dc))):
            raise InfeasibleDegreesError("degrees must be integers")
        dr = dr.astype(np.int64)
        dc = dc.astype(np.int64)
        n, k = dr.size, dc.size
        bad = [f"bank {i}: degree {d} outside [0, {k}]" for i, d in enumerate(dr) if not 0 <= d <= k]
        bad += [f"asset {j}: degree {d} outside [0, {n}]" for j, d in enumerate(dc) if not 0 <= d <= n]
        if dr.sum() != dc.sum():
            bad.append(f"degree totals differ: {dr.sum()} vs {dc.sum()}")
        if bad:
            raise InfeasibleDegreesError("; ".join(bad))
        object.__setattr__(self, "bank_degrees", _frozen(dr, np.int64))
        object.__setattr__(self, "asset_degrees", _frozen(dc, np.int64))

    @property
    def n_edges(self) -> int:
        return int(self.bank_degrees.sum())


@dataclass(frozen=True)
class BankSheet:
    """Per-bank size and equity; leverage B_n = (A_n - E_n) / E_n is derived."""

    sizes: np.ndarray
    equities: np.ndarray
    bank_ids: Optional[tuple] = None
    leverages: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.array(self.sizes, dtype=float, copy=True).ravel()
        e = np.array(self.equities, dtype=float, copy=True).ravel()
        bank_ids = tuple(self.bank_ids) if self.bank_ids is not None else default_ids("b", a.size)
        problems = []
        if a.size != e.size:
            problems.append(f"{a.size} sizes but {e.size} equities")
        else:
            for i in np.nonzero(~(e > 0))[0]:
                name = bank_ids[i] if i < len(bank_ids) else i
                problems.append(f"bank {name}: equity must be positive, got {float(e[i])!r}")
        if np.any(a < 0):
            problems.append("bank sizes must be non-negative")
        problems += _check_ids(bank_ids, a.size, "bank_ids")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "sizes", _frozen(a))
        object.__setattr__(self, "equities", _frozen(e))
        object.__setattr__(self, "bank_ids", bank_ids)
        object.__setattr__(self, "leverages", _frozen((a - e) / e))

    @property
    def total_equity(self) -> float:
        return float(np.sum(self.equities))

    @property
    def n_banks(self) -> int:
        return self.sizes.size

    def subset(self, keep) -> "BankSheet":
        keep = np.asarray(keep)
        return BankSheet(self.sizes[keep], self.equities[keep],
                         tuple(np.asarray(self.bank_ids, dtype=object)[keep]))


@dataclass(frozen=True)
class MarketParams:
    """Per-asset illiquidity (return per dollar traded) and shock (return)."""

    illiquidity: np.ndarray
    shock: np.ndarray

    def __post_init__(self):
        ell = np.array(self.illiquidity, dtype=float, copy=True).ravel()
        eps = np.array(self.shock, dtype=float, copy=True).ravel()
        problems = []
        if ell.size != eps.size:
            problems.append(f"{ell.size} illiquidity values but {eps.size} shocks")
        if np.any(ell < 0) or not np.all(np.isfinite(ell)):
            problems.append("illiquidity must be finite and non-negative")
        if not np.all(np.isfinite(eps)):
            problems.append("shocks must be finite")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "illiquidity", _frozen(ell))
        object.__setattr__(self, "shock", _frozen(eps))

    @property
    def n_assets(self) -> int:
        return self.illiquidity.size

    @classmethod
    def default(cls, asset_ids: Sequence[str], cash_asset: str = "cash",
                illiquidity: float = 1e-10, shock: float = 0.01) -> "MarketParams":
        """Common illiquidity for every asset except cash (which gets 0), uniform shock."""
        ell = np.array([0.0 if a == cash_asset else illiquidity for a in asset_ids])
        return cls(ell, np.full(len(asset_ids), shock))


def marginals(x: HoldingsMatrix) -> StrengthSequences:
    """Row sums A_n and column sums C_k of the holdings matrix."""
    e = x.entries
    return StrengthSequences(e.sum(axis=1), e.sum(axis=0), x.bank_ids, x.asset_ids)


def degrees(x: HoldingsMatrix, threshold: float = 0.0) -> DegreeSequences:
    """Count entries strictly above ``threshold`` per row and per column."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    y = x.entries > threshold
    return DegreeSequences(y.sum(axis=1), y.sum(axis=0))


def weights(x: HoldingsMatrix) -> np.ndarray:
    """Portfolio weights W_{n,k} = X_{n,k} / A_n.

    Raises
    ------
    ZeroRowError
        If any bank holds nothing.
    """
    rows = x.entries.sum(axis=1)
    zero = np.nonzero(rows <= 0)[0]
    if zero.size:
        raise ZeroRowError([x.bank_ids[i] for i in zero])
    return x.entries / rows[:, None]
