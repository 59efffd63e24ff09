"""Maximum-entropy ensembles of holdings matrices with given marginals.

Three ensembles, all with independent entries:

* ``MECAPM``: every entry geometric with mean equal to the CAPM matrix.
* ``BIPWCM``: expected row and column strengths fixed; entry (n, k) is
  geometric with ratio ``t = exp(-(lam_n + eta_k))``.
* ``BIPECM``: expected strengths and expected degrees fixed; entry (n, k)
  is zero with probability ``1 - p`` and ``1 + geometric(t)`` otherwise,
  where ``p = t u / (1 - t + t u)`` and ``u = exp(-(rho_n + delta_k))``.

Multipliers are stored in log form. ``+inf`` marks an inactive node (zero
strength, so every entry in its row or column is 0). For BIPECM ``-inf``
in ``rho``/``delta`` marks a node whose degree is full, so its entries are
positive with probability one.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from . import solver
from .core import BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences
from .errors import (ConvergenceError, InfeasibleDegreesError, InvalidStrengthError,
                     NonUniformLiquidityError, NonUniformShockError, ValidationError)
from .reconstruct import capm_matrix

log = logging.getLogger(__name__)

KINDS = ("MECAPM", "BIPWCM", "BIPECM")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EnsembleParams:
    kind: str
    strengths: StrengthSequences
    degrees: Optional[DegreeSequences] = None
    lam: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    fit_residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown ensemble kind {self.kind!r}")
        need = {"MECAPM": (), "BIPWCM": ("lam", "eta"), "BIPECM": ("lam", "eta", "rho", "delta")}
        for name in ("lam", "eta", "rho", "delta"):
            v = getattr(self, name)
            if name not in need[self.kind]:
                if v is not None:
                    raise ValidationError(f"{self.kind} takes no {name}")
                continue
            if v is None:
                raise ValidationError(f"{self.kind} requires {name}")
            arr = np.array(v, dtype=float, copy=True).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.kind == "BIPECM" and self.degrees is None:
            raise ValidationError("BIPECM requires degree sequences")
        n, k = self.strengths.n_banks, self.strengths.n_assets
        for name, size in (("lam", n), ("rho", n), ("eta", k), ("delta", k)):
            v = getattr(self, name)
            if v is not None and v.size != size:
                raise ValidationError(f"{name} has {v.size} entries, expected {size}")
        if self.kind != "MECAPM":
            theta = self._theta()
            if self.kind == "BIPECM":
                # entries pinned at zero have no geometric part
                theta = np.where(self.pins == PINNED_ZERO, np.inf, theta)
            if np.any(np.isnan(theta)) or np.any(theta <= 0):
                raise ValidationError("geometric ratio must be below 1 for every entry")

    @property
    def shape(self):
        return self.strengths.n_banks, self.strengths.n_assets

    @property
    def bank_ids(self):
        return self.strengths.bank_ids

    @property
    def asset_ids(self):
        return self.strengths.asset_ids

    @property
    def mecapm_means(self):
        return capm_matrix(self.strengths).entries if self.kind == "MECAPM" else None

    def _exp(self, name):
        v = getattr(self, name)
        return None if v is None else np.exp(-v)

    phi = property(lambda self: self._exp("lam"))
    xi = property(lambda self: self._exp("eta"))
    psi = property(lambda self: self._exp("rho"))
    gamma = property(lambda self: self._exp("delta"))

    def _theta(self):
        with np.errstate(invalid="ignore"):
            return self.lam[:, None] + self.eta[None, :]

    @cached_property
    def pins(self):
        """Entries whose presence the degrees alone decide (BIPECM only)."""
        if self.degrees is None:
            return None
        return _pin_entries(self.degrees.bank_degrees, self.degrees.asset_degrees)


@dataclass(frozen=True)
class EntryDistribution:
    """Law of one entry: 0 with probability ``1 - p_positive``, else ``1 + G``.

    ``G`` is geometric on {0, 1, ...} with ratio ``t = exp(-theta)``. A plain
    geometric is the case ``p_positive = t``. ``mecapm_mean`` keeps the exact
    CAPM mean for MECAPM entries so the mean is reported without round-off.
    """

    kind: str
    theta: float
    p_positive: float
    mecapm_mean: Optional[float] = None

    @property
    def ratio(self) -> float:
        return float(np.exp(-self.theta))

    @property
    def mean(self) -> float:
        if self.mecapm_mean is not None:
            return self.mecapm_mean
        if self.p_positive == 0:
            return 0.0
        return float(self.p_positive / -np.expm1(-self.theta))

    @property
    def variance(self) -> float:
        if self.mecapm_mean is not None:
            return self.mecapm_mean * (1.0 + self.mecapm_mean)
        p = self.p_positive
        if p == 0:
            return 0.0
        t = self.ratio
        return float(p * (t + 1.0 - p) / np.expm1(-self.theta) ** 2)

    def pmf(self, x) -> np.ndarray:
        x = np.asarray(x)
        p = self.p_positive
        out = np.where(x == 0, 1.0 - p, 0.0)
        if p > 0:
            pos = x >= 1
            xs = np.where(pos, x, 1).astype(float)
            tail = p * -np.expm1(-self.theta) * np.exp(-self.theta * (xs - 1))
            out = np.where(pos, tail, out)
        return out

    def support_bound(self, tail: float = 1e-12) -> int:
        """Smallest ``x`` with ``P(X > x) <= tail``."""
        if self.p_positive <= tail:
            return 0
        # P(X > x) = p t^x for x >= 0
        return max(0, int(np.ceil(np.log(tail / self.p_positive) / -self.theta)))


def _log_expm1(theta):
    big = theta > 1.0
    safe = np.where(big, 1.0, theta)
    return np.where(big, theta + np.log1p(-np.exp(-np.where(big, theta, 1.0))),
                    np.log(np.expm1(safe)))


def _presence(theta, w):
    """(P(X > 0), P(X = 0)) for the hurdle law, stable for any finite theta > 0 and w."""
    la = _log_expm1(theta) + w
    return expit(-la), expit(la)


def _entry_arrays(p: EnsembleParams):
    """Per-entry (theta, p_positive) arrays for the whole matrix."""
    if p.kind == "MECAPM":
        mu = p.mecapm_means
        with np.errstate(divide="ignore"):
            theta = np.where(mu > 0, np.log1p(1.0 / np.where(mu > 0, mu, 1.0)), np.inf)
        return theta, np.exp(-theta)
    theta = p._theta()
    if p.kind == "BIPWCM":
        return theta, np.exp(-theta)
    pins = p.pins
    theta = np.where(pins == PINNED_ZERO, np.inf, theta)
    free = pins == FREE
    with np.errstate(invalid="ignore"):
        w = p.rho[:, None] + p.delta[None, :]
    ppos = np.where(pins == PINNED_ONE, 1.0, 0.0)
    ppos[free] = _presence(theta[free], w[free])[0]
    return theta, ppos


def entry_distribution(p: EnsembleParams, n: int, k: int) -> EntryDistribution:
    nb, na = p.shape
    if not (0 <= n < nb and 0 <= k < na):
        raise IndexError(f"entry ({n}, {k}) outside {nb} x {na} ensemble")
    theta, ppos = _entry_arrays(p)
    mu = float(p.mecapm_means[n, k]) if p.kind == "MECAPM" else None
    return EntryDistribution(p.kind, float(theta[n, k]), float(ppos[n, k]), mu)


def expected_matrix(p: EnsembleParams) -> HoldingsMatrix:
    if p.kind == "MECAPM":
        return capm_matrix(p.strengths)
    theta, ppos = _entry_arrays(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(ppos > 0, ppos / -np.expm1(-theta), 0.0)
    return HoldingsMatrix(m, p.bank_ids, p.asset_ids)


# -- fitting -----------------------------------------------------------------

def fit_mecapm(s: StrengthSequences) -> EnsembleParams:
    return EnsembleParams("MECAPM", s)


def _initial_theta(a, c):
    total = a.sum()
    phi = a / np.sqrt(total)
    xi = c / np.sqrt(total)
    top = np.max(np.outer(phi, xi))
    if top > 0.99:
        shrink = np.sqrt(0.99 / top)
        phi, xi = phi * shrink, xi * shrink
    return -np.log(phi), -np.log(xi)


PINNED_ZERO, FREE, PINNED_ONE = -1, 0, 1


def _pin_entries(dr, dc):
    """Entries whose presence the degree sequences alone decide.

    A row (or column) whose degree equals its count of entries already
    pinned positive is zero everywhere else; one whose degree equals
    pinned-positive plus free entries holds all the free ones. Each pin can
    decide others, so the rules are applied until nothing changes. Returns
    an (N, K) int8 array of PINNED_ZERO / FREE / PINNED_ONE.
    """
    dr = np.asarray(dr)
    dc = np.asarray(dc)
    pins = np.zeros((dr.size, dc.size), np.int8)
    changed = True
    while changed:
        changed = False
        for axis, deg in ((1, dr), (0, dc)):
            ones = (pins == PINNED_ONE).sum(axis)
            free = (pins == FREE).sum(axis)
            bad = (deg < ones) | (deg > ones + free)
            if bad.any():
                side = "bank" if axis == 1 else "asset"
                idx = np.nonzero(bad)[0][:5].tolist()
                raise InfeasibleDegreesError(f"{side} degrees at positions {idx} cannot be met "
                                             "given the entries other degrees pin down")
            fill = np.where(deg == ones, PINNED_ZERO,
                            np.where(deg == ones + free, PINNED_ONE, FREE)).astype(np.int8)
            fill = np.broadcast_to(fill[:, None] if axis == 1 else fill[None, :], pins.shape)
            update = (pins == FREE) & (fill != FREE)
            if update.any():
                pins[update] = fill[update]
                changed = True
    return pins


def _initial_hurdle(a, c, dr, dc, row_settled, col_settled):
    """Start near conditional means A/D and presence probabilities D_n D_k / sum(D).

    Strength multipliers are half the inverse mean size per held asset, so
    theta is of the order of the inverse conditional mean. Degree
    multipliers are the additive (row + column) fit of the logit that gives
    the target presence probabilities at that theta.
    """
    lam = 0.5 * dr / a
    eta = 0.5 * dc / c
    theta = lam[:, None] + eta[None, :]
    pi = np.clip(np.outer(dr, dc) / dr.sum(), 1e-6, 1 - 1e-6)
    target = np.log1p(-pi) - np.log(pi) - np.log(np.expm1(theta))
    grand = target.mean()
    # settled nodes keep a placeholder; their entries follow the pins
    rho = np.where(row_settled, 0.0, target.mean(axis=1) - 0.5 * grand)
    delta = np.where(col_settled, 0.0, target.mean(axis=0) - 0.5 * grand)
    return lam, eta, rho, delta


def _geometric_stats(r, q):
    theta = r[:, None, 0] + q[None, :, 0]
    m = 1.0 / np.expm1(theta)
    return m[..., None], (m * (1.0 + m))[..., None, None]


def _hurdle_stats(pins):
    zero, one, free = pins == PINNED_ZERO, pins == PINNED_ONE, pins == FREE

    def stats(r, q):
        theta = np.where(zero, 1.0, r[:, None, 0] + q[None, :, 0])
        p, qq = _presence(theta, np.where(free, r[:, None, 1] + q[None, :, 1], 0.0))
        p = np.where(free, p, one.astype(float))
        return _hurdle_moments(theta, p, np.where(free, qq, 1.0 - p))

    return stats


def _hurdle_moments(theta, p, qq):
    one_minus_t = -np.expm1(-theta)
    mean_x = p / one_minus_t
    var_x = p * (np.exp(-theta) + qq) / one_minus_t ** 2
    cov_xy = mean_x * qq
    var_y = p * qq
    mean = np.stack([mean_x, p], axis=-1)
    cov = np.stack([np.stack([var_x, cov_xy], -1), np.stack([cov_xy, var_y], -1)], -2)
    return mean, cov


def _active(s: StrengthSequences, drop_zero: bool):
    rows = s.bank_sizes > 0
    cols = s.asset_caps > 0
    if not drop_zero and not (rows.all() and cols.all()):
        raise InvalidStrengthError("zero strengths present; remove those nodes first")
    return rows, cols


def _expand(values, mask, fill):
    out = np.full(mask.size, fill)
    out[mask] = values
    return out


def fit_bipwcm(s: StrengthSequences, tol: float = 1e-8, max_iter: int = 100_000,
               drop_zero: bool = True) -> EnsembleParams:
    """Solve sum_k t/(1-t) = A_n and sum_n t/(1-t) = C_k for t = phi_n xi_k.

    Zero-strength banks and assets are fitted out and get ``+inf`` log
    multipliers (all their entries are 0). With ``drop_zero=False`` they
    raise ``InvalidStrengthError`` instead.
    """
    rows, cols = _active(s, drop_zero)
    a, c = s.bank_sizes[rows], s.asset_caps[cols]
    lam0, eta0 = _initial_theta(a, c)
    res = solver.solve(_geometric_stats, a[:, None], c[:, None], lam0[:, None], eta0[:, None],
                       tol=tol, max_iter=max_iter)
    return EnsembleParams("BIPWCM", s,
                          lam=_expand(res.row_params[:, 0], rows, np.inf),
                          eta=_expand(res.col_params[:, 0], cols, np.inf),
                          fit_residual=res.residual, iterations=res.iterations)


def fit_bipecm(s: StrengthSequences, d: DegreeSequences, tol: float = 1e-6,
               max_iter: int = 100_000) -> EnsembleParams:
    """Fit expected strengths and expected degrees jointly.

    Some entries are decided by the degrees alone (a bank holding every
    asset, or one whose degree is used up by assets every bank holds); they
    are pinned at presence probability 1 or 0. Nodes left with no free
    entry drop out of the degree solve, and their degree multiplier is
    reported as ``-inf`` (all pinned present) or ``+inf``. A positive
    strength needs a positive degree and vice versa; a strength not
    exceeding its degree cannot be matched (every positive entry is at
    least 1) and raises ``ConvergenceError``.
    """
    a, c = s.bank_sizes, s.asset_caps
    dr, dc = d.bank_degrees, d.asset_degrees
    n, k = a.size, c.size
    if dr.size != n or dc.size != k:
        raise InfeasibleDegreesError(f"degree sequences have shape ({dr.size}, {dc.size}), "
                                     f"strengths ({n}, {k})")
    bad = [f"bank {s.bank_ids[i]}: size {float(a[i])!r} with degree {dr[i]}"
           for i in range(n) if (a[i] > 0) != (dr[i] > 0)]
    bad += [f"asset {s.asset_ids[j]}: cap {float(c[j])!r} with degree {dc[j]}"
            for j in range(k) if (c[j] > 0) != (dc[j] > 0)]
    if bad:
        raise InfeasibleDegreesError("; ".join(bad))
    rows, cols = a > 0, c > 0
    tight = [f"bank {s.bank_ids[i]}" for i in np.nonzero(rows & (a <= dr))[0]]
    tight += [f"asset {s.asset_ids[j]}" for j in np.nonzero(cols & (c <= dc))[0]]
    if tight:
        raise ConvergenceError("strength does not exceed degree (no interior solution) for "
                               + ", ".join(tight[:10]))

    a, c, dr, dc = a[rows], c[cols], dr[rows].astype(float), dc[cols].astype(float)
    nn, kk = a.size, c.size
    pins = _pin_entries(dr, dc)
    row_settled = ~(pins == FREE).any(axis=1)
    col_settled = ~(pins == FREE).any(axis=0)
    lam0, eta0, rho0, delta0 = _initial_hurdle(a, c, dr, dc, row_settled, col_settled)
    row_free = np.column_stack([np.ones(nn, bool), ~row_settled])
    col_free = np.column_stack([np.ones(kk, bool), ~col_settled])
    res = solver.solve(_hurdle_stats(pins), np.column_stack([a, dr]), np.column_stack([c, dc]),
                       np.column_stack([lam0, rho0]), np.column_stack([eta0, delta0]),
                       row_free=row_free, col_free=col_free, tol=tol, max_iter=max_iter,
                       inert=pins == PINNED_ZERO)
    # degree multipliers of settled nodes carry no information
    rho = np.where(row_settled, np.where((pins == PINNED_ONE).all(axis=1), -np.inf, np.inf),
                   res.row_params[:, 1])
    delta = np.where(col_settled, np.where((pins == PINNED_ONE).all(axis=0), -np.inf, np.inf),
                     res.col_params[:, 1])
    return EnsembleParams("BIPECM", s, d,
                          lam=_expand(res.row_params[:, 0], rows, np.inf),
                          eta=_expand(res.col_params[:, 0], cols, np.inf),
                          rho=_expand(rho, rows, np.inf),
                          delta=_expand(delta, cols, np.inf),
                          fit_residual=res.residual, iterations=res.iterations)


def constraint_residuals(p: EnsembleParams) -> dict:
    """Max relative violation of each constraint family over active nodes."""
    if p.kind == "MECAPM":
        return {"row_strength": 0.0, "col_strength": 0.0}
    m = expected_matrix(p).entries
    s = p.strengths

    def rel(got, want):
        pos = want > 0
        return float(np.max(np.abs(got[pos] - want[pos]) / want[pos], initial=0.0))

    out = {"row_strength": rel(m.sum(axis=1), s.bank_sizes),
           "col_strength": rel(m.sum(axis=0), s.asset_caps)}
    if p.kind == "BIPECM":
        ppos = _entry_arrays(p)[1]
        out["row_degree"] = rel(ppos.sum(axis=1), p.degrees.bank_degrees.astype(float))
        out["col_degree"] = rel(ppos.sum(axis=0), p.degrees.asset_degrees.astype(float))
    return out


# -- closed-form MECAPM expectations ------------------------------------------

class Expectation(NamedTuple):
    """Expected metric per bank and its excess over the metric at the CAPM matrix."""

    expected: np.ndarray
    gap: np.ndarray


def _uniform_market(mkt: MarketParams, n_assets: int):
    if mkt.n_assets != n_assets:
        raise ValidationError(f"market has {mkt.n_assets} assets, strengths have {n_assets}")
    eps = mkt.shock
    if np.any(eps != eps[0]):
        raise NonUniformShockError("closed-form expectations need the same shock on every asset")
    ell = mkt.illiquidity
    illiquid = ell > 0
    if illiquid.any() and np.any(ell[illiquid] != ell[illiquid][0]):
        raise NonUniformLiquidityError(
            "closed-form expectations need one illiquidity value for all non-cash assets")
    return float(eps[0]), (float(ell[illiquid][0]) if illiquid.any() else 0.0), illiquid


def _closed_form_inputs(s, sheet, mkt):
    if sheet.n_banks != s.n_banks:
        raise ValidationError(f"sheet has {sheet.n_banks} banks, strengths have {s.n_banks}")
    eps, ell, illiquid = _uniform_market(mkt, s.n_assets)
    a = s.bank_sizes
    c = s.asset_caps[illiquid]
    mu = np.outer(a, c) / s.total
    return eps, ell, a, c, mu, sheet.leverages


def mecapm_expected_systemicness(s: StrengthSequences, sheet: BankSheet,
                                 mkt: MarketParams) -> Expectation:
    """E[S_n] under MECAPM with sizes and leverage held at their observed values.

    With a uniform shock every portfolio return equals the shock, and

        E[S_n] = eps ell A_n B_n / (E L) sum_k C_k (mu_nk + C_k + 1),

    summed over assets with positive illiquidity. The gap drops the ``C_k``
    inside the bracket.
    """
    eps, ell, a, c, mu, b = _closed_form_inputs(s, sheet, mkt)
    pref = eps * ell * a * b / (sheet.total_equity * s.total)
    gap = pref * ((mu + 1.0) @ c)
    expected = pref * ((mu + c[None, :] + 1.0) @ c)
    return Expectation(expected, gap)


def mecapm_expected_indirect_vulnerability(s: StrengthSequences, sheet: BankSheet,
                                           mkt: MarketParams) -> Expectation:
    """E[IV_n] under MECAPM, exact for heterogeneous leverage.

    E[IV_n] = eps ell (1 + B_n) / A_n
              * sum_k [(mu_nk^2 + mu_nk) B_n + mu_nk (C_k / L) sum_m A_m B_m]
    """
    eps, ell, a, c, mu, b = _closed_form_inputs(s, sheet, mkt)
    pos = a > 0
    pref = np.zeros_like(a)
    pref[pos] = eps * ell * (1.0 + b[pos]) / a[pos]
    own = (mu * (mu + 1.0)).sum(axis=1) * b
    system = (mu @ (c / s.total)) * float(np.dot(a, b))
    return Expectation(pref * (own + system), pref * own)


# -- serialization -----------------------------------------------------------

def _enc(values):
    return [v if np.isfinite(v) else ("inf" if v > 0 else "-inf") for v in map(float, values)]


def _dec(values):
    return np.array([float(v) for v in values])


def provenance_hash(s: StrengthSequences, d: Optional[DegreeSequences] = None) -> str:
    doc = {"bank_ids": list(s.bank_ids), "asset_ids": list(s.asset_ids),
           "bank_sizes": _enc(s.bank_sizes), "asset_caps": _enc(s.asset_caps)}
    if d is not None:
        doc["bank_degrees"] = [int(v) for v in d.bank_degrees]
        doc["asset_degrees"] = [int(v) for v in d.asset_degrees]
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def params_to_dict(p: EnsembleParams) -> dict:
    s = p.strengths
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": p.kind,
        "bank_ids": list(s.bank_ids),
        "asset_ids": list(s.asset_ids),
        "bank_sizes": _enc(s.bank_sizes),
        "asset_caps": _enc(s.asset_caps),
        "fit_residual": float(p.fit_residual),
        "iterations": int(p.iterations),
        "provenance_hash": provenance_hash(s, p.degrees),
    }
    if p.degrees is not None:
        doc["bank_degrees"] = [int(v) for v in p.degrees.bank_degrees]
        doc["asset_degrees"] = [int(v) for v in p.degrees.asset_degrees]
    for name in ("lam", "eta", "rho", "delta"):
        v = getattr(p, name)
        if v is not None:
            doc[name] = _enc(v)
    return doc


def params_from_dict(doc: dict) -> EnsembleParams:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported params schema_version {doc.get('schema_version')!r}")
    s = StrengthSequences(_dec(doc["bank_sizes"]), _dec(doc["asset_caps"]),
                          doc["bank_ids"], doc["asset_ids"])
    d = None
    if "bank_degrees" in doc:
        d = DegreeSequences(doc["bank_degrees"], doc["asset_degrees"])
    if doc.get("provenance_hash") not in (None, provenance_hash(s, d)):
        raise ValidationError("params provenance hash does not match its strengths")
    mult = {name: _dec(doc[name]) for name in ("lam", "eta", "rho", "delta") if name in doc}
    return EnsembleParams(doc["kind"], s, d, fit_residual=float(doc.get("fit_residual", 0.0)),
                          iterations=int(doc.get("iterations", 0)), **mult)


def params_hash(p: EnsembleParams) -> str:
    """Identifier of a fitted ensemble: sha256 of its canonical JSON."""
    canon = json.dumps(params_to_dict(p), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
