"""CSV and JSON file formats.

Every CSV may start with ``#`` comment lines carrying provenance
(``# key: value``); readers skip them. Reals are written with 17
significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences
from .errors import ParseError, ValidationError
from .sampling import QuantileBand, SampleBatch

log = logging.getLogger(__name__)

SIZE_RTOL = 1e-6


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows, meta: Optional[dict] = None):
    buf = _io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    """Return (meta, header, rows) with rows as (line_number, fields)."""
    meta, body = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                body.append((lineno, line))
    if not body:
        raise ParseError(f"{path}: no header row", line=1)
    parsed = []
    for lineno, line in body:
        try:
            fields = next(csv.reader([line]))
        except csv.Error as exc:
            raise ParseError(str(exc), line=lineno) from None
        parsed.append((lineno, [f.strip() for f in fields]))
    header = parsed[0][1]
    for lineno, fields in parsed[1:]:
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}",
                             line=lineno, column=min(len(fields), len(header)) + 1)
    return meta, header, parsed[1:]


def _number(text, lineno, col):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=lineno, column=col) from None


def _require(header, names, path):
    missing = [n for n in names if n not in header]
    if missing:
        raise ParseError(f"{path}: missing column(s) {missing}", line=1)


def _numeric_rows(rows, first_col):
    return np.array([[_number(v, ln, c + 1) for c, v in enumerate(f) if c >= first_col]
                     for ln, f in rows], dtype=float).reshape(len(rows), -1)


# -- holdings -----------------------------------------------------------------

def load_holdings(path):
    """Read ``bank_id,equity[,size],<asset ids...>``; returns (HoldingsMatrix, BankSheet).

    Sizes are always the row sums. A ``size`` column, if present, is only
    checked against them (warning beyond 1e-6 relative).
    """
    _, header, rows = read_csv(path)
    if header[:2] != ["bank_id", "equity"]:
        raise ParseError(f"{path}: header must start with bank_id,equity", line=1)
    has_size = len(header) > 2 and header[2] == "size"
    first_asset = 3 if has_size else 2
    asset_ids = header[first_asset:]
    if not asset_ids:
        raise ParseError(f"{path}: no asset columns", line=1)
    if not rows:
        raise ValidationError(f"{path}: no bank rows")
    bank_ids = [f[0] for _, f in rows]
    values = _numeric_rows(rows, 1)
    equity = values[:, 0]
    x = values[:, first_asset - 1:]
    problems = []
    for i in np.nonzero(~(equity > 0))[0]:
        problems.append(f"bank {bank_ids[i]} (line {rows[i][0]}): equity must be positive, "
                        f"got {float(equity[i])!r}")
    for i, j in zip(*np.nonzero(x < 0)):
        problems.append(f"negative holding {float(x[i, j])!r} at bank {bank_ids[i]}, asset {asset_ids[j]} "
                        f"(line {rows[i][0]}, column {first_asset + j + 1})")
    if problems:
        raise ValidationError(problems)
    holdings = HoldingsMatrix(x, bank_ids, asset_ids)
    sizes = x.sum(axis=1)
    if has_size:
        given = values[:, 1]
        off = np.abs(given - sizes) > SIZE_RTOL * np.maximum(np.abs(sizes), np.abs(given))
        if off.any():
            log.warning("size column differs from row sums for %d banks (e.g. %s); using row sums",
                        off.sum(), [bank_ids[i] for i in np.nonzero(off)[0][:5]])
    return holdings, BankSheet(sizes, equity, bank_ids)


def save_holdings(path, x: HoldingsMatrix, sheet: BankSheet, meta: Optional[dict] = None):
    if sheet.bank_ids != x.bank_ids:
        raise ValidationError("sheet and holdings list different banks")
    rows = [[b, e, *x.entries[i]] for i, (b, e) in enumerate(zip(x.bank_ids, sheet.equities))]
    write_csv(path, ["bank_id", "equity", *x.asset_ids], rows, meta)


def load_mask(path, bank_ids, asset_ids) -> np.ndarray:
    """0/1 matrix in holdings layout without the equity column."""
    _, header, rows = read_csv(path)
    if header[0] != "bank_id" or list(header[1:]) != list(asset_ids):
        raise ParseError(f"{path}: header must be bank_id followed by the asset ids", line=1)
    if [f[0] for _, f in rows] != list(bank_ids):
        raise ValidationError(f"{path}: bank rows do not match the strengths")
    m = _numeric_rows(rows, 1)
    if np.any((m != 0) & (m != 1)):
        raise ValidationError(f"{path}: mask entries must be 0 or 1")
    return m.astype(bool)


# -- strengths and market -------------------------------------------------------

def load_strengths(banks_path, assets_path):
    """Read banks.csv and assets.csv; returns (StrengthSequences, BankSheet, DegreeSequences|None).

    Degrees are returned only if both files carry a ``degree`` column.
    """
    _, bh, brows = read_csv(banks_path)
    _require(bh, ["bank_id", "size", "equity"], banks_path)
    _, ah, arows = read_csv(assets_path)
    _require(ah, ["asset_id", "cap"], assets_path)

    def column(header, rows, name):
        c = header.index(name)
        return np.array([_number(f[c], ln, c + 1) for ln, f in rows])

    bank_ids = [f[bh.index("bank_id")] for _, f in brows]
    asset_ids = [f[ah.index("asset_id")] for _, f in arows]
    sizes = column(bh, brows, "size")
    equity = column(bh, brows, "equity")
    s = StrengthSequences(sizes, column(ah, arows, "cap"), bank_ids, asset_ids)
    sheet = BankSheet(sizes, equity, bank_ids)
    d = None
    if "degree" in bh and "degree" in ah:
        d = DegreeSequences(column(bh, brows, "degree"), column(ah, arows, "degree"))
    return s, sheet, d


def load_sheet(banks_path) -> BankSheet:
    """Balance sheet from banks.csv alone."""
    _, bh, rows = read_csv(banks_path)
    _require(bh, ["bank_id", "size", "equity"], banks_path)
    ib, isz, ie = bh.index("bank_id"), bh.index("size"), bh.index("equity")
    return BankSheet([_number(f[isz], ln, isz + 1) for ln, f in rows],
                     [_number(f[ie], ln, ie + 1) for ln, f in rows], [f[ib] for _, f in rows])


def save_strengths(banks_path, assets_path, s: StrengthSequences, sheet: BankSheet,
                   d: Optional[DegreeSequences] = None, meta: Optional[dict] = None):
    bank_header = ["bank_id", "size", "equity"] + (["degree"] if d is not None else [])
    bank_rows = [[b, s.bank_sizes[i], sheet.equities[i]]
                 + ([d.bank_degrees[i]] if d is not None else []) for i, b in enumerate(s.bank_ids)]
    asset_header = ["asset_id", "cap"] + (["degree"] if d is not None else [])
    asset_rows = [[a, s.asset_caps[j]] + ([d.asset_degrees[j]] if d is not None else [])
                  for j, a in enumerate(s.asset_ids)]
    write_csv(banks_path, bank_header, bank_rows, meta)
    write_csv(assets_path, asset_header, asset_rows, meta)


def load_market(path, asset_ids, cash_asset="cash", illiquidity=1e-10,
                shock=0.01) -> MarketParams:
    """Defaults for every asset, overridden per asset by ``market.csv`` if given."""
    mkt = MarketParams.default(asset_ids, cash_asset, illiquidity, shock)
    if path is None:
        return mkt
    _, header, rows = read_csv(path)
    _require(header, ["asset_id", "illiquidity", "shock"], path)
    ell, eps = mkt.illiquidity.copy(), mkt.shock.copy()
    pos = {a: j for j, a in enumerate(asset_ids)}
    ci, cl, cs = (header.index(n) for n in ("asset_id", "illiquidity", "shock"))
    unknown = []
    for ln, f in rows:
        j = pos.get(f[ci])
        if j is None:
            unknown.append(f[ci])
            continue
        ell[j] = _number(f[cl], ln, cl + 1)
        eps[j] = _number(f[cs], ln, cs + 1)
    if unknown:
        raise ValidationError(f"{path}: unknown assets {unknown[:10]}")
    return MarketParams(ell, eps)


def save_market(path, asset_ids, mkt: MarketParams, meta: Optional[dict] = None):
    write_csv(path, ["asset_id", "illiquidity", "shock"],
              [[a, mkt.illiquidity[j], mkt.shock[j]] for j, a in enumerate(asset_ids)], meta)


# -- JSON -------------------------------------------------------------------------

def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None


# -- Monte-Carlo artifacts --------------------------------------------------------------

def save_batch(path, b: SampleBatch, meta: Optional[dict] = None):
    head = dict(meta or {})
    head.update({"ensemble_hash": b.ensemble_hash, "seed": b.seed, "n_samples": b.n_samples})
    head.update({f"meta.{k}": v for k, v in sorted(b.metadata.items())})
    header = (["sample", "av"] + [f"S:{i}" for i in b.bank_ids] + [f"IV:{i}" for i in b.bank_ids])
    rows = ([m, b.av[m], *b.systemicness[m], *b.iv[m]] for m in range(b.n_samples))
    write_csv(path, header, rows, head)


def load_batch(path) -> SampleBatch:
    meta, header, rows = read_csv(path)
    if header[:2] != ["sample", "av"]:
        raise ParseError(f"{path}: not a sample batch", line=1)
    for key in ("ensemble_hash", "seed", "n_samples"):
        if key not in meta:
            raise ParseError(f"{path}: header comment {key!r} missing", line=1)
    s_cols = [h[2:] for h in header if h.startswith("S:")]
    n = len(s_cols)
    v = _numeric_rows(rows, 1)
    extra = {k[5:]: val for k, val in meta.items() if k.startswith("meta.")}
    return SampleBatch(meta["ensemble_hash"], int(meta["seed"]), int(meta["n_samples"]),
                       v[:, 1:1 + n], v[:, 1 + n:1 + 2 * n], v[:, 0], tuple(s_cols), extra)


BAND_HEADER = ["bank_id", "metric", "lower_prob", "upper_prob", "lower", "point_estimate",
               "upper", "n_samples"]


def save_band(path, band: QuantileBand, meta: Optional[dict] = None):
    lo, hi, pt = (np.atleast_1d(v) for v in (band.lower, band.upper, band.point_estimate))
    ids = band.bank_ids or ("ALL",)
    rows = [[ids[i], band.metric, band.lower_prob, band.upper_prob, lo[i], pt[i], hi[i],
             band.n_samples] for i in range(lo.size)]
    write_csv(path, BAND_HEADER, rows, meta)


def load_band(path) -> QuantileBand:
    _, header, rows = read_csv(path)
    if header != BAND_HEADER:
        raise ParseError(f"{path}: header must be {','.join(BAND_HEADER)}", line=1)
    if not rows:
        raise ParseError(f"{path}: no band rows", line=2)
    metric = rows[0][1][1]
    v = np.array([[_number(f[c], ln, c + 1) for c in (2, 3, 4, 5, 6, 7)] for ln, f in rows])
    ids = tuple(f[0] for _, f in rows)
    if metric == "av":
        ids = ()
    return QuantileBand(metric, float(v[0, 0]), float(v[0, 1]), v[:, 2], v[:, 4], v[:, 3],
                        int(v[0, 5]), ids)
