"""Command-line interface.

Each subcommand writes its artifacts with a ``#`` header giving the tool
version, a hash of the configuration (parameters plus the content of every
input file, not their paths) and the seed. Failures exit with status 2 and
a JSON object ``{"error": code, "message": text}`` on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .core import degrees, marginals
from .ensembles import (fit_bipecm, fit_bipwcm, fit_mecapm, params_from_dict, params_hash,
                        params_to_dict)
from .errors import FiresaleError, ValidationError
from .evaluation import (ESTIMATORS, ScenarioConfig, SyntheticScenario, capm_truth,
                         estimator_comparison, generate_scenario, mecapm_truth)
from .monitoring import monitor_panel
from .reconstruct import SupportMask, capm_matrix, cross_entropy_min
from .riskmetrics import risk_report
from .sampling import mc_metrics, quantile_band

log = logging.getLogger("firesale_maxent")

KIND_NAMES = {"mecapm": "MECAPM", "bipwcm": "BIPWCM", "bipecm": "BIPECM"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage_error", f"{self.prog}: {message}")


def _fail(code, message):
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    sys.exit(2)


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _header(args, inputs=(), seed=None):
    """Provenance header; path-valued options are replaced by content hashes.

    Options that cannot change the output (destinations, logging, thread
    count) stay out of the hash.
    """
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "out", "out_dir", "log_level", "threads") and k not in inputs}
    params["inputs"] = {k: ([_file_digest(p) for p in getattr(args, k)]
                            if isinstance(getattr(args, k), list) else _file_digest(getattr(args, k)))
                        for k in inputs if getattr(args, k) is not None}
    canon = json.dumps(params, sort_keys=True, default=str)
    head = {"tool": f"firesale-maxent {__version__}",
            "config_hash": hashlib.sha256(canon.encode()).hexdigest()}
    if seed is not None:
        head["seed"] = seed
    return head


def _market(args, asset_ids):
    return fio.load_market(args.market, asset_ids, args.cash_asset, args.illiquidity, args.shock)


def _add_market(p):
    p.add_argument("--market", help="CSV asset_id,illiquidity,shock overriding the defaults")
    p.add_argument("--cash-asset", default="cash", help="asset id with zero illiquidity")
    p.add_argument("--illiquidity", type=float, default=1e-10,
                   help="price impact per dollar traded for non-cash assets")
    p.add_argument("--shock", type=float, default=0.01, help="return shock applied to every asset")


def _add_strength_inputs(p):
    p.add_argument("--holdings", help="holdings CSV (marginals and degrees are taken from it)")
    p.add_argument("--banks", help="banks.csv: bank_id,size,equity[,degree]")
    p.add_argument("--assets", help="assets.csv: asset_id,cap[,degree]")


def _strength_inputs(args):
    """(strengths, sheet, degrees or None, input option names)."""
    if args.holdings:
        x, sheet = fio.load_holdings(args.holdings)
        return marginals(x), sheet, degrees(x), ("holdings",)
    if args.banks and args.assets:
        s, sheet, d = fio.load_strengths(args.banks, args.assets)
        return s, sheet, d, ("banks", "assets")
    raise ValidationError("give either --holdings or both --banks and --assets")


def _out_dir(path):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(doc):
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args):
    cfg = ScenarioConfig(args.n_banks, args.n_assets, args.size_log_mean, args.size_log_sd,
                         args.leverage_mean, args.leverage_sd, args.sparsity, not args.no_cash)
    out = _out_dir(args.out_dir)
    head = _header(args, seed=args.seed)
    written = []
    for t in range(args.quarters):
        sc = generate_scenario(cfg, args.seed + t)
        suffix = "" if args.quarters == 1 else f"_q{t + 1:02d}"
        x, sheet = sc.holdings, sc.sheet
        fio.save_holdings(out / f"holdings{suffix}.csv", x, sheet, head)
        fio.save_strengths(out / f"banks{suffix}.csv", out / f"assets{suffix}.csv",
                           marginals(x), sheet, degrees(x), head)
        written.append(f"holdings{suffix}.csv")
        if t == 0:
            fio.save_market(out / "market.csv", x.asset_ids, sc.market, head)
    _emit({"written": written, "seed": args.seed})


def cmd_metrics(args):
    x, sheet = fio.load_holdings(args.holdings)
    mkt = _market(args, x.asset_ids)
    rep = risk_report(x, sheet, mkt)
    out = _out_dir(args.out_dir)
    head = _header(args, ("holdings", "market"))
    fio.write_csv(out / "risk_report.csv",
                  ["bank_id", "systemicness", "indirect_vulnerability", "portfolio_return"],
                  zip(rep.bank_ids, rep.systemicness, rep.indirect_vulnerability,
                      rep.portfolio_returns), head)
    doc = {"schema_version": 1, **head,
           "aggregate_vulnerability": rep.aggregate_vulnerability,
           "total_equity": rep.total_equity,
           "dropped_banks": list(rep.dropped_banks),
           "equity_scope": rep.metadata["equity_scope"],
           "banks": [{"bank_id": b, "systemicness": float(s), "indirect_vulnerability": float(v)}
                     for b, s, v in zip(rep.bank_ids, rep.systemicness,
                                        rep.indirect_vulnerability)]}
    fio.write_json(out / "risk_report.json", doc)
    _emit({"aggregate_vulnerability": rep.aggregate_vulnerability,
           "n_banks": len(rep.bank_ids), "dropped_banks": list(rep.dropped_banks)})


def cmd_reconstruct(args):
    s, sheet, _, inputs = _strength_inputs(args)
    if args.method == "capm":
        if args.mask or args.prior:
            raise ValidationError("--mask and --prior apply to --method cross-entropy only")
        x = capm_matrix(s)
    else:
        prior = capm_matrix(s)
        if args.prior:
            prior = fio.load_holdings(args.prior)[0]
            inputs += ("prior",)
        mask = None
        if args.mask:
            mask = SupportMask(fio.load_mask(args.mask, s.bank_ids, s.asset_ids))
            inputs += ("mask",)
        x = cross_entropy_min(prior, s, mask, tol=args.tol, max_iter=args.max_iter)
    fio.save_holdings(args.out, x, sheet, _header(args, inputs))
    _emit({"written": Path(args.out).name, "method": args.method})


def cmd_fit(args):
    s, _, d, inputs = _strength_inputs(args)
    kind = KIND_NAMES[args.kind]
    if kind == "MECAPM":
        p = fit_mecapm(s)
    elif kind == "BIPWCM":
        p = fit_bipwcm(s, tol=args.tol or 1e-8, max_iter=args.max_iter)
    else:
        if d is None:
            raise ValidationError("bipecm needs degrees: --holdings, or degree columns in "
                                  "both banks.csv and assets.csv")
        p = fit_bipecm(s, d, tol=args.tol or 1e-6, max_iter=args.max_iter)
    doc = params_to_dict(p)
    doc["header"] = _header(args, inputs)
    fio.write_json(args.out, doc)
    _emit({"kind": kind, "fit_residual": p.fit_residual, "ensemble_hash": params_hash(p)})


def _sheet_for(args):
    if args.holdings:
        return fio.load_holdings(args.holdings)[1], ("holdings",)
    if args.banks:
        return fio.load_sheet(args.banks), ("banks",)
    raise ValidationError("give --holdings or --banks for the balance sheet")


def cmd_sample(args):
    doc = fio.read_json(args.params)
    p = params_from_dict(doc)
    sheet, inputs = _sheet_for(args)
    if sheet.bank_ids != p.bank_ids:
        raise ValidationError("balance-sheet banks differ from the ensemble's banks")
    mkt = _market(args, p.asset_ids)
    batch = mc_metrics(p, sheet, mkt, args.n_samples, args.seed, args.threads)
    fio.save_batch(args.out, batch, _header(args, ("params", "market") + inputs, args.seed))
    _emit({"written": Path(args.out).name, "n_samples": args.n_samples, "seed": args.seed,
           "ensemble_hash": batch.ensemble_hash, "mean_av": float(np.mean(batch.av))})


def cmd_bands(args):
    batch = fio.load_batch(args.batch)
    band = quantile_band(batch, args.metric, args.lower, args.upper)
    fio.save_band(args.out, band, _header(args, ("batch",), batch.seed))
    _emit({"written": Path(args.out).name, "metric": args.metric, "n_samples": batch.n_samples})


def cmd_monitor(args):
    quarter_ids = args.quarter_ids or [Path(h).stem for h in args.holdings]
    if len(quarter_ids) != len(args.holdings):
        raise ValidationError("--quarter-ids must name every holdings file")
    quarters = []
    for qid, path in zip(quarter_ids, args.holdings):
        x, sheet = fio.load_holdings(path)
        quarters.append((qid, x, sheet))
    mkt = _market(args, quarters[0][1].asset_ids)
    ref_band = fio.load_band(args.bands) if args.bands else None
    results = monitor_panel(quarters, mkt, KIND_NAMES[args.kind], args.n_samples, args.seed,
                            args.lower, args.upper, args.bank, args.reference,
                            reference_band=ref_band, quarter_bands=not args.no_quarter_bands)
    rows = [[r.bank_id, rec.quarter, rec.observed, rec.ref_upper, rec.band_lower, rec.band_upper,
             rec.flag] for r in results for rec in r.records]
    head = _header(args, ("holdings", "market", "bands"), args.seed)
    head["n_comparisons"] = sum(r.n_comparisons for r in results)
    fio.write_csv(args.out, ["bank_id", "quarter", "observed", "ref_upper", "band_lower",
                             "band_upper", "flag"], rows, head)
    _emit({"written": Path(args.out).name, "n_comparisons": head["n_comparisons"],
           "n_flags": sum(len(r.flagged_quarters) for r in results)})


def cmd_evaluate(args):
    inputs = ()
    if args.holdings:
        x, sheet = fio.load_holdings(args.holdings)
        base = SyntheticScenario(args.seed, x, sheet)
        inputs = ("holdings",)
    else:
        cfg = ScenarioConfig(args.n_banks, args.n_assets, sparsity=args.sparsity)
        base = generate_scenario(cfg, args.seed)
    if args.truth == "capm":
        scenario = capm_truth(base)
    elif args.truth == "mecapm":
        scenario = mecapm_truth(base, args.seed)
    else:
        scenario = base
    mkt = _market(args, scenario.holdings.asset_ids)
    estimators = [e.upper() for e in args.estimators]
    reports = estimator_comparison(scenario, estimators, args.n_samples, args.seed, mkt)
    out = _out_dir(args.out_dir)
    head = _header(args, inputs + ("market",), args.seed)
    fio.write_csv(out / "evaluation.csv",
                  ["quartile", "estimator", "metric", "median", "iqr", "count"],
                  ([r["quartile"], r["estimator"], r["metric"], r["median"], r["iqr"], r["count"]]
                   for rep in reports for r in rep.rows()), head)
    fio.write_json(out / "evaluation.json", {
        "schema_version": 1, **head,
        "reports": [{"estimator": r.estimator, "metric": r.metric, "medians": list(r.medians),
                     "iqrs": list(r.iqrs), "counts": list(r.counts),
                     "excluded": [scenario.holdings.bank_ids[i] for i in r.excluded],
                     "error": r.error} for r in reports]})
    _emit({"reports": len(reports), "failed": sorted({r.estimator for r in reports if r.error})})


# -- parser ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="firesale-maxent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic holdings and strengths")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-banks", type=int, default=50)
    p.add_argument("--n-assets", type=int, default=20)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--size-log-mean", type=float, default=8.0)
    p.add_argument("--size-log-sd", type=float, default=1.5)
    p.add_argument("--leverage-mean", type=float, default=10.0)
    p.add_argument("--leverage-sd", type=float, default=2.0)
    p.add_argument("--no-cash", action="store_true", help="omit the cash column")
    p.add_argument("--quarters", type=int, default=1, help="number of quarters (seeds seed+t)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="systemicness and vulnerability of an observed matrix")
    p.add_argument("--holdings", required=True)
    p.add_argument("--out-dir", required=True)
    _add_market(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("reconstruct", help="estimate holdings from marginals")
    _add_strength_inputs(p)
    p.add_argument("--method", choices=("capm", "cross-entropy"), default="capm")
    p.add_argument("--mask", help="0/1 CSV of allowed entries (cross-entropy only)")
    p.add_argument("--prior", help="holdings CSV used as prior (cross-entropy only)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fit", help="fit a maximum-entropy ensemble")
    _add_strength_inputs(p)
    p.add_argument("--kind", choices=sorted(KIND_NAMES), default="mecapm")
    p.add_argument("--tol", type=float, default=None,
                   help="residual tolerance (default 1e-8 bipwcm, 1e-6 bipecm)")
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="Monte-Carlo metrics over an ensemble")
    p.add_argument("--params", required=True)
    p.add_argument("--holdings", help="balance sheet from a holdings CSV")
    p.add_argument("--banks", help="balance sheet from banks.csv")
    p.add_argument("-M", "--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default from FIRESALE_THREADS, else 1)")
    p.add_argument("--out", required=True)
    _add_market(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bands", help="quantile band from a sample batch")
    p.add_argument("--batch", required=True)
    p.add_argument("--metric", choices=("systemicness", "iv", "av"), default="systemicness")
    p.add_argument("--lower", type=float, default=0.05)
    p.add_argument("--upper", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("monitor", help="flag quarters above the reference band")
    p.add_argument("--holdings", nargs="+", required=True, help="quarter holdings CSVs in order")
    p.add_argument("--quarter-ids", nargs="+")
    p.add_argument("--reference", help="reference quarter id (default: first)")
    p.add_argument("--bands", help="precomputed reference band CSV")
    p.add_argument("--no-quarter-bands", action="store_true",
                   help="skip the per-quarter bands")
    p.add_argument("--bank", action="append", help="bank id to report (repeatable; default all)")
    p.add_argument("--kind", choices=sorted(KIND_NAMES), default="mecapm")
    p.add_argument("-M", "--n-samples", type=int, default=1000)
    p.add_argument("--lower", type=float, default=0.05)
    p.add_argument("--upper", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_market(p)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="estimator errors by quartile of the true metric")
    p.add_argument("--holdings", help="true holdings CSV (default: synthetic scenario)")
    p.add_argument("--n-banks", type=int, default=200)
    p.add_argument("--n-assets", type=int, default=20)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--truth", choices=("observed", "capm", "mecapm"), default="observed")
    p.add_argument("--estimators", nargs="+", default=[e.lower() for e in ESTIMATORS],
                   choices=[e.lower() for e in ESTIMATORS])
    p.add_argument("-M", "--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_market(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except FiresaleError as exc:
        _fail(exc.code, str(exc))
    except OSError as exc:
        _fail("io_error", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
