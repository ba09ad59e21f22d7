"""Command-line entry point: ``riskbid <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every output file is written under the artifact directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .bidders import make_bidder
from .ctr_distribution import CtrPosterior, build_moment_table, moments_quadrature
from .ctr_model import BayesianLogisticRegression
from .exceptions import InvalidInputError, RiskBidError
from .market import LogNormalMarket, load_market
from .simulator import (
    SyntheticSpec,
    click_value_from_training,
    convert_ipinyou,
    generate_synthetic,
    read_log,
    replay_bids,
    write_log,
)
from .strategies import BidGrid, StrategyConfig, bid_lr, build_rmp_table, negative_profit_prob

logger = logging.getLogger("riskbid")

MODEL_FILE = "model.ckpt"
MARKET_FILE = "market.txt"
MOMENT_TABLE_FILE = "moments.rbmt"
SWEEP_FILE = "sweep.json"
SELECTION_FILE = "selections.json"


class UsageError(Exception):
    pass


# -- config plumbing ---------------------------------------------------------

_CONFIG_FLAGS = {
    "train": str, "test": str, "artifacts": str, "seed": int, "eta": float, "epochs": int,
    "q0": float, "mu0": float, "map_steps": int, "shuffle": str, "market": str, "m_bins": int,
    "s2_bins": int, "table_method": str, "samples_per_cell": int, "bid_steps": int,
    "strategies": str, "alphas": str, "phis": str, "lambdas": str, "budgets": str,
    "value_proportion": float,
}


def _add_config_flags(p):
    p.add_argument("--config", help="INI experiment config; flags override its keys")
    for name, typ in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def _load_config(args, need_seed=False) -> ev.ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    overrides = {k: (str(v) if v is not None and k not in ("seed",) else v) for k, v in overrides.items()}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = ev.ExperimentConfig.from_ini(args.config, overrides)
    else:
        values = {k: ev.ExperimentConfig.coerce(k, v) for k, v in overrides.items() if v is not None}
        cfg = ev.ExperimentConfig(**values)
    cfg.n_jobs = args.workers
    if need_seed and cfg.seed is None:
        raise UsageError("--seed is required for this command")
    return cfg


def _artifacts(cfg) -> Path:
    d = Path(cfg.artifacts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require_file(path, what):
    if not path or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _train_log(cfg):
    return read_log(_require_file(cfg.train, "train log"))


def _logs(cfg):
    _require_file(cfg.train, "train log")
    _require_file(cfg.test, "test log")
    return ev.load_logs(cfg)


def _load_model(cfg):
    path = _require_file(str(Path(cfg.artifacts) / MODEL_FILE), "model checkpoint (run `train`)")
    return BayesianLogisticRegression.load_checkpoint(path)


def _load_market(cfg):
    path = _require_file(str(Path(cfg.artifacts) / MARKET_FILE), "market model (run `fit-market`)")
    return load_market(path)


def _context(cfg):
    train, test = _logs(cfg)
    return ev.prepare(cfg, train, test, model=_load_model(cfg), market=_load_market(cfg))


def _write_json(path, obj):
    Path(path).write_text(ev.dumps_json(obj), encoding="utf-8")
    logger.info("wrote %s", path)


# -- commands ------------------------------------------------------------------

def cmd_convert(args):
    out = Path(args.artifacts)
    out.mkdir(parents=True, exist_ok=True)
    srcs = [_require_file(s, "input") for s in args.inputs]
    dests = [out / (Path(s).stem + ".log") for s in srcs]
    fmap = convert_ipinyou(
        srcs, dests, args.features.split(","), click_column=args.click_column,
        price_column=args.price_column, delimiter=args.delimiter,
    )
    with open(out / "feature_map.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for key, idx in fmap.items():
            fh.write(f"{idx}\t{key}\n")
    for d in dests:
        print(d)
    return 0


def cmd_gen_synthetic(args):
    out = Path(args.artifacts)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(
        n_records=args.train_records + args.test_records, n_fields=args.fields,
        field_cardinality=args.cardinality, zipf_exponent=args.zipf, bias=args.bias,
        weight_std=args.weight_std, price_mu=args.price_mu, price_sigma=args.price_sigma,
    )
    data = generate_synthetic(spec, seed=args.seed)
    write_log(out / "train.log", data.log[: args.train_records])
    write_log(out / "test.log", data.log[args.train_records:])
    np.savetxt(out / "true_weights.txt", data.true_weights, fmt="%.17g")
    print(out / "train.log")
    print(out / "test.log")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    train = _train_log(cfg)
    model = ev.train_model(cfg, train)
    path = _artifacts(cfg) / MODEL_FILE
    model.save_checkpoint(path)
    print(path)
    return 0


def cmd_fit_market(args):
    cfg = _load_config(args)
    market = ev.fit_market(cfg, _train_log(cfg))
    path = _artifacts(cfg) / MARKET_FILE
    market.save(path)
    print(path)
    return 0


def cmd_build_tables(args):
    cfg = _load_config(args, need_seed=True)
    model, market = _load_model(cfg), _load_market(cfg)
    train = _train_log(cfg)
    v = click_value_from_training(train, cfg.value_proportion)
    m_range, s2_range = ev.table_ranges(model, train.X)
    out = _artifacts(cfg)
    t0 = time.perf_counter()
    table = build_moment_table(
        (*m_range, cfg.m_bins), (*s2_range, cfg.s2_bins), cfg.samples_per_cell,
        seed=cfg.seed, method=cfg.table_method, n_jobs=cfg.n_jobs,
    )
    table.meta["config_digest"] = cfg.digest()
    table.save(out / MOMENT_TABLE_FILE)
    logger.info("moment table %s built in %.2fs", table.shape, time.perf_counter() - t0)
    print(out / MOMENT_TABLE_FILE)
    if "RMP" in cfg.strategies:
        grid = BidGrid.default(v, cfg.bid_steps)
        for alpha in cfg.alphas:
            t0 = time.perf_counter()
            rmp = build_rmp_table(
                table.m_grid, table.s2_grid, grid, alpha, v, market,
                seed=cfg.seed, moment_table=table, n_jobs=cfg.n_jobs,
            )
            rmp.meta["config_digest"] = cfg.digest()
            path = out / f"rmp_alpha{alpha:+g}.rbbt"
            rmp.save(path)
            logger.info("RMP table alpha=%g built in %.2fs", alpha, time.perf_counter() - t0)
            print(path)
    return 0


def cmd_replay(args):
    cfg = _load_config(args)
    log = read_log(_require_file(args.log, "log"))
    model = _load_model(cfg)
    if args.v is not None:
        v = args.v
    else:
        v = click_value_from_training(_train_log(cfg), cfg.value_proportion)
    kind = StrategyConfig(args.strategy, args.alpha, args.phi, v).kind
    market = _load_market(cfg) if kind == "RMP" else None
    params = dict(alpha=args.alpha, phi=args.phi)
    if kind != "LR":
        params.update(m_bins=cfg.m_bins, s2_bins=cfg.s2_bins, table_method=cfg.table_method,
                      samples_per_cell=cfg.samples_per_cell, random_state=cfg.seed,
                      n_jobs=cfg.n_jobs, bid_steps=cfg.bid_steps)
        if cfg.train and Path(cfg.train).is_file():
            params["m_range"], params["s2_range"] = ev.table_ranges(model, _train_log(cfg).X)
    bidder = make_bidder(kind, model, v, market=market, **params).fit()
    metrics = replay_bids(bidder.predict(log.X), log.clicks, log.prices, v, args.budget)
    _write_json(_artifacts(cfg) / "replay.json", metrics.to_dict())
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def cmd_sweep(args):
    cfg = _load_config(args, need_seed=True)
    ctx = _context(cfg)
    points = ev.run_sweeps(ctx)
    _write_json(_artifacts(cfg) / SWEEP_FILE, {
        "schema_version": ev.SCHEMA_VERSION,
        "experiment_id": cfg.digest(),
        "points": [p.to_dict() for p in points],
    })
    return 0


def _read_sweep(cfg):
    path = _require_file(str(Path(cfg.artifacts) / SWEEP_FILE), "sweep results (run `sweep`)")
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("experiment_id") != cfg.digest():
        raise UsageError("sweep results were produced with a different config")
    return [ev.SweepPoint.from_dict(p) for p in doc["points"]]


def cmd_select(args):
    cfg = _load_config(args, need_seed=True)
    selections = ev.run_selection(cfg, _read_sweep(cfg))
    _write_json(_artifacts(cfg) / SELECTION_FILE, {
        "schema_version": ev.SCHEMA_VERSION,
        "experiment_id": cfg.digest(),
        "selections": selections,
    })
    return 0


def cmd_report(args):
    cfg = _load_config(args, need_seed=True)
    points = _read_sweep(cfg)
    sel_path = Path(cfg.artifacts) / SELECTION_FILE
    if sel_path.is_file():
        selections = json.loads(sel_path.read_text(encoding="utf-8"))["selections"]
    else:
        selections = ev.run_selection(cfg, points)
    ctx = _context(cfg)
    report = ev.build_report(ctx, points, ev.run_tests(ctx, selections))
    for p in ev.write_report(report, _artifacts(cfg)):
        print(p)
    return 0


def cmd_run_experiment(args):
    cfg = _load_config(args, need_seed=True)
    cfg.validate()
    train, test = _logs(cfg)
    out = _artifacts(cfg)
    ctx = ev.prepare(cfg, train, test)
    ctx.model.save_checkpoint(out / MODEL_FILE)
    ctx.market.save(out / MARKET_FILE)
    points = ev.run_sweeps(ctx)
    selections = ev.run_selection(cfg, points)
    report = ev.build_report(ctx, points, ev.run_tests(ctx, selections))
    for p in ev.write_report(report, out):
        print(p)
    return 0


def cmd_demo_fig2(args):
    post = CtrPosterior(args.m, args.s2)
    market = LogNormalMarket(mu=args.market_mu, sigma=args.market_sigma)
    mean, std = moments_quadrature(post)
    bid = bid_lr(mean, StrategyConfig("LR", v=args.v))
    b_eval = args.bid if args.bid is not None else bid
    p_neg = negative_profit_prob(post, market, args.v, b_eval, n=args.samples, seed=args.seed)
    p_neg_win = negative_profit_prob(post, market, args.v, b_eval, n=args.samples, seed=args.seed, given_win=True)
    se = math.sqrt(p_neg * (1 - p_neg) / args.samples)
    print(f"E[ctr]            = {mean:.4f}")
    print(f"std[ctr]          = {std:.4f}")
    print(f"truth-telling bid = {bid:.2f}")
    print(f"P(profit < 0)     = {100 * p_neg:.1f}% +- {100 * se:.1f}%  at bid {b_eval:g} ({args.samples} samples)")
    print(f"P(profit < 0|win) = {100 * p_neg_win:.1f}%")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker pool size (default: available cores)")
    parser = argparse.ArgumentParser(prog="riskbid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("convert", help="normalise iPinYou-style logs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--features", required=True, help="comma-separated feature columns")
    p.add_argument("--click-column", default="click")
    p.add_argument("--price-column", default="payprice")
    p.add_argument("--delimiter", default="\t")
    p.set_defaults(func=cmd_convert)

    p = add("gen-synthetic", help="write a synthetic train/test log pair")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train-records", type=int, default=200_000)
    p.add_argument("--test-records", type=int, default=100_000)
    p.add_argument("--fields", type=int, default=8)
    p.add_argument("--cardinality", type=int, default=1000)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--bias", type=float, default=-4.0)
    p.add_argument("--weight-std", type=float, default=0.5)
    p.add_argument("--price-mu", type=float, default=4.0)
    p.add_argument("--price-sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synthetic)

    for name, func, helptext in (
        ("train", cmd_train, "train the Bayesian CTR model"),
        ("fit-market", cmd_fit_market, "fit the market price model"),
        ("build-tables", cmd_build_tables, "precompute moment and RMP lookup tables"),
        ("sweep", cmd_sweep, "alpha/phi sweep on the validation half"),
        ("select", cmd_select, "CP-Profit selection per lambda"),
        ("report", cmd_report, "replay selections on the test half and write reports"),
        ("run-experiment", cmd_run_experiment, "train, sweep, select, test and report"),
    ):
        p = add(name, help=helptext)
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = add("replay", help="replay one strategy over a log")
    _add_config_flags(p)
    p.add_argument("--log", required=True)
    p.add_argument("--strategy", required=True, choices=["lr", "var", "rmp", "LR", "VaR", "RMP"])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--v", type=float, default=None, help="click value (default: train eCPC)")
    p.add_argument("--budget", type=float, default=None)
    p.set_defaults(func=cmd_replay)

    p = add("demo-fig2", help="risk of truth-telling on one impression")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m", type=float, default=-1.0)
    p.add_argument("--s2", type=float, default=1.0 / 3.0)
    p.add_argument("--v", type=float, default=300.0)
    p.add_argument("--market-mu", type=float, default=4.0)
    p.add_argument("--market-sigma", type=float, default=0.5)
    p.add_argument("--bid", type=float, default=84.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_demo_fig2)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.workers < 1 and args.workers != -1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        print(f"riskbid {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RiskBidError, OSError) as exc:
        print(f"riskbid {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
