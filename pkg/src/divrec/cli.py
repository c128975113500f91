"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad config, missing inputs,
unknown item ids), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, DivrecError, UnknownItems

log = logging.getLogger("divrec")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _config(args, required: bool = True) -> pipeline.RunConfig:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        cfg = pipeline.RunConfig()
    else:
        cfg = pipeline.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out_dir", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out_dir))
    if getattr(args, "run_name", None) is not None:
        cfg = dataclasses.replace(cfg, run_name=args.run_name)
    return cfg


def cmd_synth(args) -> int:
    cfg = _config(args, required=False)
    path = pipeline.stage_synth(cfg)
    print(path)
    return EXIT_OK


def cmd_ingest(args) -> int:
    ds = pipeline.stage_ingest(_config(args))
    print(json.dumps(ds.stats, sort_keys=True))
    return EXIT_OK


def cmd_train_embeddings(args) -> int:
    table = pipeline.stage_train_embeddings(_config(args))
    print(f"{table.n_items} items x {table.dim} dims")
    return EXIT_OK


def cmd_train_model(args) -> int:
    result = pipeline.stage_train_model(_config(args))
    for e, v in enumerate(result.epoch_losses):
        print(f"epoch {e}\t{v:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = pipeline.stage_evaluate(_config(args))
    print(f"ndcg_at_10={report.ndcg_at_10:.4f} gini={report.gini:.4f} coverage={report.coverage:.4f}")
    return EXIT_OK


def cmd_recommend(args) -> int:
    cfg = _config(args)
    if args.top_n is not None:
        cfg = dataclasses.replace(cfg, top_n=args.top_n)
    if args.budget is not None:
        cfg = dataclasses.replace(cfg, ann=dataclasses.replace(cfg.ann, search_budget=args.budget))
    items = [s for chunk in args.items for s in chunk.split(",") if s]
    for item, score in pipeline.recommend(cfg, items):
        print(f"{item}\t{score:.6f}")
    return EXIT_OK


def cmd_grid(args) -> int:
    if args.standard:
        if len(args.configs) != 1:
            raise ConfigError("--standard takes exactly one base config")
        base = pipeline.load_config(args.configs[0]).with_seed(args.seed)
        configs = pipeline.standard_grid(base)
    else:
        configs = []
        for path in args.configs:
            cfg = pipeline.load_config(path).with_seed(args.seed)
            if not cfg.run_name:
                cfg = dataclasses.replace(cfg, run_name=Path(path).stem)
            configs.append(cfg)
    reports = pipeline.run_grid(configs, args.out_dir)
    for name, r in reports.items():
        print(f"{name}\tndcg_at_10={r.ndcg_at_10:.4f}\tgini={r.gini:.4f}\tcoverage={r.coverage:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divrec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help, config=True, seed_required=False, out_dir=True):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", required=False, help="run config (INI)")
        if out_dir:
            sp.add_argument("--out-dir", help="override run.out_dir")
        sp.add_argument("--seed", type=int, required=seed_required,
                        help="seed for every random component" + (" (required)" if seed_required else ""))
        sp.set_defaults(func=func)
        return sp

    add("synth", cmd_synth, "generate a synthetic event log", seed_required=True)
    add("ingest", cmd_ingest, "parse events and write split manifests", seed_required=True)
    add("train-embeddings", cmd_train_embeddings, "train item embeddings and the ANN index", seed_required=True)
    tm = add("train-model", cmd_train_model, "train the session model", seed_required=True)
    tm.add_argument("--run-name", help="override run.run_name")
    ev = add("evaluate", cmd_evaluate, "evaluate a trained model")
    ev.add_argument("--run-name", help="override run.run_name")
    rc = add("recommend", cmd_recommend, "top-n items for a list of viewed item ids")
    rc.add_argument("--run-name", help="override run.run_name")
    rc.add_argument("--items", nargs="+", required=True, help="viewed item ids, oldest first")
    rc.add_argument("--top-n", type=int)
    rc.add_argument("--budget", type=int, help="ANN search budget")

    g = sub.add_parser("grid", help="run several model configs over shared data")
    g.add_argument("configs", nargs="+", help="config files (or one base config with --standard)")
    g.add_argument("--standard", action="store_true", help="expand the base config into the 7 loss/sampling rows")
    g.add_argument("--out-dir")
    g.add_argument("--seed", type=int, required=True)
    g.set_defaults(func=cmd_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownItems) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivrecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
