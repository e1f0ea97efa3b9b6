"""Command-line driver: ``sharpbranch {gen,solve,train,eval,oracle}``.

Exit status is 0 on success (for ``solve``: counted within the cap), 2 when a
solve hit its decision cap and 1 for usage, parse and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .counting import ENGINES, count
from .evaluation import CACTUS_FIELDS, HEATMAP_FIELDS, cactus_rows, evaluate, heatmap_rows, make_heuristic
from .formula import DimacsError, read_dimacs
from .generators import FAMILIES, load_split, write_dataset
from .generators.oracle import oracle_count
from .policy import PolicyConfig, PolicyError, save_params
from .training import LOG_FIELDS, EsConfig, format_log_row, initial_params, load_checkpoint, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _global_options(parser, defaults: bool):
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    parser.add_argument("--seed", type=int, **({"default": 0} if defaults else kw))
    parser.add_argument("--threads", type=int, **({"default": 1} if defaults else kw))
    parser.add_argument("--out", **({"default": None} if defaults else kw))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_options(common, defaults=False)
    p = _Parser(prog="sharpbranch", description="#SAT counting with learned branching heuristics")
    _global_options(p, defaults=True)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a benchmark dataset")
    g.add_argument("family", choices=sorted(FAMILIES))
    for name in ("rule", "n", "r", "s", "t", "k", "d", "w"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--oracle", action="store_true", help="store domain-oracle counts in the manifest")
    g.add_argument("--test-fraction", type=float, default=0.1)

    s = sub.add_parser("solve", parents=[common], help="count one DIMACS file")
    s.add_argument("file")
    s.add_argument("--engine", choices=sorted(ENGINES), default="sharp")
    s.add_argument("--heuristic", default="occ", help="occ, random or policy:<paramfile>")
    s.add_argument("--cap", type=int, default=None, help="maximum branching decisions")

    t = sub.add_parser("train", parents=[common], help="train a policy with evolution strategies")
    t.add_argument("manifest")
    es = EsConfig()
    t.add_argument("--iterations", type=int, default=es.iterations)
    t.add_argument("--sigma", type=float, default=es.sigma)
    t.add_argument("--directions", type=int, default=es.n_directions)
    t.add_argument("--batch", type=int, default=es.batch_size)
    t.add_argument("--lr", type=float, default=es.lr)
    t.add_argument("--weight-decay", type=float, default=es.weight_decay)
    t.add_argument("--train-cap", type=int, default=es.train_step_cap)
    t.add_argument("--eval-cap", type=int, default=es.eval_step_cap)
    t.add_argument("--penalty", type=float, default=es.r_penalty)
    t.add_argument("--gnn-iterations", type=int, default=PolicyConfig.iterations)
    t.add_argument("--time-feature", action="store_true")
    t.add_argument("--score-feature", action="store_true")
    t.add_argument("--time-only", action="store_true")
    t.add_argument("--checkpoint-every", type=int, default=10)
    t.add_argument("--resume", help="checkpoint file to continue from")
    t.add_argument("--log-wall-seconds", action="store_true",
                   help="add a wall_seconds column to the training log (breaks byte-identical logs)")

    e = sub.add_parser("eval", parents=[common], help="evaluate configurations on a dataset split")
    e.add_argument("manifest")
    e.add_argument("--engines", default="sharp")
    e.add_argument("--heuristics", default="occ,random")
    e.add_argument("--cap", type=int, default=es.eval_step_cap)
    e.add_argument("--split", default="test", help="train, test or all")
    e.add_argument("--heatmap", action="store_true", help="write heatmap.csv (cell family only)")

    o = sub.add_parser("oracle", parents=[common], help="brute-force model counts")
    o.add_argument("files", nargs="+")
    return p


def _out_dir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_gen(args) -> int:
    names = FAMILIES[args.family][1]
    params = {k: getattr(args, k) for k in names}
    missing = [k for k, v in params.items() if v is None]
    if missing:
        raise UsageError(f"{args.family} needs --{' --'.join(missing)}")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    out = _out_dir(args, f"{args.family}_data")
    rows = write_dataset(args.family, params, args.count, args.seed, out,
                         oracle=args.oracle, test_fraction=args.test_fraction)
    print(json.dumps({"dir": out, "instances": len(rows),
                      "train": sum(r["split"] == "train" for r in rows),
                      "test": sum(r["split"] == "test" for r in rows)}))
    return EXIT_OK


def cmd_solve(args) -> int:
    formula = read_dimacs(args.file)
    res = count(formula, args.engine, make_heuristic(args.heuristic, args.seed), max_decisions=args.cap)
    print(res.to_json())
    return EXIT_OK if res.solved else EXIT_ABORTED


def cmd_train(args) -> int:
    _, formulas = load_split(args.manifest, "train")
    if not formulas:
        raise UsageError("manifest has an empty train split")
    es = EsConfig(sigma=args.sigma, n_directions=args.directions, batch_size=args.batch, lr=args.lr,
                  weight_decay=args.weight_decay, train_step_cap=args.train_cap,
                  eval_step_cap=args.eval_cap, r_penalty=args.penalty, iterations=args.iterations,
                  seed=args.seed)
    out = _out_dir(args, "train_out")
    log_path = os.path.join(out, "train_log.csv")
    timing_path = os.path.join(out, "timing.csv")
    checkpoint = os.path.join(out, "checkpoint.bin")
    if args.resume:
        params, adam = load_checkpoint(args.resume)
        mode = "a" if os.path.exists(log_path) else "w"
    else:
        config = PolicyConfig(iterations=args.gnn_iterations, use_time=args.time_feature or args.time_only,
                              use_score_feature=args.score_feature, time_only=args.time_only)
        params, adam = initial_params(config, es.seed), None
        mode = "w"
    header = list(LOG_FIELDS) + (["wall_seconds"] if args.log_wall_seconds else [])
    with open(log_path, mode) as log_fh, open(timing_path, mode) as time_fh:
        if mode == "w":
            log_fh.write(",".join(header) + "\n")
            time_fh.write("iter,wall_seconds\n")

        def on_iteration(row, wall):
            log_fh.write(format_log_row(row, wall if args.log_wall_seconds else None) + "\n")
            time_fh.write(f"{row['iter']},{wall:.6f}\n")
            log_fh.flush()
            time_fh.flush()

        result = train(formulas, es, params=params, adam=adam, workers=args.threads,
                       checkpoint_path=checkpoint, checkpoint_every=args.checkpoint_every,
                       on_iteration=on_iteration)
    save_params(os.path.join(out, "params.bin"), result.params)
    print(json.dumps({"params": os.path.join(out, "params.bin"), "log": log_path,
                      "iterations": result.adam.t}))
    return EXIT_OK


def cmd_eval(args) -> int:
    split = None if args.split == "all" else args.split
    rows, formulas = load_split(args.manifest, split)
    if not formulas:
        raise UsageError(f"split {args.split!r} is empty")
    engines = [x for x in args.engines.split(",") if x]
    heuristics = [x for x in args.heuristics.split(",") if x]
    for eng in engines:
        if eng not in ENGINES:
            raise UsageError(f"unknown engine {eng!r}")
    if args.heatmap and not all(f.coord for f in formulas):
        raise UsageError("heatmap requested for a dataset without coord annotations")
    configs = [(eng, h) for eng in engines for h in heuristics]
    report = evaluate([r["file"] for r in rows], formulas, configs, cap=args.cap,
                      seed=args.seed, threads=args.threads)
    out = _out_dir(args, "eval_out")
    with open(os.path.join(out, "records.jsonl"), "w") as fh:
        for rec in report.records:
            rec = dict(rec)
            rec["first_decision"] = {str(k): v for k, v in sorted(rec["first_decision"].items())}
            fh.write(json.dumps(rec) + "\n")
    _write_csv(os.path.join(out, "cactus.csv"), CACTUS_FIELDS, cactus_rows(report.records))
    if args.heatmap:
        hm = []
        for cfg in report.configs():
            hm += [(cfg, *row) for row in heatmap_rows(report.records, formulas, cfg)]
        _write_csv(os.path.join(out, "heatmap.csv"), ("config",) + HEATMAP_FIELDS, hm)
    print(json.dumps(report.aggregates()))
    return EXIT_OK


def cmd_oracle(args) -> int:
    for path in args.files:
        print(json.dumps({"file": path, "count": str(oracle_count(read_dimacs(path)))}))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("sharpbranch: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except DimacsError as exc:
        print(f"sharpbranch: parse error: {exc}", file=sys.stderr)
    except (UsageError, PolicyError, ValueError, OSError) as exc:
        print(f"sharpbranch: error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
