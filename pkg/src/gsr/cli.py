"""Command-line entry point: ``gsr gen-data | train | eval | experiment | report``."""

import argparse
import csv
import os
import sys

from gsr import datagen
from gsr.config import ConfigError, load_config, make_config
from gsr.graphcore import GraphError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _config(path, experiment=None, overrides=None):
    cfg = make_config({}, experiment) if path is None else load_config(path, experiment)
    return cfg.replace(**overrides) if overrides else cfg


def cmd_gen_data(args):
    from gsr import harness
    overrides = {"seed": args.seed}
    if args.n_samples is not None:
        overrides["n_samples"] = args.n_samples
    name = args.scenario.lower()
    cfg = _config(args.config, "connectome_sr" if name == "connectome" else "simulated_sr",
                  overrides)
    if name == "connectome":
        pairs = datagen.connectome_standins(cfg.n_subjects, cfg.n_l, cfg.n_h, seed=cfg.seed)
        header = {"scenario": "connectome", "seed": cfg.seed, "n_l": cfg.n_l, "n_h": cfg.n_h}
    else:
        sc = harness.scenario_from_config(name, cfg)
        pairs = datagen.generate_scenario(sc, cfg.seed)
        header = datagen.scenario_header(sc, cfg.seed)
    datagen.write_dataset(args.out, pairs, header)
    print(f"wrote {len(pairs)} samples to {args.out}")


def cmd_train(args):
    from gsr import harness
    cfg = _config(args.config, "train")
    _, res, ckpt = harness.run_train(cfg)
    print(f"best epoch {res.best_epoch} (validation MAE {res.best_val:.6f}); checkpoint {ckpt}")


def cmd_eval(args):
    from gsr import harness
    header, rows = harness.evaluate_checkpoint(args.checkpoint, args.data, args.seed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    finally:
        if args.out:
            out.close()


def cmd_experiment(args):
    from gsr import harness
    exp = {"node-vs-edge": "node_vs_edge", "simulated": "simulated_sr",
           "connectome": "connectome_sr", "sensitivity": "sensitivity"}[args.name]
    overrides = {"output": args.out} if args.out else None
    cfg = _config(args.config, exp, overrides)
    for path in harness.run_experiment(cfg):
        print(path)


def cmd_report(args):
    from gsr import harness
    if not os.path.isdir(args.results):
        raise ConfigError(f"no results directory {args.results}")
    for path in harness.report(args.results):
        print(path)


def build_parser():
    p = argparse.ArgumentParser(prog="gsr", description="Graph super-resolution experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a dataset directory")
    g.add_argument("scenario", help="e.g. sbm-degree, ba-clustering, ws-participation, connectome")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-samples", type=int, default=None)
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run an experiment family")
    x.add_argument("name", choices=["node-vs-edge", "simulated", "connectome", "sensitivity"])
    x.add_argument("--config", default=None)
    x.add_argument("--out", default=None, help="overrides the config's output directory")
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="aggregate run files into table CSVs")
    r.add_argument("--results", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    from gsr.harness import NumericalError
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, GraphError, FileNotFoundError, NotImplementedError, ValueError) as exc:
        print(f"gsr: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"gsr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
