"""Command line entry point: ``mebnlearn <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .datasets import build_default_dataset, dump_joined, execute_join, generate_cpcs, partition_by_cpc
from .errors import ConfigError, MebnError
from .heater import HeaterConfig, generate_heater_db, run_heater_experiment
from .learner import ESTIMATORS, learn_mtheory, parse_priors
from .mapper import apply_rules, build_initial_mtheory, parse_rules, prepare_database
from .relational import Database, classify_relation, er_normalize, load_database, write_database
from .scoring import crps_gaussian, evaluate_criteria, mae, brier, parse_criteria
from .script import emit_mtheory, format_number, parse_mtheory
from .ssbn import EntityInstanceSet, evidence_from_database, ground, infer, load_evidence

CONFIG_KEYS = ("manifest", "data_dir", "rules", "priors", "criteria", "out", "estimator", "seed",
               "experiment")
PATH_KEYS = ("manifest", "data_dir", "rules", "priors", "criteria", "out")


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _database(args) -> Database:
    if not args.manifest:
        raise ConfigError("--manifest is required")
    return load_database(args.manifest, args.data_dir)


def _write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        _write(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    db = _database(args)
    for r in db:
        try:
            kind = classify_relation(r.schema)
        except MebnError:
            kind = "unnormalized"
        print(f"{r.name:<20} {kind:<13} {len(r.rows):>6} rows  key ({', '.join(r.schema.primary_key)})")
    return 0


def cmd_normalize(args) -> int:
    db = er_normalize(_database(args))
    if not args.out:
        raise ConfigError("--out is required")
    write_database(db, args.out)
    print(f"wrote {len(db.names)} relations to {args.out}")
    return 0


def cmd_map(args) -> int:
    db = er_normalize(_database(args))
    _emit(args, emit_mtheory(build_initial_mtheory(db), value_spaces=args.value_spaces))
    return 0


def _rules(args):
    if not args.rules:
        raise ConfigError("--rules is required")
    return parse_rules(_read(args.rules))


def cmd_rules_apply(args) -> int:
    db = er_normalize(_database(args))
    rules = _rules(args)
    prepared = prepare_database(db, rules)
    m, plans = apply_rules(build_initial_mtheory(prepared), rules, db)
    if args.dump_joined:
        for plan in plans:
            res = m.resident(plan.rule.child.attribute)
            joined = execute_join(plan, prepared)
            default = build_default_dataset(prepared, plan, joined)
            csd = partition_by_cpc(joined, generate_cpcs(res, m, joined), default)
            dump_joined(Path(args.dump_joined) / f"joined_{res.name}.csv", joined, csd)
    _emit(args, emit_mtheory(m))
    return 0


def _learn(db: Database, rules, priors_path, estimator):
    priors = parse_priors(_read(priors_path)) if priors_path else None
    m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    return learn_mtheory(m, db, rules, priors, estimator)


def cmd_learn(args) -> int:
    db = er_normalize(_database(args))
    model, report = _learn(db, _rules(args), args.priors, args.estimator)
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    _write(out / "learned.mebn", emit_mtheory(model))
    _write(out / "learned_report.txt", report.text())
    sys.stdout.write(report.text())
    return 1 if report.errors else 0


def _network(args, queries):
    if not args.model:
        raise ConfigError("--model is required")
    model = parse_mtheory(_read(args.model))
    db = er_normalize(_database(args))
    evidence = {}
    if args.context_from_db:
        evidence.update(evidence_from_database(db, model, "context"))
    if args.evidence:
        evidence.update(load_evidence(args.evidence))
    return ground(model, EntityInstanceSet.from_database(db), evidence, queries or None)


def cmd_ground(args) -> int:
    net = _network(args, args.query)
    lines = [f"node {nid}: parents {', '.join(n.parents) or '-'}" for nid, n in net.nodes.items()]
    lines += [f"evidence {k} = {v}" for k, v in sorted(net.evidence.items())]
    lines += net.reports
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_infer(args) -> int:
    if not args.query:
        raise ConfigError("at least one --query is required")
    net = _network(args, args.query)
    text = "".join(infer(net, q).text() for q in args.query)
    _emit(args, text)
    return 0


def cmd_eval(args) -> int:
    if not args.predictions:
        raise ConfigError("--predictions is required")
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    values = {}
    if rows and "probability" in rows[0]:
        values["brier"] = brier([float(r["probability"]) for r in rows], [float(r["outcome"]) for r in rows])
    else:
        try:
            means = [float(r["predicted_mean"]) for r in rows]
            variances = [float(r["predicted_variance"]) for r in rows]
            actual = [float(r["actual"]) for r in rows]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{args.predictions}: bad prediction row ({exc})") from None
        values["avg_crps"] = sum(crps_gaussian(m, v, y) for m, v, y in zip(means, variances, actual)) / len(rows)
        values["mae"] = mae(means, actual)
    for k in sorted(values):
        print(f"{k} {format_number(values[k])}")
    failed = False
    if args.criteria:
        for c, value, ok in evaluate_criteria(parse_criteria(_read(args.criteria)), values):
            print(f"{c.text()}: {'PASS' if ok else 'FAIL'}")
            failed |= not ok
    return 2 if failed else 0


def _heater_config(args) -> HeaterConfig:
    settings = dict(getattr(args, "heater_settings", {}) or {})
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        settings[k.strip()] = v.strip()
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    return HeaterConfig.from_mapping(settings)


def cmd_heater_sim(args) -> int:
    cfg = _heater_config(args)
    if args.generate_only:
        if not args.out:
            raise ConfigError("--out is required")
        data = generate_heater_db(cfg)
        write_database(data.train, Path(args.out) / "train")
        write_database(data.test, Path(args.out) / "test")
        with open(Path(args.out) / "actual_totals.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "actual"])
            for cid, v in data.actual_totals:
                w.writerow([cid, repr(v)])
        return 0
    criteria = parse_criteria(_read(args.criteria)) if args.criteria else ()
    report = run_heater_experiment(cfg, None, criteria, args.out)
    sys.stdout.write(report.text())
    return 0 if report.passed else 2


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(_read(path).splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def cmd_pipeline(args) -> int:
    """Command-line flags win over the config file; relative config paths are resolved against it."""
    cfg = read_config(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else Path(".")
    heater = {}
    for k, v in cfg.items():
        if k not in CONFIG_KEYS:
            heater[k] = v
            continue
        if k in PATH_KEYS:
            v = str(base / v)
        if getattr(args, k, None) is None:
            setattr(args, k, int(v) if k == "seed" else v)
    args.estimator = args.estimator or "dirichlet"
    if getattr(args, "experiment", None) == "heater":
        args.heater_settings = heater
        return cmd_heater_sim(args)
    if heater:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(heater))}")
    if not args.out:
        raise ConfigError("an output directory is required (out = ... or --out)")
    if args.estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {args.estimator!r}")
    out = Path(args.out)
    db = er_normalize(_database(args))
    write_database(db, out / "normalized")
    _write(out / "initial.mebn", emit_mtheory(build_initial_mtheory(db), value_spaces=False))
    rules = _rules(args)
    m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    _write(out / "mapped.mebn", emit_mtheory(m))
    model, report = _learn(db, rules, args.priors, args.estimator)
    _write(out / "learned.mebn", emit_mtheory(model))
    _write(out / "learned_report.txt", report.text())
    sys.stdout.write(report.text())
    return 1 if report.errors else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mebnlearn", description="Learn MEBN models from relational data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, rules=False, out_help="output path"):
        sp.add_argument("--manifest", help="schema manifest file")
        sp.add_argument("--data-dir", dest="data_dir", help="directory of CSV files (default: next to the manifest)")
        sp.add_argument("--out", help=out_help)
        if rules:
            sp.add_argument("--rules", help="causal rules file")
        return sp

    common(sub.add_parser("ingest", help="load and validate a database")).set_defaults(func=cmd_ingest)
    common(sub.add_parser("normalize", help="entity-relationship normalization"),
           out_help="output directory").set_defaults(func=cmd_normalize)
    sp = common(sub.add_parser("map", help="initial MTheory from the schema"), out_help="script file")
    sp.add_argument("--value-spaces", action="store_true", help="annotate residents with their value spaces")
    sp.set_defaults(func=cmd_map)

    rules = sub.add_parser("rules", help="causal rules")
    rsub = rules.add_subparsers(dest="rules_command", required=True)
    sp = common(rsub.add_parser("apply", help="apply rules to the initial MTheory"), True, "script file")
    sp.add_argument("--dump-joined", dest="dump_joined", metavar="DIR", help="write joined datasets as CSV")
    sp.set_defaults(func=cmd_rules_apply)

    sp = common(sub.add_parser("learn", help="learn parameters"), True, "output directory")
    sp.add_argument("--priors", help="Dirichlet priors file")
    sp.add_argument("--estimator", choices=ESTIMATORS, default="dirichlet")
    sp.set_defaults(func=cmd_learn)

    for name, func, helptext in (("ground", cmd_ground, "build the situation-specific network"),
                                 ("infer", cmd_infer, "posterior of query nodes")):
        sp = common(sub.add_parser(name, help=helptext), out_help="output file")
        sp.add_argument("--model", help="learned MTheory script")
        sp.add_argument("--evidence", help="CSV with columns node_id,value")
        sp.add_argument("--query", action="append", default=[], help="node id such as ThreatLevel_rgn1_t1")
        sp.add_argument("--context-from-db", dest="context_from_db", action="store_true",
                        help="use the database's entity-valued attributes and relationships as evidence")
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="score predictions against outcomes")
    sp.add_argument("--predictions", help="CSV: case,predicted_mean,predicted_variance,actual (or probability,outcome)")
    sp.add_argument("--criteria", help="criteria file")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("heater-sim", help="heater simulation experiment")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--criteria", help="criteria file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="simulator setting, e.g. n_train=500")
    sp.add_argument("--generate-only", dest="generate_only", action="store_true",
                    help="only write the simulated databases")
    sp.set_defaults(func=cmd_heater_sim)

    sp = common(sub.add_parser("pipeline", help="run every step from a config file"), True, "output directory")
    sp.add_argument("--config", help="key = value configuration file")
    sp.add_argument("--priors")
    sp.add_argument("--criteria")
    sp.add_argument("--estimator", choices=ESTIMATORS)
    sp.add_argument("--experiment", choices=("relational", "heater"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_pipeline, generate_only=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MebnError as exc:
        detail = str(exc).replace("\n", " ")
        print(f"{exc.code}: {detail}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
