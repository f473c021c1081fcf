"""Command-line interface: ``cacetest {analyze,simulate,exact,replicate}``.

Exit codes: 0 success, 2 input error, 3 config error, 4 resource limit. Errors
are reported as one line on stderr: ``error: <kind>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import secrets
import sys
from typing import Sequence

import numpy as np

from . import adjusters
from .assignment import CompleteRandomization, EnumerationLimitError
from .data import ComplianceStatus, DataError, load_dataset, parse_schema, write_dataset
from .engine import (DEFAULT_BURN_IN, DEFAULT_M, analyze, exact_pvalue, known_null_table,
                     observed_statistics, philox, resolve_seed)
from .imputation import CompliancePrior
from .statistics import DegenerateStatistic, EmptyArm, EstimandDef, StatisticKind, Tail, default_estimands

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_LIMIT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


def _methods(text: str) -> list[str]:
    if text == "all":
        return list(adjusters.ALL_METHODS)
    out = [m.strip() for m in text.split(",") if m.strip()]
    for m in out:
        if m not in adjusters.ALL_METHODS:
            raise ConfigError(f"unknown adjustment method {m!r}")
    return out


def _kinds(text: str) -> list[str]:
    out = [k.strip() for k in text.split(",") if k.strip()]
    for k in out:
        if k not in [v.value for v in StatisticKind]:
            raise ConfigError(f"unknown statistic {k!r}")
    return out


def _seed(args) -> int:
    return int(args.seed) if args.seed is not None else secrets.randbits(63)


def _estimands(obs, schema, spec: str, cell_labels: str | None) -> list[EstimandDef]:
    names = schema["y"]
    cells = cell_labels.split(",") if cell_labels else None
    if cells is not None and len(cells) < obs.cell_count:
        raise ConfigError(f"--cell-labels names {len(cells)} cells, data has {obs.cell_count}")
    if spec in ("all", ""):
        return default_estimands(obs, cells, names)
    out = []
    for item in spec.split(","):
        label, sep, target = item.partition("=")
        cell_s, sep2, col = target.partition(":")
        if not sep or not sep2:
            raise ConfigError(f"estimand {item!r} must look like LABEL=CELL:OUTCOME")
        if col not in names:
            raise ConfigError(f"estimand {label!r}: unknown outcome column {col!r}")
        cell = None if cell_s == "*" else int(cell_s)
        out.append(EstimandDef(label.strip(), names.index(col), cell))
    return out


def _read_compliance(text: str, column: str) -> np.ndarray:
    rows = list(csv.reader(text.splitlines(), delimiter="\t" if "\t" in text.splitlines()[0] else ","))
    header = [h.strip() for h in rows[0]]
    if column not in header:
        raise DataError(f"compliance column {column!r} not in header")
    i = header.index(column)
    vals = [r[i].strip() for r in rows[1:] if r and any(f.strip() for f in r)]
    comp = np.array([int(v) for v in vals], dtype=np.int8)
    if not np.isin(comp, (ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER)).all():
        raise DataError("compliance column must hold 1 (complier) or 0 (never-taker)")
    return comp


def _load(args):
    try:
        schema = parse_schema(args.schema)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    compliance_col = schema.pop("c", None) if isinstance(schema, dict) else None
    if args.input == "-":
        text = sys.stdin.read()
    else:
        try:
            with open(args.input, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read {args.input}: {exc.strerror}") from None
    obs = load_dataset(text, schema, K=args.categories)
    return obs, schema, text, compliance_col


def _emit(out, fmt: str, header: Sequence[str], rows: list[dict], meta: dict) -> None:
    if fmt == "jsonl":
        for row in rows:
            out.write(json.dumps(row) + "\n")
        out.write(json.dumps({"metadata": meta}, sort_keys=True) + "\n")
        return
    for key in sorted(meta):
        out.write(f"# {key}={json.dumps(meta[key]) if not isinstance(meta[key], str) else meta[key]}\n")
    out.write("\t".join(header) + "\n")
    for row in rows:
        out.write("\t".join(_fmt(row[h]) for h in header) + "\n")


# ----------------------------------------------------------------- commands


def cmd_analyze(args, out) -> int:
    obs, schema, _, _ = _load(args)
    estimands = _estimands(obs, schema, args.estimands, args.cell_labels)
    methods = _methods(args.adjust)
    seed = _seed(args)
    res = analyze(obs, args.statistic, estimands, prior=CompliancePrior(*args.prior),
                  M=args.m, alpha=args.alpha, seed=seed, convention=args.tail,
                  burn_in=args.burn_in, workers=args.workers, methods=methods)
    rows = list(res.rows())
    meta = dict(res.metadata, command="analyze", input=args.input, schema=args.schema,
                methods=methods, cutoff=res.cutoff)
    header = ["label", "effect", "p_nominal", *[f"p_{m}" for m in methods]]
    _emit(out, args.format, header, rows, meta)
    return EXIT_OK


def cmd_exact(args, out) -> int:
    obs, schema, text, comp_col = _load(args)
    estimands = _estimands(obs, schema, args.estimands, args.cell_labels)
    kind = StatisticKind(args.statistic)
    if comp_col is not None:
        compliance = _read_compliance(text, comp_col)
    elif kind is StatisticKind.ITT:
        compliance = np.where(obs.d == 1, ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER)
    elif (obs.d[obs.z == 1] == 1).all():
        compliance = np.full(obs.N, ComplianceStatus.COMPLIER, dtype=np.int8)
    else:
        raise ConfigError("exact CACE needs known compliance: add c=COL to --schema")
    mech = CompleteRandomization.from_observed(obs)
    if mech.size > args.enum_limit:
        raise EnumerationLimitError(
            f"enumeration limit exceeded: C({mech.n_total},{mech.n_treated}) = {mech.size} > {args.enum_limit}")
    table = known_null_table(obs, compliance)
    t_obs = observed_statistics(obs, kind, estimands)
    p = exact_pvalue(table, t_obs, kind, estimands, mech, args.tail, args.enum_limit)
    rows = [{"label": e.label, "effect": float(t), "p_exact": float(pv)}
            for e, t, pv in zip(estimands, t_obs, p)]
    meta = {"command": "exact", "input": args.input, "schema": args.schema,
            "statistic": kind.value, "tail": Tail.parse(args.tail).value,
            "assignments": mech.size, "N": obs.N, "n_treated": obs.n1}
    _emit(out, args.format, ["label", "effect", "p_exact"], rows, meta)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    from . import simgen

    seed = _seed(args)
    rng = philox(resolve_seed(seed))
    if args.scenario == "jtpa-like":
        obs = simgen.jtpa_like(rng)
        names = ["emp_1_6", "emp_7_18", "emp_19_30"]
        buf = io.StringIO()
        write_dataset(obs, buf, names, delimiter="\t" if args.format == "tsv" else ",")
        out.write(buf.getvalue())
        return EXIT_OK
    try:
        spec = simgen.parse_scenario(args.scenario)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    table, obs = simgen.simulate_observed(spec, rng)
    delim = "\t" if args.format == "tsv" else ","
    w = csv.writer(out, delimiter=delim, lineterminator="\n")
    w.writerow(["id", "cell", "z", "d", "c", *[f"y{j + 1}" for j in range(obs.J)]])
    for i in range(obs.N):
        w.writerow([i + 1, int(obs.cell[i]), int(obs.z[i]), int(obs.d[i]),
                    int(table.compliance[i]), *obs.y[i].tolist()])
    return EXIT_OK


def cmd_replicate(args, out) -> int:
    from . import simgen

    try:
        spec = simgen.parse_scenario(args.scenario)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kinds = _kinds(args.statistic) if args.statistic else (
        ["itt"] if spec.family is simgen.Family.MULTIPLE_NO_COMPLIANCE else ["itt", "cace"])
    methods = _methods(args.adjust)
    seed = _seed(args)
    res = simgen.replicate(spec, kinds=kinds, methods=methods, reps=args.reps, M=args.m,
                           alpha=args.alpha, seed=seed, burn_in=args.burn_in,
                           convention=args.tail, prior=CompliancePrior(*args.prior),
                           workers=args.workers)
    meta = dict(res.config, command="replicate", methods=methods, statistics=kinds)
    _emit(out, args.format, ["statistic", "method", "rate", "se", "rejections"],
          list(res.table()), meta)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cacetest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, mc=True):
        if data:
            sp.add_argument("--input", required=True, help="CSV/TSV file with a header row, or -")
            sp.add_argument("--schema", required=True,
                            help="column mapping, e.g. z=assigned,d=received,cell=sex,y=e1:e2:e3")
            sp.add_argument("--categories", type=int, default=None, help="categories per outcome (K)")
            sp.add_argument("--estimands", default="all",
                            help="'all' or LABEL=CELL:OUTCOME,... (CELL may be *)")
            sp.add_argument("--cell-labels", default=None, help="comma-separated cell names")
        sp.add_argument("--tail", choices=["two", "right", "left"], default="two")
        sp.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
        if mc:
            sp.add_argument("--m", type=int, default=DEFAULT_M, help="imputation-randomization sets")
            sp.add_argument("--alpha", type=float, default=0.05)
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--adjust", default="all",
                            help="bonferroni,holm,hochberg,hommel,randomization or all")
            sp.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
            sp.add_argument("--workers", type=int, default=None)
            sp.add_argument("--prior", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                            metavar=("OMEGA_A", "OMEGA_B", "DIRICHLET"))

    a = sub.add_parser("analyze", help="posterior predictive p-values for a dataset")
    common(a)
    a.add_argument("--statistic", choices=[v.value for v in StatisticKind], default="cace")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("exact", help="exact randomization p-values by enumeration")
    common(e, mc=False)
    e.add_argument("--statistic", choices=[v.value for v in StatisticKind], default="itt")
    e.add_argument("--enum-limit", type=int, default=10**6)
    e.set_defaults(func=cmd_exact)

    s = sub.add_parser("simulate", help="print a simulated observed dataset")
    s.add_argument("--scenario", required=True, help="e.g. combined/alt1/partial/omega=.3 or jtpa-like")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--format", choices=["csv", "tsv"], default="csv")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replicate", help="rejection rates over simulated experiments")
    common(r, data=False)
    r.add_argument("--scenario", required=True)
    r.add_argument("--reps", type=int, default=1000)
    r.add_argument("--statistic", default=None, help="itt, cace or itt,cace")
    r.set_defaults(func=cmd_replicate)
    return p


def _validate(args) -> None:
    if getattr(args, "m", 1) < 1:
        raise ConfigError("--m must be at least 1")
    alpha = getattr(args, "alpha", 0.5)
    if not 0 < alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    if getattr(args, "burn_in", 1) < 1:
        raise ConfigError("--burn-in must be at least 1")
    if getattr(args, "reps", 1) < 1:
        raise ConfigError("--reps must be at least 1")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    if min(getattr(args, "prior", (1, 1, 1))) <= 0:
        raise ConfigError("--prior hyperparameters must be positive")


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        return args.func(args, out)
    except ConfigError as exc:
        err.write(f"error: config: {exc}\n")
        return EXIT_CONFIG
    except (DataError, EmptyArm, DegenerateStatistic) as exc:
        err.write(f"error: input: {exc}\n")
        return EXIT_INPUT
    except EnumerationLimitError as exc:
        err.write(f"error: limit: {exc}\n")
        return EXIT_LIMIT
    except MemoryError:
        err.write("error: limit: out of memory\n")
        return EXIT_LIMIT


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
