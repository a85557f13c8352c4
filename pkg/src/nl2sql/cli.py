"""``nl2sql`` command line.

Exit codes: 0 success, 1 quality gate failed (coverage below threshold,
unrepairable SQL), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, TextIO

from . import __version__
from .backend import (
    Backend,
    BaselineBackend,
    HttpBackend,
    NoTemplateMatch,
    ReplayBackend,
    TranslationError,
    TranslationRequest,
    serve_mock,
)
from .config import Config, ConfigError, load_config, with_overrides
from .corrupt import corruption_corpus
from .dataset import (
    AlignmentError,
    DatasetError,
    QueryPair,
    Split,
    assemble_training,
    coverage_report,
    read_custom_pairs,
    read_spider_pairs,
    split_pairs,
    write_predictions,
    write_training_tsv,
)
from .evaluate import (
    Database,
    EvalOptions,
    EvalReport,
    ExecutionError,
    evaluate_corpus,
    execute,
    find_databases,
    format_percent,
)
from .pipeline import translate_all
from .repair import RepairStatus, repair
from .schema import DbSchema, SchemaError, SchemaParseError, load_schemas

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------------


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--schema", action="append", metavar="PATH",
                   help="tables.json or flat schema file (repeatable)")
    p.add_argument("--db-id", help="database for custom data, repair and the REPL")
    p.add_argument("-v", "--verbose", action="store_true")


def _datasets(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spider-train", action="append", metavar="PATH")
    p.add_argument("--spider-dev", metavar="PATH")
    p.add_argument("--custom", metavar="PATH", help="custom JSON-lines dataset")


def _backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("http", "replay", "baseline"))
    p.add_argument("--endpoint", help=f"translation server URL (fallback: $NL2SQL_ENDPOINT)")
    p.add_argument("--predictions", metavar="PATH", help="replay file")
    p.add_argument("--prompt-schema", type=_on_off, metavar="on|off")


def _repair_flags(p: argparse.ArgumentParser, both: bool = False) -> None:
    choices = ("on", "off", "both") if both else ("on", "off")
    p.add_argument("--repair", choices=choices)
    p.add_argument("--repair-threshold", type=int, metavar="N")
    p.add_argument("--repair-qualifiers", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nl2sql", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load datasets and print counts")
    _common(p)
    _datasets(p)

    p = sub.add_parser("coverage", help="schema coverage of gold SQL")
    _common(p)
    _datasets(p)
    p.add_argument("--min-coverage", type=int, metavar="N")

    p = sub.add_parser("prepare-train", help="write the training TSV")
    _common(p)
    _datasets(p)
    p.add_argument("--prompt-schema", type=_on_off, metavar="on|off")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("translate", help="run a backend over the evaluation pairs")
    _common(p)
    _datasets(p)
    _backend(p)
    _repair_flags(p)
    p.add_argument("--with-train", action="store_true", help="also translate custom train pairs")
    p.add_argument("--out", metavar="PATH", help="predictions file (default: stdout)")

    p = sub.add_parser("repair", help="repair SQL against a schema")
    _common(p)
    p.add_argument("sql", nargs="*", help="SQL statements (default: one per stdin line)")
    p.add_argument("--repair-threshold", type=int, metavar="N")
    p.add_argument("--repair-qualifiers", action="store_true", default=None)
    p.add_argument("--json", action="store_true", help="print full repair reports")

    p = sub.add_parser("evaluate", help="score predictions against gold SQL")
    _common(p)
    _datasets(p)
    _backend(p)
    _repair_flags(p, both=True)
    p.add_argument("--with-train", action="store_true",
                   help="add custom train pairs (Test 2 composition)")
    p.add_argument("--db-dir", metavar="DIR", help="Spider-layout database directory")
    p.add_argument("--timeout", type=float, metavar="SECONDS", help="per-statement limit")
    p.add_argument("--parallelism", type=int, metavar="N")
    p.add_argument("--drop-values", action="store_true", default=None)
    p.add_argument("--report", metavar="PATH", help="write the JSON report here")

    p = sub.add_parser("serve-mock", help="run the mock translation server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--canned", metavar="PATH", help="JSON object mapping question to SQL")
    p.add_argument("--default", metavar="SQL", help="answer for unknown questions")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("repl", help="ask questions interactively")
    _common(p)
    _backend(p)
    _repair_flags(p)
    p.add_argument("--db-dir", metavar="DIR")

    p = sub.add_parser("corrupt", help="generate a seeded identifier-corruption corpus")
    _common(p)
    p.add_argument("--corpus", required=True, metavar="PATH", help="TSV of db_id<TAB>sql")
    p.add_argument("-n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True, metavar="DIR",
                   help="receives dev.json (gold) and predictions.jsonl (corrupted)")
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    config = load_config(getattr(args, "config", None))
    repair_flag = getattr(args, "repair", None)
    overrides = {
        "schema.paths": getattr(args, "schema", None),
        "dataset.spider_train": getattr(args, "spider_train", None),
        "dataset.spider_dev": getattr(args, "spider_dev", None),
        "dataset.custom": getattr(args, "custom", None),
        "dataset.db_id": getattr(args, "db_id", None),
        "backend.kind": getattr(args, "backend", None),
        "backend.endpoint": getattr(args, "endpoint", None),
        "backend.predictions": getattr(args, "predictions", None),
        "repair.enabled": None if repair_flag in (None, "both") else repair_flag == "on",
        "repair.threshold": getattr(args, "repair_threshold", None),
        "repair.qualifiers": getattr(args, "repair_qualifiers", None),
        "prompt.schema": getattr(args, "prompt_schema", None),
        "evaluate.db_dir": getattr(args, "db_dir", None),
        "evaluate.timeout": getattr(args, "timeout", None),
        "evaluate.parallelism": getattr(args, "parallelism", None),
        "evaluate.drop_values": getattr(args, "drop_values", None),
        "evaluate.report": getattr(args, "report", None),
        "coverage.min_coverage": getattr(args, "min_coverage", None),
    }
    return with_overrides(config, overrides)


# -- shared loading ----------------------------------------------------------


def _schemas(config: Config) -> dict[str, DbSchema]:
    if not config.schema.paths:
        raise UsageError("no schema given (--schema or [schema] paths)")
    return load_schemas(config.schema.paths)


def _pick_schema(config: Config, schemas: dict[str, DbSchema]) -> DbSchema:
    db_id = config.dataset.db_id
    if db_id is None:
        if len(schemas) != 1:
            raise UsageError(f"--db-id is required with {len(schemas)} schemas loaded")
        return next(iter(schemas.values()))
    if db_id not in schemas:
        raise UsageError(f"unknown db_id {db_id!r}")
    return schemas[db_id]


def _load_pairs(config: Config, schemas: dict[str, DbSchema]) -> tuple[list[QueryPair], list[QueryPair]]:
    """(spider pairs, custom pairs) as configured."""
    spider: list[QueryPair] = []
    for path in config.dataset.spider_train:
        spider.extend(read_spider_pairs(path, Split.TRAIN))
    if config.dataset.spider_dev:
        spider.extend(read_spider_pairs(config.dataset.spider_dev, Split.TEST))
    custom: list[QueryPair] = []
    if config.dataset.custom:
        custom = read_custom_pairs(config.dataset.custom, _pick_schema(config, schemas).db_id)
    return spider, custom


def _eval_pairs(config: Config, schemas: dict[str, DbSchema], with_train: bool) -> list[QueryPair]:
    spider, custom = _load_pairs(config, schemas)
    pairs = split_pairs(spider, Split.TEST) + split_pairs(custom, Split.TEST)
    if with_train:
        pairs += split_pairs(custom, Split.TRAIN)
    if not pairs:
        raise UsageError("empty dataset: no evaluation pairs configured")
    return pairs


def build_backend(config: Config, schemas: dict[str, DbSchema]) -> Backend:
    kind = config.backend.kind
    if kind == "baseline":
        return BaselineBackend(schemas)
    if kind == "replay":
        if not config.backend.predictions:
            raise UsageError("the replay backend needs --predictions")
        return ReplayBackend(config.backend.predictions)
    endpoint = config.endpoint()
    if not endpoint:
        raise UsageError("the http backend needs --endpoint or NL2SQL_ENDPOINT")
    return HttpBackend(endpoint, timeout=config.backend.timeout)


def _options(config: Config, repair_on: bool) -> EvalOptions:
    return EvalOptions(
        repair=repair_on,
        repair_threshold=config.repair.threshold,
        repair_qualifiers=config.repair.qualifiers,
        drop_values=config.evaluate.drop_values,
        timeout=config.evaluate.timeout,
        parallelism=config.evaluate.parallelism,
    )


def _databases(config: Config) -> dict[str, Database]:
    if config.evaluate.db_dir is None:
        return {}
    root = Path(config.evaluate.db_dir)
    if not root.is_dir():
        raise UsageError(f"database directory not found: {root}")
    return find_databases(root, config.evaluate.timeout)


# -- commands ----------------------------------------------------------------


def cmd_ingest(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    spider, custom = _load_pairs(config, schemas)
    pairs = spider + custom
    if not pairs:
        raise UsageError("empty dataset: no dataset files configured")
    stats = coverage_report(pairs, schemas).stats
    print(f"train={stats.n_train} test={stats.n_test} databases={stats.n_databases}", file=out)
    if stats.unparseable:
        print(f"unparseable gold SQL at pairs: {', '.join(map(str, stats.unparseable))}", file=out)
    return EXIT_OK


def cmd_coverage(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    spider, custom = _load_pairs(config, schemas)
    pairs = spider + custom
    if not pairs:
        raise UsageError("empty dataset: no dataset files configured")
    used = {p.db_id for p in pairs}
    report = coverage_report(pairs, {k: v for k, v in schemas.items() if k in used},
                             config.coverage.min_coverage)
    width = max((len(str(el)) for el in report.stats.coverage), default=0)
    for el, n in report.stats.coverage.items():
        print(f"{el.db_id:<12} {str(el):<{width}} {n:>5}", file=out)
    if report.stats.unparseable:
        print(f"unparseable gold SQL (not counted): pairs "
              f"{', '.join(map(str, report.stats.unparseable))}", file=out)
    if report.fully_covered:
        print(f"all elements covered at least {report.threshold} times", file=out)
        return EXIT_OK
    print(f"{len(report.uncovered)} elements below {report.threshold}:", file=out)
    for el in report.uncovered:
        print(f"  {el.db_id}: {el} ({report.stats.coverage[el]})", file=out)
    return EXIT_GATE


def cmd_prepare_train(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    spider, custom = _load_pairs(config, schemas)
    examples = assemble_training(spider, custom, schemas, config.prompt.schema)
    if not examples:
        raise UsageError("empty dataset: no training pairs configured")
    n = write_training_tsv(examples, args.out)
    print(f"wrote {n} examples to {args.out}", file=out)
    return EXIT_OK


def cmd_translate(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    pairs = _eval_pairs(config, schemas, args.with_train)
    backend = build_backend(config, schemas)
    sqls = translate_all(pairs, backend, schemas, config.evaluate.parallelism, config.prompt.schema)
    if config.repair.enabled:
        sqls = [
            repair(sql, schemas[p.db_id], config.repair.threshold, config.repair.qualifiers).repaired_sql
            if p.db_id in schemas else sql
            for p, sql in zip(pairs, sqls)
        ]
    if args.out:
        write_predictions(sqls, args.out)
        print(f"wrote {len(sqls)} predictions to {args.out}", file=out)
    else:
        for i, sql in enumerate(sqls):
            print(json.dumps({"index": i, "sql": sql}, ensure_ascii=False), file=out)
    return EXIT_OK


def cmd_repair(args, config: Config, out: TextIO, stdin: TextIO) -> int:
    schema = _pick_schema(config, _schemas(config))
    statements = args.sql or [ln.rstrip("\n") for ln in stdin if ln.strip()]
    worst = EXIT_OK
    for sql in statements:
        report = repair(sql, schema, config.repair.threshold, config.repair.qualifiers)
        if args.json:
            print(json.dumps(report.to_dict(), ensure_ascii=False), file=out)
        else:
            print(report.repaired_sql, file=out)
            _print_edits(report, out)
        if report.status is RepairStatus.UNREPAIRABLE:
            worst = EXIT_GATE
    return worst


def _print_edits(report, out: TextIO) -> None:
    for e in report.edits:
        print(f"  edit: {e.original} -> {e.replacement} ({e.context.kind}, distance {e.distance})",
              file=out)
    if report.status is RepairStatus.UNREPAIRABLE:
        if report.unresolved:
            print(f"  unresolved: {', '.join(report.unresolved)}", file=out)
        else:
            print("  unrepairable: SQL does not parse", file=out)


def _print_report(report: EvalReport, out: TextIO, title: str = "") -> None:
    if title:
        print(f"== {title}", file=out)
    rows = [
        ("exact(string)", report.n_exact_string, report.total, report.exact_match_accuracy),
        ("exact(component)", report.n_exact_component, report.total, report.component_match_accuracy),
        ("execution", report.n_execution, report.n_executable, report.execution_accuracy),
    ]
    print(f"label: {report.test_label}  pairs: {report.total}", file=out)
    for name, num, den, ratio in rows:
        print(f"  {name:<17} {num:>5}/{den:<5} {format_percent(ratio):>7}", file=out)
    if report.failure_counts:
        fails = " ".join(f"{k}={v}" for k, v in sorted(report.failure_counts.items()))
        print(f"  failures: {fails}", file=out)
    print(report.summary(), file=out)


def cmd_evaluate(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    pairs = _eval_pairs(config, schemas, args.with_train)
    dbs = _databases(config)
    backend = build_backend(config, schemas)
    preds = translate_all(pairs, backend, schemas, config.evaluate.parallelism, config.prompt.schema)

    if args.repair == "both":
        off = evaluate_corpus(pairs, preds, schemas, dbs, _options(config, False))
        on = evaluate_corpus(pairs, preds, schemas, dbs, _options(config, True))
        _print_report(off, out, "repair off")
        _print_report(on, out, "repair on")
        print(
            "delta (on - off): "
            f"exact(string)={on.n_exact_string - off.n_exact_string:+d}/{on.total} "
            f"exact(component)={on.n_exact_component - off.n_exact_component:+d}/{on.total} "
            f"exec={on.n_execution - off.n_execution:+d}/{on.n_executable}",
            file=out,
        )
        if config.evaluate.report:
            payload = {"repair_off": off.to_dict(), "repair_on": on.to_dict()}
            Path(config.evaluate.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return EXIT_OK

    report = evaluate_corpus(pairs, preds, schemas, dbs, _options(config, config.repair.enabled))
    _print_report(report, out)
    if config.evaluate.report:
        Path(config.evaluate.report).write_text(report.to_json())
    return EXIT_OK


def cmd_serve_mock(args, out: TextIO) -> int:
    canned = {}
    if args.canned:
        canned = json.loads(Path(args.canned).read_text(encoding="utf-8"))
        if not isinstance(canned, dict) or not all(isinstance(v, str) for v in canned.values()):
            raise UsageError(f"{args.canned}: expected a JSON object of question -> SQL")
    server = serve_mock(args.port, canned, args.default, args.host)
    print(f"mock translation server on http://{args.host}:{server.port}/translate", file=out)
    out.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def format_table(columns: Sequence[str], rows: Sequence[tuple], limit: int = 20) -> str:
    cells = [list(columns)] + [["NULL" if v is None else str(v) for v in r] for r in rows[:limit]]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    if len(rows) > limit:
        lines.append(f"... {len(rows) - limit} more rows")
    return "\n".join(lines)


def run_repl(
    backend: Backend,
    schema: DbSchema,
    db: Optional[Database],
    stdin: TextIO,
    stdout: TextIO,
    repair_on: bool = True,
    threshold: int = 2,
    fix_qualifiers: bool = False,
    prompt: str = "nl2sql> ",
) -> int:
    """Question in, SQL (plus edits and results) out; ``\\q`` or EOF leaves."""
    while True:
        stdout.write(prompt)
        stdout.flush()
        line = stdin.readline()
        if not line:
            stdout.write("\n")
            break
        question = line.strip()
        if not question:
            continue
        if question == "\\q":
            break
        try:
            sql = backend.translate(TranslationRequest(question, schema.db_id, "")).sql
        except NoTemplateMatch as exc:
            print(f"no translation: {exc}", file=stdout)
            continue
        except TranslationError as exc:
            print(f"translation failed: {exc}", file=stdout)
            continue
        except AlignmentError as exc:
            print(f"translation failed: {exc}", file=stdout)
            continue
        if repair_on:
            report = repair(sql, schema, threshold, fix_qualifiers)
            sql = report.repaired_sql
            print(sql, file=stdout)
            _print_edits(report, stdout)
        else:
            print(sql, file=stdout)
        if db is not None:
            try:
                table = execute(sql, db)
            except ExecutionError as exc:
                print(f"execution failed: {exc}", file=stdout)
                continue
            print(format_table(table.columns, table.rows), file=stdout)
    return EXIT_OK


def cmd_repl(args, config: Config, stdin: TextIO, out: TextIO) -> int:
    schemas = _schemas(config)
    schema = _pick_schema(config, schemas)
    backend = build_backend(config, schemas)
    db = _databases(config).get(schema.db_id)
    return run_repl(
        backend, schema, db, stdin, out,
        repair_on=config.repair.enabled if args.repair is not None else True,
        threshold=config.repair.threshold,
        fix_qualifiers=config.repair.qualifiers,
    )


def cmd_corrupt(args, config: Config, out: TextIO) -> int:
    schemas = _schemas(config)
    queries = []
    with open(args.corpus, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            db_id, tab, sql = line.rstrip("\n").partition("\t")
            if not tab or db_id not in schemas:
                raise UsageError(f"{args.corpus}:{lineno}: expected known db_id<TAB>sql")
            queries.append((db_id, sql))
    if not queries:
        raise UsageError(f"{args.corpus}: no queries")
    try:
        corpus = corruption_corpus(queries, schemas, args.n, seed=args.seed,
                                   threshold=config.repair.threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gold = [
        {"question": f"corruption {i}: {c.original_name} -> {c.corrupted_name}",
         "query": c.original_sql, "db_id": db_id}
        for i, (db_id, c) in enumerate(corpus)
    ]
    (out_dir / "dev.json").write_text(json.dumps(gold, indent=1) + "\n", encoding="utf-8")
    write_predictions([c.corrupted_sql for _, c in corpus], out_dir / "predictions.jsonl")
    print(f"wrote {len(corpus)} corruptions (seed {args.seed}) to {out_dir}", file=out)
    return EXIT_OK


def main(
    argv: Optional[Sequence[str]] = None,
    stdin: Optional[TextIO] = None,
    stdout: Optional[TextIO] = None,
) -> int:
    stdin = stdin or sys.stdin
    out = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "serve-mock":
            return cmd_serve_mock(args, out)
        config = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(args, config, out)
        if args.command == "coverage":
            return cmd_coverage(args, config, out)
        if args.command == "prepare-train":
            return cmd_prepare_train(args, config, out)
        if args.command == "translate":
            return cmd_translate(args, config, out)
        if args.command == "repair":
            return cmd_repair(args, config, out, stdin)
        if args.command == "evaluate":
            return cmd_evaluate(args, config, out)
        if args.command == "repl":
            return cmd_repl(args, config, stdin, out)
        if args.command == "corrupt":
            return cmd_corrupt(args, config, out)
    except (UsageError, ConfigError, SchemaError, SchemaParseError, DatasetError,
            AlignmentError, TranslationError) as exc:
        print(f"nl2sql: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        name = f" {exc.filename}" if exc.filename else ""
        print(f"nl2sql: error:{name} {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
