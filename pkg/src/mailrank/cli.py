"""Command-line entry point: ingest, search, recommend, push, serve, eval.

Exit codes: 0 success, 2 bad input (arguments, files, queries), 70 internal
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time
from pathlib import Path

from . import evaluation
from .config import PUBLIC_RULES, Config
from .corpus import IngestProblem, ParseError, iter_source
from .engine import Engine
from .expertise import (
    ExpertiseClient,
    ExpertiseServer,
    ProtocolError,
    ServerState,
    owner_update,
    parse_address,
    recommend,
    search_global,
)
from .query import QueryError
from .ranking import ScoredEmail, search

log = logging.getLogger("mailrank")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 70


class InputError(Exception):
    """Problem with the user's input; maps to exit code 2."""


def _config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "no_stopwords", False):
        cfg.stopwords = False
    for name in ("smoothing", "server", "public_rule"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "shingle_fallback", False):
        cfg.shingle_fallback = True
    cfg.__post_init__()
    return cfg


def _load(args) -> Engine:
    path = Path(args.snapshot)
    if not (path / "mailbox.jsonl").is_file():
        raise InputError(f"{path} is not a snapshot directory (run 'ingest' first)")
    return Engine.load(path, _config(args))


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


# -- ingest ------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config(args)
    engine = Engine(cfg, owner=args.owner or "")
    problems: list[IngestProblem] = []
    try:
        source = iter_source(args.source, problems)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    engine.add_all(source)
    if not args.owner:
        engine.set_owner(engine.infer_owner())
    engine.save(args.out)
    stats = engine.stats()
    stats["skipped"] = len(problems)
    stats["owner"] = engine.mailbox.owner
    if args.json:
        _print_json(stats)
    else:
        for key in ("emails", "documents", "threads", "terms", "senders", "skipped"):
            print(f"{key}\t{stats[key]}")
        for case, n in stats["cases"].items():
            print(f"case:{case}\t{n}")
        print(f"owner\t{stats['owner']}")
    return EXIT_OK


# -- search ------------------------------------------------------------------

def _contacts(engine: Engine, args) -> set[str]:
    if getattr(args, "contacts", None):
        text = Path(args.contacts).read_text(encoding="utf-8")
        return {ln.strip().lower() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")}
    return set(engine.mailbox.contacts)


def _fetch_answer(engine: Engine, terms, address):
    try:
        with ExpertiseClient(address) as client:
            return client.query(terms)
    except (OSError, ProtocolError, ValueError) as exc:
        log.warning("expertise server %s unavailable: %s", address, exc)
        return None


def _run_query(engine: Engine, raw: str, args):
    """Ranked results plus the network answer when one was fetched."""
    answer = None
    if args.use_global:
        if not engine.config.server:
            raise InputError("--global needs --server or 'server' in the config")
        results, answer = search_global(engine, raw, engine.config.server)
    else:
        results = search(engine, raw)
    if args.baseline:
        by_id = {s.email_id: s for s in results}
        emails = [engine.mailbox.emails[eid] for eid in by_id]
        ordered = evaluation.rank_baseline(emails, args.baseline, engine.threads.email_thread)
        results = [by_id[e.id] for e in ordered]
        for i, s in enumerate(results, 1):
            s.rank = i
    return results, answer


def _tsv(s: ScoredEmail) -> str:
    subject = s.subject.replace("\t", " ").replace("\n", " ")
    return (f"{s.rank}\t{s.score:.6f}\t{s.tscore}\t{s.cscore:.6f}\t{s.sscore:.6f}\t"
            f"{s.email_id}\t{s.date.isoformat()}\t{subject}")


def cmd_search(args) -> int:
    engine = _load(args)
    if args.queries:
        return _batch_search(engine, args)
    if not args.query:
        raise InputError("give a query or --queries FILE")
    start = time.perf_counter()
    results, answer = _run_query(engine, args.query, args)
    if args.k:
        results = results[: args.k]
    recs = None
    if args.recommend:
        if answer is None and engine.config.server:
            from .ranking import prepare

            answer = _fetch_answer(engine, prepare(engine, args.query).vocab, engine.config.server)
        exclude = {engine.mailbox.owner}
        recs = recommend(answer or [], _contacts(engine, args), exclude)
    elapsed = (time.perf_counter() - start) * 1000
    if args.json:
        out = {"query": args.query, "results": [s.to_dict() for s in results]}
        if recs is not None:
            out["recommendations"] = [{"sender": r.sender, "aggregate": r.aggregate} for r in recs]
        _print_json(out)
    else:
        for s in results:
            print(_tsv(s))
        if recs is not None:
            for r in recs:
                print(f"recommend\t{r.sender}\t{r.aggregate:.6f}")
    print(f"{len(results)} results in {elapsed:.1f} ms", file=sys.stderr)
    return EXIT_OK


def _batch_search(engine: Engine, args) -> int:
    lines = Path(args.queries).read_text(encoding="utf-8").splitlines()
    out = []
    for qid, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            results, _ = _run_query(engine, raw, args)
        except QueryError as exc:
            log.warning("query %d skipped: %s", qid, exc)
            continue
        if args.k:
            results = results[: args.k]
        out.extend(evaluation.format_run(str(qid), [(s.email_id, s.score) for s in results]))
    text = "\n".join(out) + ("\n" if out else "")
    if args.run_out:
        Path(args.run_out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- recommend / push -----------------------------------------------------------

def cmd_recommend(args) -> int:
    engine = _load(args)
    if not engine.config.server:
        raise InputError("recommend needs --server or 'server' in the config")
    from .ranking import prepare

    answer = _fetch_answer(engine, prepare(engine, args.query).vocab, engine.config.server)
    if answer is None:
        print("expertise server unavailable", file=sys.stderr)
        return EXIT_INPUT
    recs = recommend(answer, _contacts(engine, args), {engine.mailbox.owner})
    if args.json:
        _print_json([{"sender": r.sender, "aggregate": r.aggregate} for r in recs])
    else:
        for r in recs:
            print(f"{r.sender}\t{r.aggregate:.6f}")
    return EXIT_OK


def cmd_push(args) -> int:
    engine = _load(args)
    if not engine.config.server:
        raise InputError("push needs --server or 'server' in the config")
    if not engine.mailbox.owner:
        raise InputError("snapshot has no owner; re-ingest with --owner")
    epoch = args.epoch if args.epoch is not None else time.time_ns() // 1000
    update = owner_update(engine, epoch)
    try:
        with ExpertiseClient(engine.config.server) as client:
            accepted = client.update(update)
    except OSError as exc:
        raise InputError(f"cannot reach expertise server {engine.config.server}: {exc}") from None
    print(f"{'accepted' if accepted else 'rejected'}\t{update.user}\tepoch={epoch}\tterms={len(update.entries)}")
    return EXIT_OK


# -- serve ---------------------------------------------------------------------

def cmd_serve(args) -> int:
    host, port = parse_address(args.bind)
    state = ServerState(args.state) if args.state else ServerState()
    try:
        server = ExpertiseServer((host, port), state)
    except OSError as exc:
        state.close()
        raise InputError(f"cannot bind {host}:{port}: {exc}") from None

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    bound = server.server_address
    print(f"listening on {bound[0]}:{bound[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        state.compact()
        state.close()
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    qrels = evaluation.load_judgments(args.qrels)
    reports = []
    runs = {}
    for spec in args.run:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        runs[name] = evaluation.load_run(path)
        reports.append(evaluation.evaluate_run(name, runs[name], qrels, args.k))
    if args.pool:
        lines = []
        for qid in sorted({q for r in runs.values() for q in r}):
            for eid in evaluation.pool_top_k([r.get(qid, []) for r in runs.values()], args.pool_depth):
                lines.append(f"{qid}\t{eid}")
        Path(args.pool).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    if args.json:
        print(evaluation.reports_json(reports))
    else:
        print(evaluation.format_table(reports))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mailrank", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, snapshot=True):
        if snapshot:
            sp.add_argument("snapshot", help="snapshot directory written by 'ingest'")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    def network(sp):
        sp.add_argument("--server", help="expertise server HOST:PORT")
        sp.add_argument("--contacts", help="file of contact addresses, one per line")

    sp = sub.add_parser("ingest", help="parse, thread and index a mailbox")
    sp.add_argument("source", help="directory of one-message files, or a JSONL file")
    sp.add_argument("out", help="snapshot directory to write")
    sp.add_argument("--owner", help="mailbox owner address (default: most frequent recipient)")
    sp.add_argument("--no-stopwords", action="store_true")
    sp.add_argument("--shingle-fallback", action="store_true",
                    help="also match rewrapped quotations by word-shingle overlap")
    common(sp, snapshot=False)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("search", help="rank emails for a query")
    common(sp)
    sp.add_argument("query", nargs="?")
    sp.add_argument("--queries", help="file with one query per line; prints a run file")
    sp.add_argument("--run-out", help="write the batch run here instead of stdout")
    sp.add_argument("--k", type=int, help="print only the top K")
    sp.add_argument("--baseline", choices=evaluation.BASELINES)
    sp.add_argument("--global", dest="use_global", action="store_true",
                    help="fold network sender expertise into the ranking")
    sp.add_argument("--recommend", action="store_true", help="append non-contact specialists")
    sp.add_argument("--smoothing", type=float, help="additive sender-score smoothing")
    network(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("recommend", help="list network specialists not in contacts")
    common(sp)
    sp.add_argument("query")
    network(sp)
    sp.set_defaults(func=cmd_recommend)

    sp = sub.add_parser("push", help="send the owner's public term weights to the server")
    common(sp)
    sp.add_argument("--epoch", type=int, help="update epoch (default: current time in microseconds)")
    sp.add_argument("--public-rule", choices=PUBLIC_RULES)
    network(sp)
    sp.set_defaults(func=cmd_push)

    sp = sub.add_parser("serve", help="run the expertise server")
    sp.add_argument("--bind", default="127.0.0.1:7878", help="HOST:PORT (port 0 picks a free one)")
    sp.add_argument("--state", help="state snapshot path; its log is PATH.log")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("eval", help="NDCG@K, recall, precision and F for run files")
    sp.add_argument("--run", action="append", required=True, help="NAME=PATH or PATH; repeatable")
    sp.add_argument("--qrels", required=True, help="judgment file")
    sp.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
    sp.add_argument("--pool", help="write pooled query/email ids here")
    sp.add_argument("--pool-depth", type=int, default=100)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, QueryError, ParseError, evaluation.EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, PermissionError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # config validation and similar user-supplied values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
