import json
import random
import signal
import socket
import subprocess
import sys
from contextlib import contextmanager

import pytest

from generators import generate_mailbox
from mailrank import cli
from mailrank.cli import main
from mailrank.evaluation import load_run, ndcg_at_k
from mailrank.expertise import ExpertiseClient, ExpertiseUpdate


def write_eml(folder, name, sender, to, minute, subject, body):
    folder.mkdir(parents=True, exist_ok=True)
    (folder / name).write_text(
        f"From: {sender}\nTo: {to}\nDate: Mon, 1 Jan 2001 10:{minute:02d}:00 +0000\n"
        f"Subject: {subject}\nMessage-ID: <{name}@x>\n\n{body}\n")


def quoted(sender, subject, text):
    return f"\n-----Original Message-----\nFrom: {sender}\nSent: Monday\nTo: someone\nSubject: {subject}\n\n{text}"


def chain_dir(tmp_path):
    src = tmp_path / "chain"
    first = "pipeline capacity outage expected friday"
    second = "storage withdrawals planned\n" + quoted("a@x.com", "Outage", first)
    write_eml(src, "1.eml", "a@x.com", "owner@x.com", 0, "Outage", first)
    write_eml(src, "2.eml", "b@x.com", "owner@x.com", 5, "RE: Outage", second)
    write_eml(src, "3.eml", "owner@x.com", "b@x.com", 9, "RE: RE: Outage",
              "thanks for the note\n" + quoted("b@x.com", "RE: Outage", second))
    return src


def ingest(tmp_path, src, *extra):
    snap = tmp_path / "snap"
    assert main(["ingest", str(src), str(snap), *extra]) == 0
    return snap


def tsv(out):
    return [line.split("\t") for line in out.splitlines() if line]


# -- ingest ------------------------------------------------------------------------

def test_ingest_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    ingest(tmp_path, tmp_path / "empty")
    stats = dict(tsv(capsys.readouterr().out))
    assert stats["emails"] == "0" and stats["threads"] == "0"


def test_ingest_reply_chain_cases(tmp_path, capsys):
    ingest(tmp_path, chain_dir(tmp_path), "--owner", "owner@x.com", "--json")
    stats = json.loads(capsys.readouterr().out)
    assert stats["emails"] == 3 and stats["threads"] == 1 and stats["documents"] == 3
    assert stats["cases"] == {"Step1-new": 1, "Case1": 2, "Case2": 0, "Case3": 0, "Case4": 0}
    assert stats["owner"] == "owner@x.com"


def test_ingest_conserves_emails_and_counts_skips(tmp_path, capsys):
    sc = generate_mailbox(random.Random(3), max_emails=25)
    src = tmp_path / "box"
    src.mkdir()
    for g in sc.emails:
        (src / f"{g.id}.eml").write_bytes(g.raw())
    (src / "broken.eml").write_text("From: x@y.com\nno blank line and a bad header")
    ingest(tmp_path, src)
    stats = dict(tsv(capsys.readouterr().out))
    assert int(stats["emails"]) == len(sc.emails)
    assert stats["skipped"] == "1"
    assert sum(int(v) for k, v in stats.items() if k.startswith("case:")) == len(sc.emails)


def test_ingest_missing_source(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope"), str(tmp_path / "snap")]) == 2
    assert "error" in capsys.readouterr().err


# -- search -------------------------------------------------------------------------

@pytest.fixture
def snap(tmp_path, capsys):
    path = ingest(tmp_path, chain_dir(tmp_path), "--owner", "owner@x.com")
    capsys.readouterr()
    return path


def test_search_output_is_deterministic(snap, capsys):
    main(["search", str(snap), "pipeline outage"])
    first = capsys.readouterr()
    main(["search", str(snap), "pipeline outage"])
    assert capsys.readouterr().out == first.out
    rows = tsv(first.out)
    assert sorted(r[5] for r in rows) == ["1.eml", "2.eml", "3.eml"]
    assert all(len(r) == 8 for r in rows)
    assert [r[0] for r in rows] == ["1", "2", "3"]
    assert "results in" in first.err


def test_search_k_and_json(snap, capsys):
    main(["search", str(snap), "outage", "--k", "2", "--json"])
    data = json.loads(capsys.readouterr().out)
    assert data["query"] == "outage" and len(data["results"]) == 2
    assert {"id", "score", "tscore", "cscore", "sscore"} <= set(data["results"][0])


def test_baseline_date_reorders_the_same_set(snap, capsys):
    main(["search", str(snap), "pipeline"])
    ranked = tsv(capsys.readouterr().out)
    main(["search", str(snap), "pipeline", "--baseline", "date"])
    base = tsv(capsys.readouterr().out)
    assert sorted(r[5] for r in base) == sorted(r[5] for r in ranked)
    assert [r[6] for r in base] == sorted((r[6] for r in base), reverse=True)


@pytest.mark.parametrize("argv", [
    ["search", "{snap}", "the and of"],
    ["search", "{snap}"],
    ["search", "{missing}", "gas"],
    ["search", "{snap}", "gas", "--global"],
    ["search", "{snap}", "gas", "--config", "{missing}"],
])
def test_input_errors_exit_2(snap, tmp_path, capsys, argv):
    argv = [a.format(snap=snap, missing=tmp_path / "missing") for a in argv]
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_value_exit_2(snap, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"smoothing": -1}))
    assert main(["search", str(snap), "gas", "--config", str(cfg)]) == 2


def test_internal_error_exit_70(snap, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "search", boom)
    assert main(["search", str(snap), "gas"]) == 70


def test_batch_queries_write_a_run(snap, tmp_path):
    queries = tmp_path / "queries.txt"
    queries.write_text("pipeline\nthe of\n\nstorage withdrawals\n")
    run = tmp_path / "run.tsv"
    assert main(["search", str(snap), "--queries", str(queries), "--run-out", str(run)]) == 0
    loaded = load_run(run)
    assert set(loaded) == {"1", "4"}
    assert set(loaded["1"]) == {"1.eml", "2.eml", "3.eml"}


# -- network --------------------------------------------------------------------------

def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_global_falls_back_to_local(snap, capsys):
    main(["search", str(snap), "pipeline"])
    local = capsys.readouterr().out
    assert main(["search", str(snap), "pipeline", "--global", "--server", f"127.0.0.1:{_free_port()}"]) == 0
    assert capsys.readouterr().out == local


def test_global_single_user_equals_local(snap, capsys, expertise_server):
    _, addr = expertise_server()
    assert main(["push", str(snap), "--server", addr, "--epoch", "1", "--public-rule", "all"]) == 0
    assert capsys.readouterr().out.startswith("accepted\towner@x.com\tepoch=1")
    for q in ("pipeline", "storage", "outage"):
        main(["search", str(snap), q])
        local = capsys.readouterr().out
        main(["search", str(snap), q, "--global", "--server", addr])
        assert capsys.readouterr().out == local
    assert main(["push", str(snap), "--server", addr, "--epoch", "1"]) == 0
    assert capsys.readouterr().out.startswith("rejected")


def test_recommend_non_contacts(snap, capsys, expertise_server):
    _, addr = expertise_server()
    with ExpertiseClient(addr) as c:
        c.update(ExpertiseUpdate("b@x.com", 1, [("pipeline", 2.0)]))
        c.update(ExpertiseUpdate("stranger@y.com", 1, [("pipeline", 5.0)]))
        c.update(ExpertiseUpdate("owner@x.com", 1, [("pipeline", 9.0)]))
    main(["search", str(snap), "pipeline", "--recommend", "--server", addr])
    rows = [r for r in tsv(capsys.readouterr().out) if r[0] == "recommend"]
    assert rows == [["recommend", "stranger@y.com", "5.000000"]]
    assert main(["recommend", str(snap), "pipeline", "--server", addr, "--json"]) == 0
    assert json.loads(capsys.readouterr().out) == [{"sender": "stranger@y.com", "aggregate": 5.0}]


def test_recommend_without_server(snap, capsys):
    assert main(["recommend", str(snap), "pipeline"]) == 2
    assert main(["recommend", str(snap), "pipeline", "--server", f"127.0.0.1:{_free_port()}"]) == 2


@contextmanager
def serve(*extra):
    proc = subprocess.Popen([sys.executable, "-m", "mailrank", "serve", "--bind", "127.0.0.1:0", *extra],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on "), proc.stderr.read()
        yield proc, line.split()[-1]
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.wait(timeout=10)
        proc.stdout.close()
        proc.stderr.close()


def test_serve_survives_kill(tmp_path):
    state = str(tmp_path / "state.json")
    with serve("--state", state) as (proc, addr):
        with ExpertiseClient(addr) as c:
            assert c.query(["gas"]) == []
            assert c.update(ExpertiseUpdate("a@x.com", 7, [("gas", 1.25)]))
        proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)
    with serve("--state", state) as (proc, addr):
        with ExpertiseClient(addr) as c:
            (entry,) = c.query(["gas"])
            assert (entry.sender, entry.aggregate) == ("a@x.com", 1.25)
            assert not c.update(ExpertiseUpdate("a@x.com", 7, [("gas", 3.0)]))
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
    assert (tmp_path / "state.json").exists()


def test_serve_bind_failure(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        assert main(["serve", "--bind", f"127.0.0.1:{port}"]) == 2
    assert f"cannot bind 127.0.0.1:{port}" in capsys.readouterr().err


# -- eval -------------------------------------------------------------------------------

@pytest.fixture
def qrels(tmp_path):
    path = tmp_path / "qrels.tsv"
    path.write_text("q1\ta\t3\nq1\tb\t2\nq1\tc\t0\n")
    return path


def run_file(tmp_path, name, ids):
    path = tmp_path / f"{name}.tsv"
    path.write_text("".join(f"q1\t{i}\t{eid}\t{10 - i}\n" for i, eid in enumerate(ids, 1)))
    return path


def test_eval_ideal_run_scores_one(tmp_path, qrels, capsys):
    run = run_file(tmp_path, "ideal", ["a", "b", "c"])
    assert main(["eval", "--run", f"ideal={run}", "--qrels", str(qrels), "--k", "1", "2", "3", "--json"]) == 0
    mean = json.loads(capsys.readouterr().out)["runs"][0]["mean"]
    assert mean["ndcg"] == {"1": 1.0, "2": 1.0, "3": 1.0}


def test_eval_two_runs_table(tmp_path, qrels, capsys):
    ranked = run_file(tmp_path, "ranked", ["a", "b", "c"])
    worst = run_file(tmp_path, "worst", ["c", "b", "a"])
    assert main(["eval", "--run", f"ranked={ranked}", "--run", str(worst), "--qrels", str(qrels), "--k", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["metric", "ranked", "worst"]
    assert lines[1].split() == ["NDCG@3", "1.0000", f"{ndcg_at_k([0, 2, 3], 3):.4f}"]
    assert f"{ndcg_at_k([0, 2, 3], 3):.4f}" == "0.6064"


def test_eval_pool(tmp_path, qrels):
    a = run_file(tmp_path, "a", ["a", "x", "y"])
    b = run_file(tmp_path, "b", ["z", "a"])
    pool = tmp_path / "pool.tsv"
    assert main(["eval", "--run", str(a), "--run", str(b), "--qrels", str(qrels), "--pool", str(pool),
                 "--pool-depth", "2"]) == 0
    assert pool.read_text().splitlines() == ["q1\ta", "q1\tx", "q1\tz"]


def test_eval_bad_input(tmp_path, qrels):
    assert main(["eval", "--run", str(tmp_path / "none.tsv"), "--qrels", str(qrels)]) == 2
    run = run_file(tmp_path, "r", ["a"])
    assert main(["eval", "--run", str(run), "--qrels", str(qrels), "--k", "0"]) == 2
