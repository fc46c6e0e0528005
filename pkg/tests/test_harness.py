import json
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from adrewrite.corpus import load_rewrites, write_ads
from adrewrite.errors import ServiceUnavailable
from adrewrite.harness import pipeline
from adrewrite.harness.cli import main
from adrewrite.harness.config import ExperimentConfig, config_from_dict, load_config, with_overrides
from adrewrite.harness.server import RewardService, create_app, result_payload
from adrewrite.llm_gateway import LlmRequest, RemoteChatLlm, ScriptedLlm
from adrewrite.loss_reward import LossWeights, ABLATION_WEIGHTINGS
from adrewrite.synthetic import make_corpus
from adrewrite.vector_index import FlatIndex
from conftest import LiveServer, write_experiment


# -- config --------------------------------------------------------------------

def test_config_resolves_paths_and_types(experiment):
    cfg = load_config(experiment)
    assert Path(cfg.ads[0]).is_absolute() and Path(cfg.ads[0]).exists()
    assert cfg.embedder.dim == 384 and cfg.k_grid == (1, 3, 5, 10, 20, 30)
    assert cfg.snapshot_path == Path(cfg.reports_out) / "index.rrbidx"
    cfg2 = config_from_dict({"weights": "0.45,0.35,0.2", "k_grid": [1, 5], "ads": "a.jsonl"})
    assert cfg2.weights == LossWeights(0.45, 0.35, 0.2) and cfg2.ads == ("a.jsonl",)


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"k_grid": [5, 1]}, {"k_grid": [0]}, {"reward_k": 2}, {"strategy": "magic"}])
def test_config_rejects(raw):
    with pytest.raises((ValueError, TypeError)):
        config_from_dict(raw)


def test_overrides_ignore_none():
    cfg = ExperimentConfig()
    assert with_overrides(cfg, seed=None) is cfg
    assert with_overrides(cfg, seed=4).seed == 4


# -- pipeline stages ------------------------------------------------------------

def test_ingest_and_generate(tmp_path):
    cfg_path = write_experiment(tmp_path, n_ads=30, n_queries=10, n_pairs=5)
    cfg = load_config(cfg_path)
    summary = pipeline.cmd_ingest(cfg)
    assert summary == {"ads": 30, "queries": 10, "generated_queries": 0, "label_pairs": 5, "ads_without_queries": 0}

    # ads in an uncovered label pair get generated queries
    extra = make_corpus(4, 0, n_pairs=1, seed=9).ads
    extra = [a.__class__(f"x{i}", a.title, a.description, "newdomain", "newsub") for i, a in enumerate(extra)]
    write_ads(extra, tmp_path / "extra.jsonl")
    cfg = with_overrides(cfg, ads=(*cfg.ads, str(tmp_path / "extra.jsonl")))
    summary = pipeline.cmd_ingest(cfg, generate=10)
    assert summary["generated_queries"] == 10 and summary["ads_without_queries"] == 0
    assert (Path(cfg.reports_out) / "generated_queries.jsonl").exists()


def test_index_snapshot_reused(experiment):
    cfg = load_config(experiment)
    index = pipeline.cmd_index(cfg)
    assert len(index) == 100
    loaded = FlatIndex.load(cfg.snapshot_path)
    assert loaded.ids == index.ids
    manifest = json.loads(cfg.snapshot_path.with_suffix(".manifest.json").read_text())
    assert manifest["stage"] == "index" and len(manifest["inputs"]) == 1


def test_rewrite_failures_and_resume(experiment):
    cfg = load_config(experiment)

    def flaky(req: LlmRequest):
        if req.ad.id.endswith("7"):
            return "I am not able to do that."
        return f"Title: {req.ad.title} deluxe\nDescription: {req.ad.description}"

    run = pipeline.cmd_rewrite(cfg, llm=ScriptedLlm(flaky))
    assert len(run.pairs) == 90 and len(run.failures) == 10
    fail_file = Path(cfg.rewrites_out).with_name("rewrites.failures.jsonl")
    first = json.loads(fail_file.read_text().splitlines()[0])
    assert first["raw"] == "I am not able to do that."

    # simulate an interruption mid-line, then resume with a healthy model
    out = Path(cfg.rewrites_out)
    lines = out.read_text(encoding="utf-8").splitlines(keepends=True)
    out.write_text("".join(lines[:40]) + lines[40][:25], encoding="utf-8")
    calls = []

    def healthy(req):
        calls.append(req.ad.id)
        return f"Title: {req.ad.title} deluxe\nDescription: {req.ad.description}"

    run = pipeline.cmd_rewrite(cfg, resume=True, llm=ScriptedLlm(healthy))
    assert run.reused == 40 and len(calls) == 60 and not run.failures
    pairs = load_rewrites(out)
    assert list(pairs) == [f"ad{i:05d}" for i in range(100)]
    assert not fail_file.exists()


def test_remote_rewrite_bounded_concurrency(tmp_path):
    """1,000 ads against a stub chat server: every ad ends as a pair or a logged failure."""
    cfg = load_config(write_experiment(tmp_path, n_ads=1000, n_queries=10))
    cfg = with_overrides(cfg, workers=16)
    lock = threading.Lock()
    state = {"open": 0, "peak": 0, "n": 0}

    def handler(request):
        with lock:
            state["open"] += 1
            state["peak"] = max(state["peak"], state["open"])
            state["n"] += 1
            n = state["n"]
        time.sleep(0.001)
        prompt = json.loads(request.content)["prompt"]
        with lock:
            state["open"] -= 1
        if n % 97 == 0:
            return httpx.Response(200, json={"text": "no idea"})
        title = prompt.split("Original Ad: Title: ")[1].split("\n")[0]
        return httpx.Response(200, json={"text": f"Title: {title}!\nDescription: better"})

    llm = RemoteChatLlm("http://llm.test/", max_in_flight=8, transport=httpx.MockTransport(handler), backoff=0.0)
    run = pipeline.cmd_rewrite(cfg, llm=llm)
    assert len(run.pairs) + len(run.failures) == 1000
    assert len(run.failures) == 1000 // 97
    assert state["peak"] <= 8


def test_evaluate_outputs(experiment):
    cfg = load_config(experiment)
    pipeline.cmd_rewrite(cfg)
    res = pipeline.cmd_evaluate(cfg)
    out = Path(cfg.reports_out)
    for name in ("metrics.csv", "ranks.csv", "summary.json", "manifest.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["evaluated_ads"] == 100 and summary["manifest"] == "manifest.json"
    assert [a["k"] for a in summary["per_k"]] == [1, 3, 5, 10, 20, 30]
    assert all(a["mean_delta_mrr"] == 0.0 for a in summary["per_k"])
    assert len(res.reports) == 600


def test_evaluate_skips_ads_without_queries(tmp_path):
    cfg = load_config(write_experiment(tmp_path, n_ads=40, n_queries=4, n_pairs=8))
    pipeline.cmd_rewrite(cfg)
    res = pipeline.cmd_evaluate(cfg)
    assert len(res.evaluated_ads) == 20
    assert set(res.skipped.values()) == {"no relevant queries"}


def test_evaluate_rejects_k_beyond_corpus(tmp_path):
    cfg = load_config(write_experiment(tmp_path, n_ads=20, n_queries=5, n_pairs=5))
    pipeline.cmd_rewrite(cfg)
    with pytest.raises(Exception, match="exceeds corpus size"):
        pipeline.cmd_evaluate(cfg)


def test_ablation_rows(experiment):
    cfg = with_overrides(load_config(experiment), extra_weightings=("0.5,0.5,0",))
    pipeline.cmd_rewrite(cfg, llm=ScriptedLlm(lambda r: f"Title: {r.ad.title}\nDescription: {r.ad.description} shop today"))
    rows = pipeline.cmd_ablate(cfg)
    assert [r["weighting"] for r in rows] == [*ABLATION_WEIGHTINGS, "0.5:0.5:0"]
    custom = rows[-1]
    assert custom["loss_fidelity"] == 0.0
    assert custom["mean_reward"] == pytest.approx(-(custom["loss_rel_gain"] + custom["loss_triplet"]), abs=1e-12)
    text = (Path(cfg.reports_out) / "ablation.csv").read_text()
    assert text.splitlines()[0].startswith("weighting,alpha,beta,gamma,rewarded_ads,mean_reward")
    assert len(text.splitlines()) == 8


def test_report_tables(tmp_path):
    runs = []
    for label, rewriter in (("echo", None), ("stuffed", ScriptedLlm(lambda r: f"Title: {r.ad.title} sale\nDescription: {r.ad.description}"))):
        cfg = with_overrides(load_config(write_experiment(tmp_path / label, n_ads=60, n_queries=20)), label=label)
        pipeline.cmd_rewrite(cfg, llm=rewriter)
        pipeline.cmd_evaluate(cfg)
        runs.append(cfg.reports_out)
    text, series = pipeline.cmd_report(runs[:1])
    assert "echo" in text and "stuffed" not in text
    text, series = pipeline.cmd_report(runs)
    header = [l for l in text.splitlines() if l.strip().startswith("k ")][0].split()
    assert header == ["k", "echo", "stuffed"]
    assert series.splitlines()[0] == "label,k,metric,value"
    assert len(series.splitlines()) == 1 + 2 * 6 * 2
    assert pipeline.cmd_report([])[0] == "no data\n"


# -- CLI -------------------------------------------------------------------------------

def test_cli_full_flow(experiment, capsys):
    c = str(experiment)
    for cmd in (["ingest"], ["index"], ["rewrite"], ["evaluate"], ["ablate"]):
        assert main([*cmd, "--config", c]) == 0, cmd
    out = load_config(experiment).reports_out
    assert main(["report", out, "--out", str(Path(out) / "rep")]) == 0
    assert "delta-MRR@k" in capsys.readouterr().out
    assert (Path(out) / "rep" / "series.csv").exists()


def test_cli_report_no_data(capsys, tmp_path):
    assert main(["report", str(tmp_path / "missing")]) == 0
    assert capsys.readouterr().out == "no data\n"


def test_cli_exit_codes(tmp_path, experiment, capsys):
    assert main(["evaluate", "--config", str(tmp_path / "nope.json")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["evaluate", "--config", str(experiment), "--weights", "1,2"])
    assert info.value.code == 1
    assert main(["evaluate", "--config", str(experiment), "--k", "30,5"]) == 1
    bad = json.loads(experiment.read_text())
    bad["embedder"] = {"kind": "remote-service", "endpoint": "http://127.0.0.1:9/embed", "retry_limit": 0, "timeout": 1}
    experiment.write_text(json.dumps(bad))
    assert main(["index", "--config", str(experiment)]) == 3
    err = capsys.readouterr().err
    assert "backend error" in err


def test_cli_flag_overrides(experiment):
    assert main(["rewrite", "--config", str(experiment), "--strategy", "general-rewrite"]) == 0
    pairs = load_rewrites(load_config(experiment).rewrites_out)
    assert {p.strategy for p in pairs.values()} == {"general-rewrite"}
    assert main(["evaluate", "--config", str(experiment), "--k", "1,5"]) == 0
    summary = json.loads((Path(load_config(experiment).reports_out) / "summary.json").read_text())
    assert summary["k_grid"] == [1, 5]


# -- reward server -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def service(tmp_path_factory):
    cfg = load_config(write_experiment(tmp_path_factory.mktemp("srv"), n_ads=80, n_queries=30, n_pairs=6))
    return RewardService.from_config(cfg)


def _body(service, ad_id, suffix=""):
    ad = service.ads[ad_id]
    return {
        "ad_id": ad_id,
        "before": {"title": ad.title, "description": ad.description},
        "after": {"title": ad.title + suffix, "description": ad.description},
    }


def test_server_contract(service):
    client = TestClient(create_app(service))
    assert client.get("/healthz").json() == {"status": "ok", "ads": 80, "queries": 30}
    r = client.post("/reward", json=_body(service, "ad00003", " best deal"))
    assert r.status_code == 200
    data = r.json()
    inproc = result_payload("ad00003", service.score("ad00003", *_texts(service, "ad00003", " best deal")))
    assert data == inproc
    assert len(data["breakdown"]) == 3
    assert data["reward"] == pytest.approx(-sum(b["total"] for b in data["breakdown"]) / 3, abs=1e-12)


def _texts(service, ad_id, suffix):
    from adrewrite.harness.server import AdText

    body = _body(service, ad_id, suffix)
    return AdText(**body["before"]), AdText(**body["after"])


def test_server_identity_reward(service):
    client = TestClient(create_app(service))
    data = client.post("/reward", json=_body(service, "ad00010")).json()
    assert all(b["rel_gain"] == 0.0 and b["fidelity"] == 0.0 for b in data["breakdown"])
    assert data["reward"] == pytest.approx(-np.mean([b["triplet"] for b in data["breakdown"]]), abs=1e-12)


def test_server_errors(service, monkeypatch):
    client = TestClient(create_app(service))
    assert client.post("/reward", json=_body(service, "ad00001") | {"ad_id": "nope"}).status_code == 404
    assert client.post("/reward", json={"ad_id": "ad00001"}).status_code == 422
    body = _body(service, "ad00001")
    body["after"]["title"] = ""
    assert client.post("/reward", json=body).status_code == 422

    def down(*a, **k):
        raise ServiceUnavailable("embedder down")

    monkeypatch.setattr(service, "score", down)
    assert client.post("/reward", json=_body(service, "ad00001")).status_code == 503


def test_server_live_burst(service):
    """Small concurrent burst over real HTTP (the 64-way version runs in the acceptance suite)."""
    ids = [f"ad{i:05d}" for i in range(8)]
    expected = {a: result_payload(a, service.score(a, *_texts(service, a, " new"))) for a in ids}
    with LiveServer(create_app(service)) as srv, httpx.Client(base_url=srv.url, timeout=30) as client:
        results = {}

        def go(a):
            results[a] = client.post("/reward", json=_body(service, a, " new")).json()

        threads = [threading.Thread(target=go, args=(a,)) for a in ids]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert results == expected
