from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest

from adrewrite.corpus import write_ads, write_queries
from adrewrite.embedding import HashingEmbedder
from adrewrite.synthetic import make_corpus

TESTS_DIR = Path(__file__).parent
FIXTURES = TESTS_DIR / "fixtures"

# make tests/oracles importable as a plain directory of scripts
sys.path.insert(0, str(TESTS_DIR / "oracles"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def embedder():
    return HashingEmbedder(dim=64)


def write_experiment(
    root: Path,
    n_ads: int = 100,
    n_queries: int = 40,
    n_pairs: int = 10,
    seed: int = 0,
    **overrides,
) -> Path:
    """Write a synthetic corpus plus a JSON config under ``root``; return the config path."""
    root.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(n_ads, n_queries, n_pairs=n_pairs, seed=seed)
    write_ads(corpus.ads, root / "ads.jsonl")
    write_queries(corpus.queries, root / "queries.jsonl")
    cfg = {
        "ads": ["ads.jsonl"],
        "queries": "queries.jsonl",
        "rewrites_out": "out/rewrites.jsonl",
        "reports_out": "out/reports",
        "embedder": {"kind": "deterministic-test", "dim": 384},
        "seed": seed,
    }
    cfg.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def experiment(tmp_path):
    return write_experiment(tmp_path / "exp")


class LiveServer:
    """Run an ASGI app under uvicorn on an ephemeral port in a background thread."""

    def __init__(self, app):
        import socket
        import threading

        import uvicorn

        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        self.port = sock.getsockname()[1]
        sock.close()
        self.server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="warning"))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self):
        import time

        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("uvicorn did not start")
            time.sleep(0.02)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def pytest_terminal_summary(terminalreporter):
    import gate

    if gate.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(gate.LINES):
            terminalreporter.write_line(gate.LINES[n])
