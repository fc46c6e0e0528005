"""Run manifests: config snapshot, input fingerprints, versions, timestamps."""

from __future__ import annotations

import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import numpy as np

from .. import __version__
from .config import ExperimentConfig

RECORDED_DECISIONS = {
    "after_ranking": "single-ad substitution: only the tracked ad's vector is replaced",
    "inclusion_context": "top-max(k_grid) ads per query and version; smaller k reuse the rank cut-off",
    "tie_break": "score descending, doc_id ascending",
    "aggregation": "unweighted mean over ads; absent delta-DIR excluded and counted",
}


def fingerprint(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprints(paths: Iterable[str | Path | None]) -> dict[str, str]:
    return {str(p): fingerprint(p) for p in paths if p and Path(p).exists()}


def build_manifest(cfg: ExperimentConfig, stage: str, inputs: Iterable[str | Path | None]) -> dict:
    prints = fingerprints(inputs)
    config = cfg.to_dict()
    run_id = hashlib.sha256(
        json.dumps({"stage": stage, "config": config, "inputs": prints}, sort_keys=True).encode()
    ).hexdigest()[:16]
    return {
        "run_id": run_id,
        "stage": stage,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config,
        "inputs": prints,
        "versions": {
            "adrewrite": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "decisions": RECORDED_DECISIONS,
    }


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
