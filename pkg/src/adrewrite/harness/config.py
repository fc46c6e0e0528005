"""Experiment configuration: one JSON document, overridable from the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..embedding import EmbedderDescriptor
from ..llm_gateway import LlmDescriptor
from ..loss_reward import DEFAULT_REWARD_K, LossWeights
from ..metrics import DEFAULT_K_GRID
from ..prompts import PromptKind

_PATH_KEYS = ("queries", "test_ads", "rewrites_out", "reports_out", "index_path")


@dataclass(frozen=True)
class ExperimentConfig:
    ads: tuple[str, ...] = ()
    queries: str | None = None
    test_ads: str | None = None
    rewrites_out: str = "out/rewrites.jsonl"
    reports_out: str = "out/reports"
    index_path: str | None = None
    embedder: EmbedderDescriptor = field(default_factory=EmbedderDescriptor)
    answer_llm: LlmDescriptor = field(default_factory=lambda: LlmDescriptor(kind="mock-topk-citer"))
    rewrite_llm: LlmDescriptor = field(default_factory=LlmDescriptor)
    strategy: str = PromptKind.INSTRUCTION_COT.value
    label: str | None = None
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    weights: LossWeights = field(default_factory=LossWeights)
    reward_k: int = DEFAULT_REWARD_K
    seed: int = 0
    workers: int = 1
    extra_weightings: tuple[str, ...] = ()
    ablation_rewrites: dict[str, str] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 8000

    def __post_init__(self):
        ks = tuple(self.k_grid)
        if not ks or any(int(k) < 1 for k in ks):
            raise ValueError("k_grid must hold positive integers")
        if list(ks) != sorted(set(ks)):
            raise ValueError(f"k_grid must be sorted ascending and distinct, got {list(ks)}")
        if self.reward_k < 3:
            raise ValueError("reward_k must be >= 3")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        PromptKind(self.strategy)

    @property
    def run_label(self) -> str:
        return self.label or self.strategy

    @property
    def snapshot_path(self) -> Path:
        return Path(self.index_path) if self.index_path else Path(self.reports_out) / "index.rrbidx"

    @property
    def corpus_paths(self) -> list[str]:
        """Every ads file that goes into the index, in order, without repeats."""
        paths = list(self.ads)
        if self.test_ads and self.test_ads not in paths:
            paths.append(self.test_ads)
        return paths

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ads"] = list(self.ads)
        d["k_grid"] = list(self.k_grid)
        d["extra_weightings"] = list(self.extra_weightings)
        return d


def config_from_dict(raw: dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data = dict(raw)
    base = Path(base_dir) if base_dir else None

    def resolve(p):
        if p is None or base is None or Path(p).is_absolute():
            return p
        return str(base / p)

    ads = data.get("ads", ())
    if isinstance(ads, str):
        ads = (ads,)
    data["ads"] = tuple(resolve(p) for p in ads)
    for key in _PATH_KEYS:
        if key in data:
            data[key] = resolve(data[key])
    if "ablation_rewrites" in data:
        data["ablation_rewrites"] = {k: resolve(v) for k, v in data["ablation_rewrites"].items()}
    if isinstance(data.get("embedder"), dict):
        data["embedder"] = EmbedderDescriptor(**data["embedder"])
    for key in ("answer_llm", "rewrite_llm"):
        if isinstance(data.get(key), dict):
            data[key] = LlmDescriptor(**data[key])
    if "weights" in data:
        w = data["weights"]
        if isinstance(w, str):
            data["weights"] = LossWeights.parse(w)
        elif isinstance(w, dict):
            data["weights"] = LossWeights(**w)
        else:
            data["weights"] = LossWeights(*w)
    if "k_grid" in data:
        data["k_grid"] = tuple(int(k) for k in data["k_grid"])
    if "extra_weightings" in data:
        data["extra_weightings"] = tuple(data["extra_weightings"])
    return ExperimentConfig(**data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config_from_dict(raw, base_dir=path.parent)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply non-None overrides (CLI flags win over file values)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg
