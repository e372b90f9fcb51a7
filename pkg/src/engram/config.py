"""Engine configuration.

Every tunable the engine exposes lives here with its default, so a single
JSON config file can pin a full experiment. Time-like values are hours
unless the name says otherwise; network values are seconds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path


def _default_channel_weights() -> dict[str, float]:
    return {
        "semantic": 1.2,
        "bm25": 1.0,
        "entity": 1.0,
        "temporal": 1.0,
        "activation": 1.0,
        "consolidation": 0.8,
        "hopfield": 0.8,
    }


@dataclass
class EngineConfig:
    # embedding space
    dim: int = 256
    seed: int = 0                      # global seed for the deterministic embedder
    rotation_seed: int = 42

    # quantization-aware metric
    kappa_quant: float = 1.0           # variance inflation exponent, (32/b)^kappa
    ramp_saturation: float = 20.0      # accesses until the score ramp is fully geodesic

    # forgetting dynamics
    alpha_access: float = 2.0
    beta_importance: float = 1.0
    gamma_confirmation: float = 1.0
    delta_emotion: float = 1.0
    s_min_hours: float = 0.1
    kappa_trust: float = 2.0
    lifecycle_thresholds: tuple[float, float, float, float] = (0.8, 0.5, 0.2, 0.05)

    # retrieval channels
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    tau_recency_hours: float = 168.0
    activation_decay: float = 0.7
    activation_iterations: int = 3
    activation_seed_count: int = 5
    hopfield_beta: float | None = None  # None -> sqrt(dim)
    channel_pool: int = 50             # per-channel candidate depth

    # fusion
    rrf_k: int = 15
    channel_weights: dict[str, float] = field(default_factory=_default_channel_weights)
    frqad_rescore_top: int = 20
    rerank_top: int = 20
    intersection_fallback_union: bool = True

    # consolidation / parameterization
    cluster_threshold: float = 0.75
    gist_summary_chars: int = 512
    min_pattern_confidence: float = 0.7
    min_pattern_evidence: int = 5
    soft_prompt_token_cap: int = 1500
    chars_per_token: int = 4

    # daemon
    port: int = 8767
    idle_timeout_seconds: float = 1800.0
    connect_timeout_seconds: float = 0.2
    writer_lock_timeout_seconds: float = 5.0

    def to_file(self, path: str | Path) -> None:
        data = asdict(self)
        data["lifecycle_thresholds"] = list(self.lifecycle_thresholds)
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "lifecycle_thresholds" in data:
            data["lifecycle_thresholds"] = tuple(data["lifecycle_thresholds"])
        return cls(**data)

    def with_overrides(self, **kwargs) -> "EngineConfig":
        return replace(self, **kwargs)
