# Copyright 2026 The kprobe Authors
# SPDX-License-Identifier: Apache-2.0
"""Knowledge-neuron probing for a small attention classifier.

Thin wrapper over the C++ core. Configs are plain dicts with the same keys
as the JSON config files read by the ``kprobe`` command-line tool.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Optional, Sequence

from . import _kprobe
from ._kprobe import (
    ConfigError,
    IoError,
    MissingArtifact,
    Model,
    NumericError,
    activation_scores,
    heatmap,
    ig_joint,
    ig_scores,
    kept_count_for,
    num_threads,
    select_by_score,
    select_random,
    set_num_threads,
)

__all__ = [
    "ConfigError",
    "IoError",
    "MissingArtifact",
    "Model",
    "NumericError",
    "STAGES",
    "activation_scores",
    "check",
    "default_config",
    "examples",
    "generate_corpus",
    "heatmap",
    "ig_joint",
    "ig_scores",
    "init_model",
    "kept_count_for",
    "num_threads",
    "resolve_config",
    "run",
    "run_all",
    "select_by_score",
    "select_random",
    "set_num_threads",
]

STAGES = ("gen-corpus", "train", "attribute", "select", "evaluate", "report", "check")


def default_config() -> dict:
    return json.loads(_kprobe.default_config())


def resolve_config(config: Optional[dict] = None, **overrides: Any) -> dict:
    """Fills defaults and validates. Keyword overrides replace top-level keys."""
    merged = dict(config or {})
    merged.update(overrides)
    return json.loads(_kprobe.resolve_config(json.dumps(merged)))


def generate_corpus(config: Optional[dict] = None) -> dict:
    return json.loads(_kprobe.generate_corpus(json.dumps(config or {})))


def init_model(config: Optional[dict] = None, seed: int = 3) -> Model:
    return Model.init(json.dumps(config or {}), seed)


def run(stage: str, config: dict) -> None:
    """Runs one stage; artifacts go to config["out_dir"]."""
    if stage == "check":
        check(config)
        return
    _kprobe.run_stage(stage, json.dumps(config))


def check(config: dict) -> dict:
    return json.loads(_kprobe.run_check(json.dumps(config)))


def run_all(config: dict, stages: Iterable[str] = STAGES) -> Optional[dict]:
    result = None
    for stage in stages:
        if stage == "check":
            result = check(config)
        else:
            run(stage, config)
    return result


def examples(corpus: dict) -> tuple[list[Sequence[int]], list[int]]:
    """Token lists and labels from a generated corpus dict."""
    ex = corpus["examples"]
    return [e["tokens"] for e in ex], [e["label"] for e in ex]
