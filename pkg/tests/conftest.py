"""Shared fixtures: tiny inline corpora and config builders.

Tests construct self-contained config documents (corpus inlined) so they
never depend on files outside the test run's tmp_path.
"""

from __future__ import annotations

import pytest

from agorasim.runtime import RunConfig, normalize_config_document, run

DOC_ALPHA = (
    "The tidal microgrid rollout hinges on mooring wear, surge margins, and "
    "the diver inspection ledger. Early barge trials logged steady output "
    "through two storm cycles while the shore substation stayed dark."
)
DOC_BETA = (
    "Residents near the harbor report that the pilot kept clinic freezers "
    "running through the substation blackout. The cost review flags diver "
    "inspection quotes and a contingency draw for mooring tendon swaps."
)


def persona(pid: str, *, tokens: int = 4000, searches: int = 3,
            stance: float | None = None, **extra) -> dict:
    spec = {"id": pid, "bio": f"{pid} follows the rollout closely.",
            "token_budget": tokens, "search_budget": searches}
    if stance is not None:
        spec["stance"] = stance
    spec.update(extra)
    return spec


def base_doc(type_name: str, *, seed: int = 5, params: dict | None = None,
             personas: list | dict | None = None, documents: list | None = None,
             world: dict | None = None, run_extra: dict | None = None) -> dict:
    if documents is None:
        documents = [{"source_id": "alpha.txt", "text": DOC_ALPHA},
                     {"source_id": "beta.txt", "text": DOC_BETA}]
    world_section = {"documents": documents}
    if world:
        world_section.update(world)
    doc = {
        "run": {"type": type_name, "seed": seed, **(run_extra or {})},
        "gateway": {"mode": "scripted"},
        "world_model": world_section,
        "personas": personas if personas is not None
        else [persona("ada"), persona("bix")],
        "type": params or {},
    }
    return doc


def make_config(doc: dict, base_dir=".") -> RunConfig:
    return RunConfig(normalize_config_document(doc, base_dir))


@pytest.fixture
def run_doc(tmp_path):
    """Run a config document into a fresh directory under tmp_path."""
    counter = {"n": 0}

    def _go(doc: dict):
        counter["n"] += 1
        return run(make_config(doc), tmp_path / f"run-{counter['n']:02d}")

    return _go
