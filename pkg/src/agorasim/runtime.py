"""Scenario runtime: type registry, seeded streams, orchestration, replay.

A scenario type is a plug-in implementing a small contract (actions,
init_state, schedule, metrics, surfaces). The runtime owns everything
around it: config resolution, world-model construction, roster building,
gateway wiring, the global step counter, and the signed run directory:

    run_dir/
      config.json     resolved config (self-contained, canonical JSON)
      record.json     reproducibility record
      calls.jsonl     full gateway transcript
      exports/...     type surfaces
      manifest.json   file digests + content hash over calls.jsonl and exports

Determinism contract: with the same resolved config (seed included), a
scripted run produces a byte-identical run directory; replaying a run
against its cached call log reproduces the recorded content hash without
any live calls.
"""

from __future__ import annotations

import csv
import importlib
import io
import json
import os
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .claim_graph import GatewayExtractor
from .errors import (
    ConfigError,
    DuplicateType,
    EngineError,
    HashMismatch,
    InvalidField,
    RunError,
    UnknownType,
)
from .gateway import Gateway, content_hash, load_log, log_to_lines
from .hashing import canonical_json, file_sha256, sha256_hex, stable_u64
from .persona import BudgetLedger, Persona, create_persona, generate_personas, load_roster
from .retrieval import HashEmbedder, HybridConfig
from .world_model import ChunkingConfig, StubSearchBackend, ingest

ENDPOINT_ENV_VAR = "AGORASIM_ENDPOINT"
MODEL_ENV_VAR = "AGORASIM_MODEL"

DEFAULT_MAX_STEPS = 1_000_000


# -- steps -----------------------------------------------------------------


@dataclass(frozen=True)
class ActionSpec:
    name: str
    description: str = ""


@dataclass(frozen=True)
class Act:
    actor: str
    instruction: str


@dataclass(frozen=True)
class RoundBoundary:
    name: str


@dataclass(frozen=True)
class End:
    reason: str = "end"


Step = object  # Act | RoundBoundary | End


# -- seeded randomness -------------------------------------------------------


class RandomSource:
    """Root of all randomness in a run.

    Streams are derived per (agent id, label) from the root seed by hashing;
    a stream's outputs therefore depend only on (root seed, agent id, label,
    draw index), never on other agents or on wall-clock state. Streams are
    cached so repeated lookups continue the same draw sequence.
    """

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self._streams: dict[tuple, np.random.Generator] = {}

    def seed_for(self, agent_id: str, label: str = "default") -> int:
        return stable_u64("stream", self.root_seed, agent_id, label)

    def stream(self, agent_id: str, label: str = "default") -> np.random.Generator:
        key = (agent_id, label)
        gen = self._streams.get(key)
        if gen is None:
            gen = np.random.default_rng(self.seed_for(agent_id, label))
            self._streams[key] = gen
        return gen


# -- run record ---------------------------------------------------------------


class RecordBuilder:
    """Accumulates run-record material as the run progresses."""

    def __init__(self):
        self.searches: list[dict] = []

    def record_search(self, query: str, justification: str) -> None:
        self.searches.append({"query": query, "justification": justification})


@dataclass
class RunContext:
    """Everything a scenario type gets from the runtime."""

    seed: int
    rng: RandomSource
    gateway: Gateway
    world: object
    roster: dict                  # persona id -> Persona, insertion ordered
    ledgers: dict                 # persona id -> BudgetLedger
    params: dict
    record: RecordBuilder
    extractor: object
    embedder: HashEmbedder
    hybrid_cfg: HybridConfig
    search_backend: object
    min_justification_words: int
    step: int = -1

    def begin_step(self) -> int:
        self.step += 1
        return self.step

    def roster_order(self) -> list:
        return list(self.roster)


# -- scenario type contract -----------------------------------------------------


@dataclass
class Surface:
    """One export file: kind in {json, jsonl, csv, text, bytes}."""

    kind: str
    data: object


class ScenarioType(ABC):
    """The plug-in contract every scenario type implements."""

    name: str = "unnamed"

    def validate_params(self, params: dict) -> dict:
        return dict(params)

    @abstractmethod
    def actions(self) -> list:
        """Declared action vocabulary, as ActionSpec records."""

    @abstractmethod
    def init_state(self, ctx: RunContext):
        """Build the type's mutable state for one run."""

    @abstractmethod
    def schedule(self, state) -> Step:
        """Advance the simulation by one step and describe it.

        Must eventually return End; after End the runtime never calls
        schedule again.
        """

    @abstractmethod
    def metrics(self, state) -> dict:
        """Deterministic summary statistics for the finished run."""

    @abstractmethod
    def surfaces(self, state) -> dict:
        """Export set: relative path -> Surface."""


# -- registry ----------------------------------------------------------------------


_TYPES: dict[str, ScenarioType] = {}
_BUILTINS_LOADED = False


def register_type(name: str, impl: ScenarioType) -> None:
    if name in _TYPES:
        raise DuplicateType(f"scenario type {name!r} is already registered")
    _TYPES[name] = impl


def _ensure_builtins() -> None:
    global _BUILTINS_LOADED
    if not _BUILTINS_LOADED:
        _BUILTINS_LOADED = True
        importlib.import_module("agorasim.scenarios")


def get_type(name: str) -> ScenarioType:
    _ensure_builtins()
    try:
        return _TYPES[name]
    except KeyError:
        raise UnknownType(
            f"scenario type {name!r} is not registered; known: {sorted(_TYPES)}"
        ) from None


def list_types() -> list:
    _ensure_builtins()
    return sorted(_TYPES)


# -- config -------------------------------------------------------------------------


@dataclass
class RunConfig:
    """A fully resolved run configuration.

    `document` is the canonical, self-contained form (corpus inlined); it is
    what gets written to the run directory and what replay re-parses.
    """

    document: dict

    @property
    def type_name(self) -> str:
        return self.document["run"]["type"]

    @property
    def seed(self) -> int:
        return self.document["run"]["seed"]

    @property
    def plugins(self) -> list:
        return self.document["run"].get("plugins", [])

    @property
    def max_steps(self) -> int:
        return self.document["run"].get("max_steps", DEFAULT_MAX_STEPS)

    @property
    def personas_section(self):
        return self.document["personas"]

    @property
    def world_section(self) -> dict:
        return self.document["world_model"]

    @property
    def gateway_section(self) -> dict:
        return self.document["gateway"]

    @property
    def type_params(self) -> dict:
        return self.document["type"]


def validate_config_document(doc) -> list:
    """Schema-level validation; returns 'field: problem' strings."""
    problems = []
    if not isinstance(doc, dict):
        return ["config: top level must be a JSON object"]
    run = doc.get("run")
    if not isinstance(run, dict):
        problems.append("run: required section is missing or not an object")
    else:
        if not isinstance(run.get("type"), str) or not run.get("type"):
            problems.append("run.type: required string is missing")
        seed = run.get("seed")
        if seed is None:
            problems.append("run.seed: required integer is missing")
        elif not isinstance(seed, int) or isinstance(seed, bool):
            problems.append("run.seed: must be an integer")
        plugins = run.get("plugins", [])
        if not isinstance(plugins, list) or any(not isinstance(p, str) for p in plugins):
            problems.append("run.plugins: must be a list of module names")
    personas = doc.get("personas")
    if personas is None:
        problems.append("personas: required section is missing")
    elif isinstance(personas, dict):
        if not ({"generate", "file"} & set(personas)):
            problems.append("personas: object form needs a 'generate' or 'file' key")
    elif not isinstance(personas, list):
        problems.append("personas: must be a list of records or an object")
    world = doc.get("world_model")
    if not isinstance(world, dict):
        problems.append("world_model: required section is missing or not an object")
    elif not ({"documents", "dir", "manifest"} & set(world)) and not world.get("allow_empty"):
        problems.append("world_model: needs 'documents', 'dir', or 'manifest' (or allow_empty)")
    gw = doc.get("gateway", {})
    if not isinstance(gw, dict):
        problems.append("gateway: must be an object")
    elif gw.get("mode", "scripted") not in ("scripted", "live", "replay"):
        problems.append("gateway.mode: must be one of scripted, live, replay")
    if "type" in doc and not isinstance(doc["type"], dict):
        problems.append("type: must be an object of type parameters")
    return problems


def _resolve_documents(world: dict, base_dir: Path) -> list:
    if "documents" in world:
        docs = world["documents"]
        return [(d["source_id"], d["text"]) for d in docs]
    if "dir" in world:
        root = (base_dir / world["dir"]).resolve()
        if not root.is_dir():
            raise ConfigError(f"world_model.dir: {root} is not a directory")
        out = []
        for path in sorted(root.rglob("*.txt"), key=lambda p: p.relative_to(root).as_posix()):
            out.append((path.relative_to(root).as_posix(), path.read_text(encoding="utf-8")))
        return out
    if "manifest" in world:
        path = (base_dir / world["manifest"]).resolve()
        entries = json.loads(path.read_text(encoding="utf-8"))
        return [(d["source_id"], d["text"]) for d in entries]
    return []


def normalize_config_document(doc: dict, base_dir: Path | str = ".") -> dict:
    """Fill defaults and inline external references, producing the
    self-contained document form that run directories persist."""
    problems = validate_config_document(doc)
    if problems:
        raise ConfigError("; ".join(problems))
    base_dir = Path(base_dir)
    run = doc["run"]
    world = doc.get("world_model", {})
    documents = _resolve_documents(world, base_dir)
    personas = doc["personas"]
    if isinstance(personas, dict) and "file" in personas:
        roster = load_roster((base_dir / personas["file"]).resolve())
        personas = [p.to_dict() for p in roster]
    elif isinstance(personas, dict):
        gen = dict(personas["generate"])
        personas = {"generate": {
            "n": int(gen.get("n", 0)),
            "token_budget": int(gen.get("token_budget", 4000)),
            "search_budget": int(gen.get("search_budget", 3)),
            "id_prefix": str(gen.get("id_prefix", "persona")),
        }}
    gw = dict(doc.get("gateway", {}))
    mode = gw.get("mode", "scripted")
    resolved_gw = {"mode": mode}
    if mode == "scripted":
        resolved_gw["seed"] = int(gw.get("seed", run["seed"]))
        resolved_gw["model"] = gw.get("model", "scripted-stub")
    elif mode == "live":
        endpoint = gw.get("endpoint_url") or os.environ.get(ENDPOINT_ENV_VAR)
        model = gw.get("model") or os.environ.get(MODEL_ENV_VAR)
        if not endpoint:
            raise ConfigError(
                f"gateway.endpoint_url: missing (set it or the {ENDPOINT_ENV_VAR} env var)"
            )
        if not model:
            raise ConfigError(
                f"gateway.model: missing (set it or the {MODEL_ENV_VAR} env var)"
            )
        resolved_gw.update({"endpoint_url": endpoint, "model": model,
                            "retries": int(gw.get("retries", 1))})
    else:  # replay
        resolved_gw["call_log"] = gw.get("call_log", "calls.jsonl")
        resolved_gw["model"] = gw.get("model", "scripted-stub")
    resolved = {
        "run": {
            "type": run["type"],
            "seed": int(run["seed"]),
            "plugins": list(run.get("plugins", [])),
            "max_steps": int(run.get("max_steps", DEFAULT_MAX_STEPS)),
        },
        "personas": personas,
        "world_model": {
            "documents": [{"source_id": s, "text": t} for s, t in documents],
            "window_words": int(world.get("window_words", 512)),
            "overlap_words": int(world.get("overlap_words", 64)),
            "justification_min_words": int(world.get("justification_min_words", 5)),
            "embedding_dim": int(world.get("embedding_dim", 32)),
            "lambda": float(world.get("lambda", 0.5)),
            "top_k": int(world.get("top_k", 5)),
            "allow_empty": bool(world.get("allow_empty", False)),
        },
        "gateway": resolved_gw,
        "type": dict(doc.get("type", {})),
    }
    return resolved


def load_config(path: Path | str, *, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if seed_override is not None:
        if not isinstance(doc, dict) or not isinstance(doc.get("run"), dict):
            raise ConfigError("run: required section is missing or not an object")
        doc["run"]["seed"] = int(seed_override)
    return RunConfig(normalize_config_document(doc, path.parent))


# -- building blocks for run() -------------------------------------------------------


def _load_plugins(names) -> None:
    for name in names:
        try:
            importlib.import_module(name)
        except ImportError as err:
            raise ConfigError(f"run.plugins: cannot import {name!r}: {err}") from err


def _build_gateway(config: RunConfig) -> Gateway:
    gw = config.gateway_section
    mode = gw["mode"]
    if mode == "scripted":
        return Gateway.scripted(gw["seed"], model=gw["model"])
    if mode == "live":
        return Gateway.live(gw["endpoint_url"], gw["model"], retries=gw.get("retries", 1))
    entries = load_log(gw["call_log"])
    return Gateway.replay(entries, model=gw["model"])


def _build_roster(config: RunConfig, world, gateway: Gateway) -> list:
    section = config.personas_section
    if isinstance(section, list):
        personas = [create_persona({k: v for k, v in rec.items() if v is not None})
                    for rec in section]
    else:
        gen = section["generate"]
        personas = generate_personas(
            world, gen["n"], gateway,
            token_budget=gen["token_budget"], search_budget=gen["search_budget"],
            id_prefix=gen["id_prefix"],
        )
    ids = [p.id for p in personas]
    if len(set(ids)) != len(ids):
        raise ConfigError("personas: duplicate persona ids")
    return personas


# -- export writing --------------------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    return buf.getvalue()


def render_surface(surface: Surface):
    if surface.kind == "json":
        return canonical_json(surface.data) + "\n"
    if surface.kind == "jsonl":
        lines = [canonical_json(item) for item in surface.data]
        return "\n".join(lines) + ("\n" if lines else "")
    if surface.kind == "csv":
        return render_csv(surface.data["header"], surface.data["rows"])
    if surface.kind == "text":
        return str(surface.data)
    if surface.kind == "bytes":
        return surface.data
    raise InvalidField(f"unknown surface kind {surface.kind!r}")


def _write_file(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, bytes):
        path.write_bytes(payload)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)


# -- run ---------------------------------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    record: dict
    metrics: dict
    content_hash: str


def run(config: RunConfig, out_dir: Path | str, *, gateway_override: Gateway | None = None) -> RunResult:
    """Execute one run and write its signed directory.

    `gateway_override` is how replay() substitutes a replay-mode gateway
    while keeping the persisted config identical to the original.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise ConfigError(f"output directory {out_dir} exists and is not empty")
    _load_plugins(config.plugins)
    _ensure_builtins()
    impl = get_type(config.type_name)
    params = impl.validate_params(config.type_params)

    world_cfg = config.world_section
    chunking = ChunkingConfig(window_words=world_cfg["window_words"],
                              overlap_words=world_cfg["overlap_words"])
    world = ingest(
        [(d["source_id"], d["text"]) for d in world_cfg["documents"]],
        chunking,
        instance_id=f"wm-{config.seed}",
        allow_empty=world_cfg["allow_empty"],
    )
    gateway = gateway_override or _build_gateway(config)
    personas = _build_roster(config, world, gateway)
    roster = {p.id: p for p in personas}
    ledgers = {p.id: BudgetLedger(persona_id=p.id) for p in personas}
    rng = RandomSource(config.seed)
    ctx = RunContext(
        seed=config.seed,
        rng=rng,
        gateway=gateway,
        world=world,
        roster=roster,
        ledgers=ledgers,
        params=params,
        record=RecordBuilder(),
        extractor=GatewayExtractor(gateway),
        embedder=HashEmbedder(dim=world_cfg["embedding_dim"]),
        hybrid_cfg=HybridConfig(lambda_=world_cfg["lambda"], top_k=world_cfg["top_k"],
                                embedding_dim=world_cfg["embedding_dim"]),
        search_backend=StubSearchBackend(seed=config.seed),
        min_justification_words=world_cfg["justification_min_words"],
    )

    steps = {"total": 0, "acts": 0, "round_boundaries": 0}
    status = "completed"
    failure: dict | None = None
    metrics: dict = {}
    exports: dict[str, Surface] = {}
    try:
        state = impl.init_state(ctx)
        while True:
            idx = ctx.begin_step()
            if idx >= config.max_steps:
                raise InvalidField(f"exceeded max_steps={config.max_steps}")
            step = impl.schedule(state)
            if isinstance(step, End):
                break
            steps["total"] += 1
            if isinstance(step, Act):
                steps["acts"] += 1
            elif isinstance(step, RoundBoundary):
                steps["round_boundaries"] += 1
            else:
                raise InvalidField(f"schedule returned non-step {step!r}")
        metrics = impl.metrics(state)
        exports = impl.surfaces(state)
    except Exception as err:  # noqa: BLE001 - wrapped and re-raised below
        status = "failed"
        failure = {"failed_at_step": ctx.step, "error": f"{type(err).__name__}: {err}"}
        wrapped = RunError(ctx.step, err)
    # Flush artifacts even for failed runs so post-mortems have the transcript.
    out_dir.mkdir(parents=True, exist_ok=True)
    export_paths = []
    for rel, surface in exports.items():
        target = out_dir / "exports" / rel
        _write_file(target, render_surface(surface))
        export_paths.append(target)
    calls_path = out_dir / "calls.jsonl"
    _write_file(calls_path, log_to_lines(gateway.entries))
    hashed_files = sorted([calls_path, *export_paths], key=lambda p: p.relative_to(out_dir).as_posix())
    manifest = {
        "files": [
            {"path": p.relative_to(out_dir).as_posix(), "sha256": file_sha256(p)}
            for p in hashed_files
        ],
        "content_hash": content_hash(hashed_files, base_dir=out_dir),
    }
    _write_file(out_dir / "manifest.json", canonical_json(manifest) + "\n")
    record = {
        "engine": {"name": "agorasim", "version": __version__},
        "model": {"name": gateway.model, "mode": gateway.mode},
        "seeds": {"run": config.seed, "gateway": gateway.seed},
        "system_prompts": list(gateway.system_prompts),
        "chunk_digests": [c.digest for c in world.all_chunks()],
        "searches": list(ctx.record.searches),
        "call_transcript": {
            "file": "calls.jsonl",
            "entries": len(gateway.entries),
            "sha256": file_sha256(calls_path),
        },
        "steps": steps,
        "status": status,
        "export_manifest": manifest,
    }
    if failure:
        record.update(failure)
    _write_file(out_dir / "record.json", canonical_json(record) + "\n")
    _write_file(out_dir / "config.json", canonical_json(config.document) + "\n")
    if status == "failed":
        raise wrapped
    return RunResult(run_dir=out_dir, record=record, metrics=metrics,
                     content_hash=manifest["content_hash"])


# -- verification and replay ----------------------------------------------------------------


def verify_run_dir(run_dir: Path | str) -> list:
    """Recompute manifest digests; returns a list of mismatch descriptions."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        return [f"manifest.json: unreadable ({err})"]
    mismatches = []
    paths = []
    for entry in manifest.get("files", []):
        path = run_dir / entry["path"]
        if not path.is_file():
            mismatches.append(f"{entry['path']}: missing")
            continue
        actual = file_sha256(path)
        if actual != entry["sha256"]:
            mismatches.append(
                f"{entry['path']}: digest {actual} != recorded {entry['sha256']}"
            )
        paths.append(path)
    if not mismatches:
        actual_hash = content_hash(paths, base_dir=run_dir)
        if actual_hash != manifest.get("content_hash"):
            mismatches.append(
                f"content_hash: {actual_hash} != recorded {manifest.get('content_hash')}"
            )
    return mismatches


def replay(run_dir: Path | str, out_dir: Path | str | None = None) -> RunResult:
    """Re-execute a recorded run against its cached call log.

    Verifies the stored directory first (HashMismatch on tampering), then
    re-runs with a replay-mode gateway and checks the fresh content hash
    against the recorded one. No live calls are possible by construction.
    """
    run_dir = Path(run_dir)
    mismatches = verify_run_dir(run_dir)
    if mismatches:
        raise HashMismatch(f"stored run fails verification: {'; '.join(mismatches)}")
    doc = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    config = RunConfig(normalize_config_document(doc, run_dir))
    entries = load_log(run_dir / "calls.jsonl")
    recorded = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    if out_dir is None:
        out_dir = Path(tempfile.mkdtemp(prefix="agorasim-replay-")) / "run"
    gw_model = config.gateway_section.get("model", "scripted-stub")
    gateway = Gateway.replay(entries, model=gw_model)
    gateway.seed = config.gateway_section.get("seed", config.seed)
    result = run(config, out_dir, gateway_override=gateway)
    if result.content_hash != recorded["content_hash"]:
        raise HashMismatch(
            f"replay content hash {result.content_hash} != recorded {recorded['content_hash']}"
        )
    return result
