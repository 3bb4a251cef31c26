"""Typed claim graphs extracted from agent utterances.

Claims carry one of three stances; edges carry one of four kinds and always
point from a newer claim to a strictly earlier one (earlier utterance, or an
earlier claim within the same utterance), which keeps the graph acyclic by
construction.

Extraction is pluggable. The scripted extractor parses an inline markup
grammar embedded in utterance text:

    [[claim-id|stance]]
    [[claim-id|stance|kind:target-id]]

The gateway-backed extractor sends the utterance through the LLM gateway and
parses the same grammar from the reply, so scripted and live runs share one
code path and one call shape.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidClaim, InvalidEdge, InvalidStance
from .gateway import ChatRequest, Gateway
from .hashing import canonical_json

STANCES = ("supporting", "challenging", "neutral")
EDGE_KINDS = ("supports", "counters", "refines", "questions")

_MARKUP_RE = re.compile(
    r"\[\[([^|\[\]]+)\|([^|\[\]]+?)(?:\|([^:\[\]]+):([^\[\]]+?))?\]\]"
)


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    author: str
    utterance_index: int
    stance: str


@dataclass(frozen=True)
class Edge:
    from_claim: str
    to_claim: str
    kind: str


@dataclass
class GraphDelta:
    claims_added: list = field(default_factory=list)
    edges_added: list = field(default_factory=list)


@dataclass
class ArgumentGraph:
    """Insertion-ordered claim store plus typed edges."""

    claims: dict = field(default_factory=dict)   # id -> Claim, insertion ordered
    edges: list = field(default_factory=list)
    _order: dict = field(default_factory=dict)   # id -> global declaration ordinal

    def max_utterance_index(self) -> int:
        if not self.claims:
            return -1
        return max(c.utterance_index for c in self.claims.values())


# -- extractors ----------------------------------------------------------------


def parse_markup(text: str):
    """Parse inline claim markup into (claims, edges) spec tuples.

    Returns ([(claim_id, stance), ...], [(from_id, to_id, kind), ...]) in
    order of appearance. Stances and kinds are validated here.
    """
    claims = []
    edges = []
    for match in _MARKUP_RE.finditer(text):
        claim_id, stance, kind, target = match.groups()
        claim_id = claim_id.strip()
        stance = stance.strip()
        if stance not in STANCES:
            raise InvalidStance(f"stance {stance!r} is not one of {STANCES}")
        claims.append((claim_id, stance))
        if kind is not None:
            kind = kind.strip()
            if kind not in EDGE_KINDS:
                raise InvalidEdge(f"edge kind {kind!r} is not one of {EDGE_KINDS}")
            edges.append((claim_id, target.strip(), kind))
    return claims, edges


class ScriptedExtractor:
    """LLM-free extractor: parses the markup grammar straight from the text."""

    def extract(self, new_text: str, topic: str, graph: ArgumentGraph):
        return parse_markup(new_text)


EXTRACT_LABEL = "core.extract"

_EXTRACT_SYSTEM_PROMPT = (
    "You extract argumentative claims. Reply only with zero or more markers "
    "of the form [[claim-id|stance]] or [[claim-id|stance|kind:target-id]]."
)


def _scripted_extract_behavior(seed: int, request: ChatRequest, digest: str) -> str:
    # Echo whatever markers the utterance already carries.
    user = request.messages[-1]["content"]
    return " ".join(m.group(0) for m in _MARKUP_RE.finditer(user))


class GatewayExtractor:
    """Extractor that routes through the gateway under one call-site label.

    In scripted mode the registered behavior echoes the markers found in the
    utterance, which makes it equivalent to ScriptedExtractor while keeping
    the call log shape identical to a live run.
    """

    def __init__(self, gw: Gateway, label: str = EXTRACT_LABEL):
        self.gateway = gw
        self.label = label
        gw.ensure_behavior(label, _scripted_extract_behavior)

    def extract(self, new_text: str, topic: str, graph: ArgumentGraph):
        known = ",".join(graph.claims)
        request = ChatRequest(
            model=self.gateway.model,
            messages=(
                {"role": "system", "content": _EXTRACT_SYSTEM_PROMPT},
                {"role": "user",
                 "content": f"TOPIC: {topic}\nKNOWN_CLAIMS: {known}\nTEXT: {new_text}"},
            ),
            max_tokens=256,
        )
        response = self.gateway.complete(request, label=self.label)
        return parse_markup(response.text)


# -- graph mutation --------------------------------------------------------------


def add_utterance(graph: ArgumentGraph, utterance: dict, extractor) -> GraphDelta:
    """Extract claims/edges from one utterance and append them to the graph.

    `utterance` needs keys: author, index (strictly greater than any index
    already present), text, and optionally topic. Edges may target claims
    from this same call, but only ones declared earlier in it.
    """
    author = utterance["author"]
    index = int(utterance["index"])
    if index <= graph.max_utterance_index():
        raise InvalidClaim(
            f"utterance index {index} is not greater than the existing maximum "
            f"{graph.max_utterance_index()}"
        )
    claim_specs, edge_specs = extractor.extract(
        utterance["text"], utterance.get("topic", ""), graph
    )

    delta = GraphDelta()
    new_ids = set()
    for claim_id, stance in claim_specs:
        if stance not in STANCES:
            raise InvalidStance(f"stance {stance!r} is not one of {STANCES}")
        if claim_id in graph.claims or claim_id in new_ids:
            raise InvalidClaim(f"duplicate claim id {claim_id!r}")
        new_ids.add(claim_id)
        claim = Claim(id=claim_id, text=utterance["text"], author=author,
                      utterance_index=index, stance=stance)
        graph.claims[claim_id] = claim
        graph._order[claim_id] = len(graph._order)
        delta.claims_added.append(claim)

    for from_id, to_id, kind in edge_specs:
        if kind not in EDGE_KINDS:
            raise InvalidEdge(f"edge kind {kind!r} is not one of {EDGE_KINDS}")
        if from_id not in graph.claims:
            raise InvalidEdge(f"edge source {from_id!r} is not a known claim")
        if to_id not in graph.claims:
            raise InvalidEdge(f"edge target {to_id!r} is not a known claim")
        if graph._order[from_id] <= graph._order[to_id]:
            raise InvalidEdge(
                f"edge {from_id}->{to_id} points forward; edges must link back "
                f"to earlier claims"
            )
        edge = Edge(from_claim=from_id, to_claim=to_id, kind=kind)
        graph.edges.append(edge)
        delta.edges_added.append(edge)
    return delta


def validate(graph: ArgumentGraph) -> list:
    """Return a list of human-readable invariant violations (empty = valid)."""
    problems = []
    for claim in graph.claims.values():
        if claim.stance not in STANCES:
            problems.append(f"claim {claim.id}: invalid stance {claim.stance!r}")
        if claim.id not in graph._order:
            problems.append(f"claim {claim.id}: missing declaration ordinal")
    for edge in graph.edges:
        if edge.kind not in EDGE_KINDS:
            problems.append(f"edge {edge.from_claim}->{edge.to_claim}: invalid kind {edge.kind!r}")
        if edge.from_claim not in graph.claims:
            problems.append(f"edge source {edge.from_claim!r} is dangling")
        if edge.to_claim not in graph.claims:
            problems.append(f"edge target {edge.to_claim!r} is dangling")
        if edge.from_claim in graph._order and edge.to_claim in graph._order:
            if graph._order[edge.from_claim] <= graph._order[edge.to_claim]:
                problems.append(f"edge {edge.from_claim}->{edge.to_claim} points forward")
    return problems


# -- statistics and reporting ------------------------------------------------------


def unresolved_counter_edges(graph: ArgumentGraph) -> list:
    """Counters edges whose from-claim is never countered or refined later."""
    answered = {e.to_claim for e in graph.edges if e.kind in ("counters", "refines")}
    return [e for e in graph.edges if e.kind == "counters" and e.from_claim not in answered]


def graph_stats(graph: ArgumentGraph) -> dict:
    by_stance = {s: 0 for s in STANCES}
    per_author: dict[str, int] = {}
    for claim in graph.claims.values():
        by_stance[claim.stance] += 1
        per_author[claim.author] = per_author.get(claim.author, 0) + 1
    by_kind = {k: 0 for k in EDGE_KINDS}
    for edge in graph.edges:
        by_kind[edge.kind] += 1
    unresolved = unresolved_counter_edges(graph)
    return {
        "claims_by_stance": by_stance,
        "edges_by_kind": by_kind,
        "per_author_counts": dict(sorted(per_author.items())),
        "unresolved_counters": [
            {"from_claim": e.from_claim, "to_claim": e.to_claim} for e in unresolved
        ],
    }


def deliberation_report(graph: ArgumentGraph, transcript) -> dict:
    """Deterministic post-run record: no prose, just positions and tensions.

    convergence_ratio = supports / max(1, supports + counters).
    """
    stats = graph_stats(graph)
    personas: dict[str, dict] = {}
    for claim in graph.claims.values():
        rec = personas.setdefault(claim.author, {
            "claims": 0, "stance_mix": {s: 0 for s in STANCES}, "utterances": 0,
        })
        rec["claims"] += 1
        rec["stance_mix"][claim.stance] += 1
    for utt in transcript or []:
        author = utt["persona"] if isinstance(utt, dict) else utt.persona
        rec = personas.setdefault(author, {
            "claims": 0, "stance_mix": {s: 0 for s in STANCES}, "utterances": 0,
        })
        rec["utterances"] += 1
    supports = stats["edges_by_kind"]["supports"]
    counters = stats["edges_by_kind"]["counters"]
    ratio = supports / max(1, supports + counters)
    disagreements = []
    for edge in unresolved_counter_edges(graph):
        disagreements.append({
            "from_claim": edge.from_claim,
            "from_text": graph.claims[edge.from_claim].text,
            "to_claim": edge.to_claim,
            "to_text": graph.claims[edge.to_claim].text,
        })
    return {
        "personas": dict(sorted(personas.items())),
        "convergence_ratio": ratio,
        "unresolved_disagreements": disagreements,
        "totals": stats,
    }


# -- canonical export ---------------------------------------------------------------


def graph_to_document(graph: ArgumentGraph) -> dict:
    claims = sorted(graph.claims.values(),
                    key=lambda c: (c.utterance_index, graph._order[c.id]))
    return {
        "claims": [
            {"id": c.id, "text": c.text, "author": c.author,
             "utterance_index": c.utterance_index, "stance": c.stance}
            for c in claims
        ],
        "edges": [
            {"from_claim": e.from_claim, "to_claim": e.to_claim, "kind": e.kind}
            for e in graph.edges
        ],
        "meta": {"claim_count": len(graph.claims), "edge_count": len(graph.edges)},
    }


def export_graph(graph: ArgumentGraph, destination: Path | str) -> None:
    """Write the canonical JSON form; re-exporting an unchanged graph is
    byte-identical."""
    Path(destination).write_text(canonical_json(graph_to_document(graph)) + "\n",
                                 encoding="utf-8", newline="\n")


def load_graph(source: Path | str) -> ArgumentGraph:
    doc = json.loads(Path(source).read_text(encoding="utf-8"))
    graph = ArgumentGraph()
    for c in doc["claims"]:
        claim = Claim(id=c["id"], text=c["text"], author=c["author"],
                      utterance_index=int(c["utterance_index"]), stance=c["stance"])
        if claim.stance not in STANCES:
            raise InvalidStance(f"stance {claim.stance!r} is not one of {STANCES}")
        if claim.id in graph.claims:
            raise InvalidClaim(f"duplicate claim id {claim.id!r}")
        graph.claims[claim.id] = claim
        graph._order[claim.id] = len(graph._order)
    for e in doc["edges"]:
        edge = Edge(from_claim=e["from_claim"], to_claim=e["to_claim"], kind=e["kind"])
        graph.edges.append(edge)
    problems = validate(graph)
    if problems:
        raise InvalidEdge("; ".join(problems))
    return graph
