"""Moderated panel scenario: rounds of directed turns over a claim graph.

A panel is described declaratively as a sequence of rounds, each with a name,
a goal, a turn cap, and an optional revision flag (revision rounds give every
participant a second pass to update their earlier position). Adding a new
panel shape means adding data, not code.

Every scheduling decision goes through the moderator as a gateway call, so
scripted, live, and replayed panels share one call transcript shape. The
scripted moderator behavior implements the same rule the code falls back to
when a live reply cannot be parsed.
"""

from __future__ import annotations

import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..claim_graph import (
    ArgumentGraph,
    add_utterance,
    deliberation_report,
    graph_stats,
    graph_to_document,
)
from ..errors import (
    BackendError,
    InvalidField,
    RejectedUnjustified,
    SearchBudgetExhausted,
)
from ..gateway import ChatRequest
from ..persona import debit_tokens, is_exhausted, stance_label
from ..runtime import Act, ActionSpec, End, RoundBoundary, RunContext, ScenarioType, Step, Surface
from ..world_model import SearchRequest, justified_search, keyword_lookup, normalize_text

MODERATOR_LABEL = "panel.moderator"
TURN_LABEL = "panel.turn"

MODERATOR_SYSTEM = (
    "You chair a structured expert panel. Reply with exactly one line: "
    "'SPEAK <persona> | <directive>' to hand the floor over, 'ADVANCE' to "
    "close the current round, or 'END' to close the panel."
)

PANELIST_SYSTEM = (
    "You are panelist {pid}. Bio: {bio} Speak in one or two short sentences "
    "and tag each claim you make with [[id|stance]] markup; add "
    "[[id|stance|kind:target]] when you engage an earlier claim."
)


# -- declarative shapes -------------------------------------------------------


@dataclass(frozen=True)
class RoundSpec:
    """One panel round: what it is for and how long it may run."""

    name: str
    goal: str
    turn_cap: int
    revision: bool = False

    def __post_init__(self):
        if not self.name:
            raise InvalidField("round name must be non-empty")
        if self.turn_cap < 1:
            raise InvalidField(f"round {self.name!r}: turn_cap must be >= 1")


@dataclass(frozen=True)
class RoundShape:
    name: str
    rounds: tuple

    def __post_init__(self):
        if not self.rounds:
            raise InvalidField("a panel shape needs at least one round")


def builtin_shapes() -> dict:
    """The shipped panel shapes, keyed by name."""
    return {
        "standard": RoundShape("standard", (
            RoundSpec("opening", "state your initial position on the topic", 4),
            RoundSpec("deliberation", "support or challenge one earlier claim", 20),
            RoundSpec("wrap-up", "summarize where you landed and what stays open", 6),
        )),
        "delphi": RoundShape("delphi", (
            RoundSpec("estimates", "give your independent estimate with one reason", 12),
            RoundSpec("revision", "revise your earlier estimate after reading the others", 24,
                      revision=True),
            RoundSpec("consensus", "state the closest position the group can share", 12),
        )),
        "pitch": RoundShape("pitch", (
            RoundSpec("pitch-storm", "pitch one concrete idea", 12),
            RoundSpec("kill-or-keep", "argue to keep or kill one pitched idea", 12),
            RoundSpec("final-ten", "rank what survives and why", 10),
        )),
    }


def _shape_from_params(params: dict) -> RoundShape:
    shape = params["shape"]
    if isinstance(shape, str):
        shapes = builtin_shapes()
        if shape not in shapes:
            raise InvalidField(f"unknown panel shape {shape!r}; known: {sorted(shapes)}")
        resolved = shapes[shape]
    elif isinstance(shape, dict):
        rounds = tuple(
            RoundSpec(r["name"], r.get("goal", ""), int(r["turn_cap"]),
                      revision=bool(r.get("revision", False)))
            for r in shape.get("rounds", [])
        )
        resolved = RoundShape(str(shape.get("name", "custom")), rounds)
    else:
        raise InvalidField("panel shape must be a builtin name or an inline shape object")
    caps = params.get("turn_caps")
    if caps is not None:
        if len(caps) != len(resolved.rounds):
            raise InvalidField(
                f"turn_caps has {len(caps)} entries for {len(resolved.rounds)} rounds")
        resolved = RoundShape(resolved.name, tuple(
            RoundSpec(r.name, r.goal, int(cap), revision=r.revision)
            for r, cap in zip(resolved.rounds, caps)
        ))
    return resolved


# -- moderator decisions ------------------------------------------------------


@dataclass(frozen=True)
class Speak:
    persona_id: str
    directive: str


@dataclass(frozen=True)
class Advance:
    pass


@dataclass(frozen=True)
class EndPanel:
    pass


_FIELD_RE = re.compile(r"^([A-Z_]+): ?(.*)$", re.MULTILINE)


def _prompt_fields(text: str) -> dict:
    return {m.group(1): m.group(2) for m in _FIELD_RE.finditer(text)}


def _scripted_moderator(seed: int, request: ChatRequest, digest: str) -> str:
    """Deterministic moderator: same rule as the parse-failure fallback."""
    fields = _prompt_fields(request.messages[-1]["content"])
    turns, cap = (int(x) for x in fields.get("TURNS", "0/1").split("/"))
    final = fields.get("FINAL_ROUND", "no") == "yes"
    candidates = [c for c in fields.get("CANDIDATES", "").split(",") if c]
    if turns >= cap or not candidates:
        return "END" if final else "ADVANCE"
    return f"SPEAK {candidates[0]} | {fields.get('GOAL', '')}"


def _scripted_turn(seed: int, request: ChatRequest, digest: str) -> str:
    """Deterministic panelist: short position statement with claim markup."""
    fields = _prompt_fields(request.messages[-1]["content"])
    n = int(fields.get("UTTERANCE_INDEX", "0"))
    label = fields.get("STANCE", "neutral").split(" ")[0]
    if label not in ("supporting", "challenging", "neutral"):
        label = "neutral"
    round_name = fields.get("ROUND", "round")
    recent = [p for p in fields.get("RECENT_CLAIMS", "").split(",") if ":" in p]
    if not recent:
        return f"Opening view for {round_name}: staking out my position. [[c{n}|{label}]]"
    target_id, target_stance = recent[-1].split(":", 1)
    if label == target_stance and label != "neutral":
        kind, verb = "supports", "backs"
    elif {label, target_stance} == {"supporting", "challenging"}:
        kind, verb = "counters", "pushes against"
    else:
        kind, verb = ("questions", "probes") if n % 2 else ("refines", "sharpens")
    return (f"On {round_name}, point {n}: my reading {verb} the last claim. "
            f"[[c{n}|{label}|{kind}:{target_id}]]")


def register_panel_behaviors(gateway) -> None:
    gateway.ensure_behavior(MODERATOR_LABEL, _scripted_moderator)
    gateway.ensure_behavior(TURN_LABEL, _scripted_turn)


# -- panel state --------------------------------------------------------------


@dataclass
class PanelState:
    ctx: RunContext
    shape: RoundShape
    topic: str
    round_idx: int = 0
    turns_in_round: int = 0
    pass_no: int = 1
    spoken_this_pass: set = field(default_factory=set)
    rr_pointer: int = 0
    transcript: list = field(default_factory=list)
    graph: ArgumentGraph = field(default_factory=ArgumentGraph)
    moderator_tokens: int = 0
    rounds_completed: int = 0
    warnings: list = field(default_factory=list)
    ended: bool = False

    @property
    def round_spec(self) -> RoundSpec:
        return self.shape.rounds[self.round_idx]

    def candidates(self) -> list:
        """Next-speaker queue: non-exhausted personas in round-robin order.

        Revision rounds additionally skip anyone who already spoke in the
        current pass, so each pass is one sweep of the surviving roster.
        """
        roster_ids = self.ctx.roster_order()
        start = self.rr_pointer % len(roster_ids)
        rotated = roster_ids[start:] + roster_ids[:start]
        out = []
        for pid in rotated:
            if is_exhausted(self.ctx.ledgers[pid], self.ctx.roster[pid]):
                continue
            if self.round_spec.revision and pid in self.spoken_this_pass:
                continue
            out.append(pid)
        return out


# -- moderator + turns --------------------------------------------------------


def _parse_decision(text: str, candidates: list):
    line = text.strip().splitlines()[0].strip() if text.strip() else ""
    if line == "ADVANCE":
        return Advance()
    if line == "END":
        return EndPanel()
    if line.startswith("SPEAK "):
        body = line[len("SPEAK "):]
        pid, _, directive = (part.strip() for part in body.partition("|"))
        if pid in candidates:
            return Speak(pid, directive)
    return None


def moderate(state: PanelState):
    """Ask the moderator for the next scheduling decision.

    The decision always comes back through the gateway so that live and
    scripted panels log identical call shapes; an unparseable live reply
    falls back to the deterministic schedule rule with a logged warning.
    """
    ctx = state.ctx
    spec = state.round_spec
    final = state.round_idx == len(state.shape.rounds) - 1
    cands = state.candidates()
    prompt = "\n".join([
        f"ROUND: {spec.name}",
        f"GOAL: {spec.goal}",
        f"TURNS: {state.turns_in_round}/{spec.turn_cap}",
        f"FINAL_ROUND: {'yes' if final else 'no'}",
        f"PASS: {state.pass_no}",
        f"CANDIDATES: {','.join(cands)}",
    ])
    request = ChatRequest(
        model=ctx.gateway.model,
        messages=(
            {"role": "system", "content": MODERATOR_SYSTEM},
            {"role": "user", "content": prompt},
        ),
        max_tokens=64,
        seed=ctx.seed,
    )
    response = ctx.gateway.complete(request, label=MODERATOR_LABEL)
    state.moderator_tokens += request.prompt_token_estimate() + response.completion_tokens
    decision = _parse_decision(response.text, cands)
    if decision is None:
        state.warnings.append(
            f"step {ctx.step}: moderator reply not parseable; used schedule rule")
        if state.turns_in_round >= spec.turn_cap or not cands:
            decision = EndPanel() if final else Advance()
        else:
            decision = Speak(cands[0], spec.goal)
    if isinstance(decision, Advance) and final:
        decision = EndPanel()
    return decision


def _lookup_terms(topic: str, goal: str, k: int = 6) -> list:
    seen = []
    for word in normalize_text(f"{topic} {goal}").lower().split():
        if word not in seen:
            seen.append(word)
    return seen[:k]


def _run_search_requests(state: PanelState, persona, n: int, tool_calls: list) -> None:
    ctx = state.ctx
    for spec in state.ctx.params.get("search_requests", []):
        if spec["turn"] != n:
            continue
        request = SearchRequest(spec["query"], spec.get("justification"))
        note = {"kind": "search", "query": request.query}
        try:
            results = justified_search(
                ctx.world, request, ctx.ledgers[persona.id], persona,
                ctx.search_backend,
                min_justification_words=ctx.min_justification_words,
                step=ctx.step, recorder=ctx.record.record_search,
            )
            note.update(status="ok", results=len(results))
        except RejectedUnjustified:
            note["status"] = "rejected_unjustified"
        except SearchBudgetExhausted:
            note["status"] = "budget_exhausted"
        except BackendError as err:
            note.update(status="backend_error", detail=str(err))
        tool_calls.append(note)


def take_turn(state: PanelState, persona_id: str, directive: str) -> dict:
    """One panelist turn: free lookup, optional searches, speak, extract."""
    ctx = state.ctx
    persona = ctx.roster[persona_id]
    ledger = ctx.ledgers[persona_id]
    spec = state.round_spec
    n = len(state.transcript)
    tool_calls = []
    terms = _lookup_terms(state.topic, spec.goal)
    hits = keyword_lookup(ctx.world, terms, k=ctx.params["keyword_k"])
    tool_calls.append({"kind": "keyword_lookup", "terms": terms,
                       "hits": [c.id for c in hits]})
    _run_search_requests(state, persona, n, tool_calls)

    recent = list(state.graph.claims.values())[-3:]
    stance_line = ("unspecified" if persona.stance is None
                   else f"{stance_label(persona.stance)} ({persona.stance})")
    prompt = "\n".join([
        f"PERSONA: {persona.id}",
        f"STANCE: {stance_line}",
        f"TOPIC: {state.topic}",
        f"ROUND: {spec.name}",
        f"GOAL: {spec.goal}",
        f"DIRECTIVE: {directive}",
        f"REVISION: {'yes' if spec.revision and state.pass_no > 1 else 'no'}",
        f"UTTERANCE_INDEX: {n}",
        f"RECENT_CLAIMS: {','.join(f'{c.id}:{c.stance}' for c in recent)}",
        f"CONTEXT: {','.join(c.id for c in hits)}",
    ])
    request = ChatRequest(
        model=ctx.gateway.model,
        messages=(
            {"role": "system",
             "content": PANELIST_SYSTEM.format(pid=persona.id, bio=persona.bio)},
            {"role": "user", "content": prompt},
        ),
        max_tokens=ctx.params["max_tokens"],
        seed=ctx.seed,
    )
    response = ctx.gateway.complete(request, label=TURN_LABEL)
    spent = request.prompt_token_estimate() + response.completion_tokens
    debit_tokens(ledger, persona, spent, step=ctx.step, reason=f"panel turn {n}")
    delta = add_utterance(
        state.graph,
        {"author": persona.id, "index": n, "text": response.text, "topic": state.topic},
        ctx.extractor,
    )
    entry = {
        "index": n,
        "round": spec.name,
        "pass": state.pass_no,
        "revision": spec.revision and state.pass_no > 1,
        "persona": persona.id,
        "directive": directive,
        "text": response.text,
        "claims": [c.id for c in delta.claims_added],
        "edges": [[e.from_claim, e.to_claim, e.kind] for e in delta.edges_added],
        "tokens": spent,
        "tool_calls": tool_calls,
    }
    state.transcript.append(entry)
    return entry


# -- the scenario type ---------------------------------------------------------


class PanelType(ScenarioType):
    name = "panel"

    def actions(self) -> list:
        return [
            ActionSpec("speak", "deliver one directed turn into the transcript"),
            ActionSpec("advance", "close the current round"),
            ActionSpec("end", "close the panel"),
        ]

    def validate_params(self, params: dict) -> dict:
        out = {
            "shape": "standard",
            "topic": "the agenda topic",
            "turn_caps": None,
            "keyword_k": 3,
            "max_tokens": 96,
            "search_requests": [],
        }
        unknown = set(params) - set(out)
        if unknown:
            raise InvalidField(f"panel params: unknown fields {sorted(unknown)}")
        out.update(params)
        _shape_from_params(out)  # validates shape + turn_caps
        if not isinstance(out["topic"], str) or not out["topic"].strip():
            raise InvalidField("panel params: topic must be a non-empty string")
        for key in ("keyword_k", "max_tokens"):
            if not isinstance(out[key], int) or out[key] < 1:
                raise InvalidField(f"panel params: {key} must be a positive integer")
        for i, req in enumerate(out["search_requests"]):
            if not isinstance(req, dict) or not isinstance(req.get("turn"), int) \
                    or req["turn"] < 0 or not str(req.get("query", "")).strip():
                raise InvalidField(
                    f"panel params: search_requests[{i}] needs turn >= 0 and a query")
        return out

    def init_state(self, ctx: RunContext) -> PanelState:
        if not ctx.roster:
            raise InvalidField("panel runs need at least one persona")
        register_panel_behaviors(ctx.gateway)
        shape = _shape_from_params(ctx.params)
        return PanelState(ctx=ctx, shape=shape, topic=ctx.params["topic"])

    def schedule(self, state: PanelState) -> Step:
        if state.ended:
            return End("panel-complete")
        spec = state.round_spec
        # A revision round rolls into its second pass once everyone still
        # solvent has spoken, before the moderator is consulted.
        if (spec.revision and state.pass_no == 1 and not state.candidates()
                and state.turns_in_round < spec.turn_cap
                and state.turns_in_round > 0):
            state.pass_no = 2
            state.spoken_this_pass.clear()
        decision = moderate(state)
        if isinstance(decision, Speak):
            take_turn(state, decision.persona_id, decision.directive)
            roster_ids = state.ctx.roster_order()
            state.rr_pointer = roster_ids.index(decision.persona_id) + 1
            state.spoken_this_pass.add(decision.persona_id)
            state.turns_in_round += 1
            return Act(actor=decision.persona_id, instruction=decision.directive)
        state.rounds_completed += 1
        if isinstance(decision, EndPanel):
            state.ended = True
            return End("panel-complete")
        finished = spec.name
        state.round_idx += 1
        state.turns_in_round = 0
        state.pass_no = 1
        state.spoken_this_pass.clear()
        return RoundBoundary(finished)

    def metrics(self, state: PanelState) -> dict:
        return {
            "utterances": len(state.transcript),
            "rounds_completed": state.rounds_completed,
            "moderator_tokens": state.moderator_tokens,
            "tokens_spent": {pid: state.ctx.ledgers[pid].tokens_spent
                             for pid in state.ctx.roster_order()},
            "searches_spent": {pid: state.ctx.ledgers[pid].searches_spent
                               for pid in state.ctx.roster_order()},
            "graph": graph_stats(state.graph),
        }

    def surfaces(self, state: PanelState) -> dict:
        transcript_doc = {
            "shape": state.shape.name,
            "topic": state.topic,
            "rounds": [
                {"name": r.name, "goal": r.goal, "turn_cap": r.turn_cap,
                 "revision": r.revision}
                for r in state.shape.rounds
            ],
            "utterances": state.transcript,
            "rounds_completed": state.rounds_completed,
            "moderator_tokens": state.moderator_tokens,
            "warnings": state.warnings,
        }
        return {
            "transcript.json": Surface("json", transcript_doc),
            "graph.json": Surface("json", graph_to_document(state.graph)),
            "report.json": Surface("json",
                                   deliberation_report(state.graph, state.transcript)),
            "metrics.json": Surface("json", self.metrics(state)),
        }


def run_panel(config, out_dir=None) -> dict:
    """Convenience wrapper: execute a panel config and load its exports.

    Accepts a config path, a raw config document, or a prepared RunConfig.
    Returns the transcript, graph, and report documents plus the RunResult.
    """
    import json

    from ..runtime import RunConfig, load_config, normalize_config_document, run

    if isinstance(config, (str, Path)):
        cfg = load_config(config)
    elif isinstance(config, RunConfig):
        cfg = config
    else:
        cfg = RunConfig(normalize_config_document(dict(config)))
    if cfg.type_name != "panel":
        raise InvalidField(f"run_panel got a {cfg.type_name!r} config")
    if out_dir is None:
        out_dir = Path(tempfile.mkdtemp(prefix="agorasim-panel-")) / "run"
    result = run(cfg, out_dir)
    exports = result.run_dir / "exports"
    read = lambda name: json.loads((exports / name).read_text(encoding="utf-8"))
    return {
        "result": result,
        "transcript": read("transcript.json"),
        "graph": read("graph.json"),
        "report": read("report.json"),
    }
