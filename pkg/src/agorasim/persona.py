"""Persona ontology and budget accounting.

Personas are immutable value objects shared across scenario code; all
spending state lives in per-persona BudgetLedgers owned by the running
scenario instance. The budget rule everywhere is "the crossing call
completes": a call made with budget remaining is charged in full even if it
lands past the limit, and only calls attempted at or past the limit fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlreadyExhausted, EmptyCorpus, InvalidField, SearchBudgetExhausted
from .gateway import ChatRequest, Gateway
from .hashing import canonical_json, sha256_hex

STANCE_SUPPORTING = "supporting"
STANCE_CHALLENGING = "challenging"
STANCE_NEUTRAL = "neutral"

# Real-valued stances in [-1, 1] map onto discrete labels by thirds.
_STANCE_BAND = 1.0 / 3.0


def stance_label(stance: float | None) -> str:
    if stance is None:
        return STANCE_NEUTRAL
    if stance > _STANCE_BAND:
        return STANCE_SUPPORTING
    if stance < -_STANCE_BAND:
        return STANCE_CHALLENGING
    return STANCE_NEUTRAL


@dataclass(frozen=True)
class ActivityProfile:
    """Temporal behavior knobs used by feed-style scenarios."""

    posts_per_hour: float
    comments_per_hour: float
    active_hours: frozenset
    response_delay_minutes: float

    def __post_init__(self):
        if self.posts_per_hour < 0 or self.comments_per_hour < 0:
            raise InvalidField("activity rates must be >= 0")
        if self.response_delay_minutes < 0:
            raise InvalidField("response_delay_minutes must be >= 0")
        hours = frozenset(int(h) for h in self.active_hours)
        if not hours:
            raise InvalidField("active_hours must be non-empty")
        if any(h < 0 or h > 23 for h in hours):
            raise InvalidField("active_hours entries must lie in 0..23")
        object.__setattr__(self, "active_hours", hours)

    def to_dict(self) -> dict:
        return {
            "posts_per_hour": self.posts_per_hour,
            "comments_per_hour": self.comments_per_hour,
            "active_hours": sorted(self.active_hours),
            "response_delay_minutes": self.response_delay_minutes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityProfile":
        _check_keys(d, {"posts_per_hour", "comments_per_hour", "active_hours",
                        "response_delay_minutes"}, "ActivityProfile")
        return cls(
            posts_per_hour=float(d["posts_per_hour"]),
            comments_per_hour=float(d["comments_per_hour"]),
            active_hours=frozenset(d["active_hours"]),
            response_delay_minutes=float(d["response_delay_minutes"]),
        )


@dataclass(frozen=True)
class Persona:
    """An agent identity: immutable after creation and safe to share."""

    id: str
    bio: str
    token_budget: int
    search_budget: int
    stance: float | None = None
    influence_weight: float | None = None
    activity_profile: ActivityProfile | None = None

    def __post_init__(self):
        if not self.id or not isinstance(self.id, str):
            raise InvalidField("persona id must be a non-empty string")
        if not isinstance(self.bio, str):
            raise InvalidField("persona bio must be a string")
        if not isinstance(self.token_budget, int) or isinstance(self.token_budget, bool) or self.token_budget < 0:
            raise InvalidField("token_budget must be an integer >= 0")
        if not isinstance(self.search_budget, int) or isinstance(self.search_budget, bool) or self.search_budget < 0:
            raise InvalidField("search_budget must be an integer >= 0")
        if self.stance is not None and not (-1.0 <= float(self.stance) <= 1.0):
            raise InvalidField("stance must lie in [-1, 1]")
        if self.influence_weight is not None and float(self.influence_weight) < 0:
            raise InvalidField("influence_weight must be >= 0")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "bio": self.bio,
            "token_budget": self.token_budget,
            "search_budget": self.search_budget,
            "stance": self.stance,
            "influence_weight": self.influence_weight,
            "activity_profile": self.activity_profile.to_dict() if self.activity_profile else None,
        }
        return d


_PERSONA_KEYS = {"id", "bio", "token_budget", "search_budget", "stance",
                 "influence_weight", "activity_profile"}


def _check_keys(d: dict, allowed: set, what: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise InvalidField(f"{what} has unknown fields: {sorted(unknown)}")


def create_persona(spec: dict) -> Persona:
    """Build a Persona from a plain mapping, rejecting unknown fields."""
    if not isinstance(spec, dict):
        raise InvalidField("persona spec must be a mapping")
    _check_keys(spec, _PERSONA_KEYS, "persona spec")
    for required in ("id", "bio", "token_budget", "search_budget"):
        if required not in spec:
            raise InvalidField(f"persona spec missing required field {required!r}")
    profile = spec.get("activity_profile")
    return Persona(
        id=spec["id"],
        bio=spec["bio"],
        token_budget=spec["token_budget"],
        search_budget=spec["search_budget"],
        stance=spec.get("stance"),
        influence_weight=spec.get("influence_weight"),
        activity_profile=ActivityProfile.from_dict(profile) if profile else None,
    )


# -- ledgers ----------------------------------------------------------------


@dataclass
class LedgerEntry:
    step: int
    kind: str  # "token" | "search"
    amount: int
    reason: str

    def to_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "amount": self.amount,
                "reason": self.reason}


@dataclass
class BudgetLedger:
    """Append-only spending record for one persona in one scenario run."""

    persona_id: str
    tokens_spent: int = 0
    searches_spent: int = 0
    entries: list = field(default_factory=list)

    def replay_totals(self) -> tuple[int, int]:
        """Recompute (tokens, searches) from entries; must equal the counters."""
        tokens = sum(e.amount for e in self.entries if e.kind == "token")
        searches = sum(1 for e in self.entries if e.kind == "search")
        return tokens, searches

    def to_dict(self) -> dict:
        return {
            "persona_id": self.persona_id,
            "tokens_spent": self.tokens_spent,
            "searches_spent": self.searches_spent,
            "entries": [e.to_dict() for e in self.entries],
        }


def is_exhausted(ledger: BudgetLedger, persona: Persona) -> bool:
    """True once tokens_spent has reached the token budget (a zero budget
    is exhausted before any call)."""
    return ledger.tokens_spent >= persona.token_budget


def debit_tokens(ledger: BudgetLedger, persona: Persona, amount: int, step: int,
                 reason: str = "llm-call") -> BudgetLedger:
    """Charge `amount` tokens. The call that crosses the budget completes and
    is charged in full; a call attempted at/past the limit raises."""
    if amount < 0:
        raise InvalidField("token debit amount must be >= 0")
    if is_exhausted(ledger, persona):
        raise AlreadyExhausted(
            f"{persona.id}: {ledger.tokens_spent}/{persona.token_budget} tokens already spent"
        )
    ledger.entries.append(LedgerEntry(step=step, kind="token", amount=amount, reason=reason))
    ledger.tokens_spent += amount
    return ledger


def debit_search(ledger: BudgetLedger, persona: Persona, step: int,
                 reason: str = "web-search") -> BudgetLedger:
    """Charge one gated search. Raises before any side effect when spent."""
    if ledger.searches_spent >= persona.search_budget:
        raise SearchBudgetExhausted(
            f"{persona.id}: {ledger.searches_spent}/{persona.search_budget} searches already spent"
        )
    ledger.entries.append(LedgerEntry(step=step, kind="search", amount=1, reason=reason))
    ledger.searches_spent += 1
    return ledger


# -- roster persistence -------------------------------------------------------


def save_roster(personas: list[Persona], path: Path | str) -> None:
    doc = [p.to_dict() for p in personas]
    Path(path).write_text(canonical_json(doc) + "\n", encoding="utf-8", newline="\n")


def load_roster(path: Path | str) -> list[Persona]:
    import json

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, list):
        raise InvalidField("roster file must hold a JSON array of persona records")
    personas = [create_persona({k: v for k, v in rec.items() if v is not None}) for rec in doc]
    ids = [p.id for p in personas]
    if len(set(ids)) != len(ids):
        raise InvalidField("roster contains duplicate persona ids")
    return personas


# -- one-pass persona generation ---------------------------------------------

PERSONA_GEN_LABEL = "core.persona_gen"

_GEN_SYSTEM_PROMPT = (
    "You write one-paragraph researcher personas for a simulated panel. "
    "Reply with the bio paragraph only."
)

_FOCI = [
    "community archives", "local newsrooms", "recommendation audits",
    "open data stewardship", "citizen science", "media literacy",
    "platform governance", "civic deliberation", "knowledge commons",
    "participatory sensing", "digital preservation", "crowd moderation",
]
_TEMPERS = ["skeptical", "optimistic", "methodical", "contrarian", "pragmatic",
            "curious", "cautious", "outspoken"]
_METHODS = ["field interviews", "longitudinal surveys", "trace analysis",
            "lab experiments", "comparative case studies", "simulation studies"]


def scripted_persona_bio(seed: int, request: ChatRequest, digest: str) -> str:
    """Scripted behavior for persona generation: a pure function of the
    gateway seed and the request digest."""
    h = int(sha256_hex(f"{seed}:{digest}")[:16], 16)
    focus = _FOCI[h % len(_FOCI)]
    temper = _TEMPERS[(h // 13) % len(_TEMPERS)]
    method = _METHODS[(h // 131) % len(_METHODS)]
    return (
        f"A {temper} researcher focused on {focus}, known for {method} "
        f"and for pressing collaborators to show their evidence."
    )


def generate_personas(instance, n: int, gw: Gateway, *, token_budget: int = 4000,
                      search_budget: int = 3, id_prefix: str = "persona",
                      max_tokens: int = 120) -> list[Persona]:
    """One-pass persona extraction from a world model via the gateway.

    In scripted mode the result is a deterministic function of
    (gateway seed, world-model content hash, index).
    """
    if n == 0:
        return []
    if n < 0:
        raise InvalidField("persona count must be >= 0")
    if not instance.all_chunks():
        raise EmptyCorpus("cannot generate personas from an empty world model")
    gw.ensure_behavior(PERSONA_GEN_LABEL, scripted_persona_bio)
    wm_hash = instance.content_hash()
    personas = []
    for i in range(n):
        request = ChatRequest(
            model=gw.model,
            messages=(
                {"role": "system", "content": _GEN_SYSTEM_PROMPT},
                {"role": "user",
                 "content": f"WORLD_HASH: {wm_hash}\nINDEX: {i}\n"
                            f"Write the bio for panelist {i}."},
            ),
            max_tokens=max_tokens,
        )
        response = gw.complete(request, label=PERSONA_GEN_LABEL)
        # Spread real-valued stances across the roster deterministically.
        h = int(sha256_hex(f"{wm_hash}:{i}")[:8], 16)
        stance = round((h % 201) / 100.0 - 1.0, 2)
        personas.append(Persona(
            id=f"{id_prefix}-{i:03d}",
            bio=response.text.strip(),
            token_budget=token_budget,
            search_budget=search_budget,
            stance=stance,
            influence_weight=round((h // 7) % 50 / 10.0, 1),
        ))
    return personas
