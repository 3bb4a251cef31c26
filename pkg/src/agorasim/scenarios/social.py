"""Social-network scenario: activity-driven posting over a shared feed.

Each round covers a fixed slice of simulated wall-clock time. Agents whose
activity profile marks the round's hour as active draw post/reaction counts
from Poisson processes; reactions execute after the agent's response delay.
Milestones inject exogenous posts or scale activity rates mid-run.

Every enqueued action is accounted for: it either executes or lands in the
dropped list with a reason, so `enqueued == executed + dropped` holds at the
end of every run.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from ..claim_graph import ArgumentGraph, add_utterance, graph_stats, graph_to_document
from ..errors import (
    AlreadyExhausted,
    BackendError,
    InvalidField,
    MissingParent,
    RejectedUnjustified,
    SearchBudgetExhausted,
    UnknownAgent,
)
from ..gateway import ChatRequest
from ..persona import ActivityProfile, debit_tokens, is_exhausted, stance_label
from ..runtime import ActionSpec, End, RoundBoundary, RunContext, ScenarioType, Step, Surface
from ..world_model import SearchRequest, append_content, justified_search
from .panel import _prompt_fields

COMPOSE_LABEL = "social.compose"

COMPOSER_SYSTEM = (
    "You are {pid} writing on a {flavor}-style feed. Bio: {bio} Keep it under "
    "forty words and tag claims with [[id|stance]] markup; use "
    "[[id|stance|kind:target]] when replying to a tagged claim."
)

REACTION_KINDS = ("comment", "dislike", "like", "repost")
MILESTONE_SCOPES = ("posts", "reactions", "all")


# -- flavor profiles ------------------------------------------------------------


def _twitter_profile(stream) -> tuple:
    """Fast, chatty, daytime-heavy. Returns (profile, influence)."""
    posts = round(float(stream.uniform(0.2, 1.5)), 3)
    comments = round(float(stream.uniform(0.5, 2.5)), 3)
    start, span = int(stream.integers(6, 12)), int(stream.integers(8, 15))
    hours = frozenset((start + i) % 24 for i in range(span))
    delay = int(stream.integers(5, 46))
    influence = round(float(stream.pareto(2.0)), 3)
    return ActivityProfile(posts, comments, hours, delay), influence


def _reddit_profile(stream) -> tuple:
    """Slower threads, evening-heavy, reply-dominated."""
    posts = round(float(stream.uniform(0.05, 0.5)), 3)
    comments = round(float(stream.uniform(1.0, 3.0)), 3)
    start, span = int(stream.integers(16, 22)), int(stream.integers(4, 9))
    hours = frozenset((start + i) % 24 for i in range(span))
    delay = int(stream.integers(15, 121))
    influence = round(float(stream.uniform(0.0, 0.5)), 3)
    return ActivityProfile(posts, comments, hours, delay), influence


FLAVORS = {"twitter": _twitter_profile, "reddit": _reddit_profile}


# -- data ------------------------------------------------------------------------


@dataclass
class Post:
    id: str
    author: str
    text: str
    kind: str                  # original | comment | repost
    parent: str | None
    round_created: int
    likes: int = 0
    dislikes: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id, "author": self.author, "text": self.text,
            "kind": self.kind, "parent": self.parent,
            "round_created": self.round_created,
            "likes": self.likes, "dislikes": self.dislikes,
        }


@dataclass(frozen=True)
class PendingAction:
    seq: int
    agent: str
    kind: str
    due_round: int
    text: str | None = None    # fixed text (milestone injections)
    target: str | None = None  # explicit post id / followee


@dataclass
class SocialState:
    ctx: RunContext
    flavor: str
    profiles: dict
    influence: dict
    follows: set = field(default_factory=set)
    posts: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    milestone_log: list = field(default_factory=list)
    action_seq: int = 0
    enqueued_total: int = 0
    round: int = 0
    rate_factors: dict = field(default_factory=lambda: {"posts": 1.0, "reactions": 1.0})
    graph: ArgumentGraph = field(default_factory=ArgumentGraph)
    utterance_seq: int = 0
    post_claims: dict = field(default_factory=dict)   # post id -> first claim id
    finished: bool = False


# -- scripted composer ------------------------------------------------------------


def _scripted_compose(seed: int, request: ChatRequest, digest: str) -> str:
    fields = _prompt_fields(request.messages[-1]["content"])
    n = int(fields.get("SEQ", "0"))
    label = fields.get("STANCE", "neutral").split(" ")[0]
    if label not in ("supporting", "challenging", "neutral"):
        label = "neutral"
    hints = " ".join(h for h in fields.get("HINTS", "").split(",")[:2] if h)
    parent_claim = fields.get("PARENT_CLAIM", "none")
    if fields.get("KIND") == "comment" and parent_claim != "none":
        target_id, target_stance = parent_claim.split(":", 1)
        if label == target_stance and label != "neutral":
            kind = "supports"
        elif {label, target_stance} == {"supporting", "challenging"}:
            kind = "counters"
        else:
            kind = "questions" if n % 2 else "refines"
        return f"Reply {n} on {hints}: weighing in here. [[s{n}|{label}|{kind}:{target_id}]]"
    return f"Post {n} about {hints}: a quick take from the feed. [[s{n}|{label}]]"


def register_social_behaviors(gateway) -> None:
    gateway.ensure_behavior(COMPOSE_LABEL, _scripted_compose)


# -- feed ranking ------------------------------------------------------------------


def build_feed(state: SocialState, agent: str, size: int | None = None) -> list:
    """Rank all posts for one agent; returns [(post, score)] best-first.

    score = w_follow * [agent follows author] + author influence
          + w_recency * 1 / (1 + rounds since creation); ties break by post id.
    """
    params = state.ctx.params
    size = params["feed_size"] if size is None else size
    scored = []
    for post in state.posts.values():
        age = state.round - post.round_created
        score = (
            params["follow_weight"] * (1.0 if (agent, post.author) in state.follows else 0.0)
            + state.influence.get(post.author, 0.0)
            + params["recency_weight"] * (1.0 / (1.0 + age))
        )
        scored.append((post, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored[:size]


# -- action ops --------------------------------------------------------------------
#
# Each op raises real errors when called directly; the round scheduler maps
# them onto dropped-action reasons.


def _compose(state: SocialState, agent: str, kind: str, parent: Post | None) -> str:
    ctx = state.ctx
    persona = ctx.roster[agent]
    ledger = ctx.ledgers[agent]
    if is_exhausted(ledger, persona):
        raise AlreadyExhausted(f"{agent}: token budget exhausted before {kind}")
    parent_claim = state.post_claims.get(parent.id) if parent else None
    parent_claim_line = "none"
    if parent_claim is not None:
        parent_claim_line = f"{parent_claim}:{state.graph.claims[parent_claim].stance}"
    stance_line = ("unspecified" if persona.stance is None
                   else f"{stance_label(persona.stance)} ({persona.stance})")
    hints = ",".join(persona.bio.lower().split()[:3])
    prompt = "\n".join([
        f"AGENT: {agent}",
        f"STANCE: {stance_line}",
        f"KIND: {kind}",
        f"SEQ: {state.utterance_seq}",
        f"ROUND: {state.round}",
        f"PARENT_AUTHOR: {parent.author if parent else 'none'}",
        f"PARENT_TEXT: {parent.text if parent else 'none'}",
        f"PARENT_CLAIM: {parent_claim_line}",
        f"HINTS: {hints}",
    ])
    request = ChatRequest(
        model=ctx.gateway.model,
        messages=(
            {"role": "system",
             "content": COMPOSER_SYSTEM.format(pid=agent, flavor=state.flavor,
                                               bio=persona.bio)},
            {"role": "user", "content": prompt},
        ),
        max_tokens=ctx.params["max_tokens"],
        seed=ctx.seed,
    )
    response = ctx.gateway.complete(request, label=COMPOSE_LABEL)
    spent = request.prompt_token_estimate() + response.completion_tokens
    debit_tokens(ledger, persona, spent, step=ctx.step, reason=f"social {kind}")
    return response.text


def _write_back(state: SocialState, post: Post) -> None:
    """Push authored text into the shared world and the claim graph."""
    append_content(state.ctx.world, post.text, post.author)
    delta = add_utterance(
        state.graph,
        {"author": post.author, "index": state.utterance_seq, "text": post.text},
        state.ctx.extractor,
    )
    state.utterance_seq += 1
    if delta.claims_added:
        state.post_claims[post.id] = delta.claims_added[0].id


def _new_post(state: SocialState, agent: str, text: str, kind: str,
              parent: str | None) -> Post:
    post = Post(id=f"p{len(state.posts):04d}", author=agent, text=text,
                kind=kind, parent=parent, round_created=state.round)
    state.posts[post.id] = post
    return post


def _resolve_target(state: SocialState, agent: str, explicit: str | None) -> Post:
    if explicit is not None:
        if explicit not in state.posts:
            raise MissingParent(f"post {explicit!r} does not exist")
        return state.posts[explicit]
    feed = build_feed(state, agent)
    if not feed:
        raise MissingParent(f"{agent}: no posts to react to")
    return feed[0][0]


def post(state: SocialState, agent: str, text: str | None = None) -> dict:
    """Author a new top-level post (composed via the gateway unless text is
    given, as with milestone injections)."""
    if text is None:
        if agent not in state.ctx.roster:
            raise UnknownAgent(f"{agent!r} is not in the roster and gave no text")
        text = _compose(state, agent, "post", None)
    new = _new_post(state, agent, text, "original", None)
    _write_back(state, new)
    return {"round": state.round, "agent": agent, "kind": "post",
            "post": new.id, "target": None}


def comment(state: SocialState, agent: str, parent: str | None = None) -> dict:
    """Reply to a post (the agent's top feed item when parent is omitted)."""
    target = _resolve_target(state, agent, parent)
    text = _compose(state, agent, "comment", target)
    new = _new_post(state, agent, text, "comment", target.id)
    _write_back(state, new)
    return {"round": state.round, "agent": agent, "kind": "comment",
            "post": new.id, "target": target.id}


def repost(state: SocialState, agent: str, parent: str | None = None) -> dict:
    """Re-share a post verbatim; free of charge, adds no new text."""
    target = _resolve_target(state, agent, parent)
    new = _new_post(state, agent, "", "repost", target.id)
    return {"round": state.round, "agent": agent, "kind": "repost",
            "post": new.id, "target": target.id}


def like(state: SocialState, agent: str, target: str | None = None) -> dict:
    resolved = _resolve_target(state, agent, target)
    resolved.likes += 1
    return {"round": state.round, "agent": agent, "kind": "like",
            "post": None, "target": resolved.id}


def dislike(state: SocialState, agent: str, target: str | None = None) -> dict:
    resolved = _resolve_target(state, agent, target)
    resolved.dislikes += 1
    return {"round": state.round, "agent": agent, "kind": "dislike",
            "post": None, "target": resolved.id}


def follow(state: SocialState, agent: str, followee: str | None = None) -> dict:
    """Follow an author (derived from the agent's feed when omitted)."""
    if followee is None:
        for ranked_post, _score in build_feed(state, agent):
            author = ranked_post.author
            if author != agent and (agent, author) not in state.follows:
                followee = author
                break
        if followee is None:
            raise MissingParent(f"{agent}: nobody new to follow")
    if followee == agent:
        raise InvalidField(f"{agent}: cannot follow themselves")
    state.follows.add((agent, followee))
    return {"round": state.round, "agent": agent, "kind": "follow",
            "post": None, "target": followee}


def search(state: SocialState, agent: str, query: str,
           justification: str | None = None) -> dict:
    """Budget-gated external search on behalf of an agent."""
    ctx = state.ctx
    results = justified_search(
        ctx.world, SearchRequest(query, justification),
        ctx.ledgers[agent], ctx.roster[agent], ctx.search_backend,
        min_justification_words=ctx.min_justification_words,
        step=ctx.step, recorder=ctx.record.record_search,
    )
    return {"round": state.round, "agent": agent, "kind": "search",
            "post": None, "target": None, "results": len(results)}


_EXECUTORS = {
    "post": lambda state, a: post(state, a.agent, a.text),
    "comment": lambda state, a: comment(state, a.agent, a.target),
    "repost": lambda state, a: repost(state, a.agent, a.target),
    "like": lambda state, a: like(state, a.agent, a.target),
    "dislike": lambda state, a: dislike(state, a.agent, a.target),
    "follow": lambda state, a: follow(state, a.agent, a.target),
}

_DROP_REASONS = {
    AlreadyExhausted: "token_budget_exhausted",
    MissingParent: "no_target",
    UnknownAgent: "unknown_agent",
    RejectedUnjustified: "rejected_unjustified",
    SearchBudgetExhausted: "search_budget_exhausted",
    BackendError: "backend_error",
}


# -- round machinery -----------------------------------------------------------------


def _enqueue(state: SocialState, agent: str, kind: str, due_round: int, *,
             text: str | None = None, target: str | None = None) -> None:
    state.pending.append(PendingAction(seq=state.action_seq, agent=agent, kind=kind,
                                       due_round=due_round, text=text, target=target))
    state.action_seq += 1
    state.enqueued_total += 1


def _draw_reaction(stream, mix: dict) -> str:
    kinds = sorted(mix)
    weights = [float(mix[k]) for k in kinds]
    total = sum(weights)
    idx = int(stream.choice(len(kinds), p=[w / total for w in weights]))
    return kinds[idx]


def _maybe_follow(state: SocialState, agent: str, author: str) -> None:
    p = state.ctx.params["follow_probability"]
    if p <= 0 or author == agent or (agent, author) in state.follows:
        return
    if float(state.ctx.rng.stream(agent, "social.follow").random()) < p:
        _enqueue(state, agent, "follow", state.round, target=author)


def _execute(state: SocialState, action: PendingAction) -> None:
    try:
        record = _EXECUTORS[action.kind](state, action)
    except tuple(_DROP_REASONS) as err:
        state.dropped.append({
            "seq": action.seq, "agent": action.agent, "kind": action.kind,
            "round": state.round, "reason": _DROP_REASONS[type(err)],
        })
        return
    record["due"] = action.due_round
    state.executed.append(record)
    target_id = record.get("target")
    if action.kind in ("comment", "repost", "like", "dislike") and target_id:
        _maybe_follow(state, action.agent, state.posts[target_id].author)


def step_round(state: SocialState) -> str:
    """Advance one round: milestones, activity draws, then due actions."""
    ctx = state.ctx
    params = ctx.params
    r = state.round

    for m in params["milestones"]:
        if m["round"] != r:
            continue
        if m["kind"] == "rate":
            scopes = ("posts", "reactions") if m["scope"] == "all" else (m["scope"],)
            for scope in scopes:
                state.rate_factors[scope] *= m["factor"]
        else:
            _enqueue(state, m["author"], "post", r, text=m["text"])
        state.milestone_log.append(dict(m))

    hour = (params["start_hour"] + (r * params["round_minutes"]) // 60) % 24
    round_hours = params["round_minutes"] / 60.0
    for pid in ctx.roster_order():
        profile = state.profiles[pid]
        if hour not in profile.active_hours:
            continue
        stream = ctx.rng.stream(pid, "social.activity")
        n_posts = int(stream.poisson(
            profile.posts_per_hour * round_hours * state.rate_factors["posts"]))
        n_reactions = int(stream.poisson(
            profile.comments_per_hour * round_hours * state.rate_factors["reactions"]))
        delay_rounds = math.ceil(profile.response_delay_minutes / params["round_minutes"])
        for _ in range(n_posts):
            _enqueue(state, pid, "post", r)
        for _ in range(n_reactions):
            _enqueue(state, pid, _draw_reaction(stream, params["reaction_mix"]), r + delay_rounds)

    due = sorted((a for a in state.pending if a.due_round <= r),
                 key=lambda a: (a.agent, a.seq))
    state.pending = [a for a in state.pending if a.due_round > r]
    for action in due:
        _execute(state, action)
    state.round += 1
    return f"round-{r:03d}"


# -- metrics ---------------------------------------------------------------------------


def cascades(state: SocialState) -> list:
    """Per-original-post spread: tree size (root included) and distinct
    reactors across the whole tree."""
    children = defaultdict(list)
    for p in state.posts.values():
        if p.parent is not None:
            children[p.parent].append(p.id)
    like_targets = defaultdict(set)
    for rec in state.executed:
        if rec["kind"] in ("like", "dislike"):
            like_targets[rec["target"]].add(rec["agent"])
    out = []
    for p in state.posts.values():
        if p.kind != "original":
            continue
        members = [p.id]
        stack = [p.id]
        while stack:
            for child in children.get(stack.pop(), []):
                members.append(child)
                stack.append(child)
        member_set = set(members)
        actors = set()
        for pid in member_set:
            actors.update(like_targets.get(pid, ()))
            if pid != p.id:
                actors.add(state.posts[pid].author)
        out.append({"root": p.id, "author": p.author,
                    "size": len(members), "reach": len(actors)})
    return out


def social_metrics(state: SocialState) -> dict:
    by_kind = defaultdict(int)
    for p in state.posts.values():
        by_kind[p.kind] += 1
    engagement: dict = {pid: defaultdict(int) for pid in state.ctx.roster_order()}
    for rec in state.executed:
        engagement.setdefault(rec["agent"], defaultdict(int))[rec["kind"]] += 1
    dropped_by_reason = defaultdict(int)
    for d in state.dropped:
        dropped_by_reason[d["reason"]] += 1
    spread = cascades(state)
    return {
        "rounds": state.round,
        "totals": {
            "posts": dict(sorted(by_kind.items())),
            "likes": sum(p.likes for p in state.posts.values()),
            "dislikes": sum(p.dislikes for p in state.posts.values()),
            "follows": len(state.follows),
        },
        "engagement": {pid: dict(sorted(counts.items()))
                       for pid, counts in sorted(engagement.items())},
        "cascades": spread,
        "cascade_summary": {
            "count": len(spread),
            "max_size": max((c["size"] for c in spread), default=0),
            "max_reach": max((c["reach"] for c in spread), default=0),
        },
        "reconciliation": {
            "enqueued": state.enqueued_total,
            "executed": len(state.executed),
            "dropped": len(state.dropped),
            "pending_at_end": len(state.pending),
            "dropped_by_reason": dict(sorted(dropped_by_reason.items())),
        },
        "rate_factors": dict(state.rate_factors),
        "milestones_applied": state.milestone_log,
        "graph": graph_stats(state.graph),
    }


# -- the scenario type -------------------------------------------------------------------


class SocialType(ScenarioType):
    name = "social"

    def actions(self) -> list:
        return [
            ActionSpec("post", "author a new top-level post"),
            ActionSpec("repost", "re-share an existing post verbatim"),
            ActionSpec("comment", "reply to an existing post"),
            ActionSpec("like", "approve an existing post"),
            ActionSpec("dislike", "disapprove an existing post"),
            ActionSpec("follow", "subscribe to another agent's posts"),
            ActionSpec("search", "budget-gated external lookup"),
        ]

    def validate_params(self, params: dict) -> dict:
        out = {
            "horizon_rounds": 24,
            "round_minutes": 60,
            "start_hour": 0,
            "flavor": "twitter",
            "milestones": [],
            "reaction_mix": {"comment": 1.0},
            "feed_size": 10,
            "follow_weight": 1.0,
            "recency_weight": 0.5,
            "follow_probability": 0.0,
            "max_tokens": 64,
            "seed_follows": [],
        }
        unknown = set(params) - set(out)
        if unknown:
            raise InvalidField(f"social params: unknown fields {sorted(unknown)}")
        out.update(params)
        # Copy the nested pieces so validation defaults never mutate the
        # caller's config document.
        if not isinstance(out["milestones"], list):
            raise InvalidField("social params: milestones must be a list")
        out["milestones"] = [dict(m) if isinstance(m, dict) else m
                             for m in out["milestones"]]
        out["reaction_mix"] = dict(out["reaction_mix"]) if isinstance(
            out["reaction_mix"], dict) else out["reaction_mix"]
        for key in ("horizon_rounds", "round_minutes", "feed_size", "max_tokens"):
            if not isinstance(out[key], int) or out[key] < 1:
                raise InvalidField(f"social params: {key} must be a positive integer")
        if not isinstance(out["start_hour"], int) or not 0 <= out["start_hour"] <= 23:
            raise InvalidField("social params: start_hour must be in 0..23")
        if out["flavor"] not in FLAVORS:
            raise InvalidField(
                f"social params: unknown flavor {out['flavor']!r}; known: {sorted(FLAVORS)}")
        if not 0.0 <= float(out["follow_probability"]) <= 1.0:
            raise InvalidField("social params: follow_probability must be in [0, 1]")
        mix = out["reaction_mix"]
        if not isinstance(mix, dict) or not mix:
            raise InvalidField("social params: reaction_mix must be a non-empty mapping")
        for kind, weight in mix.items():
            if kind not in REACTION_KINDS:
                raise InvalidField(f"social params: reaction_mix kind {kind!r} unknown")
            if not isinstance(weight, (int, float)) or weight < 0:
                raise InvalidField(f"social params: reaction_mix[{kind}] must be >= 0")
        if sum(mix.values()) <= 0:
            raise InvalidField("social params: reaction_mix weights sum to zero")
        for i, m in enumerate(out["milestones"]):
            where = f"social params: milestones[{i}]"
            if not isinstance(m, dict) or not isinstance(m.get("round"), int) or m["round"] < 0:
                raise InvalidField(f"{where} needs an integer round >= 0")
            if m.get("kind") == "rate":
                if not isinstance(m.get("factor"), (int, float)) or m["factor"] <= 0:
                    raise InvalidField(f"{where}: rate milestones need factor > 0")
                if m.get("scope", "all") not in MILESTONE_SCOPES:
                    raise InvalidField(f"{where}: scope must be one of {MILESTONE_SCOPES}")
                m.setdefault("scope", "all")
            elif m.get("kind") == "inject":
                if not str(m.get("author", "")).strip() or not str(m.get("text", "")).strip():
                    raise InvalidField(f"{where}: inject milestones need author and text")
            else:
                raise InvalidField(f"{where}: kind must be 'rate' or 'inject'")
        for i, edge in enumerate(out["seed_follows"]):
            if (not isinstance(edge, (list, tuple)) or len(edge) != 2
                    or edge[0] == edge[1]):
                raise InvalidField(
                    f"social params: seed_follows[{i}] must be [follower, followee]")
        return out

    def init_state(self, ctx: RunContext) -> SocialState:
        if not ctx.roster:
            raise InvalidField("social runs need at least one persona")
        register_social_behaviors(ctx.gateway)
        flavor = ctx.params["flavor"]
        profiles, influence = {}, {}
        for pid, persona in ctx.roster.items():
            stream = ctx.rng.stream(pid, "social.profile")
            generated_profile, generated_influence = FLAVORS[flavor](stream)
            profiles[pid] = persona.activity_profile or generated_profile
            influence[pid] = (persona.influence_weight
                              if persona.influence_weight is not None
                              else generated_influence)
        state = SocialState(ctx=ctx, flavor=flavor, profiles=profiles,
                            influence=influence)
        for follower, followee in ctx.params["seed_follows"]:
            if follower not in ctx.roster:
                raise InvalidField(f"seed_follows: unknown follower {follower!r}")
            state.follows.add((follower, followee))
        return state

    def schedule(self, state: SocialState) -> Step:
        if state.round < state.ctx.params["horizon_rounds"]:
            return RoundBoundary(step_round(state))
        if not state.finished:
            # Whatever is still queued past the horizon is dropped, keeping
            # the enqueued == executed + dropped reconciliation exact.
            for action in sorted(state.pending, key=lambda a: (a.agent, a.seq)):
                state.dropped.append({
                    "seq": action.seq, "agent": action.agent, "kind": action.kind,
                    "round": state.round, "reason": "horizon_reached",
                })
            state.pending = []
            state.finished = True
        return End("horizon-reached")

    def metrics(self, state: SocialState) -> dict:
        return social_metrics(state)

    def surfaces(self, state: SocialState) -> dict:
        return {
            "posts.jsonl": Surface("jsonl", [p.to_dict() for p in state.posts.values()]),
            "follows.json": Surface("json", sorted([list(e) for e in state.follows])),
            "metrics.json": Surface("json", social_metrics(state)),
            "graph.json": Surface("json", graph_to_document(state.graph)),
        }
