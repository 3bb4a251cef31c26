"""Curated-feed scenario: ranked impressions against drifting user beliefs.

A synthetic item catalog lives in a k-dimensional topic space (one axis per
topic). Each user holds a belief vector in the same space; every impression
shows the top item of a ranked candidate pool, the user clicks with a
probability driven by belief/item alignment, and the belief drifts toward
what was shown — clicks pull much harder than mere exposure.

Rankers are pluggable and deterministic. The realised feed order is compared
against the user's alignment oracle with Kendall's tau-b on every impression,
so ranker/preference agreement is measured where it happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatch, EmptyCandidates, EmptyInstance, InvalidField
from ..hashing import sha256_hex
from ..runtime import ActionSpec, End, RoundBoundary, RunContext, ScenarioType, Step, Surface, render_csv

IMPRESSION_HEADER = ["user", "item", "topic", "ranker_score", "oracle_score",
                     "click", "week", "ranker"]

MIN_TOPICS = 8
MAX_TOPICS = 16


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


# -- topic space and catalog -----------------------------------------------------


@dataclass(frozen=True)
class TopicSpace:
    """Orthonormal topic axes; one dimension per topic."""

    k: int
    labels: tuple = ()

    def __post_init__(self):
        if not MIN_TOPICS <= self.k <= MAX_TOPICS:
            raise InvalidField(
                f"topic count {self.k} outside [{MIN_TOPICS}, {MAX_TOPICS}]")
        if not self.labels:
            object.__setattr__(
                self, "labels", tuple(f"topic-{i:02d}" for i in range(self.k)))
        elif len(self.labels) != self.k:
            raise InvalidField("labels must match the topic count")

    def axis(self, topic: int) -> np.ndarray:
        e = np.zeros(self.k)
        e[topic] = 1.0
        return e


@dataclass
class FeedItem:
    id: str
    topic: int
    v: np.ndarray              # unit content vector in topic space
    global_clicks: int = 0


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


def build_catalog(world, size: int, topics: TopicSpace, embedder, rng) -> list:
    """Synthesize `size` items from the world's chunks.

    Each item projects a chunk embedding into topic space, jitters it with
    engine-stream noise, then pulls it halfway toward its assigned topic
    axis — which guarantees argmax(v) is the item's topic.
    """
    chunks = world.all_chunks()
    if not chunks:
        raise EmptyInstance("cannot build a catalog from an empty world model")
    projection = rng.stream("engine", "feed.projection").standard_normal(
        (embedder.dim, topics.k))
    jitter_stream = rng.stream("engine", "feed.catalog")
    items = []
    for i in range(size):
        chunk = chunks[i % len(chunks)]
        base = embedder.embed(chunk.text) @ projection
        if not np.linalg.norm(base) > 0:
            base = topics.axis(i % topics.k)
        jitter = _normalize(jitter_stream.standard_normal(topics.k)) * 0.35
        u = _normalize(_normalize(base) + jitter)
        topic = int(sha256_hex(f"{chunk.digest}:{i}")[:8], 16) % topics.k
        v = _normalize(0.5 * u + topics.axis(topic))
        items.append(FeedItem(id=f"item-{i:04d}", topic=topic, v=v))
    return items


# -- click + drift model ------------------------------------------------------------


def alignment(belief: np.ndarray, item_vec: np.ndarray) -> float:
    """Cosine between a belief and an item vector (0 when either is zero)."""
    if belief.shape != item_vec.shape:
        raise DimensionMismatch(
            f"belief dim {belief.shape} != item dim {item_vec.shape}")
    bn, vn = float(np.linalg.norm(belief)), float(np.linalg.norm(item_vec))
    if bn == 0.0 or vn == 0.0:
        return 0.0
    return float(belief @ item_vec / (bn * vn))


def click_probability(belief: np.ndarray, item_vec: np.ndarray,
                      beta: float = 4.0, bias: float = -2.0) -> float:
    return sigmoid(beta * alignment(belief, item_vec) + bias)


def update_belief(belief: np.ndarray, item_vec: np.ndarray, clicked: bool,
                  eta: float = 0.05, gamma_exposed: float = 0.1) -> np.ndarray:
    """Drift toward the shown item; clicks apply the full learning rate,
    unclicked exposures only the gamma_exposed fraction of it."""
    scale = eta if clicked else eta * gamma_exposed
    return belief + scale * (item_vec - belief)


# -- rankers -------------------------------------------------------------------------
#
# A ranker maps (items, belief, engagement, catalog) to one score per item.
# engagement is {catalog index: [click_count, last_click_ordinal]}.


def _alignment_scores(items, ref: np.ndarray) -> np.ndarray:
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0 or not items:
        return np.zeros(len(items))
    vecs = np.stack([it.v for it in items])
    norms = np.linalg.norm(vecs, axis=1)
    raw = vecs @ ref
    return np.where(norms > 0, raw / (np.where(norms > 0, norms, 1.0) * ref_norm), 0.0)


def helpful_history_vector(engagement: dict, catalog, top: int = 10):
    """Mean direction of the user's most-clicked items (recent clicks break
    ties); None when nothing was ever clicked."""
    clicked = [(counts[0], counts[1], idx)
               for idx, counts in engagement.items() if counts[0] > 0]
    if not clicked:
        return None
    clicked.sort(key=lambda t: (-t[0], -t[1], t[2]))
    vecs = np.stack([catalog[idx].v for _, _, idx in clicked[:top]])
    return _normalize(vecs.mean(axis=0))


def _rank_popularity(items, belief, engagement, catalog, history_top) -> np.ndarray:
    return np.array([float(it.global_clicks) for it in items])


def _rank_similarity_to_belief(items, belief, engagement, catalog,
                               history_top) -> np.ndarray:
    return _alignment_scores(items, belief)


def _rank_similarity_to_helpful_history(items, belief, engagement, catalog,
                                        history_top) -> np.ndarray:
    ref = helpful_history_vector(engagement, catalog, top=history_top)
    if ref is None:
        ref = belief  # cold start: fall back to the belief ranker
    return _alignment_scores(items, ref)


_RANKERS = {
    "popularity": _rank_popularity,
    "similarity_to_belief": _rank_similarity_to_belief,
    "similarity_to_helpful_history": _rank_similarity_to_helpful_history,
}


def register_ranker(name: str, fn) -> None:
    """Add a custom ranker; overwriting a builtin name is rejected."""
    if name in _RANKERS:
        raise InvalidField(f"ranker {name!r} is already registered")
    _RANKERS[name] = fn


def list_rankers() -> list:
    return sorted(_RANKERS)


def score_items(ranker: str, items, *, belief=None, engagement=None,
                catalog=None, history_top: int = 10) -> np.ndarray:
    if ranker not in _RANKERS:
        raise InvalidField(f"unknown ranker {ranker!r}; known: {sorted(_RANKERS)}")
    if not items:
        raise EmptyCandidates("cannot rank an empty candidate list")
    belief = np.zeros(items[0].v.shape) if belief is None else belief
    return np.asarray(_RANKERS[ranker](items, belief, engagement or {},
                                       catalog or [], history_top), dtype=float)


def rank(ranker: str, items, *, belief=None, engagement=None, catalog=None,
         history_top: int = 10) -> list:
    """Order candidates best-first; ties break by item id. Returns
    [(item, score)]."""
    scores = score_items(ranker, items, belief=belief, engagement=engagement,
                         catalog=catalog, history_top=history_top)
    order = sorted(range(len(items)), key=lambda j: (-scores[j], items[j].id))
    return [(items[j], float(scores[j])) for j in order]


# -- rank agreement ---------------------------------------------------------------------


def kendall_tau_b(x, y) -> float:
    """Tau-b rank correlation with tie correction; 0.0 when either side is
    entirely tied or fewer than two observations exist."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"tau inputs differ in shape: {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    concordant = int(np.sum(sx * sy > 0))
    discordant = int(np.sum(sx * sy < 0))
    n0 = n * (n - 1) // 2
    ties_x = int(np.sum(sx == 0))
    ties_y = int(np.sum(sy == 0))
    denom = math.sqrt(float(n0 - ties_x) * float(n0 - ties_y))
    if denom == 0.0:
        return 0.0
    return (concordant - discordant) / denom


def entropy_bits(counts) -> float:
    """Shannon entropy (base 2) of a count vector; 0.0 for an empty one."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


# -- state + weekly loop ------------------------------------------------------------------


@dataclass
class FeedState:
    ctx: RunContext
    topics: TopicSpace
    catalog: list
    users: list
    beliefs: np.ndarray        # (n_users, k)
    exposure: np.ndarray       # (n_users, k) impression counts
    engagement: list           # per user: {catalog idx: [clicks, last_click_seq]}
    ranker: str
    impressions: list = field(default_factory=list)
    taus: list = field(default_factory=list)
    week: int = 0
    seq: int = 0


def step_week(state: FeedState) -> str:
    ctx = state.ctx
    params = ctx.params
    pool = params["candidate_pool"]
    beta, bias = params["beta"], params["bias"]
    eta, gamma = params["eta"], params["gamma_exposed"]
    for u, uid in enumerate(state.users):
        stream = ctx.rng.stream(uid, "feed.user")
        for _ in range(params["impressions_per_week"]):
            belief = state.beliefs[u]
            picks = stream.choice(len(state.catalog), size=pool, replace=False)
            items = [state.catalog[int(i)] for i in picks]
            scores = score_items(state.ranker, items, belief=belief,
                                 engagement=state.engagement[u],
                                 catalog=state.catalog,
                                 history_top=params["history_top"])
            order = sorted(range(len(items)), key=lambda j: (-scores[j], items[j].id))
            oracle = _alignment_scores(items, belief)
            positions = np.empty(len(items))
            for shown_rank, j in enumerate(order):
                positions[j] = shown_rank
            state.taus.append(kendall_tau_b(-positions, oracle))
            top = order[0]
            item = items[top]
            clicked = bool(stream.random() < sigmoid(beta * float(oracle[top]) + bias))
            state.beliefs[u] = update_belief(belief, item.v, clicked,
                                             eta=eta, gamma_exposed=gamma)
            state.exposure[u, item.topic] += 1
            if clicked:
                item.global_clicks += 1
                entry = state.engagement[u].setdefault(int(picks[top]), [0, -1])
                entry[0] += 1
                entry[1] = state.seq
            state.impressions.append([
                uid, item.id, item.topic, float(scores[top]), float(oracle[top]),
                clicked, state.week, state.ranker,
            ])
            state.seq += 1
    state.week += 1
    return f"week-{state.week - 1:02d}"


def feed_metrics(state: FeedState) -> dict:
    total_exposure = int(state.exposure.sum())
    if total_exposure > 0:
        share = [float(s) for s in state.exposure.sum(axis=0) / total_exposure]
    else:
        share = [0.0] * state.topics.k
    per_user = [entropy_bits(row) for row in state.exposure if row.sum() > 0]
    clicks = int(sum(it.global_clicks for it in state.catalog))
    return {
        "ranker": state.ranker,
        "weeks": state.week,
        "users": len(state.users),
        "catalog_size": len(state.catalog),
        "impressions": len(state.impressions),
        "clicks": clicks,
        "click_rate": clicks / len(state.impressions) if state.impressions else 0.0,
        # Shift by the first row before taking the variance: mathematically a
        # no-op, but it keeps identical beliefs at exactly zero instead of
        # mean-rounding noise.
        "opinion_variance": float(np.mean(np.var(
            state.beliefs - state.beliefs[0], axis=0))),
        "exposure_entropy_bits": float(np.mean(per_user)) if per_user else 0.0,
        "kendall_tau_mean": float(np.mean(state.taus)) if state.taus else 0.0,
        "per_topic_share": share,
    }


def export_impressions(state: FeedState, destination, format: str = "csv") -> Path:
    """Write the impression table; parquet needs the optional polars extra."""
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_csv(IMPRESSION_HEADER, state.impressions))
    elif format == "parquet":
        try:
            import polars as pl
        except ImportError as err:
            raise InvalidField(
                "parquet export requires the optional 'parquet' extra (polars)"
            ) from err
        columns = list(zip(*state.impressions)) if state.impressions else [[]] * 8
        pl.DataFrame({name: list(col) for name, col
                      in zip(IMPRESSION_HEADER, columns)}).write_parquet(destination)
    else:
        raise InvalidField(f"unknown impression export format {format!r}")
    return destination


# -- the scenario type ----------------------------------------------------------------------


class CuratedFeedType(ScenarioType):
    name = "curated_feed"

    def actions(self) -> list:
        return [
            ActionSpec("impress", "show one ranked item to one user"),
            ActionSpec("click", "stochastic engagement with the shown item"),
            ActionSpec("rank", "order a candidate pool with the active ranker"),
        ]

    def validate_params(self, params: dict) -> dict:
        out = {
            "ranker": "similarity_to_belief",
            "weeks": 12,
            "impressions_per_week": 50,
            "catalog_size": 500,
            "candidate_pool": 20,
            "topics": 12,
            "eta": 0.05,
            "gamma_exposed": 0.1,
            "beta": 4.0,
            "bias": -2.0,
            "history_top": 10,
            "belief_scale": 0.5,
        }
        unknown = set(params) - set(out)
        if unknown:
            raise InvalidField(f"curated_feed params: unknown fields {sorted(unknown)}")
        out.update(params)
        for key in ("weeks", "impressions_per_week", "catalog_size",
                    "candidate_pool", "history_top"):
            if not isinstance(out[key], int) or out[key] < 1:
                raise InvalidField(f"curated_feed params: {key} must be a positive integer")
        if out["candidate_pool"] > out["catalog_size"]:
            raise InvalidField("curated_feed params: candidate_pool exceeds catalog_size")
        if not MIN_TOPICS <= out["topics"] <= MAX_TOPICS:
            raise InvalidField(
                f"curated_feed params: topics must be in [{MIN_TOPICS}, {MAX_TOPICS}]")
        for key in ("eta", "gamma_exposed", "belief_scale"):
            if not isinstance(out[key], (int, float)) or out[key] < 0:
                raise InvalidField(f"curated_feed params: {key} must be >= 0")
        if out["ranker"] not in _RANKERS:
            raise InvalidField(
                f"curated_feed params: unknown ranker {out['ranker']!r}; "
                f"known: {sorted(_RANKERS)}")
        return out

    def init_state(self, ctx: RunContext) -> FeedState:
        if not ctx.roster:
            raise InvalidField("curated_feed runs need at least one persona")
        topics = TopicSpace(ctx.params["topics"])
        catalog = build_catalog(ctx.world, ctx.params["catalog_size"], topics,
                                ctx.embedder, ctx.rng)
        users = ctx.roster_order()
        beliefs = np.stack([
            _normalize(ctx.rng.stream(uid, "feed.belief").standard_normal(topics.k))
            * ctx.params["belief_scale"]
            for uid in users
        ])
        return FeedState(
            ctx=ctx, topics=topics, catalog=catalog, users=users,
            beliefs=beliefs,
            exposure=np.zeros((len(users), topics.k), dtype=int),
            engagement=[{} for _ in users],
            ranker=ctx.params["ranker"],
        )

    def schedule(self, state: FeedState) -> Step:
        if state.week < state.ctx.params["weeks"]:
            return RoundBoundary(step_week(state))
        return End("weeks-exhausted")

    def metrics(self, state: FeedState) -> dict:
        return feed_metrics(state)

    def surfaces(self, state: FeedState) -> dict:
        return {
            "impressions.csv": Surface("csv", {"header": IMPRESSION_HEADER,
                                               "rows": state.impressions}),
            "metrics.json": Surface("json", feed_metrics(state)),
        }
