"""Multi-generation scenario: producers and detectors co-evolve in a numeric
arena.

Producers render a false version of each evaluation item; their heritable
numeric core shifts the item's feature vector through a fixed arena
projection. Detectors score feature vectors with suspicion in [0, 1] through
their own core. A producer's fitness is the fraction of its claims whose mean
suspicion stays under the detection threshold; a detector's fitness is
balanced accuracy penalized by calibration error.

Selection is elitist plus fitness-proportional; each offspring mutates exactly
one heritable locus (template, policy, or bio) and jitters its numeric core.
The whole arena is a pure function of the run seed, so a stored snapshot can
be re-evaluated bit-for-bit with zero gateway traffic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    EmptyPopulation,
    InvalidField,
    PopulationTooSmall,
    UnknownAgent,
)
from ..gateway import ChatRequest
from ..runtime import ActionSpec, End, RoundBoundary, RunContext, ScenarioType, Step, Surface
from .curated_feed import sigmoid

PRODUCE_LABEL = "multigen.produce"

TRACE_HEADER = ["generation", "producer_best", "producer_mean",
                "detector_best", "detector_mean"]

POLICY_RANGES = {"lambda": (0.0, 1.0), "top_k": (1, 50), "expansion_terms": (0, 10)}

LOCI = ("bio", "policy", "template")

_WORD_POOL = ("signal", "margin", "replica", "audit", "survey", "ledger",
              "sample", "pivot", "quorum", "baseline", "drift", "anchor")

_TEMPLATES = (
    "state the {item} reading plainly and move on",
    "frame the {item} reading as long settled",
    "bury the {item} reading in procedural detail",
    "hedge the {item} reading behind familiar caveats",
)


# -- genomes -----------------------------------------------------------------------


@dataclass
class Genome:
    """Heritable material: two text loci, a bounded policy, a numeric core."""

    template: str
    policy: dict
    bio: str
    numeric_core: np.ndarray

    def __post_init__(self):
        if not str(self.template).strip() or not str(self.bio).strip():
            raise InvalidField("genome template and bio must be non-empty")
        if set(self.policy) != set(POLICY_RANGES):
            raise InvalidField(
                f"genome policy must have exactly the keys {sorted(POLICY_RANGES)}")
        lo, hi = POLICY_RANGES["lambda"]
        if not lo <= float(self.policy["lambda"]) <= hi:
            raise InvalidField("genome policy: lambda outside [0, 1]")
        for key in ("top_k", "expansion_terms"):
            lo, hi = POLICY_RANGES[key]
            value = self.policy[key]
            if not isinstance(value, int) or not lo <= value <= hi:
                raise InvalidField(f"genome policy: {key} outside [{lo}, {hi}]")
        self.numeric_core = np.asarray(self.numeric_core, dtype=float)

    def to_dict(self) -> dict:
        return {
            "template": self.template,
            "policy": {"lambda": float(self.policy["lambda"]),
                       "top_k": int(self.policy["top_k"]),
                       "expansion_terms": int(self.policy["expansion_terms"])},
            "bio": self.bio,
            "numeric_core": [float(x) for x in self.numeric_core],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Genome":
        return cls(template=doc["template"], policy=dict(doc["policy"]),
                   bio=doc["bio"], numeric_core=np.array(doc["numeric_core"]))

    def copy(self) -> "Genome":
        return Genome(template=self.template, policy=dict(self.policy),
                      bio=self.bio, numeric_core=self.numeric_core.copy())


@dataclass
class Individual:
    id: str
    genome: Genome

    def to_dict(self) -> dict:
        return {"id": self.id, "genome": self.genome.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Individual":
        return cls(id=doc["id"], genome=Genome.from_dict(doc["genome"]))


# -- evaluation items and the arena ---------------------------------------------------


@dataclass
class EvalItem:
    """One claim pair: `features` belongs to the false version; the true
    version mirrors it by flipping the signed lead component, so both sides
    have equal norms."""

    id: str
    features: np.ndarray
    false_version: str
    true_version: str

    @property
    def true_features(self) -> np.ndarray:
        mirrored = self.features.copy()
        mirrored[0] = -mirrored[0]
        return mirrored

    def to_dict(self) -> dict:
        return {"id": self.id, "features": [float(x) for x in self.features],
                "false_version": self.false_version,
                "true_version": self.true_version}

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalItem":
        return cls(id=doc["id"], features=np.array(doc["features"]),
                   false_version=doc["false_version"],
                   true_version=doc["true_version"])


@dataclass
class ArenaParams:
    """Fixed numeric ground of one run: producer projection, detector weight
    basis, shared bias."""

    projection: np.ndarray   # (m, m) applied to producer cores
    weights: np.ndarray      # (m, m) applied to detector cores
    bias: float

    def to_dict(self) -> dict:
        return {"projection": [[float(x) for x in row] for row in self.projection],
                "weights": [[float(x) for x in row] for row in self.weights],
                "bias": float(self.bias)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ArenaParams":
        return cls(projection=np.array(doc["projection"]),
                   weights=np.array(doc["weights"]), bias=float(doc["bias"]))


def build_arena(rng, feature_dim: int) -> ArenaParams:
    stream = rng.stream("engine", "multigen.arena")
    return ArenaParams(
        projection=stream.standard_normal((feature_dim, feature_dim)),
        weights=stream.standard_normal((feature_dim, feature_dim)),
        bias=float(stream.standard_normal()),
    )


def build_eval_set(rng, n_items: int, feature_dim: int, delta: float) -> list:
    if feature_dim < 2:
        raise InvalidField("feature_dim must be at least 2")
    stream = rng.stream("engine", "multigen.eval")
    items = []
    for i in range(n_items):
        noise = stream.standard_normal(feature_dim)
        noise[0] = -delta
        site = i % 7
        items.append(EvalItem(
            id=f"eval-{i:03d}",
            features=noise,
            false_version=(f"finding {i:02d}: the site {site} result was "
                           "contradicted on re-measurement"),
            true_version=(f"finding {i:02d}: the site {site} result was "
                          "replicated on re-measurement"),
        ))
    return items


# -- produce / detect -----------------------------------------------------------------


@dataclass(frozen=True)
class ProducedClaim:
    claim_id: str
    producer_id: str
    item_id: str
    features: np.ndarray
    text: str


def produce(producer: Individual, item: EvalItem, arena: ArenaParams, *,
            gateway=None, mode: str = "arena", seed: int = 0) -> ProducedClaim:
    """Render the false version of an item as one producer's claim.

    The claim's features are the item's false features shifted by the arena
    projection of the producer's core (a zero core leaves them untouched).
    Arena mode renders text locally; live mode asks the gateway.
    """
    features = item.features + arena.projection @ producer.genome.numeric_core
    if mode == "live" and gateway is not None:
        request = ChatRequest(
            model=gateway.model,
            messages=(
                {"role": "system",
                 "content": f"You ghostwrite claims. Style bio: {producer.genome.bio}"},
                {"role": "user",
                 "content": (f"TEMPLATE: {producer.genome.template}\n"
                             f"ITEM: {item.false_version}")},
            ),
            max_tokens=64,
            seed=seed,
        )
        text = gateway.complete(request, label=PRODUCE_LABEL).text
    else:
        text = f"{item.false_version} [{producer.id}]"
    return ProducedClaim(claim_id=f"{producer.id}:{item.id}",
                         producer_id=producer.id, item_id=item.id,
                         features=features, text=text)


def detect(detector: Individual, features: np.ndarray, arena: ArenaParams) -> float:
    """Suspicion score in (0, 1): higher means 'more likely false'."""
    w = arena.weights @ detector.genome.numeric_core
    return sigmoid(float(w @ np.asarray(features, dtype=float)) + arena.bias)


def balanced_accuracy(false_scores, true_scores, threshold: float = 0.5) -> float:
    """Mean of the rejection rate on false content and the acceptance rate on
    true content; 0.5 for a constant detector."""
    false_scores = np.asarray(false_scores, dtype=float)
    true_scores = np.asarray(true_scores, dtype=float)
    if false_scores.size == 0 or true_scores.size == 0:
        raise InvalidField("balanced accuracy needs scores on both sides")
    return 0.5 * (float(np.mean(false_scores >= threshold))
                  + float(np.mean(true_scores < threshold)))


def expected_calibration_error(scores, labels, bins: int = 10) -> float:
    """Equal-width-bin ECE between suspicion scores and binary labels."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.shape != labels.shape:
        raise InvalidField("scores and labels must align")
    if scores.size == 0:
        return 0.0
    idx = np.minimum((scores * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        mask = idx == b
        n = int(mask.sum())
        if n:
            total += (n / scores.size) * abs(float(labels[mask].mean())
                                             - float(scores[mask].mean()))
    return float(total)


def score_histogram(scores, bins: int = 10) -> list:
    scores = np.asarray(scores, dtype=float)
    idx = np.minimum((scores * bins).astype(int), bins - 1)
    return [int((idx == b).sum()) for b in range(bins)]


@dataclass
class MatchupResult:
    generation: int
    producer_fitness: dict
    detector_fitness: dict
    landed: dict               # producer id -> claims under the threshold
    confusion: dict            # detector id -> {tp, fn, tn, fp}
    histograms: dict           # detector id -> 10-bin suspicion histogram
    claims_per_producer: int

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "producer_fitness": self.producer_fitness,
            "detector_fitness": self.detector_fitness,
            "landed": self.landed,
            "confusion": self.confusion,
            "histograms": self.histograms,
            "claims_per_producer": self.claims_per_producer,
        }


def run_matchup(producers, detectors, eval_set, arena: ArenaParams, *,
                calibration_weight: float = 0.5, threshold: float = 0.5,
                generation: int = 0, gateway=None, mode: str = "arena",
                seed: int = 0) -> MatchupResult:
    """Score every producer claim against every detector, once."""
    if not producers or not detectors:
        raise EmptyPopulation("a matchup needs at least one producer and one detector")
    if not eval_set:
        raise InvalidField("a matchup needs a non-empty evaluation set")
    claims = [produce(p, item, arena, gateway=gateway, mode=mode, seed=seed)
              for p in producers for item in eval_set]
    false_matrix = np.stack([c.features for c in claims])
    true_matrix = np.stack([item.true_features for item in eval_set])
    n_items = len(eval_set)

    suspicion = np.empty((len(detectors), len(claims)))
    detector_fitness: dict = {}
    confusion: dict = {}
    histograms: dict = {}
    for d_idx, det in enumerate(detectors):
        w = arena.weights @ det.genome.numeric_core
        s_false = 1.0 / (1.0 + np.exp(-(false_matrix @ w + arena.bias)))
        s_true = 1.0 / (1.0 + np.exp(-(true_matrix @ w + arena.bias)))
        suspicion[d_idx] = s_false
        ba = balanced_accuracy(s_false, s_true, threshold)
        scores = np.concatenate([s_false, s_true])
        labels = np.concatenate([np.ones(s_false.size), np.zeros(s_true.size)])
        ece = expected_calibration_error(scores, labels)
        detector_fitness[det.id] = float(ba - calibration_weight * ece)
        confusion[det.id] = {
            "tp": int(np.sum(s_false >= threshold)),
            "fn": int(np.sum(s_false < threshold)),
            "tn": int(np.sum(s_true < threshold)),
            "fp": int(np.sum(s_true >= threshold)),
        }
        histograms[det.id] = score_histogram(scores)

    mean_suspicion = suspicion.mean(axis=0)
    producer_fitness: dict = {}
    landed: dict = {}
    for p_idx, prod in enumerate(producers):
        block = mean_suspicion[p_idx * n_items:(p_idx + 1) * n_items]
        hits = int(np.sum(block < threshold))
        landed[prod.id] = hits
        producer_fitness[prod.id] = float(hits / n_items)
    return MatchupResult(generation=generation, producer_fitness=producer_fitness,
                         detector_fitness=detector_fitness, landed=landed,
                         confusion=confusion, histograms=histograms,
                         claims_per_producer=n_items)


# -- mutation and selection -------------------------------------------------------------


def mutate_genome(genome: Genome, locus: str, stream,
                  sigma_core: float = 0.1) -> Genome:
    """One locus edit plus a core jitter; the input genome is left intact."""
    template, policy, bio = genome.template, dict(genome.policy), genome.bio
    if locus in ("template", "bio"):
        tokens = (template if locus == "template" else bio).split()
        op = ("replace", "insert", "delete")[int(stream.integers(0, 3))]
        if op == "delete" and len(tokens) <= 1:
            op = "replace"
        pos = int(stream.integers(0, len(tokens)))
        word = _WORD_POOL[int(stream.integers(0, len(_WORD_POOL)))]
        if op == "replace":
            tokens[pos] = word
        elif op == "insert":
            tokens.insert(pos, word)
        else:
            del tokens[pos]
        edited = " ".join(tokens)
        if locus == "template":
            template = edited
        else:
            bio = edited
    elif locus == "policy":
        key = ("lambda", "top_k", "expansion_terms")[int(stream.integers(0, 3))]
        lo, hi = POLICY_RANGES[key]
        if key == "lambda":
            policy[key] = float(np.clip(policy[key] + stream.normal(0.0, 0.1), lo, hi))
        elif key == "top_k":
            policy[key] = int(np.clip(policy[key] + round(stream.normal(0.0, 2.0)), lo, hi))
        else:
            policy[key] = int(np.clip(policy[key] + round(stream.normal(0.0, 1.0)), lo, hi))
    else:
        raise InvalidField(f"unknown mutation locus {locus!r}")
    core = genome.numeric_core + stream.normal(0.0, sigma_core,
                                               genome.numeric_core.shape)
    return Genome(template=template, policy=policy, bio=bio, numeric_core=core)


def next_generation(population, fitness: dict, stream, *, elite: int = 1,
                    locus_rates: dict | None = None, sigma_core: float = 0.1,
                    id_prefix: str = "agent", generation: int = 1) -> tuple:
    """Evolve one population. Returns (children, lineage entries).

    Elites (best fitness, ties by id) carry their genome over unmutated.
    Offspring pick parents fitness-proportionally (negative fitness clamps to
    zero weight; all-zero weights fall back to uniform) and mutate exactly
    one locus.
    """
    if not population:
        raise EmptyPopulation("cannot evolve an empty population")
    if elite > len(population):
        raise PopulationTooSmall(
            f"elite count {elite} exceeds population size {len(population)}")
    rates = dict(locus_rates or {"template": 0.3, "policy": 0.5, "bio": 0.2})
    if set(rates) != set(LOCI) or any(r < 0 for r in rates.values()) \
            or sum(rates.values()) <= 0:
        raise InvalidField(f"locus rates must cover exactly {sorted(LOCI)}")
    probs_locus = np.array([rates[locus] for locus in LOCI], dtype=float)
    probs_locus = probs_locus / probs_locus.sum()

    ranked = sorted(population, key=lambda ind: (-fitness[ind.id], ind.id))
    children, lineage = [], {}
    for slot, ind in enumerate(ranked[:elite]):
        child_id = f"{id_prefix}-g{generation:03d}-i{slot:02d}"
        children.append(Individual(child_id, ind.genome.copy()))
        lineage[child_id] = {"parent": ind.id, "generation": generation,
                             "mutated_locus": "none"}
    weights = np.array([max(float(fitness[ind.id]), 0.0) for ind in population])
    if weights.sum() <= 0:
        probs = np.full(len(population), 1.0 / len(population))
    else:
        probs = weights / weights.sum()
    for slot in range(elite, len(population)):
        parent = population[int(stream.choice(len(population), p=probs))]
        locus = LOCI[int(stream.choice(len(LOCI), p=probs_locus))]
        child_id = f"{id_prefix}-g{generation:03d}-i{slot:02d}"
        children.append(Individual(
            child_id, mutate_genome(parent.genome, locus, stream, sigma_core)))
        lineage[child_id] = {"parent": parent.id, "generation": generation,
                             "mutated_locus": locus}
    return children, lineage


def trace_lineage(snapshot: dict, agent_id: str) -> list:
    """Walk an agent's ancestry back to generation zero, newest first."""
    lineage = snapshot.get("lineage", snapshot)
    if agent_id not in lineage:
        raise UnknownAgent(f"agent {agent_id!r} has no lineage entry")
    chain, current = [], agent_id
    while current is not None:
        entry = lineage[current]
        chain.append({"agent": current, "parent": entry["parent"],
                      "generation": entry["generation"],
                      "mutated_locus": entry["mutated_locus"]})
        current = entry["parent"]
        if current is not None and current not in lineage:
            raise UnknownAgent(f"lineage is broken at {current!r}")
    return chain


# -- snapshot replay ----------------------------------------------------------------------


def replay_snapshot(snapshot: dict) -> dict:
    """Re-evaluate every stored generation from the snapshot alone.

    Uses only the persisted arena, eval set, and cohorts — no gateway, no
    engine state — and returns fitness and trace rows that must match the
    stored ones bit-for-bit.
    """
    arena = ArenaParams.from_dict(snapshot["arena"])
    eval_set = [EvalItem.from_dict(d) for d in snapshot["eval_set"]]
    params = snapshot["params"]
    fitness_rows, trace_rows = [], []
    for cohort in snapshot["cohorts"]:
        producers = [Individual.from_dict(d) for d in cohort["producers"]]
        detectors = [Individual.from_dict(d) for d in cohort["detectors"]]
        result = run_matchup(
            producers, detectors, eval_set, arena,
            calibration_weight=params["calibration_weight"],
            threshold=params["threshold"], generation=cohort["generation"],
        )
        fitness_rows.append({"generation": cohort["generation"],
                             "producer": result.producer_fitness,
                             "detector": result.detector_fitness})
        trace_rows.append(_trace_row(cohort["generation"], result))
    return {"fitness": fitness_rows, "traces": trace_rows}


def _trace_row(generation: int, result: MatchupResult) -> list:
    p_values = list(result.producer_fitness.values())
    d_values = list(result.detector_fitness.values())
    return [generation, max(p_values), float(np.mean(p_values)),
            max(d_values), float(np.mean(d_values))]


# -- the scenario type ----------------------------------------------------------------------


@dataclass
class MultigenState:
    ctx: RunContext
    arena: ArenaParams
    eval_set: list
    producers: list
    detectors: list
    lineage: dict
    generation: int = 0
    cohorts: list = field(default_factory=list)
    fitness_history: list = field(default_factory=list)
    matchups: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def _scripted_produce(seed: int, request: ChatRequest, digest: str) -> str:
    return f"rendered claim {digest[:8]}"


def _initial_population(rng, count: int, feature_dim: int, prefix: str) -> tuple:
    stream = rng.stream("engine", f"multigen.init.{prefix}")
    individuals, lineage = [], {}
    for j in range(count):
        template = _TEMPLATES[int(stream.integers(0, len(_TEMPLATES)))]
        policy = {
            "lambda": round(float(stream.uniform(0.0, 1.0)), 3),
            "top_k": int(stream.integers(1, 51)),
            "expansion_terms": int(stream.integers(0, 11)),
        }
        word_a = _WORD_POOL[int(stream.integers(0, len(_WORD_POOL)))]
        word_b = _WORD_POOL[int(stream.integers(0, len(_WORD_POOL)))]
        genome = Genome(template=template, policy=policy,
                        bio=f"agent tuned for {word_a} and {word_b}",
                        numeric_core=stream.normal(0.0, 0.5, feature_dim))
        ind_id = f"{prefix}-g000-i{j:02d}"
        individuals.append(Individual(ind_id, genome))
        lineage[ind_id] = {"parent": None, "generation": 0, "mutated_locus": "none"}
    return individuals, lineage


class MultigenType(ScenarioType):
    name = "multigen"

    def actions(self) -> list:
        return [
            ActionSpec("produce", "render one false claim from an eval item"),
            ActionSpec("detect", "score a claim's features with suspicion"),
            ActionSpec("evolve", "select and mutate the next cohort"),
        ]

    def validate_params(self, params: dict) -> dict:
        out = {
            "generations": 50,
            "producers": 20,
            "detectors": 20,
            "eval_items": 24,
            "elite": 1,
            "locus_rates": {"template": 0.3, "policy": 0.5, "bio": 0.2},
            "sigma_core": 0.1,
            "calibration_weight": 0.5,
            "threshold": 0.5,
            "feature_dim": 8,
            "offset_delta": 1.0,
            "mode": "arena",
        }
        unknown = set(params) - set(out)
        if unknown:
            raise InvalidField(f"multigen params: unknown fields {sorted(unknown)}")
        out.update(params)
        out["locus_rates"] = dict(out["locus_rates"])
        for key in ("generations", "producers", "detectors", "eval_items"):
            if not isinstance(out[key], int) or out[key] < 1:
                raise InvalidField(f"multigen params: {key} must be a positive integer")
        if not isinstance(out["elite"], int) or out["elite"] < 0 \
                or out["elite"] > min(out["producers"], out["detectors"]):
            raise InvalidField("multigen params: elite must fit both populations")
        if not isinstance(out["feature_dim"], int) or out["feature_dim"] < 2:
            raise InvalidField("multigen params: feature_dim must be >= 2")
        if not 0 < float(out["threshold"]) < 1:
            raise InvalidField("multigen params: threshold must be inside (0, 1)")
        if float(out["offset_delta"]) <= 0:
            raise InvalidField("multigen params: offset_delta must be > 0")
        if float(out["sigma_core"]) < 0 or float(out["calibration_weight"]) < 0:
            raise InvalidField("multigen params: sigma_core and calibration_weight "
                               "must be >= 0")
        if set(out["locus_rates"]) != set(LOCI):
            raise InvalidField(f"multigen params: locus_rates needs exactly {sorted(LOCI)}")
        if out["mode"] not in ("arena", "live"):
            raise InvalidField("multigen params: mode must be 'arena' or 'live'")
        return out

    def init_state(self, ctx: RunContext) -> MultigenState:
        ctx.gateway.ensure_behavior(PRODUCE_LABEL, _scripted_produce)
        params = ctx.params
        producers, lineage_p = _initial_population(
            ctx.rng, params["producers"], params["feature_dim"], "prod")
        detectors, lineage_d = _initial_population(
            ctx.rng, params["detectors"], params["feature_dim"], "det")
        return MultigenState(
            ctx=ctx,
            arena=build_arena(ctx.rng, params["feature_dim"]),
            eval_set=build_eval_set(ctx.rng, params["eval_items"],
                                    params["feature_dim"], params["offset_delta"]),
            producers=producers,
            detectors=detectors,
            lineage={**lineage_p, **lineage_d},
        )

    def schedule(self, state: MultigenState) -> Step:
        ctx = state.ctx
        params = ctx.params
        g = state.generation
        if g >= params["generations"]:
            return End("generations-exhausted")
        state.cohorts.append({
            "generation": g,
            "producers": [p.to_dict() for p in state.producers],
            "detectors": [d.to_dict() for d in state.detectors],
        })
        result = run_matchup(
            state.producers, state.detectors, state.eval_set, state.arena,
            calibration_weight=params["calibration_weight"],
            threshold=params["threshold"], generation=g,
            gateway=ctx.gateway if params["mode"] == "live" else None,
            mode=params["mode"], seed=ctx.seed,
        )
        state.fitness_history.append({"generation": g,
                                      "producer": result.producer_fitness,
                                      "detector": result.detector_fitness})
        state.matchups.append(result.to_dict())
        state.traces.append(_trace_row(g, result))
        if g + 1 < params["generations"]:
            state.producers, new_p = next_generation(
                state.producers, result.producer_fitness,
                ctx.rng.stream("engine", f"multigen.evolve.p{g}"),
                elite=params["elite"], locus_rates=params["locus_rates"],
                sigma_core=params["sigma_core"], id_prefix="prod",
                generation=g + 1)
            state.detectors, new_d = next_generation(
                state.detectors, result.detector_fitness,
                ctx.rng.stream("engine", f"multigen.evolve.d{g}"),
                elite=params["elite"], locus_rates=params["locus_rates"],
                sigma_core=params["sigma_core"], id_prefix="det",
                generation=g + 1)
            state.lineage.update(new_p)
            state.lineage.update(new_d)
        state.generation += 1
        return RoundBoundary(f"generation-{g:03d}")

    def metrics(self, state: MultigenState) -> dict:
        last = state.traces[-1] if state.traces else [0, 0.0, 0.0, 0.0, 0.0]
        return {
            "generations": state.generation,
            "producers": len(state.producers),
            "detectors": len(state.detectors),
            "eval_items": len(state.eval_set),
            "final_producer_best": last[1],
            "final_producer_mean": last[2],
            "final_detector_best": last[3],
            "final_detector_mean": last[4],
        }

    def surfaces(self, state: MultigenState) -> dict:
        snapshot = {
            "seed": state.ctx.seed,
            "params": dict(state.ctx.params),
            "arena": state.arena.to_dict(),
            "eval_set": [item.to_dict() for item in state.eval_set],
            "cohorts": state.cohorts,
            "fitness": state.fitness_history,
            "matchups": state.matchups,
            "lineage": state.lineage,
            "traces": state.traces,
        }
        return {
            "snapshot.json": Surface("json", snapshot),
            "traces.csv": Surface("csv", {"header": TRACE_HEADER,
                                          "rows": state.traces}),
        }
