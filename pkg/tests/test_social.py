"""Social scenario: feeds, action ops, delays, milestones, reconciliation."""

import json

import numpy as np
import pytest

from agorasim.errors import InvalidField, MissingParent, RunError, UnknownAgent
from agorasim.gateway import Gateway
from agorasim.persona import ActivityProfile, BudgetLedger, create_persona
from agorasim.retrieval import HashEmbedder, HybridConfig
from agorasim.runtime import End, RandomSource, RecordBuilder, RunContext
from agorasim.scenarios.social import (
    FLAVORS,
    SocialType,
    build_feed,
    cascades,
    comment,
    dislike,
    follow,
    like,
    post,
    repost,
    search,
    social_metrics,
)
from agorasim.world_model import ChunkingConfig, StubSearchBackend, ingest
from agorasim.claim_graph import GatewayExtractor

from conftest import DOC_ALPHA, DOC_BETA, base_doc, persona

ALWAYS_ON = {"activity_profile": {
    "posts_per_hour": 0.0, "comments_per_hour": 0.0,
    "active_hours": list(range(24)), "response_delay_minutes": 0}}


def profile(**kw):
    spec = {"posts_per_hour": 0.0, "comments_per_hour": 0.0,
            "active_hours": list(range(24)), "response_delay_minutes": 0}
    spec.update(kw)
    return spec


def make_ctx(personas, params=None, *, seed=5):
    """A real RunContext without going through run(): direct unit access."""
    world = ingest([("alpha.txt", DOC_ALPHA), ("beta.txt", DOC_BETA)],
                   ChunkingConfig(window_words=64, overlap_words=8),
                   instance_id="wm-test")
    gateway = Gateway.scripted(seed)
    roster = {p["id"]: create_persona(p) for p in personas}
    return RunContext(
        seed=seed,
        rng=RandomSource(seed),
        gateway=gateway,
        world=world,
        roster=roster,
        ledgers={pid: BudgetLedger(persona_id=pid) for pid in roster},
        params=SocialType().validate_params(params or {}),
        record=RecordBuilder(),
        extractor=GatewayExtractor(gateway),
        embedder=HashEmbedder(dim=32),
        hybrid_cfg=HybridConfig(lambda_=0.5, top_k=5, embedding_dim=32),
        search_backend=StubSearchBackend(),
        min_justification_words=5,
    )


def make_state(personas, params=None, *, seed=5):
    ctx = make_ctx(personas, params, seed=seed)
    return SocialType().init_state(ctx)


def drive(state):
    """Run schedule() to completion, like the runtime loop does."""
    impl = SocialType()
    while True:
        state.ctx.begin_step()
        if isinstance(impl.schedule(state), End):
            return state


def actor(pid, *, influence=0.0, tokens=100_000, **profile_kw):
    return persona(pid, tokens=tokens, influence_weight=influence,
                   activity_profile=profile(**profile_kw))


class TestFlavorProfiles:
    @pytest.mark.parametrize("flavor", sorted(FLAVORS))
    def test_generated_profiles_stay_in_range(self, flavor):
        for seed in range(20):
            prof, influence = FLAVORS[flavor](np.random.default_rng(seed))
            assert prof.posts_per_hour >= 0
            assert prof.comments_per_hour >= 0
            assert prof.active_hours <= frozenset(range(24))
            assert prof.response_delay_minutes >= 0
            assert influence >= 0

    def test_same_stream_state_same_profile(self):
        a = FLAVORS["twitter"](np.random.default_rng(3))
        b = FLAVORS["twitter"](np.random.default_rng(3))
        assert a == b

    def test_reddit_skews_toward_replies(self):
        for seed in range(20):
            prof, _ = FLAVORS["reddit"](np.random.default_rng(seed))
            assert prof.comments_per_hour > prof.posts_per_hour


class TestFeedRanking:
    def test_influence_orders_the_feed(self):
        state = make_state([actor("alpha", influence=5.0),
                            actor("beta", influence=0.0),
                            actor("gamma")])
        post(state, "alpha", text="from alpha")
        post(state, "beta", text="from beta")
        feed = build_feed(state, "gamma")
        assert [p.author for p, _ in feed] == ["alpha", "beta"]

    def test_following_outranks_influence(self):
        state = make_state([actor("alpha", influence=5.0),
                            actor("beta", influence=0.0),
                            actor("gamma")],
                           {"follow_weight": 10.0})
        state.follows.add(("gamma", "beta"))
        post(state, "alpha", text="from alpha")
        post(state, "beta", text="from beta")
        feed = build_feed(state, "gamma")
        assert feed[0][0].author == "beta"

    def test_recency_breaks_equal_influence(self):
        state = make_state([actor("alpha"), actor("gamma")])
        post(state, "alpha", text="old")
        state.round = 5
        post(state, "alpha", text="new")
        feed = build_feed(state, "gamma")
        assert [p.text for p, _ in feed] == ["new", "old"]

    def test_exact_ties_break_by_post_id(self):
        state = make_state([actor("alpha"), actor("gamma")])
        post(state, "alpha", text="first")
        post(state, "alpha", text="second")
        feed = build_feed(state, "gamma")
        assert [p.id for p, _ in feed] == ["p0000", "p0001"]

    def test_feed_size_truncates(self):
        state = make_state([actor("alpha"), actor("gamma")],
                           {"feed_size": 2})
        for i in range(5):
            post(state, "alpha", text=f"take {i}")
        assert len(build_feed(state, "gamma")) == 2

    def test_empty_world_has_empty_feed(self):
        state = make_state([actor("gamma")])
        assert build_feed(state, "gamma") == []


class TestActionOps:
    def test_like_increments_target(self):
        state = make_state([actor("alpha"), actor("gamma")])
        rec = post(state, "alpha", text="hello")
        like(state, "gamma", rec["post"])
        assert state.posts[rec["post"]].likes == 1
        dislike(state, "gamma", rec["post"])
        assert state.posts[rec["post"]].dislikes == 1

    def test_like_without_any_posts_fails(self):
        state = make_state([actor("gamma")])
        with pytest.raises(MissingParent):
            like(state, "gamma")

    def test_comment_against_missing_parent_fails(self):
        state = make_state([actor("gamma")])
        with pytest.raises(MissingParent):
            comment(state, "gamma", "p9999")

    def test_comment_composes_and_debits(self):
        state = make_state([actor("alpha"), actor("beta")])
        rec = post(state, "alpha", text="seed post")
        out = comment(state, "beta", rec["post"])
        child = state.posts[out["post"]]
        assert child.kind == "comment" and child.parent == rec["post"]
        assert child.text
        assert state.ctx.ledgers["beta"].tokens_spent > 0

    def test_repost_is_free_and_silent(self):
        state = make_state([actor("alpha"), actor("beta")])
        rec = post(state, "alpha", text="seed post")
        calls_before = state.ctx.gateway.call_count
        out = repost(state, "beta", rec["post"])
        child = state.posts[out["post"]]
        assert child.kind == "repost" and child.text == ""
        assert state.ctx.gateway.call_count == calls_before
        assert state.ctx.ledgers["beta"].tokens_spent == 0

    def test_follow_derives_first_unfollowed_feed_author(self):
        state = make_state([actor("alpha", influence=2.0),
                            actor("beta", influence=1.0),
                            actor("gamma")])
        post(state, "alpha", text="a")
        post(state, "beta", text="b")
        rec = follow(state, "gamma")
        assert rec["target"] == "alpha"
        assert ("gamma", "alpha") in state.follows
        # next derivation skips the already-followed author
        rec2 = follow(state, "gamma")
        assert rec2["target"] == "beta"
        with pytest.raises(MissingParent):
            follow(state, "gamma")

    def test_own_posts_never_suggest_self_follow(self):
        state = make_state([actor("gamma")])
        post(state, "gamma", text="mine")
        with pytest.raises(MissingParent):
            follow(state, "gamma")

    def test_explicit_self_follow_rejected(self):
        state = make_state([actor("gamma")])
        with pytest.raises(InvalidField):
            follow(state, "gamma", "gamma")

    def test_unknown_agent_without_text_rejected(self):
        state = make_state([actor("gamma")])
        with pytest.raises(UnknownAgent):
            post(state, "newswire")
        # fixed text (the milestone path) is allowed for outside voices
        rec = post(state, "newswire", text="breaking item")
        assert state.posts[rec["post"]].author == "newswire"

    def test_injected_markup_lands_in_the_claim_graph(self):
        state = make_state([actor("gamma")])
        post(state, "newswire", text="wire update [[w1|challenging]]")
        claim = state.graph.claims["w1"]
        assert claim.stance == "challenging"
        assert claim.author == "newswire"

    def test_search_op_debits_and_records(self):
        state = make_state([actor("alpha")])
        rec = search(state, "alpha", "mooring wear rates",
                     "needed to verify the mooring wear rates cited")
        assert rec["results"] == 3
        assert state.ctx.ledgers["alpha"].searches_spent == 1
        assert state.ctx.record.searches[0]["query"] == "mooring wear rates"


class TestCascades:
    def test_size_counts_the_whole_tree_and_reach_counts_actors(self):
        state = make_state([actor(pid) for pid in
                            ["alpha", "beta", "gamma", "delta"]])
        root = post(state, "alpha", text="root take")["post"]
        reply = comment(state, "beta", root)["post"]
        repost(state, "gamma", reply)
        like(state, "delta", root)
        state.executed.append({"round": 0, "agent": "delta", "kind": "like",
                               "post": None, "target": root, "due": 0})
        (cascade,) = cascades(state)
        assert cascade["root"] == root
        assert cascade["size"] == 3      # root + comment + repost
        assert cascade["reach"] == 3     # beta, gamma, delta

    def test_independent_roots_stay_separate(self):
        state = make_state([actor("alpha"), actor("beta")])
        post(state, "alpha", text="one")
        post(state, "beta", text="two")
        out = cascades(state)
        assert [c["size"] for c in out] == [1, 1]
        assert [c["reach"] for c in out] == [0, 0]


class TestParamValidation:
    def test_unknown_field_rejected(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"velocity": 3})

    def test_unknown_flavor_rejected(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"flavor": "usenet"})

    def test_reaction_mix_must_be_known_kinds_with_mass(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"reaction_mix": {"wave": 1.0}})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"reaction_mix": {"like": 0.0}})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"reaction_mix": {}})

    def test_milestone_validation(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"milestones": [{"kind": "rate",
                                                          "round": 0}]})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"milestones": [
                {"kind": "inject", "round": 0, "author": "x"}]})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"milestones": [
                {"kind": "surge", "round": 0}]})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"milestones": [
                {"kind": "rate", "round": 0, "factor": 2.0, "scope": "follows"}]})

    def test_seed_follow_pairs_validated(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"seed_follows": [["a", "a"]]})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"seed_follows": [["a"]]})

    def test_probability_and_hour_bounds(self):
        with pytest.raises(InvalidField):
            SocialType().validate_params({"follow_probability": 1.5})
        with pytest.raises(InvalidField):
            SocialType().validate_params({"start_hour": 24})

    def test_validation_does_not_mutate_the_caller(self):
        params = {"milestones": [{"kind": "rate", "round": 0, "factor": 2.0}]}
        SocialType().validate_params(params)
        assert params["milestones"][0] == {"kind": "rate", "round": 0,
                                           "factor": 2.0}


class TestRoundMachinery:
    def test_inactive_hours_enqueue_nothing(self):
        state = make_state(
            [actor("alpha", posts_per_hour=30.0, active_hours=[3])],
            {"horizon_rounds": 2, "start_hour": 10})
        drive(state)
        assert state.enqueued_total == 0
        assert state.posts == {}

    def test_hour_arithmetic_with_half_hour_rounds(self):
        # 30-minute rounds starting 09:00: rounds 0-1 fall in hour 9,
        # rounds 2-3 in hour 10, so an agent active only at 9 stops posting.
        state = make_state(
            [actor("alpha", posts_per_hour=30.0, active_hours=[9])],
            {"horizon_rounds": 4, "round_minutes": 30, "start_hour": 9})
        drive(state)
        assert state.posts
        assert all(p.round_created <= 1 for p in state.posts.values())

    def test_reactions_honor_the_response_delay(self):
        # 90-minute delay over 60-minute rounds: reactions run 2 rounds after
        # they are enqueued, never earlier.
        state = make_state(
            [actor("wire"),
             actor("alpha", comments_per_hour=4.0,
                   response_delay_minutes=90)],
            {"horizon_rounds": 8, "reaction_mix": {"like": 1.0},
             "milestones": [{"kind": "inject", "round": 0, "author": "wire",
                             "text": "seed item"}]})
        drive(state)
        likes = [r for r in state.executed if r["kind"] == "like"]
        assert likes, "expected at least one delayed reaction"
        for rec in likes:
            assert rec["round"] >= rec["due"]
            assert rec["round"] == rec["due"]  # nothing blocks execution
            assert rec["due"] - 2 >= 0

    def test_everything_enqueued_is_accounted_for(self):
        state = make_state(
            [actor("alpha", posts_per_hour=1.0, comments_per_hour=2.0,
                   response_delay_minutes=180),
             actor("beta", posts_per_hour=0.5, comments_per_hour=1.0)],
            {"horizon_rounds": 6, "reaction_mix": {"like": 0.6, "comment": 0.4}})
        drive(state)
        metrics = social_metrics(state)
        rec = metrics["reconciliation"]
        assert rec["enqueued"] == rec["executed"] + rec["dropped"]
        assert rec["pending_at_end"] == 0
        assert rec["enqueued"] == state.enqueued_total

    def test_past_horizon_actions_drop_as_horizon_reached(self):
        # Delay far beyond the horizon: every reaction must drop.
        state = make_state(
            [actor("wire"),
             actor("alpha", comments_per_hour=3.0,
                   response_delay_minutes=60 * 100)],
            {"horizon_rounds": 3, "reaction_mix": {"like": 1.0},
             "milestones": [{"kind": "inject", "round": 0, "author": "wire",
                             "text": "seed item"}]})
        drive(state)
        reasons = {d["reason"] for d in state.dropped}
        assert reasons == {"horizon_reached"}
        assert not any(r["kind"] == "like" for r in state.executed)

    def test_exhausted_authors_drop_with_reason(self):
        state = make_state(
            [actor("alpha", tokens=0, posts_per_hour=5.0)],
            {"horizon_rounds": 2})
        drive(state)
        assert state.posts == {}
        assert state.dropped
        assert {d["reason"] for d in state.dropped} == {"token_budget_exhausted"}

    def test_reactions_without_targets_drop_as_no_target(self):
        state = make_state(
            [actor("alpha", comments_per_hour=5.0, response_delay_minutes=0)],
            {"horizon_rounds": 2, "reaction_mix": {"comment": 1.0}})
        drive(state)
        # alpha never posts, so every comment finds an empty feed
        assert state.posts == {}
        assert state.dropped
        assert {d["reason"] for d in state.dropped} <= {"no_target",
                                                        "horizon_reached"}
        assert "no_target" in {d["reason"] for d in state.dropped}

    def test_inject_milestone_posts_fixed_text(self):
        state = make_state(
            [actor("alpha")],
            {"horizon_rounds": 3,
             "milestones": [{"kind": "inject", "round": 1, "author": "newswire",
                             "text": "wire update [[w1|challenging]]"}]})
        drive(state)
        (wire_post,) = [p for p in state.posts.values()
                        if p.author == "newswire"]
        assert wire_post.round_created == 1
        assert state.graph.claims["w1"].stance == "challenging"
        assert state.milestone_log and state.milestone_log[0]["round"] == 1

    def test_rate_milestone_roughly_doubles_post_volume(self):
        def run_one(factor_milestones):
            state = make_state(
                [actor("alpha", posts_per_hour=2.0)],
                {"horizon_rounds": 250, "milestones": factor_milestones},
                seed=31)
            drive(state)
            return sum(1 for p in state.posts.values() if p.kind == "original")

        base = run_one([])
        doubled = run_one([{"kind": "rate", "round": 0, "factor": 2.0,
                            "scope": "posts"}])
        assert base > 300  # sanity: enough mass for a stable ratio
        assert 1.7 <= doubled / base <= 2.3

    def test_rate_scope_all_touches_both_processes(self):
        state = make_state(
            [actor("alpha", posts_per_hour=1.0, comments_per_hour=1.0)],
            {"horizon_rounds": 1,
             "milestones": [{"kind": "rate", "round": 0, "factor": 3.0,
                             "scope": "all"}]})
        drive(state)
        assert state.rate_factors == {"posts": 3.0, "reactions": 3.0}

    def test_follow_probability_one_links_reactors_to_authors(self):
        state = make_state(
            [actor("wire"),
             actor("alpha", comments_per_hour=6.0)],
            {"horizon_rounds": 6, "reaction_mix": {"like": 1.0},
             "follow_probability": 1.0,
             "milestones": [{"kind": "inject", "round": 0, "author": "wire",
                             "text": "seed item"}]})
        drive(state)
        executed_likes = [r for r in state.executed if r["kind"] == "like"]
        assert executed_likes
        assert ("alpha", "wire") in state.follows

    def test_follow_probability_zero_never_links(self):
        state = make_state(
            [actor("wire"), actor("alpha", comments_per_hour=6.0)],
            {"horizon_rounds": 6, "reaction_mix": {"like": 1.0},
             "follow_probability": 0.0,
             "milestones": [{"kind": "inject", "round": 0, "author": "wire",
                             "text": "seed item"}]})
        drive(state)
        assert state.follows == set()

    def test_unknown_seed_follow_follower_rejected(self):
        ctx = make_ctx([actor("alpha")],
                       {"seed_follows": [["stranger", "alpha"]]})
        with pytest.raises(InvalidField):
            SocialType().init_state(ctx)


class TestRunExports:
    def test_run_writes_the_four_surfaces(self, run_doc):
        doc = base_doc("social", params={
            "horizon_rounds": 4, "start_hour": 0,
            "seed_follows": [["ada", "bix"]],
        }, personas=[
            persona("ada", **ALWAYS_ON), persona("bix", **ALWAYS_ON)])
        result = run_doc(doc)
        exports = result.run_dir / "exports"
        assert sorted(p.name for p in exports.iterdir()) == [
            "follows.json", "graph.json", "metrics.json", "posts.jsonl"]
        metrics = json.loads((exports / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["rounds"] == 4
        rec = metrics["reconciliation"]
        assert rec["enqueued"] == rec["executed"] + rec["dropped"]
        follows = json.loads((exports / "follows.json").read_text(encoding="utf-8"))
        assert ["ada", "bix"] in follows

    def test_round_boundaries_match_horizon(self, run_doc):
        doc = base_doc("social", params={"horizon_rounds": 5},
                       personas=[persona("ada", **ALWAYS_ON)])
        result = run_doc(doc)
        assert result.record["steps"]["round_boundaries"] == 5
