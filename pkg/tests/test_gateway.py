"""Gateway modes, call logging, replay semantics, and content hashing."""

import json

import pytest

from agorasim.errors import EndpointError, InvalidField, MalformedLog, ReplayDivergence
from agorasim.gateway import (
    EMPTY_CONTENT_HASH,
    CallLogEntry,
    ChatRequest,
    ChatResponse,
    Gateway,
    content_hash,
    estimate_tokens,
    load_log,
    save_log,
)
from agorasim.hashing import sha256_hex


def request(text="one two three", *, system=None, seed=4, max_tokens=32):
    messages = []
    if system is not None:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": text})
    return ChatRequest(model="m", messages=tuple(messages), temperature=0.0,
                       max_tokens=max_tokens, seed=seed)


class TestTokenEstimate:
    def test_ten_words_cost_thirteen(self):
        assert estimate_tokens("w1 w2 w3 w4 w5 w6 w7 w8 w9 w10") == 13

    def test_empty_text_is_free(self):
        assert estimate_tokens("") == 0

    def test_single_word_rounds_up(self):
        assert estimate_tokens("hello") == 2


class TestChatRequest:
    def test_digest_is_stable_across_instances(self):
        assert request().digest() == request().digest()

    def test_digest_changes_with_any_field(self):
        base = request()
        assert request(text="other words").digest() != base.digest()
        assert request(seed=5).digest() != base.digest()
        assert request(max_tokens=64).digest() != base.digest()

    def test_unknown_role_rejected(self):
        with pytest.raises(InvalidField):
            ChatRequest(model="m", messages=({"role": "narrator", "content": "x"},))

    def test_prompt_estimate_sums_all_messages(self):
        req = request("one two three", system="sys word")
        # 2 words + 3 words -> ceil(2.6) + ceil(3.9)
        assert req.prompt_token_estimate() == estimate_tokens("sys word") + estimate_tokens("one two three")


class TestScriptedMode:
    def test_same_seed_same_output_across_fresh_gateways(self):
        a = Gateway.scripted(9).complete(request(), label="x")
        b = Gateway.scripted(9).complete(request(), label="x")
        assert a == b

    def test_behaviors_receive_the_gateway_seed(self):
        def echo_seed(seed, req, digest):
            return f"seeded {seed}"

        a = Gateway.scripted(9)
        a.register_behavior("x", echo_seed)
        b = Gateway.scripted(10)
        b.register_behavior("x", echo_seed)
        assert a.complete(request(), label="x").text == "seeded 9"
        assert b.complete(request(), label="x").text == "seeded 10"

    def test_completion_tokens_follow_word_estimate(self):
        resp = Gateway.scripted(9).complete(request())
        assert resp.completion_tokens == estimate_tokens(resp.text)
        assert resp.total_tokens == resp.prompt_tokens + resp.completion_tokens

    def test_register_behavior_overrides_label(self):
        gw = Gateway.scripted(1)
        gw.register_behavior("x", lambda seed, req, digest: "fixed words here")
        resp = gw.complete(request(), label="x")
        assert resp.text == "fixed words here"
        assert resp.completion_tokens == estimate_tokens("fixed words here")

    def test_register_behavior_no_overwrite_keeps_existing(self):
        gw = Gateway.scripted(1)
        gw.register_behavior("x", lambda s, r, d: "first")
        gw.register_behavior("x", lambda s, r, d: "second", overwrite=False)
        assert gw.complete(request(), label="x").text == "first"

    def test_ensure_behavior_only_fills_gaps(self):
        gw = Gateway.scripted(1)
        gw.ensure_behavior("x", lambda s, r, d: "first")
        gw.ensure_behavior("x", lambda s, r, d: "second")
        assert gw.complete(request(), label="x").text == "first"

    def test_transport_is_never_invoked(self):
        calls = []

        def spy(url, payload, timeout=60.0):
            calls.append(url)
            return {}

        gw = Gateway.scripted(9, transport=spy)
        gw.complete(request())
        gw.complete(request("more text"))
        assert calls == []


class TestCallLog:
    def test_entries_are_densely_indexed_and_labelled(self):
        gw = Gateway.scripted(3)
        gw.complete(request("a"), label="one")
        gw.complete(request("b"), label="two")
        assert [e.index for e in gw.entries] == [0, 1]
        assert [e.label for e in gw.entries] == ["one", "two"]
        assert gw.call_count == 2

    def test_system_prompts_dedupe_in_order(self):
        gw = Gateway.scripted(3)
        gw.complete(request("a", system="alpha"))
        gw.complete(request("b", system="beta"))
        gw.complete(request("c", system="alpha"))
        assert gw.system_prompts == ["alpha", "beta"]

    def test_save_load_round_trip(self, tmp_path):
        gw = Gateway.scripted(3)
        gw.complete(request("a"), label="one")
        gw.complete(request("b"), label="two")
        path = tmp_path / "calls.jsonl"
        save_log(gw.entries, path)
        loaded = load_log(path)
        assert loaded == list(gw.entries)

    def test_empty_log_round_trip(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        save_log([], path)
        assert path.read_bytes() == b""
        assert load_log(path) == []

    def test_blank_line_rejected(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        path.write_text('\n{"index": 0}\n', encoding="utf-8")
        with pytest.raises(MalformedLog):
            load_log(path)

    def test_truncated_json_rejected(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        path.write_text('{"index": 0, "request_digest"', encoding="utf-8")
        with pytest.raises(MalformedLog):
            load_log(path)

    def test_missing_field_rejected(self, tmp_path):
        gw = Gateway.scripted(3)
        gw.complete(request("a"))
        record = gw.entries[0].to_dict()
        del record["response"]
        path = tmp_path / "calls.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(MalformedLog):
            load_log(path)

    def test_non_dense_index_rejected(self, tmp_path):
        gw = Gateway.scripted(3)
        gw.complete(request("a"))
        gw.complete(request("b"))
        records = [e.to_dict() for e in gw.entries]
        records[1]["index"] = 5
        path = tmp_path / "calls.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                        encoding="utf-8")
        with pytest.raises(MalformedLog):
            load_log(path)


class TestReplayMode:
    def _scripted_log(self):
        gw = Gateway.scripted(9)
        first = gw.complete(request("a"), label="one")
        second = gw.complete(request("b"), label="two")
        return list(gw.entries), first, second

    def test_replay_reproduces_responses_in_order(self):
        log, first, second = self._scripted_log()
        rp = Gateway.replay(log)
        assert rp.complete(request("a"), label="one") == first
        assert rp.complete(request("b"), label="two") == second

    def test_out_of_order_request_diverges_with_digests(self):
        log, _, _ = self._scripted_log()
        rp = Gateway.replay(log)
        with pytest.raises(ReplayDivergence) as exc:
            rp.complete(request("b"))
        msg = str(exc.value)
        assert "index 0" in msg
        assert log[0].request_digest in msg
        assert request("b").digest() in msg

    def test_exhausted_log_diverges(self):
        log, _, _ = self._scripted_log()
        rp = Gateway.replay(log)
        rp.complete(request("a"))
        rp.complete(request("b"))
        with pytest.raises(ReplayDivergence) as exc:
            rp.complete(request("a"))
        assert "exhausted" in str(exc.value)

    def test_replay_writes_its_own_log(self):
        log, _, _ = self._scripted_log()
        rp = Gateway.replay(log)
        rp.complete(request("a"), label="one")
        assert rp.call_count == 1
        assert rp.entries[0].request_digest == log[0].request_digest


class TestLiveMode:
    @staticmethod
    def _ok_payload(text):
        return {"choices": [{"message": {"content": text}}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 2}}

    def test_transport_response_is_unpacked(self):
        seen = []

        def transport(url, payload, timeout=60.0):
            seen.append((url, payload["model"]))
            return self._ok_payload("live words")

        gw = Gateway.live("http://example.invalid/v1", "live-model",
                          transport=transport)
        resp = gw.complete(request())
        assert resp == ChatResponse(text="live words", prompt_tokens=7,
                                    completion_tokens=2)
        assert seen == [("http://example.invalid/v1", "m")]

    def test_missing_usage_falls_back_to_estimates(self):
        def transport(url, payload, timeout=60.0):
            return {"choices": [{"message": {"content": "two words"}}]}

        gw = Gateway.live("http://example.invalid", "live-model",
                          transport=transport)
        resp = gw.complete(request("one two three"))
        assert resp.prompt_tokens == estimate_tokens("one two three")
        assert resp.completion_tokens == estimate_tokens("two words")

    def test_retries_then_endpoint_error(self):
        attempts = []

        def transport(url, payload, timeout=60.0):
            attempts.append(1)
            raise OSError("connection refused")

        gw = Gateway.live("http://example.invalid", "live-model",
                          transport=transport, retries=2)
        with pytest.raises(EndpointError):
            gw.complete(request())
        assert len(attempts) == 3  # initial try + 2 retries

    def test_flaky_transport_recovers_within_retries(self):
        state = {"n": 0}

        def transport(url, payload, timeout=60.0):
            state["n"] += 1
            if state["n"] == 1:
                raise OSError("transient")
            return self._ok_payload("ok")

        gw = Gateway.live("http://example.invalid", "live-model",
                          transport=transport, retries=1)
        assert gw.complete(request()).text == "ok"

    def test_malformed_body_counts_as_failure(self):
        def transport(url, payload, timeout=60.0):
            return {"choices": []}

        gw = Gateway.live("http://example.invalid", "live-model",
                          transport=transport, retries=0)
        with pytest.raises(EndpointError):
            gw.complete(request())


class TestContentHash:
    def test_empty_set_constant(self):
        assert content_hash([]) == EMPTY_CONTENT_HASH
        assert EMPTY_CONTENT_HASH == sha256_hex(b"")

    def test_order_independent(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("alpha", encoding="utf-8")
        b.write_text("beta", encoding="utf-8")
        assert content_hash([a, b], tmp_path) == content_hash([b, a], tmp_path)

    def test_single_byte_change_flips_hash(self, tmp_path):
        a = tmp_path / "a.txt"
        a.write_text("alpha", encoding="utf-8")
        before = content_hash([a], tmp_path)
        a.write_text("alphb", encoding="utf-8")
        assert content_hash([a], tmp_path) != before

    def test_relative_name_participates(self, tmp_path):
        (tmp_path / "x").mkdir()
        (tmp_path / "y").mkdir()
        a = tmp_path / "x" / "f.txt"
        b = tmp_path / "y" / "f.txt"
        a.write_text("same", encoding="utf-8")
        b.write_text("same", encoding="utf-8")
        assert content_hash([a], tmp_path) != content_hash([b], tmp_path)
