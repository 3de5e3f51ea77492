from __future__ import annotations

import math
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scachain.backends import (
    CachedResponse,
    PromptRequest,
    ResponseCache,
    ServiceCausalJudge,
    ServiceClient,
    ServiceSimilarityJudge,
    causal_fallback,
    parse_verdict,
    similarity_fallback,
)
from scachain.errors import BackendUnavailable, MalformedBackendOutput, ResponseTooLarge
from scachain.sca import SENTINEL, ScaNode, SourceRef

SRC = SourceRef("TS 24.501", "5.3.1.3", 1)


def req(text="x"):
    return PromptRequest("semantic_verify", {"spec_id": "TS 1", "state_a": text, "state_b": "y"}, 100)


class CountingTransport:
    def __init__(self, reply="YES"):
        self.calls = 0
        self.reply = reply
        self.lock = threading.Lock()

    def __call__(self, url, key, prompt, max_chars):
        with self.lock:
            self.calls += 1
        return self.reply


def test_prompt_requires_all_slots():
    with pytest.raises(ValueError):
        PromptRequest("semantic_verify", {"spec_id": "TS 1"})


def test_digest_stable():
    assert req().digest == req().digest
    assert req("a").digest != req("b").digest


def test_cache_hit_makes_no_call(tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    cache.put_if_absent(CachedResponse(req().digest, "semantic_verify", "NO", "t"))
    t = CountingTransport()
    client = ServiceClient(ResponseCache(tmp_path / "c.jsonl"), endpoint="http://stub", transport=t)
    assert client.complete(req()) == "NO"
    assert t.calls == 0 and client.network_calls == 0


def test_unavailable_after_retries():
    attempts = []

    def down(*_):
        attempts.append(1)
        raise OSError("connection refused")

    client = ServiceClient(endpoint="http://stub", transport=down, retry_attempts=3, sleep=lambda s: None)
    with pytest.raises(BackendUnavailable):
        client.complete(req())
    assert len(attempts) == 3


def test_offline_miss_is_unavailable():
    with pytest.raises(BackendUnavailable):
        ServiceClient(offline=True).complete(req())


def test_identical_requests_one_call():
    t = CountingTransport()
    client = ServiceClient(endpoint="http://stub", transport=t, max_concurrency=4)
    threads = [threading.Thread(target=client.complete, args=(req(),)) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert t.calls == 1
    assert client.complete(req()) == "YES"


def test_response_too_large():
    client = ServiceClient(endpoint="http://stub", transport=CountingTransport("Y" * 500))
    with pytest.raises(ResponseTooLarge):
        client.complete(req())


def test_cache_digest_order_independent(tmp_path):
    a, b = ResponseCache(), ResponseCache()
    e1 = CachedResponse("d1", "t", "one", "2020")
    e2 = CachedResponse("d2", "t", "two", "2021")
    a.put_if_absent(e1), a.put_if_absent(e2)
    b.put_if_absent(CachedResponse("d2", "t", "two", "1999")), b.put_if_absent(e1)
    assert a.digest() == b.digest()


@pytest.mark.parametrize("text,verdict", [("YES\nsame state", True), ("no", False), ("NO.", False)])
def test_parse_verdict(text, verdict):
    assert parse_verdict(text)[0] is verdict


def test_parse_verdict_malformed():
    with pytest.raises(MalformedBackendOutput):
        parse_verdict("Maybe")


def test_similarity_examples():
    assert similarity_fallback("5GMM idle", "5GMM idle") == pytest.approx(1.0)
    assert similarity_fallback("alpha", "beta") == 0.0
    assert similarity_fallback("5gmm idle mode", "5gmm idle") == pytest.approx(2 / math.sqrt(6))
    assert similarity_fallback(SENTINEL, SENTINEL) == 0.0
    assert similarity_fallback("", "") == 0.0


words = st.lists(st.sampled_from(["ue", "5gmm", "idle", "mode", "rrc", "t3510", "x"]), max_size=8).map(" ".join)


@given(words, words)
def test_similarity_symmetric_bounded(a, b):
    s = similarity_fallback(a, b)
    assert s == similarity_fallback(b, a)
    assert 0.0 <= s <= 1.0
    if a.strip():
        assert similarity_fallback(a, a) == pytest.approx(1.0)


def node(nid, **kw):
    return ScaNode.build(nid, SRC, **kw)


def test_causal_fallback_examples():
    n_i = node(1, action="establishes an N1 NAS signalling connection")
    n_j = node(2, start_state="signalling connection is already active")
    assert causal_fallback(n_i, n_j)
    assert not causal_fallback(node(3, action="stop timer T3540"), node(4, start_state="5GMM-IDLE mode"))
    assert not causal_fallback(node(5), n_j)


def test_causal_fallback_ignores_unrelated_content():
    n_i = node(1, action="establishes an N1 NAS signalling connection")
    n_j = node(2, start_state="signalling connection is already active")
    other = node(3, action="anything else at all")
    assert causal_fallback(n_i, n_j) == causal_fallback(n_i, n_j) and not causal_fallback(other, n_j)


def test_service_judges_use_verdicts():
    client = ServiceClient(endpoint="http://stub", transport=CountingTransport("YES\nok"))
    assert ServiceSimilarityJudge(client).verify("a", "b", "TS 1")
    assert ServiceCausalJudge(client).is_causal(node(1, action="x"), node(2, action="y"))
