import threading
import time

import numpy as np
import pytest

from diagrameval.document import RasterGrid
from diagrameval.errors import JudgeUnreachable, UnparseableVerdict
from diagrameval.judge import (
    BLANK_INSTRUCTION,
    DESIGN_INSTRUCTION,
    JudgeClient,
    JudgeConfig,
    cache_key,
    http_transport,
    judge_blank_ratio,
    parse_count,
    parse_ratio,
)


class FakeTransport:
    """Serves canned replies in order and records every request."""

    def __init__(self, replies, delay=0.0):
        self.replies = list(replies)
        self.calls = []
        self.delay = delay
        self._guard = threading.Lock()

    def __call__(self, url, payload, headers, timeout):
        if self.delay:
            time.sleep(self.delay)
        with self._guard:
            self.calls.append((url, payload, headers))
            text = self.replies[(len(self.calls) - 1) % len(self.replies)]
        return {"choices": [{"message": {"content": text}}]}


def cfg(tmp_path, **kw):
    return JudgeConfig(endpoint="http://judge.invalid/v1/chat", model_name="m1", cache_dir=tmp_path, **kw)


@pytest.fixture
def grid():
    arr = np.full((64, 64), 255, np.uint8)
    arr[10:30, 10:30] = 0
    return RasterGrid(arr)


def test_parse_count_reads_final_line():
    assert parse_count("Module 1 overlaps module 2...\n3") == 3
    assert parse_count("analysis\n\n **4** \n") == 4
    with pytest.raises(UnparseableVerdict):
        parse_count("there are 3 errors")
    with pytest.raises(UnparseableVerdict):
        parse_count("")


def test_parse_ratio_forms():
    assert parse_ratio("looks sparse\n0.27") == pytest.approx(0.27)
    assert parse_ratio("x\n27%") == pytest.approx(0.27)
    assert parse_ratio("x\n.5") == 0.5
    with pytest.raises(UnparseableVerdict):
        parse_ratio("x\n1.7")


def test_three_runs_are_averaged(tmp_path, grid):
    fake = FakeTransport(["a\n2", "b\n3", "c\n4"])
    verdict = JudgeClient(cfg(tmp_path), fake).design_errors(grid)
    assert verdict.parsed_counts == (2, 3, 4)
    assert verdict.mean_count == 3.0
    assert len(fake.calls) == 3 and not verdict.cached


def test_blank_ratio_mean(tmp_path, grid):
    fake = FakeTransport(["\n0.26", "\n0.27", "\n0.28"])
    assert judge_blank_ratio(grid, cfg(tmp_path), fake) == pytest.approx(0.27)


def test_second_call_is_served_from_cache(tmp_path, grid):
    fake = FakeTransport(["a\n1", "b\n2", "c\n3"])
    first = JudgeClient(cfg(tmp_path), fake).design_errors(grid)
    n_requests = len(fake.calls)
    # fresh client, no endpoint: must answer from disk alone
    offline = JudgeConfig(endpoint="", model_name="m1", cache_dir=tmp_path)
    second = JudgeClient(offline, fake).design_errors(grid)
    assert len(fake.calls) == n_requests
    assert second.cached and second.mean_count == first.mean_count
    assert second.raw_responses == first.raw_responses


def test_instruction_sent_verbatim(tmp_path, grid):
    fake = FakeTransport(["\n0"])
    client = JudgeClient(cfg(tmp_path, runs=1), fake)
    client.design_errors(grid)
    client.blank_ratio(grid)
    sent = [call[1]["messages"][0]["content"][0]["text"] for call in fake.calls]
    assert sent[0].encode() == DESIGN_INSTRUCTION.encode()
    assert sent[1].encode() == BLANK_INSTRUCTION.encode()
    payload = fake.calls[0][1]
    assert payload["model"] == "m1" and payload["temperature"] == 0.0
    assert payload["messages"][0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_unparseable_runs_are_discarded(tmp_path, grid):
    fake = FakeTransport(["a\n2", "no number here", "c\n4"])
    verdict = JudgeClient(cfg(tmp_path), fake).design_errors(grid)
    assert verdict.mean_count == 3.0 and verdict.discarded == 1 and verdict.runs_used == 2


def test_all_unparseable_raises(tmp_path, grid):
    fake = FakeTransport(["nothing", "still nothing"])
    with pytest.raises(UnparseableVerdict):
        JudgeClient(cfg(tmp_path), fake).design_errors(grid)


def test_unreachable_endpoint_raises(tmp_path, grid):
    def refuse(*_):
        raise ConnectionError("refused")

    with pytest.raises(JudgeUnreachable):
        JudgeClient(cfg(tmp_path), refuse).design_errors(grid)
    with pytest.raises(JudgeUnreachable):
        JudgeClient(JudgeConfig("", "m1", cache_dir=tmp_path)).design_errors(grid)


def test_http_transport_wraps_connection_errors():
    with pytest.raises(JudgeUnreachable):
        http_transport("http://127.0.0.1:9/none", {}, {}, 0.5)


def test_cache_key_separates_every_component():
    keys = {
        cache_key("img", "m1", "ask"),
        cache_key("img2", "m1", "ask"),
        cache_key("img", "m2", "ask"),
        cache_key("img", "m1", "ask2"),
        cache_key("im", "gm1", "ask"),  # concatenation would collide without length prefixes
    }
    assert len(keys) == 5


def test_different_model_does_not_hit_cache(tmp_path, grid):
    fake = FakeTransport(["\n1"])
    JudgeClient(cfg(tmp_path, runs=1), fake).design_errors(grid)
    other = JudgeConfig("http://judge.invalid", "m2", runs=1, cache_dir=tmp_path)
    JudgeClient(other, fake).design_errors(grid)
    assert len(fake.calls) == 2


def test_concurrent_duplicates_reach_network_once(tmp_path, grid):
    fake = FakeTransport(["\n5"], delay=0.02)
    client = JudgeClient(cfg(tmp_path, runs=1), fake)
    results = []
    threads = [threading.Thread(target=lambda: results.append(client.design_errors(grid))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(fake.calls) == 1
    assert all(r.mean_count == 5 for r in results)


def test_config_validation_and_env(monkeypatch, tmp_path):
    with pytest.raises(ValueError):
        JudgeConfig("x", "m", runs=0)
    monkeypatch.setenv("JUDGE_ENDPOINT", "http://e")
    monkeypatch.setenv("JUDGE_MODEL", "mm")
    monkeypatch.setenv("JUDGE_API_KEY", "secret")
    c = JudgeConfig.from_env(tmp_path)
    assert (c.endpoint, c.model_name, c.api_key) == ("http://e", "mm", "secret")
    assert "secret" not in repr(c)
