from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from spectemp.adapters import (
    GoldSpec,
    HashEmbeddingProvider,
    NoiseConfig,
    NoisyOracle,
    OracleDraft,
    OracleTarget,
    RemoteConfig,
    RemoteModel,
    estimate_tokens,
    hash_embed,
    oracle_draft_step,
    oracle_target_step,
)
from spectemp.errors import ConfigError, RemoteRejected, RemoteUnavailable
from spectemp.protocol import SessionView, parse_draft_output, parse_target_output
from spectemp.timeline import FrameRef, Segment

from stub_server import StubServer, completion


def _frames(times):
    return [FrameRef(float(t), np.zeros(2)) for t in times]


class TestHashEmbed:
    def test_deterministic(self):
        assert np.array_equal(hash_embed("tray"), hash_embed("tray"))
        assert not np.array_equal(hash_embed("tray", seed=1), hash_embed("tray", seed=2))

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            key = rng.bytes(12).hex()
            assert abs(np.linalg.norm(hash_embed(key)) - 1.0) < 1e-6

    def test_near_orthogonal(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            a, b = rng.bytes(8).hex(), rng.bytes(8).hex()
            worst = max(worst, abs(float(hash_embed(a) @ hash_embed(b))))
        assert worst < 0.5

    def test_frame_key(self):
        f = FrameRef(3.0, np.zeros(3))
        assert np.array_equal(hash_embed(f, 8), hash_embed("frame@3.0", 8))

    def test_stable_across_processes(self):
        code = ("from spectemp.adapters import hash_embed;"
                "print(','.join(repr(float(x)) for x in hash_embed('needle', 16, 7)))")
        outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                               check=True).stdout for _ in range(2)}
        assert len(outs) == 1
        assert outs.pop().strip() == ",".join(repr(float(x)) for x in hash_embed("needle", 16, 7))

    def test_provider_uses_stored_features(self):
        p = HashEmbeddingProvider(4)
        v = np.array([0.0, 1.0, 0.0, 0.0])
        assert np.array_equal(p.embed_frame(FrameRef(1.0, v)), v)
        assert p.embed_frame(FrameRef(1.0, np.ones(3))).shape == (4,)


GOLD = GoldSpec("B", (Segment(4, 5),), (5.0,), reveal_round=1, options=("x", "y", "z"))


def view(role, r, shown=(), **kw):
    return SessionView(role=role, round_index=r, question="q", history=("t",) if r else (),
                       shown_times=tuple(shown), frame_limit=2, duration_s=10.0, **kw)


class TestOracle:
    def test_gold_validation(self):
        with pytest.raises(ValueError):
            GoldSpec("B", (Segment(4, 5),), (9.0,))
        with pytest.raises(ValueError):
            GoldSpec("", ())

    def test_reveal_zero_answers_at_init(self):
        g = GoldSpec("B", (Segment(4, 5),), (5.0,), reveal_round=0)
        out = parse_target_output(oracle_target_step(view("target-init", 0), g))
        assert out.format_ok and out.value.answer == "B"

    def test_reveal_one_trace(self):
        first = parse_target_output(oracle_target_step(view("target-init", 0), GOLD))
        assert first.value.segment == Segment(4, 5)
        second = parse_target_output(oracle_target_step(view("target-verify", 1, [5.0]), GOLD))
        assert second.value.answer == "B"

    def test_never_shown_keeps_asking(self):
        for r in range(1, 4):
            out = parse_target_output(oracle_target_step(view("target-verify", r, [1.0]), GOLD))
            assert out.value.segment == Segment(4, 5)
        final = parse_target_output(oracle_target_step(view("target-final", 4, [1.0]), GOLD))
        assert final.value.answer != "B"

    def test_draft_prefers_evidence(self):
        assert oracle_draft_step(_frames([4.0, 5.0]), GOLD, 2) == "<frame>4.0, 5.0</frame>"
        assert oracle_draft_step(_frames([3.0, 4.0, 5.0]), GOLD, 1) == "<frame>5.0</frame>"

    def test_draft_nearest_when_disjoint(self):
        assert oracle_draft_step(_frames([0.0, 1.0, 7.0, 8.0]), GOLD, 2) == "<frame>7.0, 8.0</frame>"

    def test_oracle_output_always_well_formed(self):
        for r in range(4):
            for shown in ([], [5.0]):
                role = "target-init" if r == 0 else "target-verify"
                assert parse_target_output(oracle_target_step(view(role, r, shown), GOLD)).format_ok
        assert parse_draft_output(oracle_draft_step(_frames([4.0, 5.0]), GOLD, 2), 2).format_ok

    def test_wrappers(self):
        out = OracleTarget(GOLD).invoke("p", [], view("target-init", 0))
        assert out.decode_tokens == estimate_tokens(out.text)
        d = OracleDraft(GOLD).invoke("p", _frames([4.0, 5.0]), view("draft", 1))
        assert d.text == "<frame>4.0, 5.0</frame>"
        with pytest.raises(ValueError):
            OracleTarget(GOLD).invoke("p", [], None)


class TestNoisyOracle:
    @pytest.mark.parametrize("seed", [0, 1, 17, 123456])
    def test_zero_noise_is_identity(self, seed):
        inner = OracleTarget(GOLD)
        noisy = NoisyOracle(inner, NoiseConfig(), seed)
        for r, shown in ((0, []), (1, [5.0]), (2, [1.0])):
            v = view("target-init" if r == 0 else "target-verify", r, shown)
            assert noisy.invoke("p", [], v) == inner.invoke("p", [], v)

    def test_full_answer_error(self):
        noisy = NoisyOracle(OracleTarget(GOLD), NoiseConfig(answer_error=1.0), 0)
        out = parse_target_output(noisy.invoke("p", [], view("target-verify", 1, [5.0])).text)
        assert out.format_ok and out.value.answer != "B"

    def test_full_format_error(self):
        noisy = NoisyOracle(OracleDraft(GOLD), NoiseConfig(format_error=1.0), 0)
        text = noisy.invoke("p", _frames([4.0, 5.0]), view("draft", 1)).text
        assert not parse_draft_output(text).format_ok

    def test_jitter_bounded_and_stateless(self):
        noisy = NoisyOracle(OracleTarget(GOLD), NoiseConfig(jitter_s=1.5), 9)
        v = view("target-init", 0)
        a = noisy.invoke("p", [], v).text
        assert a == noisy.invoke("p", [], v).text
        seg = parse_target_output(a).value.segment
        assert abs(seg.start_s - 4) <= 1.5 + 1e-9 and abs(seg.end_s - 5) <= 1.5 + 1e-9

    def test_rates_validated(self):
        with pytest.raises(ValueError):
            NoiseConfig(answer_error=1.5)
        with pytest.raises(ValueError):
            NoiseConfig(jitter_s=-1)


class TestRemote:
    def cfg(self, url, **kw):
        base = dict(base_url=url, model="m", backoff_s=0.0, timeout_s=5.0)
        base.update(kw)
        return RemoteConfig(**base)

    def test_pass_through(self):
        with StubServer([(200, completion("<think>a</think><answer>B</answer>", 7), 0)]) as s:
            out = RemoteModel(self.cfg(s.url, api_key="k")).invoke("hello", _frames([1.0]))
        assert out.text == "<think>a</think><answer>B</answer>"
        assert out.decode_tokens == 7
        assert s.requests[0]["messages"] == [{"role": "user", "content": "hello"}]
        assert s.requests[0]["model"] == "m"
        assert s.headers[0]["Authorization"] == "Bearer k"

    def test_retry_then_success(self):
        sleeps = []
        script = [(503, {}, 0), (200, completion("ok"), 0)]
        with StubServer(script) as s:
            out = RemoteModel(self.cfg(s.url, backoff_s=0.5), sleep=sleeps.append).invoke("p", [])
        assert out.text == "ok" and len(s.requests) == 2
        assert sleeps == [0.5]

    def test_500_thrice(self):
        sleeps = []
        with StubServer([(500, {"error": "boom"}, 0)]) as s:
            with pytest.raises(RemoteUnavailable) as ei:
                RemoteModel(self.cfg(s.url, backoff_s=1.0), sleep=sleeps.append).invoke("p", [])
        assert ei.value.reason == "status"
        assert len(s.requests) == 3
        assert sleeps == [1.0, 2.0]

    def test_timeout(self):
        with StubServer([(200, completion("late"), 2.0)]) as s:
            with pytest.raises(RemoteUnavailable) as ei:
                RemoteModel(self.cfg(s.url, timeout_s=1.0, max_attempts=1)).invoke("p", [])
        assert ei.value.reason == "timeout"

    def test_rejected_not_retried(self):
        with StubServer([(401, {"error": "no"}, 0)]) as s:
            with pytest.raises(RemoteRejected) as ei:
                RemoteModel(self.cfg(s.url)).invoke("p", [])
        assert ei.value.status == 401 and len(s.requests) == 1

    def test_unparseable_body(self):
        with StubServer([(200, {"nope": 1}, 0)]) as s:
            with pytest.raises(RemoteRejected):
                RemoteModel(self.cfg(s.url)).invoke("p", [])

    def test_unreachable(self):
        cfg = self.cfg("http://127.0.0.1:9/v1", max_attempts=2)
        with pytest.raises(RemoteUnavailable) as ei:
            RemoteModel(cfg, sleep=lambda s: None).invoke("p", [])
        assert ei.value.reason == "network"

    def test_attached_images(self):
        with StubServer([(200, completion("ok"), 0)]) as s:
            m = RemoteModel(self.cfg(s.url, attach_images=True),
                            image_resolver=lambda f: f"data:image/png;base64,{f.timestamp_s}")
            m.invoke("prompt", _frames([2.0]))
        parts = s.requests[0]["messages"][0]["content"]
        assert parts[0] == {"type": "text", "text": "[frame t=2.0s]"}
        assert parts[1]["image_url"]["url"].endswith("2.0")
        with pytest.raises(ConfigError):
            RemoteModel(self.cfg("http://x", attach_images=True))

    def test_config_mapping_and_env(self, monkeypatch):
        with pytest.raises(ConfigError):
            RemoteConfig.from_mapping({"base_url": "u", "model": "m", "colour": 1})
        with pytest.raises(ConfigError):
            RemoteConfig.from_mapping({"base_url": "u"})
        monkeypatch.setenv("SPECTEMP_REMOTE_BASE_URL", "http://h/v1")
        monkeypatch.setenv("SPECTEMP_REMOTE_MODEL", "big")
        monkeypatch.setenv("SPECTEMP_REMOTE_MAX_ATTEMPTS", "5")
        monkeypatch.setenv("SPECTEMP_REMOTE_ATTACH_IMAGES", "false")
        cfg = RemoteConfig.from_env({"model": "small"})
        assert (cfg.base_url, cfg.model, cfg.max_attempts) == ("http://h/v1", "small", 5)
