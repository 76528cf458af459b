"""Streaming session tests: equivalence with the single-pass oracle, exact
state semantics, lifecycle rules, determinism, isolation, and memory bounds.
"""

import numpy as np
import pytest

from conftest import random_wave
from tvtsyn.config import FRAME_HOP, StreamConfig
from tvtsyn.errors import ConfigError, InputError, StateError
from tvtsyn.model import synthesize
from tvtsyn.streaming import open_session, stream_file

F32 = np.float32


def _feed_all(session, wave):
    c = session.chunk_samples
    outs = [session.feed(wave[k * c:(k + 1) * c]) for k in range(wave.size // c)]
    outs.append(session.flush())
    return np.concatenate(outs)


class TestOpenSession:
    def test_frames_per_chunk(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        assert s.chunk_samples == 960 and s.frames_per_chunk == 3
        s = open_session(model, StreamConfig(chunk_ms=100), speaker)
        assert s.chunk_samples == 1600 and s.frames_per_chunk == 5

    def test_misaligned_chunk_rejected_with_suggestions(self, model, speaker):
        with pytest.raises(ConfigError, match="40 ms or 60 ms"):
            open_session(model, StreamConfig(chunk_ms=50), speaker)

    def test_wrong_chunk_length_rejected(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        with pytest.raises(InputError):
            s.feed(np.zeros(959, F32))


class TestEquivalence:
    @pytest.mark.parametrize("chunk_ms", [20, 40, 60, 100, 140])
    def test_streaming_equals_offline_oracle(self, model, speaker, chunk_ms):
        sc = StreamConfig(chunk_ms=chunk_ms)
        wave = random_wave(chunk_ms, 48000)
        wave = wave[:(wave.size // sc.chunk_samples) * sc.chunk_samples]
        streamed = stream_file(model, sc, speaker, wave)
        offline = synthesize(model, wave, speaker, block_frames=sc.chunk_frames)
        assert streamed.shape == offline.shape
        assert np.abs(streamed - offline).max() <= 1e-4

    def test_sample_count_identity(self, model, speaker):
        # N chunks of c samples -> exactly N*c samples including the flush tail
        sc = StreamConfig(chunk_ms=60)
        wave = random_wave(0, 960 * 7)
        s = open_session(model, sc, speaker)
        sizes = [s.feed(wave[k * 960:(k + 1) * 960]).size for k in range(7)]
        tail = s.flush().size
        assert sizes[0] == 960 - sc.overlap_samples
        assert all(x == 960 for x in sizes[1:])
        assert tail <= sc.overlap_samples
        assert sum(sizes) + tail == 7 * 960

    def test_zero_overlap_mode(self, model, speaker):
        sc = StreamConfig(chunk_ms=60, overlap_ms=0)
        wave = random_wave(1, 960 * 10)
        streamed = _feed_all(open_session(model, sc, speaker), wave)
        offline = synthesize(model, wave, speaker, block_frames=sc.chunk_frames)
        assert streamed.size == wave.size
        assert np.abs(streamed - offline).max() <= 1e-4

    def test_zeros_in_steady_state_out(self, model, speaker):
        # constant input settles to a chunk-periodic pattern once the
        # 2 s KV window is full; output stays bounded by the bias response
        sc = StreamConfig(chunk_ms=60)
        s = open_session(model, sc, speaker)
        outs = [s.feed(np.zeros(960, F32)) for _ in range(40)]
        assert max(float(np.abs(o).max()) for o in outs) <= 1.0
        assert np.abs(outs[-1] - outs[-2]).max() <= 1e-4


class TestLifecycle:
    def test_reset_then_replay_identical(self, model, speaker):
        wave = random_wave(2, 960 * 6)
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        fresh = _feed_all(s, wave)
        s.reset()
        replay = _feed_all(s, wave)
        assert np.array_equal(fresh, replay)

    def test_flush_twice_errors(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        s.feed(np.zeros(960, F32))
        s.flush()
        with pytest.raises(StateError):
            s.flush()

    def test_feed_after_flush_errors(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        s.flush()
        with pytest.raises(StateError):
            s.feed(np.zeros(960, F32))

    def test_flush_without_feeding_is_empty(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        assert s.flush().size == 0

    def test_clocks_monotone(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        seen = []
        for k in range(4):
            s.feed(np.zeros(960, F32))
            seen.append((s.samples_in, s.samples_out, s.chunks_fed))
        assert seen == sorted(seen)
        assert seen[-1][0] == 4 * 960


class TestIsolationAndDeterminism:
    def test_two_sessions_bitwise_identical(self, model, speaker):
        wave = random_wave(3, 960 * 8)
        a = _feed_all(open_session(model, StreamConfig(chunk_ms=60), speaker), wave)
        b = _feed_all(open_session(model, StreamConfig(chunk_ms=60), speaker), wave)
        assert np.array_equal(a, b)

    def test_interleaved_sessions_match_serial(self, model, speaker):
        rng = np.random.default_rng(4)
        g2 = rng.normal(0, 1, model.cfg.global_dim).astype(F32)
        w1, w2 = random_wave(5, 960 * 8), random_wave(6, 960 * 8)
        serial1 = _feed_all(open_session(model, StreamConfig(chunk_ms=60), speaker), w1)
        serial2 = _feed_all(open_session(model, StreamConfig(chunk_ms=60), g2), w2)
        sa = open_session(model, StreamConfig(chunk_ms=60), speaker)
        sb = open_session(model, StreamConfig(chunk_ms=60), g2)
        outs_a, outs_b = [], []
        for k in range(8):
            outs_a.append(sa.feed(w1[k * 960:(k + 1) * 960]))
            outs_b.append(sb.feed(w2[k * 960:(k + 1) * 960]))
        outs_a.append(sa.flush())
        outs_b.append(sb.flush())
        assert np.array_equal(np.concatenate(outs_a), serial1)
        assert np.array_equal(np.concatenate(outs_b), serial2)

    def test_state_size_constant_in_stream_length(self, model, speaker):
        s = open_session(model, StreamConfig(chunk_ms=60), speaker)
        s.feed(np.zeros(960, F32))
        early = s.state_nbytes()
        for _ in range(49):
            s.feed(np.zeros(960, F32))
        assert s.state_nbytes() == early

    def test_sessions_run_on_separate_threads(self, model, speaker):
        # sessions are independently owned: concurrent threads reproduce the
        # serial outputs bitwise (weights shared read-only)
        import threading

        waves = [random_wave(30 + i, 960 * 6) for i in range(3)]
        serial = [_feed_all(open_session(model, StreamConfig(chunk_ms=60), speaker), w)
                  for w in waves]
        results = [None] * 3

        def worker(i):
            results[i] = _feed_all(
                open_session(model, StreamConfig(chunk_ms=60), speaker), waves[i])

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for got, want in zip(results, serial):
            assert np.array_equal(got, want)


class TestLookaheadIsChunkLocal:
    def test_streaming_never_waits_for_future_chunks(self, model, speaker):
        # chunk k's output is already final: appending different future
        # chunks never changes it
        sc = StreamConfig(chunk_ms=60)
        wave = random_wave(7, 960 * 6)
        s1 = open_session(model, sc, speaker)
        outs1 = [s1.feed(wave[k * 960:(k + 1) * 960]) for k in range(6)]
        s2 = open_session(model, sc, speaker)
        outs2 = []
        for k in range(6):
            chunk = wave[k * 960:(k + 1) * 960].copy()
            if k >= 3:
                chunk = -chunk
            outs2.append(s2.feed(chunk))
        for k in range(3):
            assert np.array_equal(outs1[k], outs2[k])
        assert not np.array_equal(outs1[3], outs2[3])
