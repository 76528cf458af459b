"""Offline quality metrics, the latency/RTF benchmark, and causality probes.

Latency follows the streaming definition: chunk duration plus per-chunk
processing time, averaged per utterance and then across utterances. RTF is
processing time over chunk duration, averaged the same way.
"""

from __future__ import annotations

import time

import numpy as np

from .config import FRAME_HOP
from .errors import InputError
from .kernels import F32, MEL_WINDOWS_MS, stft_log_mel

WARMUP_UTTERANCES = 10
MEASURED_UTTERANCES = 100


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine similarity is undefined for zero vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def multires_mel_l1(a, b) -> float:
    """Sum over 2-128 ms windows of the mean absolute log-mel difference."""
    a = np.asarray(a, dtype=F32).reshape(-1)
    b = np.asarray(b, dtype=F32).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"waveform lengths differ: {a.size} vs {b.size}")
    total = 0.0
    for window_ms in MEL_WINDOWS_MS:
        ma = stft_log_mel(a, window_ms)
        mb = stft_log_mel(b, window_ms)
        if ma.size:
            total += float(np.mean(np.abs(ma - mb)))
    return total


def _time_utterance(session_factory, wave, chunk_ms, chunk_samples, clock):
    n_chunks = wave.size // chunk_samples
    if n_chunks < 1:
        raise InputError(f"utterance shorter than one {chunk_ms} ms chunk")
    session = session_factory()
    proc_ms = np.empty(n_chunks)
    for k in range(n_chunks):
        chunk = wave[k * chunk_samples:(k + 1) * chunk_samples]
        t0 = clock()
        session.feed(chunk)
        t1 = clock()
        proc_ms[k] = (t1 - t0) * 1000.0
    return {
        "latency_ms": float(chunk_ms + proc_ms.mean()),
        "rtf": float((proc_ms / chunk_ms).mean()),
    }


def latency_bench(session_factory, utterances, chunk_ms, *,
                  warmup=WARMUP_UTTERANCES, measured=MEASURED_UTTERANCES,
                  clock=time.perf_counter, parallel_sessions=1) -> dict:
    """Feed utterances through fresh sessions, timing feed() only.

    The first `warmup` utterances are excluded from statistics. When fewer
    than warmup + measured utterances are supplied, the list is reused
    cyclically and the report is flagged. `clock` is injectable so the
    report arithmetic can be verified with a mocked timer.

    Sessions run serially by default. With parallel_sessions > 1 the measured
    utterances are striped over that many threads (one independent session
    per utterance, one stripe per thread); the numbers then include
    cross-session contention and the report is labeled accordingly.
    """
    utterances = list(utterances)
    if not utterances:
        raise InputError("latency_bench needs at least one utterance")
    needed = warmup + measured
    cycled = len(utterances) < needed
    chunk_samples = int(round(chunk_ms * 16.0))
    waves = [np.asarray(utterances[i % len(utterances)], dtype=F32).reshape(-1)
             for i in range(needed)]

    # warm-up is always serial; only measured utterances may run in parallel
    for wave in waves[:warmup]:
        _time_utterance(session_factory, wave, chunk_ms, chunk_samples, clock)

    measured_waves = waves[warmup:]
    if parallel_sessions > 1:
        from concurrent.futures import ThreadPoolExecutor

        results = [None] * len(measured_waves)

        def run_stripe(offset):
            for i in range(offset, len(measured_waves), parallel_sessions):
                results[i] = _time_utterance(session_factory, measured_waves[i],
                                             chunk_ms, chunk_samples, clock)

        with ThreadPoolExecutor(max_workers=parallel_sessions) as pool:
            list(pool.map(run_stripe, range(parallel_sessions)))
        per_utt = results
    else:
        per_utt = [_time_utterance(session_factory, wave, chunk_ms,
                                   chunk_samples, clock)
                   for wave in measured_waves]

    latency_mean = float(np.mean([u["latency_ms"] for u in per_utt]))
    rtf_mean = float(np.mean([u["rtf"] for u in per_utt]))
    return {
        "chunk_ms": float(chunk_ms),
        "latency_ms_mean": latency_mean,
        "rtf_mean": rtf_mean,
        "utterances": per_utt,
        "warmup_count": warmup,
        "measured_count": len(per_utt),
        "cycled": cycled,
        "realtime": rtf_mean < 1.0,
        "parallel_sessions": int(parallel_sessions),
        "mode": "parallel" if parallel_sessions > 1 else "serial",
    }


def causality_probe(synth_fn, lookahead_frames, trials, seed, *,
                    min_frames=16, max_frames=40) -> dict:
    """Verify that samples after the allowed horizon never reach earlier output.

    Per trial: draw a random wave and a cut frame t, perturb input samples
    strictly after sample 320*(t + lookahead), and require output samples
    <= 320*t to be exactly unchanged. Violations are listed in the report.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    violations = []
    for trial in range(int(trials)):
        n_frames = int(rng.integers(min_frames, max_frames + 1))
        wave = rng.uniform(-0.5, 0.5, size=n_frames * FRAME_HOP).astype(F32)
        t = int(rng.integers(1, n_frames - lookahead_frames - 1))
        horizon = FRAME_HOP * (t + lookahead_frames)
        perturbed = wave.copy()
        perturbed[horizon + 1:] = rng.uniform(-0.5, 0.5,
                                              size=wave.size - horizon - 1).astype(F32)
        base = synth_fn(wave)
        poked = synth_fn(perturbed)
        guard = FRAME_HOP * t + 1
        diff = np.abs(base[:guard].astype(np.float64) - poked[:guard].astype(np.float64))
        max_diff = float(diff.max()) if diff.size else 0.0
        if max_diff != 0.0:
            violations.append({"trial": trial, "cut_frame": t, "max_diff": max_diff})
    return {
        "lookahead_frames": int(lookahead_frames),
        "trials": int(trials),
        "violations": violations,
        "clean": not violations,
    }


def probe_influence(synth_fn, lookahead_frames, trials, seed, *,
                    perturb_offset_frames=1, min_frames=16, max_frames=40) -> int:
    """Positive control: perturb inside the visible horizon and count trials
    where protected output actually changed (expected > 0 with lookahead > 0)."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    influenced = 0
    for _ in range(int(trials)):
        n_frames = int(rng.integers(min_frames, max_frames + 1))
        wave = rng.uniform(-0.5, 0.5, size=n_frames * FRAME_HOP).astype(F32)
        t = int(rng.integers(lookahead_frames + 1, n_frames - lookahead_frames - 1))
        start = FRAME_HOP * (t + perturb_offset_frames) + 1
        perturbed = wave.copy()
        perturbed[start:] = rng.uniform(-0.5, 0.5, size=wave.size - start).astype(F32)
        base = synth_fn(wave)
        poked = synth_fn(perturbed)
        guard = FRAME_HOP * t + 1
        if np.any(base[:guard] != poked[:guard]):
            influenced += 1
    return influenced
