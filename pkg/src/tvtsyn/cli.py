"""Command-line interface.

Subcommands: init-weights, synth, stream, bench, probe, dump-tvt.
Exit codes: 0 success, 1 input error, 2 configuration error, 3 internal
invariant violation (including causality-probe failures).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, StreamConfig, load_config
from .errors import ConfigError, InputError, InternalError, TvtSynError
from .kernels import F32
from .metrics import causality_probe, latency_bench
from .model import TvtSynModel, load_model, synthesize
from .streaming import open_session, stream_file
from .weights import parameter_budget, random_init, save_weights
from . import wavio

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


def _read_speaker(path, expected_dim):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read speaker file {path}: {exc}") from exc
    vec = np.frombuffer(raw, dtype="<f4")
    if vec.size != expected_dim:
        raise InputError(
            f"speaker file {path} holds {vec.size} float32 values, expected {expected_dim}")
    return vec.astype(F32)


def _load(args) -> TvtSynModel:
    cfg = load_config(args.config) if args.config else ModelConfig()
    return load_model(args.weights, cfg)


def _add_model_args(p):
    p.add_argument("--weights", required=True, help="TVTW weight file")
    p.add_argument("--config", default=None, help="key=value model config (default: full config)")


def _add_speaker_arg(p):
    p.add_argument("--speaker", required=True,
                   help="raw little-endian float32 speaker embedding file")


def cmd_init_weights(args):
    cfg = load_config(args.config) if args.config else ModelConfig()
    store = random_init(args.seed, cfg)
    save_weights(store, args.out)
    budget = parameter_budget(store)
    print(f"wrote {args.out}: {len(store)} tensors, "
          f"encoder {budget['encoder']:,} / decoder {budget['decoder']:,} "
          f"/ total {budget['total']:,} parameters")
    return EXIT_OK


def cmd_synth(args):
    model = _load(args)
    speaker = _read_speaker(args.speaker, model.cfg.global_dim)
    wave = wavio.read_wav(args.infile)
    block = None
    if args.block_ms is not None:
        block = StreamConfig(chunk_ms=args.block_ms).chunk_frames
    out = synthesize(model, wave, speaker, lookahead=args.lookahead,
                     block_frames=block, f0_scale=args.f0_scale)
    wavio.write_wav(args.out, out)
    print(f"synthesized {out.size} samples -> {args.out}")
    return EXIT_OK


def cmd_stream(args):
    model = _load(args)
    speaker = _read_speaker(args.speaker, model.cfg.global_dim)
    wave = wavio.read_wav(args.infile)
    cfg = StreamConfig(chunk_ms=args.chunk_ms, lookahead_frames=args.lookahead)
    times = []

    def on_chunk(k, seconds):
        times.append(seconds * 1000.0)
        print(f"chunk {k}: {seconds * 1000.0:.2f} ms", file=sys.stderr)

    out = stream_file(model, cfg, speaker, wave, f0_scale=args.f0_scale,
                      on_chunk=on_chunk)
    wavio.write_wav(args.out, out)
    if times:
        print(f"streamed {len(times)} chunks of {args.chunk_ms} ms, "
              f"mean processing {np.mean(times):.2f} ms -> {args.out}")
    return EXIT_OK


def cmd_bench(args):
    model = _load(args)
    if args.utterances:
        paths = sorted(Path(args.utterances).glob("*.wav"))
        if not paths:
            raise InputError(f"no .wav files under {args.utterances}")
        utts = [wavio.read_wav(p) for p in paths]
    else:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        n_samples = int(args.utt_seconds * 16000)
        utts = [rng.uniform(-0.5, 0.5, size=n_samples).astype(F32)
                for _ in range(args.synthetic)]
    if args.speaker:
        speaker = _read_speaker(args.speaker, model.cfg.global_dim)
    else:
        speaker = np.random.Generator(np.random.PCG64(args.seed)).normal(
            0, 1, model.cfg.global_dim).astype(F32)
    stream_cfg = StreamConfig(chunk_ms=args.chunk_ms)

    def factory():
        return open_session(model, stream_cfg, speaker)

    report = latency_bench(factory, utts, args.chunk_ms,
                           parallel_sessions=args.parallel_sessions)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_probe(args):
    model = _load(args)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    speaker = rng.normal(0, 1, model.cfg.global_dim).astype(F32)

    def synth_fn(wave):
        return synthesize(model, wave, speaker, lookahead=args.lookahead)

    report = causality_probe(synth_fn, args.lookahead, args.trials, args.seed)
    print(json.dumps(report, indent=2))
    if not report["clean"]:
        raise InternalError(f"causality probe found {len(report['violations'])} violations")
    return EXIT_OK


def cmd_dump_tvt(args):
    model = _load(args)
    speaker = _read_speaker(args.speaker, model.cfg.global_dim)
    wave = wavio.read_wav(args.infile)
    _, details = synthesize(model, wave, speaker, return_details=True)
    weights = details["facet_weights"]
    top1 = details["top1"]
    alpha = details["alpha"]
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for i in range(weights.shape[0]):
            sink.write(json.dumps({
                "frame": i,
                "alpha": float(alpha[i]),
                "top1": int(top1[i]),
                "weights": [float(x) for x in weights[i]],
            }) + "\n")
    finally:
        if args.out:
            sink.close()
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tvtsyn",
                                description="Streaming voice-conversion runtime")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("init-weights", help="write seeded random weights")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--config", default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_init_weights)

    q = sub.add_parser("synth", help="offline file-to-file synthesis")
    _add_model_args(q)
    _add_speaker_arg(q)
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--lookahead", type=int, default=None, choices=range(0, 5))
    q.add_argument("--f0-scale", type=float, default=1.0)
    q.add_argument("--block-ms", type=float, default=None,
                   help="truncate lookahead at this block size (matches streaming masks)")
    q.set_defaults(fn=cmd_synth)

    q = sub.add_parser("stream", help="chunked processing with per-chunk timing log")
    _add_model_args(q)
    _add_speaker_arg(q)
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--chunk-ms", type=float, default=60.0)
    q.add_argument("--lookahead", type=int, default=None, choices=range(0, 5))
    q.add_argument("--f0-scale", type=float, default=1.0)
    q.set_defaults(fn=cmd_stream)

    q = sub.add_parser("bench", help="latency/RTF benchmark, JSON report")
    _add_model_args(q)
    q.add_argument("--chunk-ms", type=float, default=60.0)
    q.add_argument("--utterances", default=None, help="directory of 16 kHz mono WAVs")
    q.add_argument("--synthetic", type=int, default=110,
                   help="number of synthetic utterances when no directory is given")
    q.add_argument("--utt-seconds", type=float, default=1.0)
    q.add_argument("--speaker", default=None)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--parallel-sessions", type=int, default=1,
                   help="run measured utterances over N concurrent sessions")
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_bench)

    q = sub.add_parser("probe", help="causality probe; nonzero exit on violation")
    _add_model_args(q)
    q.add_argument("--lookahead", type=int, default=0, choices=range(0, 5))
    q.add_argument("--trials", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=cmd_probe)

    q = sub.add_parser("dump-tvt", help="per-frame facet weights, top-1 index, alpha")
    _add_model_args(q)
    _add_speaker_arg(q)
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", default=None, help="JSON-lines output (default: stdout)")
    q.set_defaults(fn=cmd_dump_tvt)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InternalError, TvtSynError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
