"""Chunk-wise real-time orchestration: session lifecycle, persistent
per-module state, and exact state-carrying across encoder -> TVT -> decoder.

Timing contract: chunk k's audio is emitted at chunk k (lookahead never
crosses a chunk boundary), delayed by overlap_ms. The decoder CNN
re-synthesizes the previous chunk's final overlap frames from a state
snapshot, and the overlap region is emitted once as a linear crossfade of the
two copies; `flush` emits the final tail. Feeding N chunks of c samples
therefore yields exactly N*c samples once the flush is included.
"""

from __future__ import annotations

import numpy as np

from .config import FRAME_HOP, StreamConfig
from .context import make_rings
from .decoder import cln_fuse, decode_context
from .encoder import EncoderState, encode_frames, vq_quantize
from .errors import InputError, StateError
from .kernels import F32
from .model import TvtSynModel
from .prosody import predict_f0_energy
from .timbre import build_gtm, check_global_timbre, tvt_sequence


def _crossfade(prev_tail, new_head):
    n = prev_tail.shape[0]
    ramp = ((np.arange(n, dtype=F32) + F32(0.5)) / F32(n)).astype(F32)
    return (F32(1.0) - ramp) * prev_tail + ramp * new_head


class StreamSession:
    """Single-stream state bundle; calls must be serialized per session.

    Sessions are independent (no shared mutable state beyond read-only
    weights), so distinct sessions may run on distinct threads.
    """

    def __init__(self, model: TvtSynModel, stream_cfg: StreamConfig, speaker,
                 f0_scale: float = 1.0):
        stream_cfg.validate()
        self.model = model
        self.cfg = stream_cfg
        self.lookahead = (model.cfg.encoder_lookahead
                          if stream_cfg.lookahead_frames is None
                          else stream_cfg.lookahead_frames)
        self.f0_scale = float(f0_scale)
        self.speaker = check_global_timbre(speaker, model.cfg.global_dim)
        self.gtm = build_gtm(self.speaker, model.tvt)  # built once per speaker
        self._init_state()

    # -- lifecycle ---------------------------------------------------------

    def _init_state(self):
        model = self.model
        self.enc_state = EncoderState(model.encoder)
        self.dec_rings = make_rings(model.decoder.ctx)
        self.dec_frame_pos = 0
        self.pros_states = model.prosody.init_states()
        self.cnn_states = model.decoder.cnn.init_states()  # used when overlap == 0
        self.cnn_snapshot = None
        self.pending_fused = None  # site-B-fused frames awaiting re-synthesis
        self.tail = None           # raw audio of the pending frames
        self.samples_in = 0
        self.samples_out = 0
        self.chunks_fed = 0
        self.closed = False

    def reset(self):
        """Zero all stream state; weights and the speaker memory persist."""
        self._init_state()

    def flush(self):
        """Emit the residual overlap tail and close the session."""
        if self.closed:
            raise StateError("session already flushed")
        self.closed = True
        out = self.tail if self.tail is not None else np.zeros(0, dtype=F32)
        self.tail = None
        self.samples_out += out.shape[0]
        return out

    # -- properties --------------------------------------------------------

    @property
    def chunk_samples(self) -> int:
        return self.cfg.chunk_samples

    @property
    def frames_per_chunk(self) -> int:
        return self.cfg.chunk_frames

    @property
    def overlap_frames(self) -> int:
        return self.cfg.overlap_frames

    def state_nbytes(self) -> int:
        """Total bytes held in mutable stream state (constant in stream length)."""
        total = 0

        def visit(st):
            nonlocal total
            if isinstance(st, np.ndarray):
                total += st.nbytes
            elif isinstance(st, (list, tuple)):
                for item in st:
                    visit(item)

        visit(self.enc_state.conv)
        for ring in self.enc_state.rings + self.dec_rings:
            total += ring.state_nbytes()
        visit(self.pros_states)
        visit(self.cnn_states)
        if self.cnn_snapshot is not None:
            visit(self.cnn_snapshot)
        for arr in (self.pending_fused, self.tail):
            if arr is not None:
                total += arr.nbytes
        return total

    # -- processing --------------------------------------------------------

    def feed(self, samples):
        """Process one chunk; returns this chunk's synthesized samples."""
        if self.closed:
            raise StateError("cannot feed a flushed session")
        samples = np.asarray(samples, dtype=F32).reshape(-1)
        if samples.shape[0] != self.chunk_samples:
            raise InputError(
                f"chunk has {samples.shape[0]} samples, expected {self.chunk_samples}")

        model = self.model
        frames, _ = encode_frames(samples, model.encoder, self.enc_state,
                                  lookahead=self.lookahead)
        content, _ = vq_quantize(frames, model.encoder.vq)
        tvt = tvt_sequence(content, self.speaker, self.gtm, model.tvt)
        pred, self.pros_states = predict_f0_energy(content, model.prosody,
                                                   self.pros_states)
        ctxout = decode_context(content, tvt, pred, model.decoder, model.prosody,
                                f0_scale=self.f0_scale,
                                rings=self.dec_rings, start_pos=self.dec_frame_pos)
        self.dec_frame_pos += frames.shape[0]
        fused = cln_fuse(ctxout, tvt, model.decoder.cln_out)

        out = self._synthesize_chunk(fused)
        self.samples_in += samples.shape[0]
        self.samples_out += out.shape[0]
        self.chunks_fed += 1
        return out

    def _synthesize_chunk(self, fused):
        cnn = self.model.decoder.cnn
        n_ov = self.overlap_frames
        ov = n_ov * FRAME_HOP
        chunk = self.chunk_samples

        if n_ov == 0:
            raw, self.cnn_states = cnn.apply(fused, self.cnn_states)
            return np.clip(raw, -1.0, 1.0).astype(F32)

        first = self.pending_fused is None
        if first:
            work = cnn.init_states()
            pass1 = fused[:-n_ov]
        else:
            work = cnn.copy_states(self.cnn_snapshot)
            pass1 = np.concatenate([self.pending_fused, fused[:-n_ov]], axis=0)
        a1, work = cnn.apply(pass1, work)
        self.cnn_snapshot = cnn.copy_states(work)
        a2, work = cnn.apply(fused[-n_ov:], work)
        raw = np.concatenate([a1, a2]) if a1.size else a2
        self.pending_fused = fused[-n_ov:].copy()

        if first:
            out = raw[:chunk - ov]
            self.tail = raw[chunk - ov:].copy()
        else:
            head = _crossfade(self.tail, raw[:ov])
            out = np.concatenate([head, raw[ov:chunk]])
            self.tail = raw[chunk:].copy()
        return np.clip(out, -1.0, 1.0).astype(F32)


def open_session(model: TvtSynModel, stream_cfg: StreamConfig, speaker,
                 f0_scale: float = 1.0) -> StreamSession:
    """Validate the chunking, build the speaker memory, and zero all buffers."""
    return StreamSession(model, stream_cfg, speaker, f0_scale=f0_scale)


def stream_file(model, stream_cfg, speaker, wave, f0_scale=1.0, on_chunk=None):
    """Feed a whole waveform through a fresh session chunk by chunk.

    The wave is zero-padded up to a whole number of chunks. Returns the
    concatenated output (same length as the padded input). `on_chunk`
    receives (index, processing_seconds) per chunk when provided.
    """
    import time

    session = open_session(model, stream_cfg, speaker, f0_scale=f0_scale)
    wave = np.asarray(wave, dtype=F32).reshape(-1)
    c = session.chunk_samples
    n_chunks = -(-wave.size // c) if wave.size else 0
    padded = np.zeros(n_chunks * c, dtype=F32)
    padded[:wave.size] = wave
    pieces = []
    for k in range(n_chunks):
        t0 = time.perf_counter()
        pieces.append(session.feed(padded[k * c:(k + 1) * c]))
        if on_chunk is not None:
            on_chunk(k, time.perf_counter() - t0)
    pieces.append(session.flush())
    return np.concatenate(pieces) if pieces else np.zeros(0, dtype=F32)
