"""Streaming content encoder: causal SEANet CNN to 50 Hz frames, masked
context attention, and the factorized VQ bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .context import TransformerParams, make_rings, transformer_full, transformer_step
from .errors import ConfigError, InputError
from .kernels import (F32, ConvSpec, causal_conv1d, conv_state_init, elu,
                      l2_normalize_rows)
from .weights import WeightStore, encoder_stage_widths


@dataclass
class ConvLayer:
    spec: ConvSpec
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def from_store(cls, store, prefix, spec: ConvSpec):
        if spec.transposed:
            shape = (spec.in_ch, spec.out_ch, spec.kernel)
        else:
            shape = (spec.out_ch, spec.in_ch, spec.kernel)
        return cls(spec=spec,
                   weight=store.get(f"{prefix}.weight", shape),
                   bias=store.get(f"{prefix}.bias", (spec.out_ch,)))


@dataclass
class ResBlock:
    """conv(k, dilated) -> ELU -> conv(1x1) -> true skip."""

    conv1: ConvLayer
    conv2: ConvLayer

    @classmethod
    def from_store(cls, store, prefix, width, kernel, dilation):
        return cls(
            conv1=ConvLayer.from_store(store, f"{prefix}.conv1",
                                       ConvSpec(width, width, kernel, 1, dilation)),
            conv2=ConvLayer.from_store(store, f"{prefix}.conv2",
                                       ConvSpec(width, width, 1)),
        )

    def apply(self, x, states):
        h, states[0] = causal_conv1d(x, self.conv1.spec, self.conv1.weight,
                                     self.conv1.bias, states[0])
        h = elu(h)
        h, states[1] = causal_conv1d(h, self.conv2.spec, self.conv2.weight,
                                     self.conv2.bias, states[1])
        return x + h

    def init_states(self):
        return [conv_state_init(self.conv1.spec), conv_state_init(self.conv2.spec)]


@dataclass
class EncoderCnn:
    conv_in: ConvLayer
    stages: list  # (ResBlock, down ConvLayer) pairs
    conv_out: ConvLayer

    @classmethod
    def from_store(cls, store: WeightStore, cfg: ModelConfig):
        widths = encoder_stage_widths(cfg)
        conv_in = ConvLayer.from_store(store, "encoder.cnn.conv_in",
                                       ConvSpec(1, widths[0], cfg.init_kernel))
        stages = []
        for i, stride in enumerate(cfg.encoder_strides):
            res = ResBlock.from_store(store, f"encoder.cnn.stage{i}.res",
                                      widths[i], cfg.res_kernel, cfg.res_dilation)
            down = ConvLayer.from_store(store, f"encoder.cnn.stage{i}.down",
                                        ConvSpec(widths[i], widths[i + 1], 2 * stride, stride))
            stages.append((res, down))
        conv_out = ConvLayer.from_store(store, "encoder.cnn.conv_out",
                                        ConvSpec(widths[-1], cfg.d_model, cfg.final_kernel))
        return cls(conv_in, stages, conv_out)

    def init_states(self):
        states = [conv_state_init(self.conv_in.spec)]
        for res, down in self.stages:
            states.append(res.init_states())
            states.append(conv_state_init(down.spec))
        states.append(conv_state_init(self.conv_out.spec))
        return states

    def apply(self, wave, states=None):
        """(T,) samples -> ((T/320, d_model) frames, states)."""
        if states is None:
            states = self.init_states()
        x = np.asarray(wave, dtype=F32).reshape(1, -1)
        i = 0
        x, states[i] = causal_conv1d(x, self.conv_in.spec, self.conv_in.weight,
                                     self.conv_in.bias, states[i])
        i += 1
        for res, down in self.stages:
            x = res.apply(x, states[i])
            i += 1
            x = elu(x)
            x, states[i] = causal_conv1d(x, down.spec, down.weight, down.bias, states[i])
            i += 1
        x = elu(x)
        x, states[i] = causal_conv1d(x, self.conv_out.spec, self.conv_out.weight,
                                     self.conv_out.bias, states[i])
        return np.ascontiguousarray(x.T), states


@dataclass
class VqParams:
    proj_down: np.ndarray  # (vq_dim, d_model)
    proj_up: np.ndarray    # (d_model, vq_dim)
    codebook: np.ndarray   # (codebook_size, vq_dim)
    l2_normalize: bool
    commitment: float

    @classmethod
    def from_store(cls, store: WeightStore, cfg: ModelConfig):
        codebook = store.get("encoder.vq.codebook", (cfg.codebook_size, cfg.vq_dim))
        if cfg.vq_l2_normalize:
            norms = np.linalg.norm(codebook, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise ConfigError("codebook rows must be unit-norm under l2_normalize")
        return cls(
            proj_down=store.get("encoder.vq.proj_down.weight", (cfg.vq_dim, cfg.d_model)),
            proj_up=store.get("encoder.vq.proj_up.weight", (cfg.d_model, cfg.vq_dim)),
            codebook=codebook,
            l2_normalize=cfg.vq_l2_normalize,
            commitment=cfg.vq_commitment,
        )


def vq_latents(frames, vq: VqParams):
    z = frames @ vq.proj_down.T
    if vq.l2_normalize:
        z = l2_normalize_rows(z)
    return z


def vq_nearest(latents, codebook):
    """Row-wise nearest code by L2, ties broken toward the lowest index.

    Distances are computed in float64 so the argmin is stable against
    formula-level rounding; only indices leave this function.
    """
    z = latents.astype(np.float64)
    c = codebook.astype(np.float64)
    d = (np.sum(z * z, axis=1, keepdims=True)
         - 2.0 * (z @ c.T)
         + np.sum(c * c, axis=1)[None, :])
    return np.argmin(d, axis=1)


def vq_quantize(frames, vq: VqParams):
    """Quantize (T, d_model) frames -> ((T, d_model) reconstruction, indices)."""
    z = vq_latents(frames, vq)
    idx = vq_nearest(z, vq.codebook)
    out = vq.codebook[idx] @ vq.proj_up.T
    return out.astype(F32, copy=False), idx


def vq_commitment_value(frames, vq: VqParams) -> float:
    """Commitment diagnostic: weighted mean squared residual (not optimized)."""
    z = vq_latents(frames, vq)
    idx = vq_nearest(z, vq.codebook)
    resid = z - vq.codebook[idx]
    return float(vq.commitment * np.mean(np.sum(resid * resid, axis=1)))


@dataclass
class EncoderParams:
    cnn: EncoderCnn
    ctx: TransformerParams
    vq: VqParams
    lookahead: int

    @classmethod
    def from_store(cls, store: WeightStore, cfg: ModelConfig):
        return cls(
            cnn=EncoderCnn.from_store(store, cfg),
            ctx=TransformerParams.from_store(store, "encoder.attn", cfg),
            vq=VqParams.from_store(store, cfg),
            lookahead=cfg.encoder_lookahead,
        )


class EncoderState:
    """Per-stream encoder state: conv buffers, KV rings, frame clock."""

    def __init__(self, params: EncoderParams):
        self.conv = params.cnn.init_states()
        self.rings = make_rings(params.ctx)
        self.frame_pos = 0

    def reset(self, params: EncoderParams):
        self.conv = params.cnn.init_states()
        for r in self.rings:
            r.reset()
        self.frame_pos = 0


def encode_frames(wave, params: EncoderParams, state: EncoderState = None,
                  *, lookahead=None, block_frames=None):
    """Waveform -> (frames (T/320, d_model), state).

    Stateless call (state=None): one-shot pass whose attention mask optionally
    mirrors chunked execution via `block_frames`. Stateful call: incremental
    block with lookahead confined to the supplied block.
    """
    wave = np.asarray(wave, dtype=F32).reshape(-1)
    if wave.size % 320:
        raise InputError(f"wave length {wave.size} is not a multiple of the 320-sample hop")
    la = params.lookahead if lookahead is None else lookahead
    if state is None:
        frames, _ = params.cnn.apply(wave)
        frames = transformer_full(frames, params.ctx, lookahead=la,
                                  block_frames=block_frames)
        return frames, None
    frames, state.conv = params.cnn.apply(wave, state.conv)
    frames = transformer_step(frames, params.ctx, state.rings, state.frame_pos,
                              lookahead=la)
    state.frame_pos += frames.shape[0]
    return frames, state


def context_attend(frames, params: TransformerParams, rings, start_pos,
                   *, lookahead):
    """Incremental masked self-attention over one block (thin alias)."""
    return transformer_step(frames, params, rings, start_pos, lookahead=lookahead)
