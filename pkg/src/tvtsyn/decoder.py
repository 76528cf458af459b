"""Waveform decoder: cLN-with-fusion conditioning, a strictly causal context
transformer, and the mirrored SEANet upsampler back to 16 kHz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .context import TransformerParams, transformer_full, transformer_step
from .encoder import ConvLayer, ResBlock
from .errors import InputError
from .kernels import (F32, ConvSpec, conv_state_init, causal_conv1d, elu,
                      layer_norm, sigmoid, transposed_conv1d_causal)
from .prosody import inject_prosody
from .weights import WeightStore, encoder_stage_widths


@dataclass
class ClnFusionParams:
    """Conditional layer norm with fusion:
    y = Proj((1 + gamma_t) * Norm(x_t) + beta_t || gate_t * Norm(s_t)).
    """

    ln_x_g: np.ndarray
    ln_x_b: np.ndarray
    ln_s_g: np.ndarray
    ln_s_b: np.ndarray
    gamma_w: np.ndarray
    gamma_b: np.ndarray
    beta_w: np.ndarray
    beta_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray

    @classmethod
    def from_store(cls, store, prefix, cfg: ModelConfig):
        d, s = cfg.d_model, cfg.timbre_dim
        return cls(
            ln_x_g=store.get(f"{prefix}.ln_x.gamma", (d,)),
            ln_x_b=store.get(f"{prefix}.ln_x.beta", (d,)),
            ln_s_g=store.get(f"{prefix}.ln_s.gamma", (s,)),
            ln_s_b=store.get(f"{prefix}.ln_s.beta", (s,)),
            gamma_w=store.get(f"{prefix}.gamma_gen.weight", (d, s)),
            gamma_b=store.get(f"{prefix}.gamma_gen.bias", (d,)),
            beta_w=store.get(f"{prefix}.beta_gen.weight", (d, s)),
            beta_b=store.get(f"{prefix}.beta_gen.bias", (d,)),
            gate_w=store.get(f"{prefix}.gate_gen.weight", (s, s)),
            gate_b=store.get(f"{prefix}.gate_gen.bias", (s,)),
            proj_w=store.get(f"{prefix}.proj.weight", (d, d + s)),
            proj_b=store.get(f"{prefix}.proj.bias", (d,)),
        )


def cln_fuse(x, s, p: ClnFusionParams):
    """Condition content frames (T, d_model) on timbre frames (T, timbre_dim)."""
    x = np.atleast_2d(x)
    s = np.atleast_2d(s)
    if x.shape[0] != s.shape[0]:
        raise InputError(f"content/timbre frame counts differ: {x.shape[0]} vs {s.shape[0]}")
    nx = layer_norm(x, p.ln_x_g, p.ln_x_b)
    ns = layer_norm(s, p.ln_s_g, p.ln_s_b)
    gamma = s @ p.gamma_w.T + p.gamma_b
    beta = s @ p.beta_w.T + p.beta_b
    gate = sigmoid(s @ p.gate_w.T + p.gate_b)
    fused = np.concatenate([(1.0 + gamma) * nx + beta, gate * ns], axis=1)
    return (fused @ p.proj_w.T + p.proj_b).astype(F32, copy=False)


@dataclass
class DecoderCnn:
    conv_in: ConvLayer
    stages: list  # (up ConvLayer[transposed], ResBlock) pairs
    conv_out: ConvLayer

    @classmethod
    def from_store(cls, store: WeightStore, cfg: ModelConfig):
        widths = list(reversed(encoder_stage_widths(cfg)))
        conv_in = ConvLayer.from_store(store, "decoder.cnn.conv_in",
                                       ConvSpec(cfg.d_model, widths[0], cfg.final_kernel))
        stages = []
        for i, stride in enumerate(cfg.decoder_strides):
            up = ConvLayer.from_store(
                store, f"decoder.cnn.stage{i}.up",
                ConvSpec(widths[i], widths[i + 1], 2 * stride, stride, transposed=True))
            res = ResBlock.from_store(store, f"decoder.cnn.stage{i}.res",
                                      widths[i + 1], cfg.res_kernel, cfg.res_dilation)
            stages.append((up, res))
        conv_out = ConvLayer.from_store(store, "decoder.cnn.conv_out",
                                        ConvSpec(widths[-1], 1, cfg.init_kernel))
        return cls(conv_in, stages, conv_out)

    def init_states(self):
        states = [conv_state_init(self.conv_in.spec)]
        for up, res in self.stages:
            states.append(conv_state_init(up.spec))
            states.append(res.init_states())
        states.append(conv_state_init(self.conv_out.spec))
        return states

    def copy_states(self, states):
        out = []
        for st in states:
            out.append([a.copy() for a in st] if isinstance(st, list) else st.copy())
        return out

    def apply(self, frames, states=None):
        """Conditioned frames (T, d_model) -> ((T*320,) samples, states)."""
        if states is None:
            states = self.init_states()
        x = np.ascontiguousarray(frames.T)
        i = 0
        x, states[i] = causal_conv1d(x, self.conv_in.spec, self.conv_in.weight,
                                     self.conv_in.bias, states[i])
        i += 1
        for up, res in self.stages:
            x = elu(x)
            x, states[i] = transposed_conv1d_causal(x, up.spec, up.weight, up.bias, states[i])
            i += 1
            x = res.apply(x, states[i])
            i += 1
        x = elu(x)
        x, states[i] = causal_conv1d(x, self.conv_out.spec, self.conv_out.weight,
                                     self.conv_out.bias, states[i])
        return np.tanh(x[0]).astype(F32), states


@dataclass
class DecoderParams:
    cln_in: ClnFusionParams
    ctx: TransformerParams
    cln_out: ClnFusionParams
    cnn: DecoderCnn

    @classmethod
    def from_store(cls, store: WeightStore, cfg: ModelConfig):
        return cls(
            cln_in=ClnFusionParams.from_store(store, "decoder.cln_in", cfg),
            ctx=TransformerParams.from_store(store, "decoder.attn", cfg),
            cln_out=ClnFusionParams.from_store(store, "decoder.cln_out", cfg),
            cnn=DecoderCnn.from_store(store, cfg),
        )


def decode_context(frames, tvt, prosody_stream, params: DecoderParams,
                   prosody_params, *, f0_scale=1.0, rings=None, start_pos=0):
    """Condition content on timbre, inject prosody, run the causal context stack.

    frames/tvt/prosody_stream must be frame-aligned. Stateless when rings is
    None (whole sequence); incremental otherwise.
    """
    frames = np.atleast_2d(frames)
    tvt = np.atleast_2d(tvt)
    prosody_stream = np.atleast_2d(prosody_stream)
    if not (frames.shape[0] == tvt.shape[0] == prosody_stream.shape[0]):
        raise InputError(
            f"stream lengths differ: content {frames.shape[0]}, timbre {tvt.shape[0]}, "
            f"prosody {prosody_stream.shape[0]}")
    x = cln_fuse(frames, tvt, params.cln_in)
    x = inject_prosody(x, prosody_stream, prosody_params, f0_scale=f0_scale)
    if rings is None:
        return transformer_full(x, params.ctx, lookahead=0)
    return transformer_step(x, params.ctx, rings, start_pos, lookahead=0)


def synthesize_wave(frames, tvt, params: DecoderParams, states=None):
    """Context output + timbre -> ((T*320,) waveform in [-1, 1], cnn states)."""
    y = cln_fuse(frames, tvt, params.cln_out)
    wave, states = params.cnn.apply(y, states)
    return np.clip(wave, -1.0, 1.0).astype(F32), states
