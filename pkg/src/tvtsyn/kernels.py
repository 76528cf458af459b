"""Deterministic numeric kernels: causal convolutions, normalization,
attention, rotary positions, and STFT/log-mel extraction.

Conventions:
  - all tensors are float32 numpy arrays,
  - conv feature maps are (channels, time), frame sequences are (time, dim),
  - every stateful kernel is pure given its explicit state argument, so
    kernels are safe to call concurrently on disjoint data.

Causality convention: a causal conv output at index j depends only on input
columns <= j*stride, with the left context held in an explicit state buffer
(zeros at stream start); a transposed causal conv emits frame t's
contribution at samples >= t*stride, carrying the ring-out tail as state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InputError

F32 = np.float32

MEL_WINDOWS_MS = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
MEL_FLOOR = 1e-5


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for a 1-D convolution layer."""

    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    transposed: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.dilation < 1:
            raise ConfigError(f"conv spec requires kernel/stride/dilation >= 1, got {self}")
        if self.transposed and self.kernel < self.stride:
            raise ConfigError(f"transposed conv needs kernel >= stride, got {self}")

    @property
    def state_len(self) -> int:
        """Columns of carried state: left context (forward) or additive tail (transposed)."""
        if self.transposed:
            return self.kernel - self.stride
        return (self.kernel - 1) * self.dilation


@dataclass(frozen=True)
class AttnMask:
    """Banded attention window: keys in [t - lookback, t + lookahead] are visible."""

    lookback_frames: int
    lookahead_frames: int = 0

    def __post_init__(self):
        if self.lookback_frames < 0:
            raise ConfigError("lookback_frames must be >= 0")
        if not 0 <= self.lookahead_frames <= 4:
            raise ConfigError("lookahead_frames must be in [0, 4]")

    def band(self, n_queries: int, n_keys: int) -> np.ndarray:
        """Boolean (n_queries, n_keys) matrix, True where attention is allowed."""
        t = np.arange(n_queries)[:, None]
        s = np.arange(n_keys)[None, :]
        return (s >= t - self.lookback_frames) & (s <= t + self.lookahead_frames)


def conv_state_init(spec: ConvSpec) -> np.ndarray:
    ch = spec.out_ch if spec.transposed else spec.in_ch
    return np.zeros((ch, spec.state_len), dtype=F32)


def _check_conv_args(x, spec, weight, bias, state, want_transposed):
    if spec.transposed != want_transposed:
        raise ConfigError(f"spec.transposed={spec.transposed} does not match kernel call")
    w_shape = (spec.in_ch, spec.out_ch, spec.kernel) if want_transposed else (
        spec.out_ch, spec.in_ch, spec.kernel)
    if weight.shape != w_shape:
        raise ConfigError(f"weight shape {weight.shape} does not match spec {spec} (want {w_shape})")
    if bias is not None and bias.shape != (spec.out_ch,):
        raise ConfigError(f"bias shape {bias.shape} does not match out_ch {spec.out_ch}")
    if x.ndim != 2 or x.shape[0] != spec.in_ch:
        raise ConfigError(f"input shape {x.shape} does not match in_ch {spec.in_ch}")
    ch = spec.out_ch if want_transposed else spec.in_ch
    if state.shape != (ch, spec.state_len):
        raise ConfigError(f"state shape {state.shape}, expected {(ch, spec.state_len)}")


def causal_conv1d(x, spec: ConvSpec, weight, bias=None, state=None):
    """Strided/dilated causal conv over (C_in, T) -> ((C_out, ceil(T/stride)), new_state).

    Output column j reads input columns j*stride - k*dilation for k in
    [0, kernel); the (kernel-1)*dilation columns of left context come from
    `state` (zeros at stream start). When carrying state across calls, T must
    be a multiple of stride so the output grid stays aligned.
    """
    if state is None:
        state = conv_state_init(spec)
    _check_conv_args(x, spec, weight, bias, state, want_transposed=False)
    t_in = x.shape[1]
    if t_in == 0:
        return np.zeros((spec.out_ch, 0), dtype=F32), state

    pad = spec.state_len
    xx = np.concatenate([state, x], axis=1) if pad else x
    new_state = xx[:, xx.shape[1] - pad:].copy() if pad else state

    span = pad + 1
    windows = sliding_window_view(xx, span, axis=1)          # (C_in, T, span)
    taps = windows[:, ::spec.stride, ::spec.dilation]        # (C_in, T', K)
    t_out = taps.shape[1]
    flat = taps.transpose(1, 0, 2).reshape(t_out, spec.in_ch * spec.kernel)
    y = flat @ weight.reshape(spec.out_ch, -1).T             # (T', C_out)
    y = y.T
    if bias is not None:
        y = y + bias[:, None]
    return np.ascontiguousarray(y, dtype=F32), new_state


def transposed_conv1d_causal(x, spec: ConvSpec, weight, bias=None, state=None):
    """Causal transposed conv over (C_in, T) -> ((C_out, T*stride), new_state).

    Frame t contributes to output samples [t*stride, t*stride + kernel); the
    (kernel - stride) samples of ring-out beyond T*stride are carried as an
    additive tail in `state` and folded into the next call's head.
    """
    if state is None:
        state = conv_state_init(spec)
    _check_conv_args(x, spec, weight, bias, state, want_transposed=True)
    t_in = x.shape[1]
    if t_in == 0:
        return np.zeros((spec.out_ch, 0), dtype=F32), state

    tail = spec.state_len
    contrib = np.tensordot(x, weight, axes=([0], [0]))        # (T, C_out, K)
    full = np.zeros((spec.out_ch, t_in * spec.stride + tail), dtype=F32)
    for k in range(spec.kernel):
        full[:, k:k + (t_in - 1) * spec.stride + 1:spec.stride] += contrib[:, :, k].T
    if tail:
        full[:, :tail] += state
        new_state = full[:, t_in * spec.stride:].copy()
    else:
        new_state = state
    y = full[:, :t_in * spec.stride]
    if bias is not None:
        y = y + bias[:, None]
    return np.ascontiguousarray(y, dtype=F32), new_state


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise ConfigError("layer_norm affine shape mismatch")
    mean = x.mean(axis=-1, keepdims=True, dtype=F32)
    var = np.square(x - mean).mean(axis=-1, keepdims=True, dtype=F32)
    return ((x - mean) / np.sqrt(var + F32(eps))) * gamma + beta


def elu(x):
    out = np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    return out.astype(F32, copy=False)


def relu(x):
    return np.maximum(x, F32(0))


def sigmoid(x):
    # split to avoid overflow in exp for large |x|
    pos = x >= 0
    out = np.empty_like(x, dtype=F32)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def masked_softmax(scores, allowed=None):
    """Row softmax with optional boolean mask; disallowed cells get -inf.

    Rows must keep at least one allowed cell, otherwise ConfigError.
    """
    if allowed is not None:
        if allowed.shape != scores.shape[-2:]:
            raise ConfigError(f"mask shape {allowed.shape} vs scores {scores.shape}")
        if not allowed.any(axis=-1).all():
            raise ConfigError("attention row is fully masked")
        scores = np.where(allowed, scores, F32(-np.inf))
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def sdpa(queries, keys, values, mask=None, return_weights=False):
    """Scaled dot-product attention: (T,d) x (S,d) x (S,dv) -> (T,dv).

    `mask` may be an AttnMask (banded on row indices), an explicit boolean
    (T,S) matrix (True = visible), or None for full attention.
    """
    if queries.shape[-1] != keys.shape[-1]:
        raise ConfigError("query/key dim mismatch")
    if keys.shape[0] != values.shape[0]:
        raise ConfigError("key/value count mismatch")
    scale = F32(1.0 / np.sqrt(queries.shape[-1]))
    scores = (queries @ keys.T) * scale
    allowed = mask.band(queries.shape[0], keys.shape[0]) if isinstance(mask, AttnMask) else mask
    w = masked_softmax(scores, allowed)
    out = w @ values
    if return_weights:
        return out, w
    return out


def rope_cos_sin(positions, dim):
    """cos/sin tables for rotary positions; angles built in f64, emitted f32."""
    if dim % 2:
        raise ConfigError("rotary embedding requires an even dim")
    inv_freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang).astype(F32), np.sin(ang).astype(F32)


def rope_apply(x, position_offset=0):
    """Rotate feature pairs of x by position-dependent angles.

    x is (T, d) or (T, heads, d); row i uses absolute position
    position_offset + i, so streaming continuity only needs the offset.
    """
    d = x.shape[-1]
    t = x.shape[0]
    cos, sin = rope_cos_sin(position_offset + np.arange(t), d)
    if x.ndim == 3:
        cos = cos[:, None, :]
        sin = sin[:, None, :]
    elif x.ndim != 2:
        raise ConfigError(f"rope_apply expects 2-D or 3-D input, got {x.shape}")
    half = d // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def hann_window(n):
    return np.hanning(n).astype(F32)


def mel_filterbank(n_mels, n_fft, sample_rate, fmin=0.0, fmax=None):
    """Triangular HTK-mel filterbank over rfft bins: (n_mels, n_fft//2 + 1)."""
    if fmax is None:
        fmax = sample_rate / 2.0

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    mel_pts = np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2)
    hz_pts = from_mel(mel_pts)
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, bin_hz.size), dtype=np.float64)
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_hz - left) / max(center - left, 1e-12)
        down = (right - bin_hz) / max(right - center, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb.astype(F32)


def stft_log_mel(wave, window_ms, n_mels=80, sample_rate=16000):
    """Log-compressed mel magnitudes, (frames, n_mels); hop = window/4.

    Returns an empty (0, n_mels) array when the wave is shorter than one
    window, which callers treat as "no usable frames".
    """
    if window_ms not in MEL_WINDOWS_MS:
        raise ConfigError(f"window_ms must be one of {MEL_WINDOWS_MS}, got {window_ms}")
    wave = np.asarray(wave, dtype=F32).reshape(-1)
    win = int(round(window_ms * sample_rate / 1000.0))
    hop = max(win // 4, 1)
    if wave.size < win:
        return np.zeros((0, n_mels), dtype=F32)
    frames = sliding_window_view(wave, win)[::hop]
    mag = np.abs(np.fft.rfft(frames * hann_window(win), axis=1)).astype(F32)
    mel = mag @ mel_filterbank(n_mels, win, sample_rate).T
    return np.log(np.maximum(mel, F32(MEL_FLOOR)))


def l2_normalize_rows(x, eps=1e-12):
    n = np.sqrt(np.sum(np.square(x), axis=-1, keepdims=True))
    return (x / np.maximum(n, eps)).astype(F32, copy=False)
