"""Comparison methods: moving-average upsampling, pose-only transformer, LSTM Po/PA."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .audio import N_FEATURES
from .errors import BadWindow
from .model import DecodeHead, ModelConfig, PoseRefiner, Rebalance, TransformerEncoder, interp_matrix
from .pose import POSE_DIM, PoseSequence


def moving_average(x: np.ndarray, window_n: int) -> np.ndarray:
    """Centred moving average along axis 0.

    Near the ends the window shrinks symmetrically, which keeps the filter
    exact on affine signals.
    """
    if window_n < 1 or window_n % 2 == 0:
        raise BadWindow(f"window_n must be odd and >= 1, got {window_n}")
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    n, half = x.shape[0], window_n // 2
    if half == 0 or n < 3:
        return out
    # direct window sums rather than a running cumsum, which drifts on long streams
    for i in range(n):
        h = min(i, n - 1 - i)
        if h < half:
            out[i] = x[i - h : i + h + 1].mean(axis=0)
    if n > 2 * half:
        view = np.lib.stride_tricks.sliding_window_view(x, window_n, axis=0)
        out[half : n - half] = view.mean(axis=-1)
    return out


def linear_resample(values: np.ndarray, t_src: np.ndarray, t_dst: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation along axis 0, extrapolating the end segments."""
    if len(t_src) == 1:
        return np.repeat(values[:1], len(t_dst), axis=0)
    seg = np.clip(np.searchsorted(t_src, t_dst, side="right") - 1, 0, len(t_src) - 2)
    w = (t_dst - t_src[seg]) / (t_src[seg + 1] - t_src[seg])
    w = w.reshape((-1,) + (1,) * (values.ndim - 1))
    return values[seg] * (1 - w) + values[seg + 1] * w


def sma_upsample(sparse: PoseSequence, window_n: int = 5, target_fps: float = 50.0, n_out: int | None = None) -> PoseSequence:
    """Moving-average smoothing then linear interpolation at the target rate."""
    smooth = moving_average(sparse.frames, window_n)
    if n_out is None:
        n_out = int(round(len(sparse) * target_fps / sparse.fps))
    t_src = np.arange(len(sparse)) / sparse.fps
    t_dst = np.arange(n_out) / target_fps
    return PoseSequence(linear_resample(smooth, t_src, t_dst), target_fps, sparse.start_time)


def sma_predict(sparse: np.ndarray, stride: int, window_n: int = 5, t_out: int = 150) -> np.ndarray:
    """Batched SMA on flattened windows (B, T_in, 39) -> (B, t_out, 13, 3)."""
    smooth = moving_average(np.moveaxis(sparse, 1, 0), window_n)
    t_src = np.arange(sparse.shape[1]) * stride
    out = linear_resample(smooth, t_src.astype(float), np.arange(t_out, dtype=float))
    return np.moveaxis(out, 0, 1).reshape(sparse.shape[0], t_out, 13, 3)


class PoseOnlyTransformer(PoseRefiner):
    """MAPnet without the audio branch and fusion stage."""

    kind = "pot"
    uses_audio = False

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        c = cfg
        self.pose_embed = nn.Linear(POSE_DIM, c.h1)
        self.pose_tf = TransformerEncoder(c.h1, c.pose_audio_layers, c.heads, c.ff_dim, c.dropout, use_pe=True)
        self.pose_rebalance = Rebalance([c.t_in], c.h2, learned=c.rebalance)
        self.head = DecodeHead(c.h2 * c.h1, c.decode_widths, c.t_out)

    def forward(self, pose, audio=None):
        p, _ = self._inputs(pose, None)
        return self._outputs(self.head(self.pose_rebalance(self.pose_tf(self.pose_embed(p)))))


class LSTMBaseline(PoseRefiner):
    """Stacked LSTM over pose (Po) or pose + time-resampled audio (PA) with the MAPnet decode head."""

    def __init__(self, cfg: ModelConfig, with_audio: bool):
        super().__init__(cfg)
        self.uses_audio = with_audio
        self.kind = "lstm_pa" if with_audio else "lstm_po"
        self.input_dim = POSE_DIM + (N_FEATURES if with_audio else 0)
        self.lstm = nn.LSTM(self.input_dim, cfg.lstm_hidden, cfg.lstm_layers, batch_first=True)
        self.register_buffer("audio_resample", interp_matrix(cfg.t_audio, cfg.t_in).float())
        self.head = DecodeHead(cfg.t_in * cfg.lstm_hidden, cfg.decode_widths, cfg.t_out)

    def step_features(self, pose, audio=None):
        p, a = self._inputs(pose, audio)
        if self.uses_audio:
            a = torch.einsum("ot,btf->bof", self.audio_resample.to(a.dtype), a)
            return torch.cat([p, a], dim=-1)
        return p

    def forward(self, pose, audio=None):
        h, _ = self.lstm(self.step_features(pose, audio))
        return self._outputs(self.head(h))
