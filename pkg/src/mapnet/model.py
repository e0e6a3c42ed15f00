"""MAPnet: pose and audio transformers, rebalancing layers, fusion transformer, decode head."""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import N_FEATURES
from .data import t_in_for
from .errors import BadShape, UnconfiguredInputLength, ValidationError
from .pose import N_JOINTS, POSE_DIM

FUSION_STRATEGIES = {"early": (2, 12), "balanced": (7, 7), "late": (12, 2)}
POSE_SCALE_MM = 1000.0


@dataclass
class ModelConfig:
    h1: int = 160
    h2: int = 150
    pose_audio_layers: int = 12
    fusion_layers: int = 2
    heads: int = 8
    ff_dim: int = 640
    tau: float = 1.0
    t_out: int = 150
    t_audio: int = 150
    dropout: float = 0.1
    decode_widths: list = field(default_factory=lambda: [1024, 1024])
    rebalance: bool = True
    fusion_strategy: str = "late"
    stride: int | None = None
    lstm_hidden: int = 256
    lstm_layers: int = 2

    def __post_init__(self):
        self.decode_widths = list(self.decode_widths)
        self.validate()

    def validate(self):
        if self.h1 % self.heads:
            raise ValidationError(f"h1={self.h1} not divisible by heads={self.heads}")
        if self.fusion_strategy != "custom":
            if self.fusion_strategy not in FUSION_STRATEGIES:
                raise ValidationError(f"unknown fusion strategy {self.fusion_strategy!r}")
            if (self.pose_audio_layers, self.fusion_layers) != FUSION_STRATEGIES[self.fusion_strategy]:
                raise ValidationError(
                    f"{self.fusion_strategy} fusion needs layers {FUSION_STRATEGIES[self.fusion_strategy]}, "
                    f"got {(self.pose_audio_layers, self.fusion_layers)}"
                )
        if len(self.decode_widths) != 2:
            raise ValidationError("decode head takes exactly two hidden widths")

    @classmethod
    def with_strategy(cls, strategy: str, **kw) -> "ModelConfig":
        pa, fu = FUSION_STRATEGIES[strategy]
        return cls(pose_audio_layers=pa, fusion_layers=fu, fusion_strategy=strategy, **kw)

    @property
    def t_in(self) -> int:
        return t_in_for(self.tau, self.t_out, self.stride)

    def to_dict(self) -> dict:
        return asdict(self)


@functools.lru_cache(maxsize=64)
def positional_encoding(T: int, dim: int) -> torch.Tensor:
    """Sinusoidal table: sin on even channels, cos on odd, base 10000^(2i/dim)."""
    pos = torch.arange(T, dtype=torch.float64)[:, None]
    i2 = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i2 / dim)
    pe = torch.zeros(T, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, return_weights=False):
        B, T, D = x.shape
        dh = D // self.heads

        def split(t):
            return t.view(B, T, self.heads, dh).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        ctx = (self.drop(weights) @ v).transpose(1, 2).reshape(B, T, D)
        out = self.out(ctx)
        return (out, weights) if return_weights else out


class EncoderLayer(nn.Module):
    """Post-norm block: x = norm(x + MHA(x)); x = norm(x + FF(x))."""

    def __init__(self, dim, heads, ff_dim, dropout=0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.attn(x)))
        return self.norm2(x + self.drop(self.ff(x)))


class TransformerEncoder(nn.Module):
    def __init__(self, dim, n_layers, heads, ff_dim, dropout=0.0, use_pe=True):
        super().__init__()
        self.dim = dim
        self.use_pe = use_pe
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, ff_dim, dropout) for _ in range(n_layers))

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise BadShape(f"expected hidden size {self.dim}, got {x.shape[-1]}")
        if self.use_pe:
            x = x + positional_encoding(x.shape[1], self.dim).to(x.dtype)
        for layer in self.layers:
            x = layer(x)
        return x


def interp_matrix(t_in: int, t_out: int) -> torch.Tensor:
    """(t_out, t_in) linear-interpolation matrix over a shared time span."""
    if t_in == 1:
        return torch.ones(t_out, 1, dtype=torch.float64)
    src = np.linspace(0, t_in - 1, t_out)
    m = np.zeros((t_out, t_in))
    lo = np.floor(src).astype(int).clip(0, t_in - 2)
    frac = src - lo
    m[np.arange(t_out), lo] = 1 - frac
    m[np.arange(t_out), lo + 1] += frac
    return torch.from_numpy(m)


class Rebalance(nn.Module):
    """Learned time-axis affine map T -> H2, one weight set per input length.

    With ``learned=False`` it falls back to fixed linear interpolation, which
    is the plain concatenation path used for the ablation.
    """

    def __init__(self, lengths, h2, learned=True, init="interp"):
        super().__init__()
        self.h2 = h2
        self.learned = learned
        self.lengths = sorted(set(int(t) for t in lengths))
        if learned:
            self.weight = nn.ParameterDict()
            self.bias = nn.ParameterDict()
            for t in self.lengths:
                if init == "interp":
                    w = interp_matrix(t, h2).float()
                elif init == "identity":
                    w = torch.eye(h2, t)
                else:
                    w = torch.empty(h2, t)
                    nn.init.xavier_uniform_(w)
                self.weight[str(t)] = nn.Parameter(w)
                self.bias[str(t)] = nn.Parameter(torch.zeros(h2))
        else:
            for t in self.lengths:
                self.register_buffer(f"fixed_{t}", interp_matrix(t, h2).float())

    def forward(self, x):
        t = x.shape[1]
        if t not in self.lengths:
            raise UnconfiguredInputLength(f"no rebalancing weights for input length {t}")
        if self.learned:
            w, b = self.weight[str(t)], self.bias[str(t)]
            return torch.einsum("ot,bth->boh", w.to(x.dtype), x) + b.to(x.dtype)[None, :, None]
        w = getattr(self, f"fixed_{t}")
        return torch.einsum("ot,bth->boh", w.to(x.dtype), x)


class DecodeHead(nn.Module):
    def __init__(self, in_dim, widths, t_out):
        super().__init__()
        self.t_out = t_out
        self.fc1 = nn.Linear(in_dim, widths[0])
        self.fc2 = nn.Linear(widths[0], widths[1])
        self.fc3 = nn.Linear(widths[1], t_out * POSE_DIM)

    def forward(self, x):
        x = F.relu(self.fc1(x.flatten(1)))
        x = F.relu(self.fc2(x))
        return self.fc3(x).view(x.shape[0], self.t_out, POSE_DIM)


class PoseRefiner(nn.Module):
    """Shared I/O convention: pose in mm (B, T_in, 39), audio (B, 150, 35) -> (B, T_out, 13, 3) mm."""

    kind = "base"
    uses_audio = True

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("audio_mean", torch.zeros(N_FEATURES))
        self.register_buffer("audio_std", torch.ones(N_FEATURES))
        self.register_buffer("pose_mean", torch.zeros(POSE_DIM))
        self.register_buffer("pose_std", torch.full((POSE_DIM,), POSE_SCALE_MM))

    def set_audio_stats(self, feats: np.ndarray):
        flat = np.asarray(feats, dtype=np.float64).reshape(-1, N_FEATURES)
        std = flat.std(axis=0)
        self.audio_mean.copy_(torch.from_numpy(flat.mean(axis=0)))
        self.audio_std.copy_(torch.from_numpy(np.where(std > 1e-8, std, 1.0)))

    def set_pose_stats(self, poses: np.ndarray):
        """Per-coordinate mean/std of clean poses; used to scale inputs and un-scale outputs."""
        flat = np.asarray(poses, dtype=np.float64).reshape(-1, POSE_DIM)
        std = flat.std(axis=0)
        self.pose_mean.copy_(torch.from_numpy(flat.mean(axis=0)))
        self.pose_std.copy_(torch.from_numpy(np.where(std > 1e-6, std, 1.0)))

    def _inputs(self, pose, audio):
        if pose.ndim != 3 or pose.shape[-1] != POSE_DIM:
            raise BadShape(f"pose input must be (B, T_in, {POSE_DIM}), got {tuple(pose.shape)}")
        p = (pose - self.pose_mean.to(pose.dtype)) / self.pose_std.to(pose.dtype)
        a = None
        if self.uses_audio:
            if audio is None or audio.ndim != 3 or audio.shape[-1] != N_FEATURES:
                raise BadShape(f"audio input must be (B, T, {N_FEATURES})")
            a = (audio - self.audio_mean.to(audio.dtype)) / self.audio_std.to(audio.dtype)
        return p, a

    def _outputs(self, flat):
        flat = flat.view(flat.shape[0], self.cfg.t_out, POSE_DIM)
        out = flat * self.pose_std.to(flat.dtype) + self.pose_mean.to(flat.dtype)
        return out.view(flat.shape[0], self.cfg.t_out, N_JOINTS, 3)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


class MAPnet(PoseRefiner):
    kind = "mapnet"

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        c = cfg
        self.pose_embed = nn.Linear(POSE_DIM, c.h1)
        self.audio_embed = nn.Linear(N_FEATURES, c.h1)
        self.pose_tf = TransformerEncoder(c.h1, c.pose_audio_layers, c.heads, c.ff_dim, c.dropout, use_pe=True)
        self.audio_tf = TransformerEncoder(c.h1, c.pose_audio_layers, c.heads, c.ff_dim, c.dropout, use_pe=True)
        self.pose_rebalance = Rebalance([c.t_in], c.h2, learned=c.rebalance)
        self.audio_rebalance = Rebalance([c.t_audio], c.h2, learned=c.rebalance)
        self.fusion_tf = TransformerEncoder(c.h1, c.fusion_layers, c.heads, c.ff_dim, c.dropout, use_pe=False)
        self.head = DecodeHead(2 * c.h2 * c.h1, c.decode_widths, c.t_out)

    def embed(self, pose, audio):
        """Combined embedding C of shape (B, 2*H2, H1): pose rows first."""
        p, a = self._inputs(pose, audio)
        pe = self.pose_rebalance(self.pose_tf(self.pose_embed(p)))
        ae = self.audio_rebalance(self.audio_tf(self.audio_embed(a)))
        return torch.cat([pe, ae], dim=1)

    def fuse_and_decode(self, pose_emb, audio_emb):
        if pose_emb.shape != audio_emb.shape or pose_emb.shape[1:] != (self.cfg.h2, self.cfg.h1):
            raise BadShape("pose and audio blocks must both be (B, H2, H1)")
        return self._outputs(self.head(self.fusion_tf(torch.cat([pose_emb, audio_emb], dim=1))))

    def forward(self, pose, audio):
        c = self.embed(pose, audio)
        h2 = self.cfg.h2
        return self.fuse_and_decode(c[:, :h2], c[:, h2:])


def mpjpe_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over frames (and batch) of the mean per-joint Euclidean distance."""
    if pred.shape != gt.shape or pred.shape[-2:] != (N_JOINTS, 3):
        raise BadShape(f"pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    return torch.linalg.vector_norm(pred - gt, dim=-1).mean()


def build_model(kind: str, cfg: ModelConfig) -> PoseRefiner:
    from .baselines import LSTMBaseline, PoseOnlyTransformer

    registry = {
        "mapnet": MAPnet,
        "mapnet_norebal": MAPnet,
        "pot": PoseOnlyTransformer,
        "lstm_po": lambda c: LSTMBaseline(c, with_audio=False),
        "lstm_pa": lambda c: LSTMBaseline(c, with_audio=True),
    }
    if kind not in registry:
        raise ValidationError(f"unknown model kind {kind!r}; choose from {sorted(registry)}")
    if kind == "mapnet_norebal" and cfg.rebalance:
        cfg = ModelConfig(**{**cfg.to_dict(), "rebalance": False})
    model = registry[kind](cfg)
    model.kind = kind
    return model
