"""Training loop, checkpoint container, batched prediction and stitched inference."""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import audio as A
from .data import OUTPUT_FPS, WindowSpec, WindowSet, tau_stride
from .errors import ArchiveIOError, BadShape, NonFiniteLoss, TooShort, ValidationError
from .model import ModelConfig, PoseRefiner, build_model, mpjpe_loss
from .pose import POSE_DIM, PoseSequence

log = logging.getLogger(__name__)

MAGIC = b"MAPNETCK"


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    seed: int = 0
    patience: int = 20
    deterministic: bool = True
    max_train_windows: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass
class Checkpoint:
    kind: str
    config: ModelConfig
    arrays: dict
    meta: dict = field(default_factory=dict)

    def model(self) -> PoseRefiner:
        m = build_model(self.kind, self.config)
        state = m.state_dict()
        for name, arr in self.arrays.items():
            if name not in state:
                raise ValidationError(f"checkpoint array {name!r} not in {self.kind} model")
            if tuple(state[name].shape) != arr.shape:
                raise BadShape(f"{name}: config implies {tuple(state[name].shape)}, file has {arr.shape}")
        missing = set(state) - set(self.arrays)
        if missing:
            raise ValidationError(f"checkpoint lacks arrays: {sorted(missing)}")
        m.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.arrays.items()})
        m.eval()
        return m

    @classmethod
    def from_model(cls, model: PoseRefiner, meta=None) -> "Checkpoint":
        arrays = {k: v.detach().cpu().float().numpy().copy() for k, v in model.state_dict().items()}
        return cls(model.kind, model.cfg, arrays, dict(meta or {}))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """JSON header (config + array index) followed by little-endian float32 payloads."""
    index, offset = [], 0
    for name in sorted(ckpt.arrays):
        arr = ckpt.arrays[name]
        nbytes = arr.size * 4
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = json.dumps(
        {"format": 1, "kind": ckpt.kind, "config": ckpt.config.to_dict(), "arrays": index, "meta": ckpt.meta},
        sort_keys=True,
    ).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for name in sorted(ckpt.arrays):
                f.write(np.ascontiguousarray(ckpt.arrays[name], dtype="<f4").tobytes())
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
    if raw[:8] != MAGIC:
        raise ArchiveIOError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    payload = memoryview(raw)[16 + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        buf = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
    return Checkpoint(header["kind"], ModelConfig(**header["config"]), arrays, header.get("meta", {}))


def _seed_everything(seed: int, deterministic: bool):
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


@torch.no_grad()
def predict(model: PoseRefiner, pose: np.ndarray, audio: np.ndarray | None = None, batch_size: int = 256) -> np.ndarray:
    """Batched forward pass on flattened pose windows (N, T_in, 39) in mm."""
    model.eval()
    out = []
    for i in range(0, len(pose), batch_size):
        p = torch.from_numpy(np.ascontiguousarray(pose[i : i + batch_size], dtype=np.float32))
        a = None if audio is None else torch.from_numpy(np.ascontiguousarray(audio[i : i + batch_size], dtype=np.float32))
        out.append(model(p, a).numpy())
    return np.concatenate(out) if out else np.zeros((0, model.cfg.t_out, 13, 3), np.float32)


def _evaluate_loss(model, data: WindowSet, tau, idx, batch_size):
    if len(idx) == 0:
        return float("nan")
    s, a, t = data.arrays(tau, idx)
    pred = predict(model, s, a, batch_size)
    return float(np.linalg.norm(pred.reshape(len(idx), -1, 3).astype(np.float64) - t.reshape(len(idx), -1, 3), axis=-1).mean())


def train(model: PoseRefiner, data: WindowSet, cfg: TrainConfig, tau: float | None = None,
          log_path=None, on_epoch=None) -> Checkpoint:
    """Minimise MPJPE on the train split with Adam; keep the best-validation weights."""
    tau = model.cfg.tau if tau is None else tau
    if tau not in data.sparse:
        raise ValidationError(f"dataset has no windows for tau={tau}")
    if data.sparse[tau].shape[1] != model.cfg.t_in:
        raise BadShape(f"model expects T_in={model.cfg.t_in}, data has {data.sparse[tau].shape[1]}")
    train_idx, valid_idx = data.indices("train"), data.indices("valid")
    if len(train_idx) == 0:
        raise ValidationError("no training windows")
    _seed_everything(cfg.seed, cfg.deterministic)
    rng = np.random.default_rng(cfg.seed)
    if cfg.max_train_windows and len(train_idx) > cfg.max_train_windows:
        train_idx = np.sort(rng.choice(train_idx, cfg.max_train_windows, replace=False))

    train_base = np.unique(data.base[train_idx])
    model.set_audio_stats(data.audio[train_base])
    model.set_pose_stats(data.targets[train_base])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    sparse, audio, target = data.sparse[tau], data.audio, data.targets

    curve, best, best_state, stale = [], float("inf"), None, 0
    log_rows = ["epoch,train_mpjpe,valid_mpjpe,wall_s"]
    t_start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(train_idx)
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            b = order[i : i + cfg.batch_size]
            p = torch.from_numpy(np.ascontiguousarray(sparse[b]))
            a = torch.from_numpy(audio[data.base[b]]) if model.uses_audio else None
            gt = torch.from_numpy(target[data.base[b]]).view(len(b), model.cfg.t_out, 13, 3)
            loss = mpjpe_loss(model(p, a), gt)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(b)
            count += len(b)
        train_loss = total / count
        valid_loss = _evaluate_loss(model, data, tau, valid_idx, max(cfg.batch_size, 256))
        wall = time.perf_counter() - t_start
        curve.append({"epoch": epoch, "train_mpjpe": train_loss, "valid_mpjpe": valid_loss})
        log_rows.append(f"{epoch},{train_loss!r},{valid_loss!r},{wall:.3f}")
        log.info("epoch %d train %.3f valid %.3f (%.1fs)", epoch, train_loss, valid_loss, wall)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, valid_loss)
        monitor = valid_loss if np.isfinite(valid_loss) else train_loss
        if monitor < best:
            best, stale = monitor, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                log.info("early stop after %d stale epochs", stale)
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if log_path is not None:
        Path(log_path).write_text("\n".join(log_rows) + "\n", encoding="utf-8")
    meta = {"epochs_run": len(curve), "seed": cfg.seed, "tau": tau, "train": asdict(cfg), "loss_curve": curve}
    return Checkpoint.from_model(model, meta)


def stitch(preds: np.ndarray, starts: np.ndarray, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Average overlapping window predictions (N, W, ...) placed at frame ``starts``.

    Returns the stitched stream and per-frame coverage counts; uncovered
    frames are NaN.
    """
    w = preds.shape[1]
    acc = np.zeros((n_frames,) + preds.shape[2:])
    cover = np.zeros(n_frames)
    for p, s in zip(preds, starts):
        hi = min(n_frames, s + w)
        acc[s:hi] += p[: hi - s]
        cover[s:hi] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = acc / cover.reshape((-1,) + (1,) * (acc.ndim - 1))
    return out, cover


def window_starts(duration_s: float, spec: WindowSpec) -> list[float]:
    """Regular starts plus one end-aligned window if the tail is uncovered."""
    n = spec.count(duration_s)
    starts = [k * spec.hop_s for k in range(n)]
    tail = duration_s - spec.window_s
    if n and tail - starts[-1] > 1e-9:
        starts.append(tail)
    return starts


def infer_stitched(model: PoseRefiner, sparse: PoseSequence, clip: A.AudioClip, spec: WindowSpec = WindowSpec(),
                   stft: A.StftParams = A.DEFAULT_PARAMS) -> PoseSequence:
    """Run ``model`` on every window of a long stream and average overlaps at 50 fps.

    Pose for each window is sampled from ``sparse`` by linear interpolation at
    the model's input instants, so any input phase is accepted.
    """
    from .baselines import linear_resample

    duration = min(sparse.duration, clip.duration)
    if duration < spec.window_s - 1e-9:
        raise TooShort(f"stream of {duration:.3f}s is shorter than one {spec.window_s}s window")
    cfg = model.cfg
    stride = tau_stride(cfg.tau, cfg.stride)
    t_src = np.arange(len(sparse)) / sparse.fps
    flat = sparse.frames.reshape(len(sparse), POSE_DIM)
    starts = window_starts(duration, spec)
    poses, feats = [], []
    for s in starts:
        t_dst = s + np.arange(cfg.t_in) * stride / OUTPUT_FPS
        poses.append(linear_resample(flat, t_src, t_dst))
        if model.uses_audio:
            feats.append(A.extract_audio_features(A.clip_window(clip, s, stft), stft))
    preds = predict(model, np.stack(poses).astype(np.float32), np.stack(feats).astype(np.float32) if feats else None)
    n_out = int(round(duration * OUTPUT_FPS))
    frame_starts = np.array([int(round(s * OUTPUT_FPS)) for s in starts])
    out, _ = stitch(preds.astype(np.float64), frame_starts, n_out)
    return PoseSequence(out, OUTPUT_FPS, sparse.start_time)
