"""Synchronisation, trimming, windowing, downsampling and splitting."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import audio as A
from .errors import EmptyAfterTrim, NoActivityDetected, TooFewGroups, UnsupportedTau, ValidationError
from .noise import NoiseParams, SwapEvent, noisy_variant
from .pose import POSE_DIM, JointId, PoseSequence, normalize_origin

log = logging.getLogger(__name__)

T_OUT = 150
OUTPUT_FPS = 50.0
TAU_STRIDES = {1.0: 1, 0.5: 2, 0.33: 3}
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class WindowSpec:
    window_s: float = 3.0
    hop_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.hop_s <= self.window_s:
            raise ValidationError("need 0 < hop_s <= window_s")

    def count(self, duration_s: float) -> int:
        return max(0, math.floor((duration_s - self.window_s) / self.hop_s + 1e-9) + 1)


@dataclass(frozen=True)
class SyncResult:
    audio_offset_s: float
    play_onset_s: float
    play_offset_s: float


def tau_stride(tau: float, stride: int | None = None) -> int:
    """Frame stride realising input/output rate ratio ``tau``.

    0.33 maps to stride 3 (16.67 fps); other ratios need an explicit ``stride``.
    """
    if stride is not None:
        if stride < 1:
            raise UnsupportedTau("stride must be >= 1")
        return int(stride)
    for key, s in TAU_STRIDES.items():
        if abs(tau - key) < 5e-3:
            return s
    raise UnsupportedTau(f"tau={tau} is not one of {sorted(TAU_STRIDES)}")


def t_in_for(tau: float, t_out: int = T_OUT, stride: int | None = None) -> int:
    return len(range(0, t_out, tau_stride(tau, stride)))


# -- synchronisation -----------------------------------------------------------


def rms_envelope(clip: A.AudioClip, rate: float = OUTPUT_FPS) -> np.ndarray:
    """Block RMS over consecutive 1/rate second spans."""
    hop = int(round(clip.sample_rate_hz / rate))
    n = len(clip) // hop
    blocks = clip.samples[: n * hop].reshape(n, hop)
    return np.sqrt(np.mean(blocks**2, axis=1))


def _resample_pose(pose: PoseSequence, rate: float) -> np.ndarray:
    if pose.fps == rate:
        return pose.frames
    n = int(math.floor(pose.duration * rate))
    t_new = np.arange(n) / rate
    t_old = np.arange(len(pose)) / pose.fps
    flat = pose.frames.reshape(len(pose), -1)
    out = np.stack([np.interp(t_new, t_old, col) for col in flat.T], axis=1)
    return out.reshape(n, *pose.frames.shape[1:])


def wrist_speed(pose: PoseSequence, rate: float = OUTPUT_FPS) -> np.ndarray:
    wrist = _resample_pose(pose, rate)[:, JointId.RMWR]
    speed = np.linalg.norm(np.diff(wrist, axis=0), axis=1) * rate
    return np.concatenate([speed[:1], speed]) if speed.size else speed


def _active_runs(active: np.ndarray, min_len: int):
    runs, start = [], None
    for i, a in enumerate(np.append(active, False)):
        if a and start is None:
            start = i
        elif not a and start is not None:
            if i - start >= min_len:
                runs.append((start, i))
            start = None
    return runs


def synchronize(
    audio: A.AudioClip,
    pose: PoseSequence,
    threshold: float = 0.02,
    sustain_s: float = 0.2,
    max_lag_s: float = 5.0,
    rate: float = OUTPUT_FPS,
) -> SyncResult:
    """Estimate the audio lag and the playing interval.

    ``audio_offset_s`` maps audio time to pose time (pose_t = audio_t +
    offset); onset/offset are reported on the pose timeline.
    """
    if len(audio) == 0 or len(pose) == 0:
        raise ValidationError("synchronize needs non-empty streams")
    env = rms_envelope(audio, rate)
    runs = _active_runs(env > threshold, max(1, int(round(sustain_s * rate))))
    if not runs:
        raise NoActivityDetected("no sustained audio activity above threshold")
    speed = wrist_speed(pose, rate)

    a = (env - env.mean()) / (env.std() or 1.0)
    w = (speed - speed.mean()) / (speed.std() or 1.0)
    max_lag = int(round(max_lag_s * rate))
    best, best_lag = -np.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        # audio sample n + lag corresponds to wrist sample n
        lo, hi = max(0, -lag), min(len(w), len(a) - lag)
        if hi - lo < 1:
            continue
        score = float(np.dot(a[lo + lag : hi + lag], w[lo:hi])) / len(w)
        if score > best + 1e-12:
            best, best_lag = score, lag
    offset = -best_lag / rate
    return SyncResult(offset, runs[0][0] / rate + offset, runs[-1][1] / rate + offset)


def trim(pose: PoseSequence, audio: A.AudioClip, sync: SyncResult):
    """Cut both streams to the playing interval on a shared time base."""
    lo = max(sync.play_onset_s, 0.0, sync.audio_offset_s)
    hi = min(sync.play_offset_s, pose.duration, audio.duration + sync.audio_offset_s)
    n = int(round((hi - lo) * pose.fps))
    if n <= 0:
        raise EmptyAfterTrim(f"empty interval [{lo}, {hi}]")
    i0 = int(round(lo * pose.fps))
    frames = pose.frames[i0 : i0 + n]
    j0 = int(round((lo - sync.audio_offset_s) * audio.sample_rate_hz))
    m = int(round(n / pose.fps * audio.sample_rate_hz))
    samples = audio.samples[j0 : j0 + m]
    if len(frames) == 0 or len(samples) == 0:
        raise EmptyAfterTrim("nothing left after trimming")
    return PoseSequence(frames, pose.fps, 0.0), A.AudioClip(samples, audio.sample_rate_hz)


# -- windows -------------------------------------------------------------------


def slice_windows(pose: PoseSequence, audio: A.AudioClip, spec: WindowSpec = WindowSpec()):
    """(pose window, audio window) pairs at starts 0, hop, 2*hop, ..."""
    duration = min(pose.duration, audio.duration)
    n_frames = int(round(spec.window_s * pose.fps))
    n_samples = int(round(spec.window_s * audio.sample_rate_hz))
    out = []
    for k in range(spec.count(duration)):
        t = k * spec.hop_s
        i0 = int(round(t * pose.fps))
        j0 = int(round(t * audio.sample_rate_hz))
        pw = PoseSequence(pose.frames[i0 : i0 + n_frames], pose.fps, pose.start_time + t)
        aw = A.AudioClip(audio.samples[j0 : j0 + n_samples], audio.sample_rate_hz)
        out.append((pw, aw))
    return out


def downsample(window: PoseSequence, tau: float, stride: int | None = None) -> PoseSequence:
    s = tau_stride(tau, stride)
    return PoseSequence(window.frames[::s], window.fps / s, window.start_time)


def split_dataset(groups, seed, ratios=(0.8, 0.1, 0.1), allow_degenerate: bool = False) -> dict:
    """Shuffle group keys and assign train/valid/test by count."""
    keys = sorted(set(groups))
    n = len(keys)
    if n < 10:
        if not allow_degenerate:
            raise TooFewGroups(f"{n} groups; need >= 10 for an 8:1:1 split")
        log.warning("only %d groups: split will be degenerate", n)
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    if allow_degenerate and n < 10:
        n_valid, n_test = min(n_valid, max(0, n - 1)), min(n_test, max(0, n - 1 - n_valid))
    n_train = n - n_valid - n_test
    labels = ["train"] * n_train + ["valid"] * n_valid + ["test"] * n_test
    return {keys[i]: labels[r] for r, i in enumerate(order)}


# -- in-memory window sets -------------------------------------------------------


@dataclass
class Sample:
    sparse_pose: PoseSequence
    audio: np.ndarray
    target_pose: PoseSequence
    tau: float
    split: str
    trial_id: str
    variant_id: int


@dataclass
class WindowSet:
    """Training windows with shared clean targets and audio per (trial, window).

    ``sparse[tau]`` is (N, T_in, 39) noisy pose; ``targets`` and ``audio`` are
    indexed through ``base``.
    """

    targets: np.ndarray
    audio: np.ndarray
    sparse: dict
    base: np.ndarray
    trial: np.ndarray
    variant: np.ndarray
    window: np.ndarray
    split: np.ndarray
    events: dict = field(default_factory=dict)
    hop_s: float = 1.0

    def __len__(self):
        return len(self.base)

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        return np.nonzero(self.split == split)[0]

    def arrays(self, tau: float, idx=None):
        """(sparse pose, audio, target) float32 arrays for the given sample indices."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        b = self.base[idx]
        return self.sparse[tau][idx], self.audio[b], self.targets[b]

    def window_events(self, i: int, window_s: float = 3.0):
        """Swap events of sample ``i`` on the window's own time axis."""
        start = self.window[i] * self.hop_s
        evs = self.events.get((self.trial[i], int(self.variant[i])), [])
        return [
            SwapEvent(e.start_s - start, e.duration_s, e.joint_a, e.joint_b)
            for e in evs
            if e.start_s < start + window_s and e.end_s > start
        ]

    def sample(self, i: int, tau: float) -> Sample:
        s, a, t = self.arrays(tau, [i])
        stride = tau_stride(tau)
        return Sample(
            PoseSequence(s[0].reshape(-1, 13, 3), OUTPUT_FPS / stride),
            a[0],
            PoseSequence(t[0].reshape(-1, 13, 3), OUTPUT_FPS),
            tau,
            str(self.split[i]),
            str(self.trial[i]),
            int(self.variant[i]),
        )


def trial_windows(
    trial_id: str,
    pose: PoseSequence,
    clip: A.AudioClip,
    noise: NoiseParams,
    spec: WindowSpec = WindowSpec(),
    stft: A.StftParams = A.DEFAULT_PARAMS,
    variant_seed: int = 0,
):
    """Clean targets, audio features and noisy dense windows for one trial.

    ``pose`` must be at 50 fps and already origin-normalised. Variant ``i``
    uses noise seed ``variant_seed + i``.
    """
    n = spec.count(min(pose.duration, clip.duration))
    win = int(round(spec.window_s * pose.fps))
    hop = int(round(spec.hop_s * pose.fps))
    targets = np.stack([pose.frames[k * hop : k * hop + win].reshape(win, POSE_DIM) for k in range(n)]) if n else np.zeros((0, win, POSE_DIM))
    feats = np.stack([A.extract_audio_features(A.clip_window(clip, k * spec.hop_s, stft), stft) for k in range(n)]) if n else np.zeros((0, stft.n_frames, A.N_FEATURES))
    noisy, events = [], {}
    for v in range(noise.n_variants):
        seq, evs = noisy_variant(pose, noise, variant_seed + v)
        events[(trial_id, v)] = evs
        noisy.append(np.stack([seq.frames[k * hop : k * hop + win].reshape(win, POSE_DIM) for k in range(n)]) if n else np.zeros((0, win, POSE_DIM)))
    return targets, feats, noisy, events


def _trial_windows_star(args):
    return trial_windows(*args)


def build_window_set(trials, noise: NoiseParams, taus, split_seed: int, spec: WindowSpec = WindowSpec(),
                     stft: A.StftParams = A.DEFAULT_PARAMS, allow_degenerate: bool = False,
                     ratios=(0.8, 0.1, 0.1), jobs: int = 1) -> WindowSet:
    """Assemble windows from ``[(trial_id, pose, clip), ...]``.

    Trial ``t`` (in list order) gets variant seeds ``noise.base_seed + 1000 * t + i``.
    """
    tgt, aud, dense, base, trial, variant, window = [], [], [], [], [], [], []
    events = {}
    offset = 0
    jobs_args = [
        (tid, normalize_origin(pose), clip, noise, spec, stft, noise.base_seed + 1000 * t)
        for t, (tid, pose, clip) in enumerate(trials)
    ]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_windows_star, jobs_args))
    else:
        results = [trial_windows(*a) for a in jobs_args]
    for (tid, _, _), (targets, feats, noisy, evs) in zip(trials, results):
        events.update(evs)
        n = len(targets)
        tgt.append(targets)
        aud.append(feats)
        for v, arr in enumerate(noisy):
            dense.append(arr)
            base.extend(range(offset, offset + n))
            trial.extend([tid] * n)
            variant.extend([v] * n)
            window.extend(range(n))
        offset += n
    trial = np.array(trial, dtype=object)
    variant = np.array(variant, dtype=np.int64)
    groups = list(zip(trial.tolist(), variant.tolist()))
    assign = split_dataset(groups, split_seed, ratios, allow_degenerate=allow_degenerate)
    split = np.array([assign[g] for g in groups], dtype=object)
    dense = np.concatenate(dense).astype(np.float32)
    sparse = {tau: dense[:, :: tau_stride(tau)] for tau in taus}
    return WindowSet(
        targets=np.concatenate(tgt).astype(np.float32),
        audio=np.concatenate(aud).astype(np.float32),
        sparse=sparse,
        base=np.array(base, dtype=np.int64),
        trial=trial,
        variant=variant,
        window=np.array(window, dtype=np.int64),
        split=split,
        events=events,
        hop_s=spec.hop_s,
    )
