"""Per-window music features: onset envelope, MFCC, chroma CENS, peaks, RMS.

Every feature operates on a 3 s window and yields 150 frames. Frame ``k`` is
centred on sample ``k * hop`` (hop = 20 ms), so audio rows line up with
50 fps pose frames.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft
from scipy.ndimage import uniform_filter1d

from .errors import ArchiveIOError, BadWindowLength, UnsupportedFormat, ValidationError

log = logging.getLogger(__name__)

N_FEATURES = 35
N_FRAMES = 150
# column layout of the feature block
ENVELOPE = slice(0, 1)
MFCC = slice(1, 21)
CHROMA = slice(21, 33)
PEAKS = slice(33, 34)
RMS = slice(34, 35)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("samples must be 1-D")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz

    def segment(self, start_s: float, dur_s: float) -> "AudioClip":
        i0 = int(round(start_s * self.sample_rate_hz))
        n = int(round(dur_s * self.sample_rate_hz))
        return AudioClip(self.samples[i0 : i0 + n], self.sample_rate_hz)


@dataclass(frozen=True)
class StftParams:
    sample_rate_hz: int = 44100
    window_s: float = 3.0
    n_frames: int = N_FRAMES
    n_fft: int = 2048
    n_mels: int = 128
    n_mfcc: int = 20
    log_floor: float = 1e-10
    cens_window: int = 41
    cens_steps: tuple = (0.4, 0.2, 0.1, 0.05)
    cens_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    peak_half_width: int = 3
    peak_mean_half_width: int = 7
    peak_delta_frac: float = 0.01
    peak_min_gap: int = 5
    normalize_envelope: bool = False

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))

    @property
    def hop(self) -> int:
        hop, rem = divmod(self.window_samples, self.n_frames)
        if rem:
            raise ValidationError("window length must be a multiple of the frame count")
        return hop


DEFAULT_PARAMS = StftParams()


# -- I/O ---------------------------------------------------------------------


def load_wav(path) -> AudioClip:
    """Read 16-bit PCM WAV; stereo is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as w:
            width, channels, rate = w.getsampwidth(), w.getnchannels(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
    if width != 2:
        raise UnsupportedFormat(f"{path}: only 16-bit PCM is supported (got {8 * width}-bit)")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    data = data.reshape(-1, channels).mean(axis=1)
    return AudioClip(data, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def resample_linear(clip: AudioClip, rate: int) -> AudioClip:
    if clip.sample_rate_hz == rate:
        return clip
    log.warning("resampling audio from %d Hz to %d Hz (linear)", clip.sample_rate_hz, rate)
    n = int(round(len(clip) * rate / clip.sample_rate_hz))
    t_new = np.arange(n) / rate
    t_old = np.arange(len(clip)) / clip.sample_rate_hz
    return AudioClip(np.interp(t_new, t_old, clip.samples), rate)


# -- spectral front end ------------------------------------------------------


def _check(y, p: StftParams) -> np.ndarray:
    y = np.asarray(y.samples if isinstance(y, AudioClip) else y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != p.window_samples:
        raise BadWindowLength(f"expected {p.window_samples} samples, got {y.shape}")
    return y


def _hann(n):
    # periodic Hann, as used for spectral analysis
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def power_spectrogram(y, p: StftParams = DEFAULT_PARAMS) -> np.ndarray:
    """|STFT|^2, shape (n_fft//2 + 1, n_frames), zero-padded centred frames."""
    y = _check(y, p)
    half = p.n_fft // 2
    padded = np.pad(y, (half, half))
    idx = np.arange(p.n_frames)[:, None] * p.hop + np.arange(p.n_fft)[None, :]
    frames = padded[idx] * _hann(p.n_fft)
    return (np.abs(rfft(frames, axis=1)) ** 2).T


def _hz_to_mel(f):
    # Slaney auditory scale: linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    return np.where(f >= min_log_hz, min_log_hz / f_sp + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, mel)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, 1000.0 * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(sr: int, n_fft: int, n_mels: int = 128, fmin: float = 0.0, fmax: float | None = None):
    """Triangular Slaney-style filters with area normalisation, (n_mels, n_fft//2+1)."""
    fmax = sr / 2 if fmax is None else fmax
    fft_freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def chroma_filterbank(sr: int, n_fft: int, fmin: float = 55.0) -> np.ndarray:
    """Assign each FFT bin above ``fmin`` to its nearest pitch class (C = 0, A = 9)."""
    freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    fb = np.zeros((12, freqs.size))
    ok = freqs >= fmin
    semis = 12 * np.log2(freqs[ok] / 440.0)
    pc = (np.rint(semis).astype(int) + 9) % 12
    fb[pc, np.nonzero(ok)[0]] = 1.0
    return fb


_BANKS: dict = {}


def _banks(p: StftParams):
    key = (p.sample_rate_hz, p.n_fft, p.n_mels)
    if key not in _BANKS:
        _BANKS[key] = (
            mel_filterbank(p.sample_rate_hz, p.n_fft, p.n_mels),
            chroma_filterbank(p.sample_rate_hz, p.n_fft),
        )
    return _BANKS[key]


def mel_spectrogram(y, p: StftParams = DEFAULT_PARAMS, power=None) -> np.ndarray:
    S = power_spectrogram(y, p) if power is None else power
    return _banks(p)[0] @ S


# -- features ----------------------------------------------------------------


def onset_envelope(y, p: StftParams = DEFAULT_PARAMS, power=None) -> np.ndarray:
    """Spectral flux: positive mel-power increase between frames, summed over bands."""
    mel = mel_spectrogram(y, p, power)
    flux = np.maximum(0.0, np.diff(mel, axis=1)).sum(axis=0)
    env = np.concatenate([[0.0], flux])
    if p.normalize_envelope and env.max() > 0:
        env = env / env.max()
    return env


def mfcc(y, p: StftParams = DEFAULT_PARAMS, power=None) -> np.ndarray:
    """(150, n_mfcc) DCT-II of the dB mel spectrogram."""
    mel = mel_spectrogram(y, p, power)
    log_mel = 10.0 * np.log10(np.maximum(mel, p.log_floor))
    return dct(log_mel, type=2, axis=0, norm="ortho")[: p.n_mfcc].T


def chroma_cens(y, p: StftParams = DEFAULT_PARAMS, power=None) -> np.ndarray:
    """(150, 12) quantised, time-smoothed, l2-normalised pitch-class profile."""
    S = power_spectrogram(y, p) if power is None else power
    chroma = _banks(p)[1] @ S
    total = chroma.sum(axis=0, keepdims=True)
    chroma = np.divide(chroma, total, out=np.zeros_like(chroma), where=total > 0)
    quant = np.zeros_like(chroma)
    for step, weight in zip(p.cens_steps, p.cens_weights):
        quant += (chroma > step) * weight
    win = _hann(p.cens_window + 2)[1:-1]
    win /= win.sum()
    smooth = np.apply_along_axis(lambda r: np.convolve(r, win, mode="same"), 1, quant)
    norm = np.linalg.norm(smooth, axis=0, keepdims=True)
    out = np.divide(smooth, norm, out=np.zeros_like(smooth), where=norm > 1e-12)
    return out.T


def rms(y, p: StftParams = DEFAULT_PARAMS) -> np.ndarray:
    """RMS over each frame's n_fft-sample span, centred on the frame time (edge-padded)."""
    y = _check(y, p)
    half = p.n_fft // 2
    padded = np.pad(y, (half, half), mode="edge")
    csum = np.concatenate([[0.0], np.cumsum(padded**2)])
    starts = np.arange(p.n_frames) * p.hop
    energy = csum[starts + p.n_fft] - csum[starts]
    return np.sqrt(np.maximum(energy, 0.0) / p.n_fft)


def peak_onehot(envelope, p: StftParams = DEFAULT_PARAMS) -> np.ndarray:
    """Binary onset peaks of an envelope.

    A frame is a peak when it is the maximum over +-``peak_half_width``
    frames, strictly exceeds the +-``peak_mean_half_width`` moving mean plus
    ``peak_delta_frac * max(envelope)``, and lies at least ``peak_min_gap``
    frames after the previous accepted peak.
    """
    env = np.asarray(envelope, dtype=np.float64)
    out = np.zeros_like(env)
    if env.size == 0:
        return out
    w = p.peak_half_width
    padded = np.pad(env, w, mode="constant", constant_values=-np.inf)
    local_max = np.lib.stride_tricks.sliding_window_view(padded, 2 * w + 1).max(axis=1)
    mean = uniform_filter1d(env, size=2 * p.peak_mean_half_width + 1, mode="nearest")
    delta = p.peak_delta_frac * env.max()
    last = -np.inf
    for n in np.nonzero((env == local_max) & (env > mean + delta))[0]:
        if n - last >= p.peak_min_gap:
            out[n] = 1.0
            last = n
    return out


def extract_audio_features(y, p: StftParams = DEFAULT_PARAMS) -> np.ndarray:
    """(150, 35) block: [envelope | mfcc(20) | chroma(12) | peaks | rms]."""
    y = _check(y, p)
    S = power_spectrogram(y, p)
    env = onset_envelope(y, p, power=S)
    block = np.empty((p.n_frames, N_FEATURES))
    block[:, ENVELOPE] = env[:, None]
    block[:, MFCC] = mfcc(y, p, power=S)
    block[:, CHROMA] = chroma_cens(y, p, power=S)
    block[:, PEAKS] = peak_onehot(env, p)[:, None]
    block[:, RMS] = rms(y, p)[:, None]
    return block


def clip_window(clip: AudioClip, start_s: float, p: StftParams = DEFAULT_PARAMS) -> np.ndarray:
    """Exactly ``window_samples`` samples starting at ``start_s`` (zero-padded past the end)."""
    if clip.sample_rate_hz != p.sample_rate_hz:
        clip = resample_linear(clip, p.sample_rate_hz)
    i0 = int(round(start_s * p.sample_rate_hz))
    seg = clip.samples[i0 : i0 + p.window_samples]
    if seg.size < p.window_samples:
        seg = np.pad(seg, (0, p.window_samples - seg.size))
    return seg


def write_feature_csv(path, block: np.ndarray) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in block]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_feature_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
