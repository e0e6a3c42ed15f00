"""Pose-estimator error model: Gaussian jitter plus timed joint inversions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySequence, InvalidEvent, ValidationError
from .pose import JointId, PoseSequence

SYMMETRIC_PAIRS = [(j, j.mirror()) for j in JointId if j.name.startswith("R")]
PAIR_POLICIES = ("mixed", "symmetric", "uniform")


@dataclass
class NoiseParams:
    jitter_std_mm: float = 300.0
    swap_rate_per_min: float = 5.0
    swap_dur_min_s: float = 0.5
    swap_dur_max_s: float = 3.0
    n_variants: int = 10
    base_seed: int = 0
    pair_policy: str = "mixed"
    symmetric_prob: float = 0.8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.jitter_std_mm < 0 or self.swap_rate_per_min < 0:
            raise ValidationError("jitter std and swap rate must be non-negative")
        if not 0 <= self.swap_dur_min_s <= self.swap_dur_max_s:
            raise ValidationError("need 0 <= swap_dur_min_s <= swap_dur_max_s")
        if self.n_variants < 1:
            raise ValidationError("n_variants must be >= 1")
        if self.pair_policy not in PAIR_POLICIES:
            raise ValidationError(f"pair_policy must be one of {PAIR_POLICIES}")
        if not 0 <= self.symmetric_prob <= 1:
            raise ValidationError("symmetric_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SwapEvent:
    start_s: float
    duration_s: float
    joint_a: JointId
    joint_b: JointId

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def to_dict(self) -> dict:
        return {
            "start_s": self.start_s,
            "duration_s": self.duration_s,
            "joint_a": self.joint_a.name,
            "joint_b": self.joint_b.name,
        }

    @classmethod
    def from_dict(cls, d) -> "SwapEvent":
        return cls(float(d["start_s"]), float(d["duration_s"]), JointId[d["joint_a"]], JointId[d["joint_b"]])


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def add_jitter(seq: PoseSequence, std_mm: float, seed) -> PoseSequence:
    if len(seq) == 0:
        raise EmptySequence("cannot jitter an empty sequence")
    if std_mm == 0:
        return seq.replace(frames=seq.frames.copy())
    noise = _rng(seed).normal(0.0, std_mm, size=seq.frames.shape)
    return seq.replace(frames=seq.frames + noise)


def _draw_pair(rng, params: NoiseParams):
    policy = params.pair_policy
    if policy == "symmetric" or (policy == "mixed" and rng.random() < params.symmetric_prob):
        return SYMMETRIC_PAIRS[rng.integers(len(SYMMETRIC_PAIRS))]
    a, b = rng.choice(len(JointId), size=2, replace=False)
    return JointId(int(a)), JointId(int(b))


def sample_swap_events(duration_s: float, params: NoiseParams, seed) -> list[SwapEvent]:
    """Poisson-many swaps with uniform start times and uniform durations.

    Durations are reported as drawn; ``apply_swaps`` clips spans at the
    sequence end.
    """
    if not duration_s > 0:
        raise ValidationError("duration_s must be positive")
    rng = _rng(seed)
    n = rng.poisson(params.swap_rate_per_min * duration_s / 60.0)
    starts = np.sort(rng.uniform(0.0, duration_s, size=n))
    events = []
    for start in starts:
        dur = rng.uniform(params.swap_dur_min_s, params.swap_dur_max_s)
        a, b = _draw_pair(rng, params)
        events.append(SwapEvent(float(start), float(dur), a, b))
    return events


def _span(seq: PoseSequence, ev: SwapEvent) -> slice:
    lo = math.ceil(ev.start_s * seq.fps - 1e-9)
    hi = math.ceil(min(ev.end_s, seq.duration) * seq.fps - 1e-9)
    return slice(max(lo, 0), min(hi, len(seq)))


def apply_swaps(seq: PoseSequence, events) -> PoseSequence:
    """Exchange the two joints of each event over its time span.

    Event times are relative to the first frame. Overlapping events compose
    in start-time order.
    """
    frames = seq.frames.copy()
    for ev in sorted(events, key=lambda e: e.start_s):
        if ev.joint_a == ev.joint_b:
            raise InvalidEvent(f"swap of {ev.joint_a.name} with itself")
        if not (0 <= ev.start_s < seq.duration) or ev.duration_s < 0:
            raise InvalidEvent(f"event at {ev.start_s}s outside [0, {seq.duration})")
        sl = _span(seq, ev)
        a, b = int(ev.joint_a), int(ev.joint_b)
        frames[sl, [a, b]] = frames[sl, [b, a]]
    return seq.replace(frames=frames)


def noisy_variant(seq: PoseSequence, params: NoiseParams, seed):
    """One noisy copy of ``seq`` and the swap events applied to it."""
    jitter_ss, swap_ss = np.random.SeedSequence(seed).spawn(2)
    jittered = add_jitter(seq, params.jitter_std_mm, np.random.default_rng(jitter_ss))
    if params.swap_rate_per_min > 0:
        events = sample_swap_events(seq.duration, params, np.random.default_rng(swap_ss))
    else:
        events = []
    return apply_swaps(jittered, events), events


def generate_variants(seq: PoseSequence, params: NoiseParams, return_events: bool = False):
    if len(seq) == 0:
        raise EmptySequence("cannot generate variants of an empty sequence")
    out = [noisy_variant(seq, params, params.base_seed + i) for i in range(params.n_variants)]
    if return_events:
        return out
    return [v for v, _ in out]
