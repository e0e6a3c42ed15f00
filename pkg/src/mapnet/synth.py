"""Synthetic violinist: a 13-joint figure whose bowing arm drives a sawtooth tone.

The right wrist follows a schedule of half-strokes. Each half-stroke is a
half-cosine move between two bow positions, so velocity vanishes at every
bow change. While the bow moves the tone level is
``sustain_level + speed / max_speed`` (an affine function of wrist speed),
and every bow change starts a new note, so spectral onsets sit on direction
reversals by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import ValidationError
from .pose import JointId, PoseSequence

POSE_FPS = 50.0
AUDIO_SR = 44100

# standing player, x = player's right, y = forward, z = up (mm)
BASE_POSE = np.array(
    [
        [0, -20, 1450],  # C7
        [180, 0, 1400],  # RSHO
        [-180, 0, 1400],  # LSHO
        [260, 120, 1150],  # RMEL
        [-320, 220, 1260],  # LMEL
        [180, 330, 1120],  # RMWR
        [-260, 470, 1400],  # LMWR
        [120, -60, 1000],  # RBWT
        [-120, -60, 1000],  # LBWT
        [130, 40, 500],  # RKNE
        [-130, 40, 500],  # LKNE
        [150, 160, 0],  # RTOE
        [-150, 160, 0],  # LTOE
    ],
    dtype=np.float64,
)
# how much of the upper-body sway each joint follows
SWAY_GAIN = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.2, 0.2, 0.0, 0.0])
BOW_DIR = np.array([1.0, 0.35, -0.3]) / np.linalg.norm([1.0, 0.35, -0.3])
NOTES_HZ = 196.0 * 2.0 ** (np.arange(0, 26) / 12.0)  # G3 .. A5


@dataclass
class MotionParams:
    freq_min_hz: float = 0.5
    freq_max_hz: float = 4.0
    stroke_min_mm: float = 100.0
    stroke_max_mm: float = 500.0
    max_speed_mm_s: float = 2500.0
    segment_min_s: float = 1.5
    segment_max_s: float = 5.0
    rest_prob: float = 0.12
    rest_min_s: float = 3.0
    rest_max_s: float = 5.0
    reposition_min_mm: float = 250.0
    reposition_max_mm: float = 450.0
    reposition_box_mm: float = 300.0
    amplitude_scale: float = 1.0
    sway_max_mm: float = 40.0
    body_scale_range: tuple = (0.9, 1.1)
    audio_gain: float = 0.1
    sustain_level: float = 2.0


@dataclass
class StrokePlan:
    """Piecewise half-cosine bow position: segment i moves from p0[i] to p1[i] over [t0[i], t1[i])."""

    t0: np.ndarray
    t1: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    note_hz: np.ndarray
    moving: np.ndarray

    def _locate(self, t):
        i = np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, len(self.t0) - 1)
        d = self.t1[i] - self.t0[i]
        u = np.clip((t - self.t0[i]) / d, 0.0, 1.0)
        return i, d, u

    def position(self, t):
        i, _, u = self._locate(t)
        return self.p0[i] + (self.p1[i] - self.p0[i]) * 0.5 * (1 - np.cos(np.pi * u))

    def velocity(self, t):
        i, d, u = self._locate(t)
        v = (self.p1[i] - self.p0[i]) * 0.5 * np.pi / d * np.sin(np.pi * u)
        return np.where((u > 0) & (u < 1), v, 0.0)

    @property
    def reversal_times(self) -> np.ndarray:
        """Starts of audible half-strokes (bow changes and attacks after rests)."""
        return self.t0[self.moving]


def _next_note(rng, prev):
    # avoid repeats and octaves so each bow change alters the spectrum
    while True:
        note = rng.choice(NOTES_HZ)
        if prev <= 0 or abs(round(12 * np.log2(note / prev))) % 12:
            return note


def plan_strokes(duration_s: float, mp: MotionParams, rng) -> StrokePlan:
    t0, t1, p0, p1, notes, moving = [], [], [], [], [], []
    t, pos = 0.0, 0.0
    while t < duration_s:
        if rng.random() < mp.rest_prob:
            d = rng.uniform(mp.rest_min_s, mp.rest_max_s)
            t0.append(t), t1.append(t + d), p0.append(pos), p1.append(pos)
            notes.append(0.0), moving.append(False)
            t += d
            continue
        f = rng.uniform(mp.freq_min_hz, mp.freq_max_hz)
        half = 0.5 / f
        limit = min(mp.stroke_max_mm, mp.max_speed_mm_s / (np.pi * f))
        stroke = rng.uniform(0.3, 1.0) * max(limit, mp.stroke_min_mm * 0.5) * mp.amplitude_scale
        centre = rng.uniform(-50, 50) * mp.amplitude_scale
        n_half = max(2, int(round(rng.uniform(mp.segment_min_s, mp.segment_max_s) / half)))
        side = 1.0 if pos <= centre else -1.0
        for _ in range(n_half):
            target = centre + side * stroke / 2
            t0.append(t), t1.append(t + half), p0.append(pos), p1.append(target)
            note = _next_note(rng, notes[-1] if notes else 0.0)
            notes.append(note), moving.append(stroke > 0)
            pos, t, side = target, t + half, -side
    return StrokePlan(*(np.array(a, dtype=float) for a in (t0, t1, p0, p1, notes)), np.array(moving, bool))


def reposition_offsets(plan: StrokePlan, t: np.ndarray, mp: MotionParams, rng) -> np.ndarray:
    """(n, 3) right-arm offset that glides linearly to a new spot during each rest."""
    knots_t, knots_p = [0.0], [np.zeros(3)]
    for t0, t1, moving in zip(plan.t0, plan.t1, plan.moving):
        if moving:
            continue
        cur = knots_p[-1]
        while True:
            step = rng.normal(size=3)
            step *= rng.uniform(mp.reposition_min_mm, mp.reposition_max_mm) / np.linalg.norm(step)
            if np.all(np.abs(cur + step) <= mp.reposition_box_mm):
                break
        knots_t += [t0, t1]
        knots_p += [cur, cur + step]
    knots_t.append(max(t[-1], knots_t[-1]) + 1.0)
    knots_p.append(knots_p[-1])
    kp = np.array(knots_p)
    return np.stack([np.interp(t, knots_t, kp[:, k]) for k in range(3)], axis=1)


def synth_generate(duration_s: float, motion_params: MotionParams | None = None, seed=0):
    """One coupled (pose at 50 fps, audio at 44.1 kHz) trial.

    The stroke plan is attached to ``pose.meta["plan"]``.
    """
    if duration_s < 3:
        raise ValidationError("synthetic trials must last at least 3 s")
    mp = motion_params or MotionParams()
    rng = np.random.default_rng(seed)

    scale = rng.uniform(*mp.body_scale_range)
    body = BASE_POSE * scale + rng.normal(0, 15, size=BASE_POSE.shape)
    plan = plan_strokes(duration_s, mp, rng)

    n = int(round(duration_s * POSE_FPS))
    t = np.arange(n) / POSE_FPS
    bow = plan.position(t)[:, None] * BOW_DIR[None, :]
    sway_f = rng.uniform(0.05, 0.3, size=2)
    sway_ph = rng.uniform(0, 2 * np.pi, size=2)
    sway_a = rng.uniform(0.25, 1.0, size=2) * mp.sway_max_mm
    sway = np.stack(
        [sway_a[k] * np.sin(2 * np.pi * sway_f[k] * t + sway_ph[k]) for k in range(2)] + [np.zeros(n)],
        axis=1,
    )
    frames = body[None] + sway[:, None, :] * SWAY_GAIN[None, :, None]
    arm = reposition_offsets(plan, t, mp, rng)
    frames[:, JointId.RMWR] += bow + arm
    frames[:, JointId.RMEL] += 0.45 * bow + 0.6 * arm
    pose = PoseSequence(frames, POSE_FPS)
    pose.meta["plan"] = plan

    m = int(round(duration_s * AUDIO_SR))
    ta = np.arange(m) / AUDIO_SR
    seg = np.clip(np.searchsorted(plan.t0, ta, side="right") - 1, 0, len(plan.t0) - 1)
    speed = np.abs(plan.velocity(ta))
    sounding = plan.moving[seg] & (ta < plan.t1[seg])
    amp = mp.audio_gain * (mp.sustain_level + speed / mp.max_speed_mm_s) * sounding
    phase = np.cumsum(plan.note_hz[seg]) / AUDIO_SR
    y = amp * (2.0 * np.mod(phase, 1.0) - 1.0)
    return pose, AudioClip(np.clip(y, -1.0, 1.0), AUDIO_SR)
