"""Skeleton data model: 13-joint poses, marker reduction, flattening, pose CSV I/O."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArchiveIOError, BadShape, EmptySequence, MissingMarker, ValidationError

N_JOINTS = 13
POSE_DIM = 3 * N_JOINTS


class JointId(enum.IntEnum):
    C7 = 0
    RSHO = 1
    LSHO = 2
    RMEL = 3
    LMEL = 4
    RMWR = 5
    LMWR = 6
    RBWT = 7
    LBWT = 8
    RKNE = 9
    LKNE = 10
    RTOE = 11
    LTOE = 12

    def mirror(self) -> "JointId":
        """Left/right counterpart, or self for the midline C7."""
        name = self.name
        if name[0] == "R":
            return JointId["L" + name[1:]]
        if name[0] == "L":
            return JointId["R" + name[1:]]
        return self


JOINT_NAMES = [j.name for j in JointId]
AXES = ("x", "y", "z")
POSE_COLUMNS = [f"{name}_{ax}" for name in JOINT_NAMES for ax in AXES]

# (joint, markers averaged to obtain it). Single-marker joints are copied.
MARKER_RULES: dict[JointId, tuple[str, ...]] = {
    JointId.C7: ("C7",),
    JointId.RSHO: ("RSHO",),
    JointId.LSHO: ("LSHO",),
    JointId.RMEL: ("RIEL", "ROEL"),
    JointId.LMEL: ("LIEL", "LOEL"),
    JointId.RMWR: ("RIWR", "ROWR"),
    JointId.LMWR: ("LIWR", "LOWR"),
    JointId.RBWT: ("RBWT",),
    JointId.LBWT: ("LBWT",),
    JointId.RKNE: ("RIKN", "ROKN"),
    JointId.LKNE: ("LIKN", "LOKN"),
    JointId.RTOE: ("RTOE",),
    JointId.LTOE: ("LTOE",),
}
REQUIRED_MARKERS = sorted({m for names in MARKER_RULES.values() for m in names})


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Uniformly sampled 13-joint motion in millimetres.

    ``frames`` has shape ``(n_frames, 13, 3)``; frame ``i`` sits at
    ``start_time + i / fps`` seconds.
    """

    frames: np.ndarray
    fps: float
    start_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (N_JOINTS, 3):
            raise BadShape(f"pose frames must be (n, 13, 3), got {frames.shape}")
        if not self.fps > 0:
            raise ValidationError("fps must be positive")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("pose coordinates must be finite")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.fps

    def joint(self, j: JointId) -> np.ndarray:
        return self.frames[:, int(j), :]

    def replace(self, frames=None, fps=None, start_time=None) -> "PoseSequence":
        return PoseSequence(
            self.frames if frames is None else frames,
            self.fps if fps is None else fps,
            self.start_time if start_time is None else start_time,
            dict(self.meta),
        )

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.start_time == other.start_time
            and np.array_equal(self.frames, other.frames)
        )


def markers_to_joints(frame: Mapping[str, object]) -> np.ndarray:
    """Reduce one frame of named body markers to a (13, 3) skeleton.

    Paired inner/outer markers (elbow, wrist, knee) are replaced by their
    midpoint; the remaining joints copy their marker. Unused markers (head,
    hand, TS, T10, ...) are ignored.
    """
    out = np.empty((N_JOINTS, 3))
    for joint, names in MARKER_RULES.items():
        pts = []
        for name in names:
            if name not in frame:
                raise MissingMarker(name)
            pts.append(np.asarray(frame[name], dtype=np.float64))
        out[int(joint)] = pts[0] if len(pts) == 1 else 0.5 * (pts[0] + pts[1])
    return out


def normalize_origin(seq: PoseSequence) -> PoseSequence:
    """Translate the whole sequence so frame 0's left toe is the origin."""
    if len(seq) == 0:
        raise EmptySequence("cannot normalize an empty sequence")
    anchor = seq.frames[0, JointId.LTOE]
    return seq.replace(frames=seq.frames - anchor)


def flatten_pose(window: PoseSequence) -> np.ndarray:
    if len(window) == 0:
        raise EmptySequence("cannot flatten an empty window")
    return window.frames.reshape(len(window), POSE_DIM).copy()


def unflatten_pose(feat, fps: float, start_time: float = 0.0) -> PoseSequence:
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 2 or feat.shape[1] != POSE_DIM:
        raise BadShape(f"pose feature must have {POSE_DIM} columns, got {feat.shape}")
    return PoseSequence(feat.reshape(-1, N_JOINTS, 3), fps, start_time)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_pose_csv(path, seq: PoseSequence) -> None:
    """Write ``# fps=<fps>`` then ``frame,time_s,C7_x,...`` rows."""
    buf = io.StringIO()
    buf.write(f"# fps={_fmt(seq.fps)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "time_s", *POSE_COLUMNS])
    flat = seq.frames.reshape(len(seq), POSE_DIM)
    for i, (t, row) in enumerate(zip(seq.times, flat)):
        w.writerow([i, _fmt(t), *map(_fmt, row)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_table(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# fps="):
        raise ArchiveIOError(f"{path}: first line must be '# fps=<value>'")
    fps = float(lines[0].split("=", 1)[1])
    rows = list(csv.reader(lines[1:]))
    if not rows:
        raise ArchiveIOError(f"{path}: missing header row")
    return fps, rows[0], rows[1:]


def read_pose_csv(path) -> PoseSequence:
    fps, header, rows = _read_table(path)
    if header[:2] != ["frame", "time_s"]:
        raise ArchiveIOError(f"{path}: header must start with frame,time_s")
    if header[2:] == POSE_COLUMNS:
        data = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(-1, POSE_DIM)
        start = float(rows[0][1]) if rows else 0.0
        return unflatten_pose(data, fps, start)
    return read_marker_rows(fps, header, rows, path)


def read_marker_rows(fps, header, rows, path="<markers>") -> PoseSequence:
    """Parse marker columns ``<MARKER>_x/y/z`` and reduce each frame to joints."""
    cols: dict[str, list[int]] = {}
    for i, name in enumerate(header[2:], start=2):
        base, _, ax = name.rpartition("_")
        if ax in AXES:
            cols.setdefault(base, [0, 0, 0])[AXES.index(ax)] = i
    if not cols:
        raise ArchiveIOError(f"{path}: no joint or marker columns found")
    frames = []
    for r in rows:
        frame = {m: [float(r[i]) for i in idx] for m, idx in cols.items()}
        frames.append(markers_to_joints(frame))
    start = float(rows[0][1]) if rows else 0.0
    return PoseSequence(np.array(frames).reshape(-1, N_JOINTS, 3), fps, start)
