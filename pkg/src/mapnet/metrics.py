"""Position/acceleration errors, per-frame error series and difficulty labels."""

from __future__ import annotations

import enum

import numpy as np

from .errors import BadShape, LengthMismatch, TooFewFrames
from .pose import JointId


class DifficultyLabel(str, enum.Enum):
    FINE = "Fine"
    GROSS = "Gross"
    INVERSION = "Inversion"


def _as_joints(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 39 and x.ndim >= 2:
        x = x.reshape(*x.shape[:-1], 13, 3)
    if x.ndim < 3 or x.shape[-2:] != (13, 3):
        raise BadShape(f"expected (..., T, 13, 3) joints, got {x.shape}")
    return x


def joint_errors(pred, gt) -> np.ndarray:
    """Euclidean distance per joint per frame, shape (..., T, 13)."""
    pred, gt = _as_joints(pred), _as_joints(gt)
    if pred.shape != gt.shape:
        raise BadShape(f"pred {pred.shape} vs gt {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def acceleration(x) -> np.ndarray:
    """Second central difference x[t+1] - 2 x[t] + x[t-1] along the frame axis."""
    x = _as_joints(x)
    if x.shape[-3] < 3:
        raise TooFewFrames("acceleration needs at least 3 frames")
    return x[..., 2:, :, :] - 2 * x[..., 1:-1, :, :] + x[..., :-2, :, :]


def mpjae(pred, gt) -> float:
    """Mean per-joint acceleration error in mm/frame^2."""
    pred, gt = _as_joints(pred), _as_joints(gt)
    if pred.shape != gt.shape:
        raise BadShape(f"pred {pred.shape} vs gt {gt.shape}")
    return float(np.linalg.norm(acceleration(pred) - acceleration(gt), axis=-1).mean())


def nonlinearity_score(traj: np.ndarray) -> float:
    """RMS residual of a least-squares line fit to a (T, 3) trajectory, over its extent.

    Extent is the largest per-axis range; a static trajectory scores 0.
    """
    traj = np.asarray(traj, dtype=np.float64)
    extent = float(np.max(traj.max(axis=0) - traj.min(axis=0)))
    if extent <= 1e-12:
        return 0.0
    t = np.arange(len(traj), dtype=np.float64)
    design = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(design, traj, rcond=None)
    resid = traj - design @ coef
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))) / extent)


def categorize_difficulty(window, swap_events, theta: float = 0.05, window_s: float | None = None) -> DifficultyLabel:
    """Inversion if any swap overlaps the window, else Fine/Gross by wrist nonlinearity.

    ``swap_events`` are on the window's time axis (0 = first frame).
    """
    frames = _as_joints(window.frames if hasattr(window, "frames") else window)
    if window_s is None:
        window_s = getattr(window, "duration", frames.shape[0] / 50.0)
    for ev in swap_events:
        if ev.start_s < window_s and ev.start_s + ev.duration_s > 0:
            return DifficultyLabel.INVERSION
    score = nonlinearity_score(frames[:, JointId.RMWR])
    return DifficultyLabel.FINE if score > theta else DifficultyLabel.GROSS


def per_frame_error_series(pred, gt, scale: float | None = None) -> np.ndarray:
    """Per-frame mean joint distance divided by a ground-truth scale.

    The default scale is the 95th percentile over frames of the mean joint
    distance from the origin in ``gt``, so streams of the same recording share
    one normaliser.
    """
    pred, gt = _as_joints(pred), _as_joints(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.shape[0]} predicted vs {gt.shape[0]} ground-truth frames")
    err = np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)
    if scale is None:
        scale = float(np.percentile(np.linalg.norm(gt, axis=-1).mean(axis=-1), 95))
    return err / (scale if scale > 0 else 1.0)
