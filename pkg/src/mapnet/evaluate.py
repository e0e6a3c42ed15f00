"""Evaluation suite: method x tau x difficulty report, error series, trajectory export."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .baselines import sma_predict
from .data import OUTPUT_FPS, WindowSet, tau_stride
from .errors import MissingCheckpoint, ValidationError
from .metrics import DifficultyLabel, acceleration, categorize_difficulty, per_frame_error_series
from .pose import JOINT_NAMES
from .train import predict, stitch

REPORT_HEADER = ["method", "tau", "split", "category", "mpjpe_mm", "mpjae", "windows"]
CATEGORIES = ["all"] + [c.value for c in DifficultyLabel]
MPJAE_NOTE = "MPJAE = mean over joints and frames of ||a_pred - a_gt||, a_t = x[t+1] - 2 x[t] + x[t-1] (mm/frame^2)."


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    per_joint: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    streams: dict = field(default_factory=dict)

    def cell(self, method, tau, category="all", metric="mpjpe_mm"):
        for r in self.rows:
            if r["method"] == method and r["tau"] == tau and r["category"] == category:
                return r[metric]
        raise KeyError((method, tau, category))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r["method"], f"{r['tau']:.2f}", r["split"], r["category"], repr(r["mpjpe_mm"]), repr(r["mpjae"]), r["windows"]])
        return buf.getvalue()

    def to_table(self) -> str:
        taus = sorted({r["tau"] for r in self.rows}, reverse=True)
        methods = list(dict.fromkeys(r["method"] for r in self.rows))
        lines = ["MPJPE (mm) by input rate", "method".ljust(16) + "".join(f"tau={t:.2f}".rjust(12) for t in taus)]
        for m in methods:
            lines.append(m.ljust(16) + "".join(f"{self.cell(m, t):12.2f}" for t in taus))
        lines += ["", "MPJPE (mm) by difficulty (lowest tau)"]
        lines.append("method".ljust(16) + "".join(c.rjust(12) for c in CATEGORIES[1:]))
        for m in methods:
            lines.append(m.ljust(16) + "".join(f"{self.cell(m, taus[-1], c):12.2f}" for c in CATEGORIES[1:]))
        lines += ["", "MPJAE by input rate"]
        for m in methods:
            lines.append(m.ljust(16) + "".join(f"{self.cell(m, t, metric='mpjae'):12.2f}" for t in taus))
        lines += ["", MPJAE_NOTE]
        return "\n".join(lines) + "\n"


def window_labels(data: WindowSet, idx, theta: float, window_s: float = 3.0) -> list:
    return [
        categorize_difficulty(data.targets[data.base[i]].reshape(-1, 13, 3), data.window_events(i, window_s), theta, window_s).value
        for i in idx
    ]


def method_predictions(method: str, data: WindowSet, tau: float, idx, checkpoints: dict, sma_window: int = 5):
    """(N, 150, 13, 3) predictions of ``method`` at ``tau`` for windows ``idx``."""
    sparse, audio, _ = data.arrays(tau, idx)
    if method == "sma":
        return sma_predict(sparse.astype(np.float64), tau_stride(tau), sma_window)
    ckpt = checkpoints.get((method, tau))
    if ckpt is None:
        raise MissingCheckpoint(f"no checkpoint for method {method!r} at tau={tau}")
    model = ckpt.model()
    return predict(model, sparse, audio if model.uses_audio else None).astype(np.float64)


def evaluate_suite(methods, data: WindowSet, taus, checkpoints: dict | None = None, theta: float = 0.05,
                   sma_window: int = 5, split: str = "test", window_s: float = 3.0) -> EvalReport:
    """Score every (method, tau) pair on ``split`` overall and per difficulty category.

    ``checkpoints`` maps (method, tau) to a Checkpoint for learned methods.
    """
    checkpoints = checkpoints or {}
    idx = data.indices(split)
    if len(idx) == 0:
        raise ValidationError(f"split {split!r} has no windows")
    labels = np.array(window_labels(data, idx, theta, window_s))
    gt = data.targets[data.base[idx]].reshape(len(idx), -1, 13, 3).astype(np.float64)
    gt_acc = acceleration(gt)
    first = (data.trial[idx[0]], data.variant[idx[0]])
    stream_sel = np.array([(data.trial[i], data.variant[i]) == first for i in idx])
    hop = int(round(data.hop_s * OUTPUT_FPS))
    starts = data.window[idx][stream_sel] * hop
    n_stream = int(starts.max() + gt.shape[1]) if stream_sel.any() else 0
    gt_stream, _ = stitch(gt[stream_sel], starts, n_stream)

    report = EvalReport()
    report.streams["gt"] = gt_stream
    for method in methods:
        for tau in taus:
            pred = method_predictions(method, data, tau, idx, checkpoints, sma_window)
            err = np.linalg.norm(pred - gt, axis=-1)
            per_window = err.mean(axis=(1, 2))
            acc_err = np.linalg.norm(acceleration(pred) - gt_acc, axis=-1).mean(axis=(1, 2))
            for cat in CATEGORIES:
                sel = np.ones(len(idx), bool) if cat == "all" else labels == cat
                n = int(sel.sum())
                report.rows.append({
                    "method": method, "tau": float(tau), "split": split, "category": cat,
                    "mpjpe_mm": float(per_window[sel].mean()) if n else float("nan"),
                    "mpjae": float(acc_err[sel].mean()) if n else float("nan"),
                    "windows": n,
                })
            report.per_joint[(method, float(tau))] = err.mean(axis=(0, 1))
            stream, _ = stitch(pred[stream_sel], starts, n_stream)
            report.streams[(method, float(tau))] = stream
            report.series[(method, float(tau))] = per_frame_error_series(stream, gt_stream)
    return report


def write_report(out_dir, report: EvalReport, first_group: str = "") -> None:
    """report.csv, report.txt, per_joint.csv, and per-stream CSVs for plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    lines = ["method,tau," + ",".join(JOINT_NAMES)]
    for (m, t), v in report.per_joint.items():
        lines.append(f"{m},{t:.2f}," + ",".join(repr(float(x)) for x in v))
    (out / "per_joint.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    streams = out / "streams"
    streams.mkdir(exist_ok=True)
    _write_stream(streams / "gt.csv", report.streams["gt"])
    for key, s in report.streams.items():
        if key == "gt":
            continue
        m, t = key
        _write_stream(streams / f"{m}_tau{t:.2f}.csv", s)
        err = report.series[(m, t)]
        rows = ["frame,t_s,normalized_l2"] + [f"{i},{i / OUTPUT_FPS!r},{float(e)!r}" for i, e in enumerate(err)]
        (streams / f"{m}_tau{t:.2f}_error.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def _write_stream(path, frames):
    from .pose import PoseSequence, write_pose_csv

    write_pose_csv(path, PoseSequence(frames, OUTPUT_FPS))


def trajectory_rows(gt: np.ndarray, pred: np.ndarray, joint: int, fps: float = OUTPUT_FPS) -> str:
    lines = ["t_s,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z"]
    for i in range(len(gt)):
        vals = [i / fps, *gt[i, joint], *pred[i, joint]]
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def svg_line_plot(series: dict, title: str = "", xlabel: str = "t (s)", ylabel: str = "", dt: float = 1 / OUTPUT_FPS,
                  width: int = 800, height: int = 300) -> str:
    """Minimal SVG with one polyline per named series sharing the axes."""
    palette = ["#000000", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#bcbd22", "#e377c2"]
    pad = 45
    finite = [np.asarray(v, float)[np.isfinite(v)] for v in series.values()]
    lo = min((f.min() for f in finite if f.size), default=0.0)
    hi = max((f.max() for f in finite if f.size), default=1.0)
    if hi - lo < 1e-12:
        hi, lo = hi + 1, lo - 1
    n = max((len(v) for v in series.values()), default=1)
    sx = (width - 2 * pad) / max(1, n - 1)
    sy = (height - 2 * pad) / (hi - lo)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{escape(xlabel)} (0 to {(n - 1) * dt:.2f})</text>',
        f'<text x="10" y="{pad - 8}" font-size="12">{escape(ylabel)} [{lo:.1f}, {hi:.1f}]</text>',
    ]
    for k, (name, values) in enumerate(series.items()):
        pts = " ".join(
            f"{pad + i * sx:.2f},{height - pad - (v - lo) * sy:.2f}" for i, v in enumerate(values) if np.isfinite(v)
        )
        color = palette[k % len(palette)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 2}" y="{pad + 14 * k}" font-size="10" fill="{color}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
