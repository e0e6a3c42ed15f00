"""Dataset archive: ``manifest.json`` plus per-sample pose/audio CSV files."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .audio import N_FEATURES
from .data import OUTPUT_FPS, WindowSet, tau_stride
from .errors import ArchiveIOError
from .noise import SwapEvent
from .pose import POSE_COLUMNS, POSE_DIM

FORMAT_VERSION = 1


def tau_tag(tau: float) -> str:
    return f"{tau:.2f}"


def _window_csv(block: np.ndarray, fps: float, start: float) -> str:
    """Pose-format CSV for a (T, 39) window; %.9g round-trips float32 exactly."""
    buf = io.StringIO()
    buf.write(f"# fps={float(fps)!r}\n")
    buf.write("frame,time_s," + ",".join(POSE_COLUMNS) + "\n")
    t = start + np.arange(len(block)) / fps
    for i, row in enumerate(block):
        buf.write(f"{i},{float(t[i])!r}," + ",".join("%.9g" % v for v in row) + "\n")
    return buf.getvalue()


def _feature_csv(block: np.ndarray) -> str:
    return "".join(",".join("%.9g" % v for v in row) + "\n" for row in block)


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc


def write_archive(out_dir, ws: WindowSet, taus, extra: dict | None = None, window_s: float = 3.0) -> dict:
    """Write every window of ``ws`` and return the manifest that was saved."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
    written = set()
    samples = []
    for i in range(len(ws)):
        tid, v, k = str(ws.trial[i]), int(ws.variant[i]), int(ws.window[i])
        start = k * ws.hop_s
        b = int(ws.base[i])
        target = f"pose_target_{tid}_w{k:04d}.csv"
        feat = f"audio_feat_{tid}_w{k:04d}.csv"
        if b not in written:
            _write(out / target, _window_csv(ws.targets[b], OUTPUT_FPS, start))
            _write(out / feat, _feature_csv(ws.audio[b]))
            written.add(b)
        sparse = {}
        for tau in taus:
            name = f"pose_sparse_{tid}_v{v:02d}_w{k:04d}_tau{tau_tag(tau)}.csv"
            _write(out / name, _window_csv(ws.sparse[tau][i], OUTPUT_FPS / tau_stride(tau), start))
            sparse[tau_tag(tau)] = name
        samples.append(
            {"trial": tid, "variant": v, "window": k, "start_s": start, "split": str(ws.split[i]),
             "target": target, "audio": feat, "sparse": sparse}
        )
    groups = []
    for (tid, v), evs in sorted(ws.events.items()):
        split = next((s["split"] for s in samples if s["trial"] == tid and s["variant"] == v), None)
        groups.append({"trial": tid, "variant": v, "split": split, "swap_events": [e.to_dict() for e in evs]})
    counts = {s: int(np.sum(ws.split == s)) for s in ("train", "valid", "test")}
    group_counts = {s: sum(g["split"] == s for g in groups) for s in ("train", "valid", "test")}
    manifest = {
        "format": FORMAT_VERSION,
        "taus": [float(t) for t in taus],
        "window_s": window_s,
        "hop_s": ws.hop_s,
        "counts": {"windows": len(ws), "windows_per_split": counts, "groups_per_split": group_counts},
        "groups": groups,
        "samples": samples,
        **(extra or {}),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def read_manifest(archive) -> dict:
    path = Path(archive) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArchiveIOError(f"cannot read {path}: {exc}") from exc


def _load(path: Path, skip: int, cols: int) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ArchiveIOError(f"{path}: {exc}") from exc
    if arr.shape[1] < cols:
        raise ArchiveIOError(f"{path}: expected {cols} columns, found {arr.shape[1]}")
    return arr[:, -cols:]


def read_archive(archive, taus=None) -> tuple[WindowSet, dict]:
    root = Path(archive)
    manifest = read_manifest(root)
    taus = manifest["taus"] if taus is None else list(taus)
    base_of, targets, audio = {}, [], []
    sparse = {t: [] for t in taus}
    base, trial, variant, window, split = [], [], [], [], []
    for s in manifest["samples"]:
        key = (s["trial"], s["window"])
        if key not in base_of:
            base_of[key] = len(targets)
            targets.append(_load(root / s["target"], 2, POSE_DIM))
            audio.append(_load(root / s["audio"], 0, N_FEATURES))
        for t in taus:
            name = s["sparse"].get(tau_tag(t))
            if name is None:
                raise ArchiveIOError(f"archive has no tau={t} windows")
            sparse[t].append(_load(root / name, 2, POSE_DIM))
        base.append(base_of[key])
        trial.append(s["trial"]), variant.append(s["variant"]), window.append(s["window"]), split.append(s["split"])
    events = {
        (g["trial"], g["variant"]): [SwapEvent.from_dict(e) for e in g["swap_events"]] for g in manifest["groups"]
    }
    ws = WindowSet(
        targets=np.array(targets, dtype=np.float32),
        audio=np.array(audio, dtype=np.float32),
        sparse={t: np.array(v, dtype=np.float32) for t, v in sparse.items()},
        base=np.array(base, dtype=np.int64),
        trial=np.array(trial, dtype=object),
        variant=np.array(variant, dtype=np.int64),
        window=np.array(window, dtype=np.int64),
        split=np.array(split, dtype=object),
        events=events,
        hop_s=manifest["hop_s"],
    )
    return ws, manifest
