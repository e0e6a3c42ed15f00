"""``mapnet`` command line: synth, prepare, train, eval, plot.

Exit codes: 0 success, 1 validation error, 2 IO error. Logs go to stderr;
artifacts go to files under ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from xml.etree import ElementTree

import numpy as np

from . import audio as A
from . import config as C
from .archive import read_archive, tau_tag, write_archive
from .baselines import linear_resample
from .data import OUTPUT_FPS, WindowSpec, build_window_set, synchronize, tau_stride, trim
from .errors import ArchiveIOError, MapnetError, NoActivityDetected, UnpairedFile, ValidationError
from .evaluate import evaluate_suite, svg_line_plot, trajectory_rows, write_report
from .model import build_model
from .pose import JOINT_NAMES, JointId, PoseSequence, read_pose_csv
from .synth import synth_generate
from .train import load_checkpoint, save_checkpoint, train

log = logging.getLogger("mapnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML config (defaults when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--seed", type=int, help="master seed; also sets train.seed")
    p.add_argument("--tau", type=float, help="input/output frame-rate ratio: 1.0, 0.5 or 0.33")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-trial work")
    p.add_argument("--deterministic", action="store_true", help="single-threaded deterministic kernels")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="mapnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset archive")

    p = sub.add_parser("prepare", parents=[common], help="build an archive from pose CSVs and WAVs")
    p.add_argument("pose_dir", type=Path)
    p.add_argument("wav_dir", type=Path)

    p = sub.add_parser("train", parents=[common], help="train one method at one tau")
    p.add_argument("archive", type=Path)
    p.add_argument("--method", default="mapnet")

    p = sub.add_parser("eval", parents=[common], help="score methods on an archive")
    p.add_argument("archive", type=Path)
    p.add_argument("--checkpoints", type=Path, help="directory of .ckpt files (default: --out)")
    p.add_argument("--methods", help="comma-separated list overriding eval.methods")

    p = sub.add_parser("plot", parents=[common], help="trajectory and error-series plots from eval output")
    p.add_argument("eval_dir", type=Path)
    p.add_argument("--joint", default="RMWR", choices=JOINT_NAMES)
    return parser


def load_config(args) -> C.ExperimentConfig:
    cfg = C.load(args.config) if args.config else C.ExperimentConfig().validate()
    cfg = C.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.deterministic:
        cfg.train.deterministic = True
    if args.tau is not None:
        tau_stride(args.tau)
        cfg.model.tau = args.tau
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return cfg.validate()


def _out_dir(args, cfg, default: str) -> Path:
    return args.out if args.out is not None else cfg.data_root() / default


def _synth_trial(args):
    i, seed, duration, params = args
    pose, clip = synth_generate(duration, params, seed=[seed, i])
    return f"s{i:03d}", pose, clip


def _archive_from_trials(cfg, trials, out: Path, jobs: int, extra: dict) -> dict:
    spec = WindowSpec(cfg.data.window_s, cfg.data.hop_s)
    ws = build_window_set(
        trials, cfg.noise, cfg.data.taus, cfg.data.split_seed, spec, cfg.audio,
        allow_degenerate=cfg.data.allow_degenerate_split, ratios=tuple(cfg.data.split_ratios), jobs=jobs,
    )
    per_trial = {tid: int(spec.count(min(p.duration, c.duration))) for tid, p, c in trials}
    extra = {
        **extra,
        "n_variants": cfg.noise.n_variants,
        "windows_per_variant": per_trial,
        "config": C.to_dict(cfg),
    }
    manifest = write_archive(out, ws, cfg.data.taus, extra, cfg.data.window_s)
    c = manifest["counts"]
    log.info("wrote %d windows (%s) to %s", c["windows"], c["windows_per_split"], out)
    return manifest


def cmd_synth(args, cfg) -> int:
    out = _out_dir(args, cfg, "synth")
    jobs_args = [(i, cfg.seed, cfg.data.trial_duration_s, cfg.data.synth) for i in range(cfg.data.n_trials)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            trials = list(ex.map(_synth_trial, jobs_args))
    else:
        trials = [_synth_trial(a) for a in jobs_args]
    _archive_from_trials(cfg, trials, out, args.jobs, {"source": "synth", "trials": [t[0] for t in trials]})
    return 0


def pair_files(pose_dir: Path, wav_dir: Path) -> list[tuple[str, Path, Path]]:
    """Match ``<name>.csv`` in ``pose_dir`` with ``<name>.wav`` in ``wav_dir``."""
    for d in (pose_dir, wav_dir):
        if not d.is_dir():
            raise ArchiveIOError(f"{d} is not a directory")
    poses = {p.stem: p for p in pose_dir.glob("*.csv")}
    wavs = {p.stem: p for p in wav_dir.glob("*.wav")}
    unpaired = sorted(set(poses) ^ set(wavs))
    if unpaired:
        raise UnpairedFile(unpaired)
    if not poses:
        raise ArchiveIOError(f"no pose CSV files in {pose_dir}")
    return [(name, poses[name], wavs[name]) for name in sorted(poses)]


def _to_output_rate(pose: PoseSequence) -> PoseSequence:
    if abs(pose.fps - OUTPUT_FPS) < 1e-9:
        return pose
    log.warning("resampling pose from %.3f to %.0f fps", pose.fps, OUTPUT_FPS)
    t_src = np.arange(len(pose)) / pose.fps
    n = int(np.floor(pose.duration * OUTPUT_FPS + 1e-9))
    return PoseSequence(linear_resample(pose.frames, t_src, np.arange(n) / OUTPUT_FPS), OUTPUT_FPS, pose.start_time)


def cmd_prepare(args, cfg) -> int:
    out = _out_dir(args, cfg, "prepared")
    trials, skipped = [], []
    for name, pose_path, wav_path in pair_files(args.pose_dir, args.wav_dir):
        pose = _to_output_rate(read_pose_csv(pose_path))
        clip = A.load_wav(wav_path)
        if clip.sample_rate_hz != cfg.audio.sample_rate_hz:
            clip = A.resample_linear(clip, cfg.audio.sample_rate_hz)
        try:
            sync = synchronize(clip, pose, cfg.data.sync_threshold, cfg.data.sync_sustain_s)
        except NoActivityDetected as exc:
            log.warning("skipping %s: %s", name, exc)
            skipped.append(name)
            continue
        log.info("%s: audio offset %.3fs, playing %.2f-%.2fs", name, sync.audio_offset_s, sync.play_onset_s, sync.play_offset_s)
        pose, clip = trim(pose, clip, sync)
        trials.append((name, pose, clip))
    if not trials:
        raise ValidationError("no usable trials")
    _archive_from_trials(cfg, trials, out, args.jobs, {"source": "prepare", "trials": [t[0] for t in trials], "skipped": skipped})
    return 0


def cmd_train(args, cfg) -> int:
    if args.method not in C.KNOWN_METHODS or args.method == "sma":
        raise ValidationError(f"cannot train {args.method!r}; learned methods: {', '.join(C.KNOWN_METHODS[:-1])}")
    tau = cfg.model.tau
    data, _ = read_archive(args.archive, taus=[tau])
    model_cfg = dataclasses.replace(cfg.model, decode_widths=list(cfg.model.decode_widths))
    import torch

    torch.manual_seed(cfg.train.seed)
    model = build_model(args.method, model_cfg)
    out = _out_dir(args, cfg, "runs")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.method}_tau{tau_tag(tau)}"
    ckpt = train(model, data, cfg.train, tau, log_path=out / f"{stem}_log.csv")
    save_checkpoint(out / f"{stem}.ckpt", ckpt)
    log.info("saved %s", out / f"{stem}.ckpt")
    return 0


def _find_checkpoints(directory: Path) -> dict:
    found = {}
    if directory is None or not directory.is_dir():
        return found
    for path in sorted(directory.glob("*.ckpt")):
        ck = load_checkpoint(path)
        found[(ck.kind, float(ck.meta.get("tau", ck.config.tau)))] = ck
    return found


def cmd_eval(args, cfg) -> int:
    if args.methods:
        cfg.eval.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        cfg.validate()
    data, manifest = read_archive(args.archive)
    taus = [args.tau] if args.tau is not None else [t for t in cfg.data.taus if t in data.sparse]
    for t in taus:
        if t not in data.sparse:
            raise ValidationError(f"archive has no tau={t} windows")
    out = _out_dir(args, cfg, "eval")
    checkpoints = _find_checkpoints(args.checkpoints or out)
    report = evaluate_suite(
        cfg.eval.methods, data, taus, checkpoints, cfg.eval.theta, cfg.eval.sma_window, cfg.eval.split,
        manifest.get("window_s", cfg.data.window_s),
    )
    write_report(out, report)
    log.info("report written to %s", out)
    return 0


def cmd_plot(args, cfg) -> int:
    streams = args.eval_dir / "streams"
    gt_path = streams / "gt.csv"
    if not gt_path.exists():
        raise ArchiveIOError(f"{gt_path} not found; run `mapnet eval` first")
    gt = read_pose_csv(gt_path).frames
    out = args.out if args.out is not None else args.eval_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    joint = int(JointId[args.joint])
    errors = {}
    for path in sorted(streams.glob("*_tau*.csv")):
        name = path.stem
        if name.endswith("_error"):
            series = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 2]
            errors[name[: -len("_error")]] = series
            continue
        pred = read_pose_csv(path).frames
        (out / f"trajectory_{args.joint}_{name}.csv").write_text(trajectory_rows(gt, pred, joint), encoding="utf-8")
        for axis, ax in enumerate("xyz"):
            svg = svg_line_plot(
                {"gt": gt[:, joint, axis], name: pred[:, joint, axis]},
                title=f"{args.joint} {ax} trajectory: {name}", ylabel="mm",
            )
            (out / f"trajectory_{args.joint}_{name}_{ax}.svg").write_text(svg, encoding="utf-8")
    if errors:
        svg = svg_line_plot(errors, title="normalized per-frame L2 error", ylabel="error")
        (out / "error_series.svg").write_text(svg, encoding="utf-8")
    for svg_path in out.glob("*.svg"):
        ElementTree.parse(svg_path)
    log.info("plots written to %s", out)
    return 0


COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except (ArchiveIOError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except MapnetError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
