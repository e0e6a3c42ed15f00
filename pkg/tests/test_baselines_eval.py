import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mapnet.baselines import LSTMBaseline, PoseOnlyTransformer, moving_average, sma_predict, sma_upsample
from mapnet.errors import BadShape, BadWindow, LengthMismatch, MissingCheckpoint, TooFewFrames
from mapnet.evaluate import REPORT_HEADER, evaluate_suite, svg_line_plot, trajectory_rows, write_report
from mapnet.metrics import (
    DifficultyLabel,
    categorize_difficulty,
    mpjae,
    mpjpe,
    nonlinearity_score,
    per_frame_error_series,
)
from mapnet.model import MAPnet, ModelConfig, mpjpe_loss
from mapnet.noise import SwapEvent
from mapnet.pose import JointId, PoseSequence
from mapnet.train import TrainConfig, train

from fd import check_module


def small_cfg(tau=0.33, **kw):
    base = dict(h1=16, h2=10, pose_audio_layers=1, fusion_layers=1, heads=2, ff_dim=32, tau=tau,
                dropout=0.0, decode_widths=[32, 32], fusion_strategy="custom", lstm_hidden=16)
    base.update(kw)
    return ModelConfig(**base)


# -- moving average ----------------------------------------------------------


def test_sma_window_one_is_identity():
    x = np.random.default_rng(0).normal(size=(20, 13, 3))
    np.testing.assert_array_equal(moving_average(x, 1), x)
    seq = PoseSequence(x, 50)
    np.testing.assert_allclose(sma_upsample(seq, 1).frames, x, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 3, 5, 7, 9]), st.integers(10, 60), st.integers(0, 10**6))
def test_sma_exact_on_affine(n, length, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 500, (13, 3)), rng.normal(0, 50, (13, 3))
    x = a + b * np.arange(length)[:, None, None]
    np.testing.assert_allclose(moving_average(x, n), x, atol=1e-8 * np.abs(x).max())


def test_sma_interior_matches_loop():
    x = np.random.default_rng(1).normal(size=(30, 4))
    out = moving_average(x, 5)
    for t in range(2, 28):
        np.testing.assert_allclose(out[t], x[t - 2 : t + 3].mean(axis=0))
    np.testing.assert_allclose(out[1], x[0:3].mean(axis=0))
    np.testing.assert_allclose(out[0], x[0])


@pytest.mark.parametrize("n", [0, 2, 4, -3])
def test_sma_bad_window(n):
    with pytest.raises(BadWindow):
        moving_average(np.zeros((10, 3)), n)


def test_sma_predict_layout():
    t = np.arange(150)
    full = np.stack([np.full(39, 2.0 * k) for k in t])
    sparse = full[::3][None]
    out = sma_predict(sparse, 3, 5)
    assert out.shape == (1, 150, 13, 3)
    # affine in time so SMA + linear interpolation reproduces the dense signal, extrapolating the last 2 frames
    np.testing.assert_allclose(out[0].reshape(150, 39), full, atol=1e-9)


def test_sma_sinusoid_worse_than_cubic(record_property):
    from scipy.interpolate import CubicSpline

    # 2 Hz wrist oscillation of 100 mm sampled every third frame
    t = np.arange(150) / 50
    full = 100 * np.sin(2 * np.pi * 2 * t)[:, None].repeat(39, axis=1)
    sma = sma_predict(full[::3][None], 3, 5).reshape(150, 13, 3)
    cubic = CubicSpline(t[::3], full[::3])(t).reshape(150, 13, 3)
    gt = full.reshape(150, 13, 3)
    e_sma, e_cubic = mpjpe(sma, gt), mpjpe(cubic, gt)
    record_property("sma_mpjpe_mm", e_sma)
    record_property("cubic_mpjpe_mm", e_cubic)
    assert e_sma > e_cubic


# -- learned baselines -------------------------------------------------------


def test_pot_shapes_and_size():
    cfg = small_cfg()
    pot, mapnet = PoseOnlyTransformer(cfg), MAPnet(cfg)
    assert not pot.uses_audio
    out = pot(torch.randn(2, 50, 39))
    assert out.shape == (2, 150, 13, 3)
    count = lambda m: sum(p.numel() for p in m.parameters())
    assert count(pot) < count(mapnet)
    full = ModelConfig(tau=0.33)
    assert count(PoseOnlyTransformer(full)) < count(MAPnet(full))


def test_pot_ignores_audio():
    torch.manual_seed(0)
    pot = PoseOnlyTransformer(small_cfg()).eval()
    p = torch.randn(1, 50, 39)
    with torch.no_grad():
        assert torch.equal(pot(p), pot(p, torch.randn(1, 150, 35)))


def test_pot_gradient_check():
    torch.manual_seed(1)
    cfg = small_cfg(h1=8, h2=6, decode_widths=[8, 8], tau=1.0, t_out=5)
    pot = PoseOnlyTransformer(cfg).double()
    pose = torch.randn(1, cfg.t_in, 39, dtype=torch.float64) * 300
    gt = torch.randn(1, 5, 13, 3, dtype=torch.float64) * 300
    errs = check_module(pot, lambda: mpjpe_loss(pot(pose), gt))
    assert max(errs.values()) < 1e-3


def test_lstm_shapes():
    cfg = small_cfg()
    po, pa = LSTMBaseline(cfg, False), LSTMBaseline(cfg, True)
    assert (po.kind, pa.kind) == ("lstm_po", "lstm_pa")
    assert po.input_dim == 39 and pa.input_dim == 74
    pose, audio = torch.randn(2, 50, 39), torch.randn(2, 150, 35)
    assert po(pose).shape == pa(pose, audio).shape == (2, 150, 13, 3)
    assert pa.step_features(pose, audio).shape == (2, 50, 74)


def test_lstm_overfits_few_windows():
    torch.manual_seed(0)
    cfg = small_cfg(lstm_hidden=32, decode_widths=[128, 128])
    m = LSTMBaseline(cfg, False)
    g = torch.Generator().manual_seed(0)
    gt = torch.randn(5, 150, 13, 3, generator=g) * 200
    pose = gt.view(5, 150, 39)[:, ::3].clone()
    opt = torch.optim.Adam(m.parameters(), lr=3e-3)
    for _ in range(800):
        loss = mpjpe_loss(m(pose), gt)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if loss.item() < 20:
            break
    assert loss.item() < 20


# -- metrics -----------------------------------------------------------------


def test_mpjae_cases():
    rng = np.random.default_rng(0)
    gt = rng.normal(0, 100, (10, 13, 3))
    assert mpjae(gt, gt) == 0
    # constant and linear offsets do not change accelerations
    ramp = np.arange(10)[:, None, None] * np.array([1.0, -2.0, 0.5])
    assert mpjae(gt + 40 + ramp, gt) == pytest.approx(0, abs=1e-9)
    bumped = gt.copy()
    bumped[4, 2] += [3, 4, 0]
    # the bump enters three second differences with weights 1, -2, 1
    assert mpjae(bumped, gt) == pytest.approx((5 + 10 + 5) / (8 * 13))
    with pytest.raises(TooFewFrames):
        mpjae(gt[:2], gt[:2])
    with pytest.raises(BadShape):
        mpjae(gt, gt[:9])


def test_mpjae_matches_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(6, 13, 3)), rng.normal(size=(6, 13, 3))
    total = 0.0
    for t in range(1, 5):
        for j in range(13):
            da = a[t + 1, j] - 2 * a[t, j] + a[t - 1, j]
            db = b[t + 1, j] - 2 * b[t, j] + b[t - 1, j]
            total += math.sqrt(sum((da - db) ** 2))
    assert mpjae(a, b) == pytest.approx(total / (4 * 13), rel=1e-12)


def test_mpjpe_metric_flat_and_joint_forms():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(4, 13, 3)), rng.normal(size=(4, 13, 3))
    assert mpjpe(a.reshape(4, 39), b.reshape(4, 39)) == mpjpe(a, b)


def _window(wrist_fn, n=150):
    frames = np.zeros((n, 13, 3))
    t = np.arange(n) / 50
    frames[:, JointId.RMWR] = wrist_fn(t)
    return PoseSequence(frames, 50)


def test_difficulty_categories():
    line = _window(lambda t: np.stack([100 * t, 50 * t, 0 * t], axis=1))
    wiggle = _window(lambda t: np.stack([100 * np.sin(2 * np.pi * 3 * t), 0 * t, 0 * t], axis=1))
    assert nonlinearity_score(line.frames[:, JointId.RMWR]) == pytest.approx(0, abs=1e-12)
    assert categorize_difficulty(line, []) is DifficultyLabel.GROSS
    assert categorize_difficulty(wiggle, []) is DifficultyLabel.FINE
    ev = SwapEvent(2.9, 1.0, JointId.RKNE, JointId.LKNE)
    # any overlapping swap wins over the motion label
    assert categorize_difficulty(line, [ev]) is DifficultyLabel.INVERSION
    assert categorize_difficulty(wiggle, [SwapEvent(-1.0, 0.5, JointId.C7, JointId.RSHO)]) is DifficultyLabel.FINE
    still = _window(lambda t: np.zeros((len(t), 3)))
    assert categorize_difficulty(still, []) is DifficultyLabel.GROSS


def test_error_series_cases():
    rng = np.random.default_rng(3)
    gt = rng.normal(0, 100, (40, 13, 3))
    assert not per_frame_error_series(gt, gt).any()
    shifted = gt.copy()
    shifted[10] += [0, 0, 6]
    s = per_frame_error_series(shifted, gt, scale=2.0)
    assert s[10] == pytest.approx(3.0) and s.sum() == pytest.approx(3.0)
    with pytest.raises(LengthMismatch):
        per_frame_error_series(gt[:39], gt)


# -- evaluation suite --------------------------------------------------------


@pytest.fixture(scope="module")
def pot_checkpoints(small_windows):
    cks = {}
    for tau in (1.0, 0.5, 0.33):
        torch.manual_seed(0)
        cks[("pot", tau)] = train(PoseOnlyTransformer(small_cfg(tau=tau)), small_windows,
                                  TrainConfig(epochs=1, batch_size=32, lr=1e-3))
    return cks


def test_evaluate_suite_grid(small_windows, pot_checkpoints):
    taus = [1.0, 0.5, 0.33]
    rep = evaluate_suite(["sma", "pot"], small_windows, taus, pot_checkpoints)
    cells = {(r["method"], r["tau"]) for r in rep.rows}
    assert len(cells) == 6
    assert {r["category"] for r in rep.rows} == {"all", "Fine", "Gross", "Inversion"}
    for m in ("sma", "pot"):
        for tau in taus:
            n = sum(rep.cell(m, tau, c, "windows") for c in ("Fine", "Gross", "Inversion"))
            assert n == rep.cell(m, tau, "all", "windows") == len(small_windows.indices("test"))
    again = evaluate_suite(["sma", "pot"], small_windows, taus, pot_checkpoints)
    assert again.to_csv() == rep.to_csv()
    assert rep.cell("sma", 1.0) < rep.cell("sma", 0.33)


def test_evaluate_missing_checkpoint(small_windows):
    with pytest.raises(MissingCheckpoint):
        evaluate_suite(["mapnet"], small_windows, [0.33], {})


def test_report_files(small_windows, pot_checkpoints, tmp_path):
    rep = evaluate_suite(["sma", "pot"], small_windows, [0.33], pot_checkpoints)
    write_report(tmp_path, rep)
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header.split(",") == REPORT_HEADER
    assert "MPJAE" in (tmp_path / "report.txt").read_text()
    streams = sorted(p.name for p in (tmp_path / "streams").iterdir())
    assert streams == ["gt.csv", "pot_tau0.33.csv", "pot_tau0.33_error.csv", "sma_tau0.33.csv", "sma_tau0.33_error.csv"]
    assert (tmp_path / "per_joint.csv").read_text().splitlines()[0].startswith("method,tau,C7,RSHO")


def test_svg_and_trajectory_rows():
    gt = np.zeros((5, 13, 3))
    pred = np.ones((5, 13, 3))
    rows = trajectory_rows(gt, pred, JointId.RMWR).splitlines()
    assert rows[0] == "t_s,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z" and len(rows) == 6
    svg = svg_line_plot({"gt <x>": np.arange(5.0), "pred": np.array([0, 1, np.nan, 3, 4.0])}, title="a & b")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2
