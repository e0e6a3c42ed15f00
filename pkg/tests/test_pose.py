import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapnet.errors import BadShape, EmptySequence, MissingMarker, ValidationError
from mapnet.pose import (
    JOINT_NAMES,
    MARKER_RULES,
    N_JOINTS,
    POSE_COLUMNS,
    JointId,
    PoseSequence,
    flatten_pose,
    markers_to_joints,
    normalize_origin,
    read_pose_csv,
    unflatten_pose,
    write_pose_csv,
)

from conftest import random_pose

coords = st.floats(-5e3, 5e3, allow_nan=False, allow_infinity=False)


def marker_frame(rng):
    names = sorted({m for ms in MARKER_RULES.values() for m in ms})
    frame = {n: rng.normal(0, 300, 3) for n in names}
    frame["HEAD"] = rng.normal(0, 300, 3)  # ignored marker
    return frame


def test_joint_enum_ordinals():
    assert len(JointId) == 13
    assert [j.value for j in JointId] == list(range(13))
    assert JOINT_NAMES == ["C7", "RSHO", "LSHO", "RMEL", "LMEL", "RMWR", "LMWR",
                           "RBWT", "LBWT", "RKNE", "LKNE", "RTOE", "LTOE"]
    assert JointId["RMWR"] == 5 and JointId(12) is JointId.LTOE
    assert JointId.RMWR.mirror() is JointId.LMWR
    assert JointId.C7.mirror() is JointId.C7


def test_pose_columns_layout():
    assert POSE_COLUMNS[:4] == ["C7_x", "C7_y", "C7_z", "RSHO_x"]
    assert len(POSE_COLUMNS) == 39


def test_elbow_midpoint():
    frame = marker_frame(np.random.default_rng(0))
    frame["RIEL"], frame["ROEL"] = np.zeros(3), np.array([10.0, 0, 0])
    sk = markers_to_joints(frame)
    np.testing.assert_array_equal(sk[JointId.RMEL], [5, 0, 0])
    assert sk.shape == (N_JOINTS, 3)


def test_coincident_pair_gives_the_point():
    frame = marker_frame(np.random.default_rng(1))
    frame["LIWR"] = frame["LOWR"] = np.array([3.0, 4.0, 5.0])
    np.testing.assert_array_equal(markers_to_joints(frame)[JointId.LMWR], [3, 4, 5])


def test_direct_markers_copied():
    frame = marker_frame(np.random.default_rng(2))
    sk = markers_to_joints(frame)
    for j in (JointId.C7, JointId.RSHO, JointId.LBWT, JointId.LTOE):
        np.testing.assert_array_equal(sk[j], frame[j.name])


def test_missing_marker_named():
    frame = marker_frame(np.random.default_rng(3))
    del frame["ROKN"]
    with pytest.raises(MissingMarker) as exc:
        markers_to_joints(frame)
    assert exc.value.name == "ROKN"


def test_markers_permutation_invariant():
    frame = marker_frame(np.random.default_rng(4))
    shuffled = dict(reversed(list(frame.items())))
    np.testing.assert_array_equal(markers_to_joints(frame), markers_to_joints(shuffled))


def test_normalize_origin_shift():
    frames = np.random.default_rng(0).normal(0, 100, (4, 13, 3))
    frames[0, JointId.LTOE] = [100, 0, -50]
    out = normalize_origin(PoseSequence(frames, 50))
    np.testing.assert_allclose(out.frames, frames + np.array([-100, 0, 50]), atol=1e-12)
    np.testing.assert_array_equal(out.frames[0, JointId.LTOE], 0)


def test_normalize_origin_identity_on_normalized():
    seq = normalize_origin(random_pose())
    assert normalize_origin(seq) == seq


def test_normalize_empty():
    with pytest.raises(EmptySequence):
        normalize_origin(PoseSequence(np.zeros((0, 13, 3)), 50))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 13, 3), elements=coords))
def test_normalize_preserves_distances_and_is_idempotent(frames):
    seq = PoseSequence(frames, 50)
    out = normalize_origin(seq)
    d0 = np.linalg.norm(frames[:, :, None] - frames[:, None], axis=-1)
    d1 = np.linalg.norm(out.frames[:, :, None] - out.frames[:, None], axis=-1)
    assert np.all(np.abs(d0 - d1) <= 1e-9 * np.maximum(1.0, d0))
    np.testing.assert_allclose(normalize_origin(out).frames, out.frames, atol=1e-9)


def test_flatten_shape_and_index():
    seq = random_pose(150)
    feat = flatten_pose(seq)
    assert feat.shape == (150, 39)
    assert feat[7, 4] == seq.frames[7, JointId.RSHO, 1]
    for t, j, a in itertools.product(range(0, 150, 37), range(13), range(3)):
        assert feat[t, 3 * j + a] == seq.frames[t, j, a]


def test_flatten_empty():
    with pytest.raises(EmptySequence):
        flatten_pose(PoseSequence(np.zeros((0, 13, 3)), 50))


def test_unflatten_zeros_and_bad_shape():
    seq = unflatten_pose(np.zeros((150, 39)), 50)
    assert len(seq) == 150 and not seq.frames.any()
    with pytest.raises(BadShape):
        unflatten_pose(np.zeros((150, 40)), 50)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(39)), elements=coords))
def test_flatten_unflatten_bijection(feat):
    seq = unflatten_pose(feat, 25.0)
    assert np.array_equal(flatten_pose(seq), feat)
    assert unflatten_pose(flatten_pose(seq), 25.0) == seq


def test_pose_sequence_contract():
    seq = random_pose(10, fps=25)
    assert seq.duration == pytest.approx(0.4)
    np.testing.assert_allclose(np.diff(seq.times), 1 / 25)
    with pytest.raises(ValueError):
        seq.frames[0, 0, 0] = 1.0
    with pytest.raises(ValidationError):
        PoseSequence(np.zeros((2, 13, 3)), 0)
    with pytest.raises(ValidationError):
        PoseSequence(np.full((2, 13, 3), np.nan), 50)
    with pytest.raises(BadShape):
        PoseSequence(np.zeros((2, 12, 3)), 50)


def test_pose_csv_roundtrip(tmp_path):
    seq = random_pose(30, fps=50).replace(start_time=1.5)
    path = tmp_path / "p.csv"
    write_pose_csv(path, seq)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fps=50.0"
    assert lines[1] == "frame,time_s," + ",".join(POSE_COLUMNS)
    assert read_pose_csv(path) == seq


def test_marker_csv_is_reduced(tmp_path):
    rng = np.random.default_rng(5)
    frames = [marker_frame(rng) for _ in range(3)]
    names = sorted(frames[0])
    header = ["frame", "time_s"] + [f"{n}_{a}" for n in names for a in "xyz"]
    rows = [[str(i), str(i / 100)] + [repr(float(v)) for n in names for v in f[n]] for i, f in enumerate(frames)]
    path = tmp_path / "m.csv"
    path.write_text("# fps=100\n" + "\n".join(",".join(r) for r in [header] + rows) + "\n")
    seq = read_pose_csv(path)
    assert seq.fps == 100 and len(seq) == 3
    np.testing.assert_allclose(seq.frames[2], markers_to_joints(frames[2]))
