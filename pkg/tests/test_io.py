from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mono3dlab.errors import CorruptFileError, ParseError
from mono3dlab.geometry import Box3D
from mono3dlab.io import (
    box_from_dict,
    box_to_dict,
    box_to_kitti,
    decode_tensor,
    encode_tensor,
    kitti_to_box,
    parse_calib,
    parse_label_file,
    parse_label_line,
    read_tensor,
    serialize_calib,
    serialize_labels,
    write_tensor,
)
from strategies import boxes

LABELS = """\
Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Pedestrian 0.00 0 0.21 423.17 173.67 433.17 224.03 1.60 0.38 0.30 -5.87 1.63 23.11 -0.03
Cyclist 0.31 1 -2.76 0.00 188.23 95.13 266.49 1.70 0.60 1.76 -11.11 1.80 14.53 3.03 0.87
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
"""
CALIB = """\
P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
"""


def test_label_parse_serialize_parse_fixpoint():
    labels = parse_label_file(LABELS)
    assert len(labels) == 4 and labels[3].is_dontcare and labels[2].score == 0.87
    text = serialize_labels(labels)
    again = parse_label_file(text)
    assert again == labels
    assert serialize_labels(again) == text


def test_calib_parse_serialize_parse_fixpoint():
    calib, K = parse_calib(CALIB)
    assert (K.fx, K.fy, K.cx, K.cy) == (721.5377, 721.5377, 609.5593, 172.854)
    text = serialize_calib(calib)
    calib2, K2 = parse_calib(text)
    assert calib2 == calib and K2 == K and serialize_calib(calib2) == text


@given(boxes)
def test_box_kitti_round_trip(box):
    back = kitti_to_box(box_to_kitti(box))
    np.testing.assert_allclose(back.center, box.center, atol=1e-9)
    assert back.dims == box.dims and back.yaw == box.yaw


@given(boxes)
def test_box_dict_round_trip_is_exact(box):
    assert box_from_dict(box_to_dict(box)) == box


@settings(max_examples=50)
@given(st.lists(st.integers(0, 5), min_size=0, max_size=3), st.integers(0, 2**32 - 1))
def test_tensor_round_trip_is_bit_exact(shape, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=shape).astype(np.float32) * np.float32(1e3)
    if a.size:
        a.flat[0] = np.nan
    b, header = decode_tensor(encode_tensor(a, "x", layout=["a"]))
    assert b.shape == a.shape and b.tobytes() == a.tobytes()
    assert header["layout"] == ["a"] and header["name"] == "x"


def test_tensor_file_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7
    write_tensor(tmp_path / "t.t32", a)
    b, header = read_tensor(tmp_path / "t.t32")
    assert b.tobytes() == a.tobytes() and header["name"] == "t"


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda b: b[:-3], "offset"),
        (lambda b: b[:-4] + bytes([b[-4] ^ 1]) + b[-3:], "checksum"),
        (lambda b: b"{not json" + b[b.index(b"\n"):], "header"),
        (lambda b: b.replace(b'"float32"', b'"float64"'), "dtype"),
        (lambda b: b.replace(b"\n", b" ", 1), "header"),
    ],
)
def test_corrupted_tensor_rejected_with_location(tmp_path, mutate, fragment):
    p = tmp_path / "bad.t32"
    p.write_bytes(mutate(encode_tensor(np.ones((3, 3)), "bad")))
    with pytest.raises(CorruptFileError) as info:
        read_tensor(p)
    assert str(p) in str(info.value) and fragment in str(info.value)


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("Car 0 0 0 1 2 3 4 1 1 1 0 0 10", "fields"),
        ("Car 0 0 0 1 2 3 4 1 1 1 0 0 10 0.1 0.2 0.3", "fields"),
        ("Car 0 0 0 1 2 3 x 1 1 1 0 0 10 0.1", "non-numeric"),
        ("Car 0 7 0 1 2 3 4 1 1 1 0 0 10 0.1", "occluded"),
        ("Car 0 0 0 5 2 3 4 1 1 1 0 0 10 0.1", "bbox"),
        ("Car 0 0 0 1 2 3 4 1 -1 1 0 0 10 0.1", "dimensions"),
        ("Car 0 0 0 1 2 3 4 1 1 1 0 0 inf 0.1", "non-finite"),
    ],
)
def test_bad_label_lines_report_their_line(line, fragment):
    text = LABELS.splitlines()[0] + "\n\n" + line + "\n"
    with pytest.raises(ParseError) as info:
        parse_label_file(text, "000001.txt")
    assert info.value.line == 3 and "000001.txt:3:" in str(info.value) and fragment in str(info.value)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("P2 1 2 3\n", 1, "KEY"),
        ("P0: 1 2\nP2: 1 2 3\n", 2, "12 values"),
        ("P2: 1 0 0 0 0 1 0 0 0 0 0 0\n", 1, "P2[2][2]"),
        ("P2: 1 0 0 0 0 1 0 0 0 0 a 0\n", 1, "non-numeric"),
        ("P0: 1 2\n", None, "missing P2"),
        ("P2: -1 0 0 0 0 1 0 0 0 0 1 0\n", None, "valid camera"),
    ],
)
def test_bad_calib_rejected(text, line, fragment):
    with pytest.raises(ParseError) as info:
        parse_calib(text, "calib.txt")
    assert info.value.line == line and fragment in str(info.value)


def test_label_line_with_trailing_whitespace():
    a = parse_label_line(LABELS.splitlines()[0] + "   ")
    assert a.type == "Car" and a.location == (-0.65, 1.71, 46.70)


def test_kitti_box_is_center_parameterized():
    box = kitti_to_box(parse_label_file(LABELS)[0])
    assert box.center[1] == pytest.approx(1.71 - 1.65 / 2)
    assert isinstance(box, Box3D) and box.class_id == 0
