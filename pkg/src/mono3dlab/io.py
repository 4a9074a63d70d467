"""KITTI label/calibration formats and the internal tensor + manifest formats.

Tensor file layout: one line of JSON (sorted keys) terminated by ``\\n`` with at
least ``dtype``, ``shape``, ``name`` and ``crc32``, followed by the row-major
little-endian float32 payload.  Extra header keys (e.g. a channel ``layout``)
are carried through untouched.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, InvalidInputError, ParseError
from .geometry import Box3D, CameraIntrinsics, Dimensions, ObjectPose, wrap_angle

TENSOR_DTYPE = "float32"
_LE_F32 = np.dtype("<f4")


# -- internal tensor format ---------------------------------------------------


def encode_tensor(array, name: str, **extra) -> bytes:
    a = np.asarray(array, dtype=_LE_F32)  # ascontiguousarray would promote 0-d to 1-d
    payload = a.tobytes(order="C")
    header = {"dtype": TENSOR_DTYPE, "shape": list(a.shape), "name": name, "crc32": zlib.crc32(payload)}
    for k, v in extra.items():
        if k in header:
            raise InvalidInputError(f"reserved header key {k!r}")
        header[k] = v
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return line.encode("utf-8") + b"\n" + payload


def decode_tensor(blob: bytes, path: str | None = None) -> tuple[np.ndarray, dict]:
    nl = blob.find(b"\n")
    if nl < 0:
        raise CorruptFileError("missing header line", path)
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"unreadable header: {exc}", path) from None
    if not isinstance(header, dict) or not {"dtype", "shape", "name"} <= header.keys():
        raise CorruptFileError("header lacks dtype/shape/name", path)
    if header["dtype"] != TENSOR_DTYPE:
        raise CorruptFileError(f"unsupported dtype {header['dtype']!r}", path)
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise CorruptFileError(f"bad shape {shape!r}", path)
    payload = blob[nl + 1:]
    expected = math.prod(shape) * 4
    if len(payload) != expected:
        raise CorruptFileError(
            f"payload is {len(payload)} bytes at offset {nl + 1}, header shape {shape} needs {expected}", path
        )
    if "crc32" in header and zlib.crc32(payload) != header["crc32"]:
        raise CorruptFileError("checksum mismatch", path)
    arr = np.frombuffer(payload, dtype=_LE_F32).reshape(shape).astype(np.float32)
    return arr, header


def write_tensor(path, array, name: str | None = None, **extra) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(array, name or path.stem, **extra))
    except OSError as exc:
        raise OSError(f"cannot write tensor {path}: {exc.strerror}") from exc


def read_tensor(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor {path}: {exc.strerror}") from exc
    return decode_tensor(blob, str(path))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def box_to_dict(box: Box3D) -> dict:
    return {
        "center": list(box.pose.center),
        "dims": [box.dims.w, box.dims.h, box.dims.l],
        "yaw": box.pose.yaw,
        "class_id": box.class_id,
    }


def box_from_dict(d: dict) -> Box3D:
    return Box3D(ObjectPose(float(d["yaw"]), tuple(d["center"])), Dimensions(*d["dims"]), int(d.get("class_id", 0)))


def camera_to_dict(K: CameraIntrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}


# -- KITTI labels --------------------------------------------------------------

KITTI_CLASSES = {"Car": 0, "Pedestrian": 1, "Cyclist": 2}
KITTI_CLASS_NAMES = {v: k for k, v in KITTI_CLASSES.items()}


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple[float, float, float, float]  # left, top, right, bottom
    dims_hwl: tuple[float, float, float]  # KITTI order: height, width, length
    location: tuple[float, float, float]  # bottom center, camera frame
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.type == "DontCare"


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_label_line(line: str, lineno: int = 1, path: str | None = None) -> KittiLabel:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", lineno, path)
    try:
        nums = [float(x) for x in fields[1:]]
    except ValueError as exc:
        raise ParseError(f"non-numeric field: {exc}", lineno, path) from None
    if not all(math.isfinite(x) for x in nums):
        raise ParseError("non-finite numeric field", lineno, path)
    occ = nums[1]
    allowed = (-1, 0, 1, 2, 3) if fields[0] == "DontCare" else (0, 1, 2, 3)
    if occ != int(occ) or int(occ) not in allowed:
        raise ParseError(f"occluded must be an integer in 0..3, got {fields[2]}", lineno, path)
    left, top, right, bottom = nums[3:7]
    if right < left or bottom < top:
        raise ParseError("bbox requires right >= left and bottom >= top", lineno, path)
    label = KittiLabel(
        type=fields[0],
        truncated=nums[0],
        occluded=int(occ),
        alpha=nums[2],
        bbox2d=(left, top, right, bottom),
        dims_hwl=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )
    if not label.is_dontcare and min(label.dims_hwl) <= 0:
        raise ParseError("dimensions must be positive", lineno, path)
    return label


def parse_label_file(text: str, path: str | None = None) -> list[KittiLabel]:
    """One label per non-blank line; errors name the offending line."""
    return [
        parse_label_line(line, i, path)
        for i, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]


def serialize_label(label: KittiLabel) -> str:
    parts = [label.type, _fmt(label.truncated), str(label.occluded), _fmt(label.alpha)]
    parts += [_fmt(x) for x in label.bbox2d]
    parts += [_fmt(x) for x in label.dims_hwl]
    parts += [_fmt(x) for x in label.location]
    parts.append(_fmt(label.rotation_y))
    if label.score is not None:
        parts.append(_fmt(label.score))
    return " ".join(parts)


def serialize_labels(labels) -> str:
    return "".join(serialize_label(lb) + "\n" for lb in labels)


def read_label_file(path) -> list[KittiLabel]:
    path = Path(path)
    return parse_label_file(path.read_text(), str(path))


def kitti_to_box(label: KittiLabel) -> Box3D:
    """Bottom-center KITTI label to a center-parameterized box (y_center = y - h/2)."""
    if label.is_dontcare:
        raise InvalidInputError("DontCare labels carry no box")
    h, w, l = label.dims_hwl
    x, y, z = label.location
    return Box3D(
        ObjectPose(label.rotation_y, (x, y - h / 2.0, z)),
        Dimensions(w, h, l),
        KITTI_CLASSES.get(label.type, -1),
    )


def observation_angle(box: Box3D) -> float:
    x, _, z = box.pose.center
    return wrap_angle(box.yaw - math.atan2(x, z))


def box_to_kitti(
    box: Box3D,
    template: KittiLabel | None = None,
    score: float | None = None,
    bbox2d: tuple[float, float, float, float] | None = None,
) -> KittiLabel:
    """Inverse of :func:`kitti_to_box`; non-box fields come from ``template`` when given."""
    x, yc, z = box.pose.center
    h = box.dims.h
    if template is None:
        template = KittiLabel(
            type=KITTI_CLASS_NAMES.get(box.class_id, "Car"),
            truncated=0.0,
            occluded=0,
            alpha=observation_angle(box),
            bbox2d=bbox2d or (0.0, 0.0, 0.0, 0.0),
            dims_hwl=(h, box.dims.w, box.dims.l),
            location=(0.0, 0.0, 0.0),
            rotation_y=0.0,
        )
    return replace(
        template,
        dims_hwl=(h, box.dims.w, box.dims.l),
        location=(x, yc + h / 2.0, z),
        rotation_y=box.yaw,
        score=score if score is not None else template.score,
        bbox2d=bbox2d or template.bbox2d,
    )


# -- KITTI calibration -----------------------------------------------------------


@dataclass(frozen=True)
class KittiCalib:
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def row(self, key: str) -> tuple[float, ...]:
        for k, v in self.rows:
            if k == key:
                return v
        raise KeyError(key)

    @property
    def P2(self) -> np.ndarray:
        return np.array(self.row("P2")).reshape(3, 4)

    def intrinsics(self) -> CameraIntrinsics:
        P = self.P2
        P = P / P[2, 2]
        return CameraIntrinsics(fx=P[0, 0], fy=P[1, 1], cx=P[0, 2], cy=P[1, 2])


def parse_calib(text: str, path: str | None = None) -> tuple[KittiCalib, CameraIntrinsics]:
    rows = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep or not key.strip() or " " in key.strip():
            raise ParseError("expected 'KEY: v1 v2 ...'", i, path)
        try:
            vals = tuple(float(x) for x in rest.split())
        except ValueError as exc:
            raise ParseError(f"non-numeric value: {exc}", i, path) from None
        if key.strip() == "P2":
            if len(vals) != 12:
                raise ParseError(f"P2 needs 12 values, got {len(vals)}", i, path)
            if not all(math.isfinite(v) for v in vals) or vals[10] == 0:
                raise ParseError("P2 must be finite with P2[2][2] != 0", i, path)
        rows.append((key.strip(), vals))
    calib = KittiCalib(tuple(rows))
    if not any(k == "P2" for k, _ in rows):
        raise ParseError("missing P2 row", None, path)
    try:
        K = calib.intrinsics()
    except InvalidInputError as exc:
        raise ParseError(f"P2 does not describe a valid camera: {exc}", None, path) from None
    return calib, K


def serialize_calib(calib: KittiCalib) -> str:
    return "".join(f"{k}: {' '.join(_fmt(v) for v in vals)}\n" for k, vals in calib.rows)


def read_calib(path) -> tuple[KittiCalib, CameraIntrinsics]:
    path = Path(path)
    return parse_calib(path.read_text(), str(path))
