"""Binary raster/keypoint formats, TUM-style trajectories and sequence directories.

All binary integers and floats are little-endian. Layouts::

    depth      "DPD1" u32 width u32 height  f32[width*height]
    mask       "MSK1" u32 width u32 height u16 n  (u16 id, u16 class)[n]  u16[width*height]
    keypoints  "KPT1" u32 count  (f32 u, f32 v, f32 response, u8 octave, u8[32] descriptor)[count]

A sequence directory holds ``sequence.cfg``, ``groundtruth.txt`` and
``frames/NNNNNN.{depth,mask,kpts}``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, FormatError
from .geometry import CameraIntrinsics, Pose

DEPTH_MAGIC = b"DPD1"
MASK_MAGIC = b"MSK1"
KEYPOINT_MAGIC = b"KPT1"

DESCRIPTOR_BYTES = 32
MAX_OCTAVE = 4
# guards against absurd headers before allocating
MAX_PIXELS = 1 << 28

KEYPOINT_DTYPE = np.dtype(
    [
        ("u", "<f4"),
        ("v", "<f4"),
        ("response", "<f4"),
        ("octave", "u1"),
        ("descriptor", "u1", (DESCRIPTOR_BYTES,)),
    ]
)
assert KEYPOINT_DTYPE.itemsize == 45

INSTANCE_DTYPE = np.dtype([("id", "<u2"), ("class_id", "<u2")])


def make_keypoints(uv, descriptors, response=None, octave=None) -> np.ndarray:
    """Assemble a keypoint record array from column data."""
    uv = np.asarray(uv, dtype=np.float32).reshape(-1, 2)
    n = len(uv)
    out = np.zeros(n, dtype=KEYPOINT_DTYPE)
    out["u"] = uv[:, 0]
    out["v"] = uv[:, 1]
    out["response"] = 1.0 if response is None else response
    out["octave"] = 0 if octave is None else octave
    out["descriptor"] = np.asarray(descriptors, dtype=np.uint8).reshape(n, DESCRIPTOR_BYTES)
    return out


@dataclass
class InstanceMask:
    """Per-pixel instance ids (0 = background) plus the id -> class table."""

    ids: np.ndarray
    instances: tuple = ()

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint16)
        if self.ids.ndim != 2:
            raise ValueError("instance id raster must be 2-D")
        self.instances = tuple((int(i), int(c)) for i, c in self.instances)

    @classmethod
    def empty(cls, width: int, height: int) -> "InstanceMask":
        return cls(np.zeros((height, width), dtype=np.uint16), ())

    @property
    def shape(self):
        return self.ids.shape

    @property
    def class_of(self) -> dict:
        return dict(self.instances)

    def validate(self) -> None:
        table_ids = [i for i, _ in self.instances]
        if 0 in table_ids:
            raise FormatError("instance id 0 is reserved for background")
        if len(set(table_ids)) != len(table_ids):
            raise FormatError("duplicate instance id in table")
        if any(not (0 <= v <= 0xFFFF) for pair in self.instances for v in pair):
            raise FormatError("instance table entries must fit in 16 bits")
        unknown = ~np.isin(self.ids, np.array([0] + table_ids, dtype=np.uint16))
        if unknown.any():
            flat = int(np.flatnonzero(unknown.ravel())[0])
            raise FormatError(f"pixel id {int(self.ids.ravel()[flat])} not in instance table",
                              offset=flat)

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.instances == other.instances and np.array_equal(self.ids, other.ids)


def _check_dims(width: int, height: int, offset: int):
    if width == 0 or height == 0:
        raise FormatError("zero raster dimension", offset)
    if width * height > MAX_PIXELS:
        raise FormatError(f"raster dimensions {width}x{height} overflow limit", offset)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None


def _expect(buf: bytes, magic: bytes, header_size: int, kind: str):
    if len(buf) < 4 or buf[:4] != magic:
        raise FormatError(f"bad {kind} magic {buf[:4]!r}, expected {magic!r}", 0)
    if len(buf) < header_size:
        raise FormatError(f"truncated {kind} header", len(buf))


def _expect_size(buf: bytes, expected: int, kind: str):
    if len(buf) < expected:
        raise FormatError(f"truncated {kind} payload: {len(buf)} of {expected} bytes", len(buf))
    if len(buf) > expected:
        raise FormatError(f"trailing bytes after {kind} payload", expected)


def encode_depth(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError("depth raster must be 2-D")
    h, w = depth.shape
    clean = np.where(np.isfinite(depth) & (depth > 0), depth, np.float32(0.0)).astype("<f4")
    return DEPTH_MAGIC + struct.pack("<II", w, h) + clean.tobytes()


def decode_depth(buf: bytes) -> np.ndarray:
    _expect(buf, DEPTH_MAGIC, 12, "depth")
    w, h = struct.unpack_from("<II", buf, 4)
    _check_dims(w, h, 4)
    _expect_size(buf, 12 + 4 * w * h, "depth")
    return np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w).astype(np.float32)


def write_depth(path, depth: np.ndarray) -> None:
    """Write a depth raster; non-finite or non-positive values become 0.0."""
    Path(path).write_bytes(encode_depth(depth))


def read_depth(path) -> np.ndarray:
    return decode_depth(_read_bytes(path))


def encode_mask(mask: InstanceMask) -> bytes:
    mask.validate()
    h, w = mask.ids.shape
    table = np.array(list(mask.instances), dtype=INSTANCE_DTYPE) if mask.instances else \
        np.zeros(0, dtype=INSTANCE_DTYPE)
    return (MASK_MAGIC + struct.pack("<IIH", w, h, len(table)) + table.tobytes()
            + mask.ids.astype("<u2").tobytes())


def decode_mask(buf: bytes) -> InstanceMask:
    _expect(buf, MASK_MAGIC, 14, "mask")
    w, h, n = struct.unpack_from("<IIH", buf, 4)
    _check_dims(w, h, 4)
    table_end = 14 + 4 * n
    _expect_size(buf, table_end + 2 * w * h, "mask")
    table = np.frombuffer(buf, dtype=INSTANCE_DTYPE, count=n, offset=14)
    ids = np.frombuffer(buf, dtype="<u2", offset=table_end).reshape(h, w).astype(np.uint16)
    instances = tuple((int(r["id"]), int(r["class_id"])) for r in table)
    mask = InstanceMask(ids, instances)
    try:
        mask.validate()
    except FormatError as exc:
        # report file offsets rather than pixel indices
        offset = exc.offset
        if offset is not None and "pixel id" in str(exc):
            offset = table_end + 2 * offset
        raise FormatError(str(exc).split(" (at byte")[0], offset) from None
    return mask


def write_mask(path, mask: InstanceMask) -> None:
    Path(path).write_bytes(encode_mask(mask))


def read_mask(path) -> InstanceMask:
    return decode_mask(_read_bytes(path))


def encode_keypoints(records: np.ndarray) -> bytes:
    records = np.asarray(records, dtype=KEYPOINT_DTYPE)
    if records.ndim != 1:
        raise ValueError("keypoints must be a 1-D record array")
    if len(records) and records["octave"].max() > MAX_OCTAVE:
        raise ValueError(f"octave exceeds {MAX_OCTAVE}")
    return KEYPOINT_MAGIC + struct.pack("<I", len(records)) + records.tobytes()


def decode_keypoints(buf: bytes) -> np.ndarray:
    _expect(buf, KEYPOINT_MAGIC, 8, "keypoints")
    (count,) = struct.unpack_from("<I", buf, 4)
    expected = 8 + KEYPOINT_DTYPE.itemsize * count
    if len(buf) != expected:
        raise FormatError(
            f"keypoint count {count} implies {expected} bytes, file has {len(buf)}",
            min(len(buf), expected),
        )
    records = np.frombuffer(buf, dtype=KEYPOINT_DTYPE, count=count, offset=8).copy()
    if count and records["octave"].max() > MAX_OCTAVE:
        bad = int(np.argmax(records["octave"] > MAX_OCTAVE))
        raise FormatError(f"octave exceeds {MAX_OCTAVE}", 8 + bad * KEYPOINT_DTYPE.itemsize + 12)
    return records


def write_keypoints(path, records: np.ndarray) -> None:
    Path(path).write_bytes(encode_keypoints(records))


def read_keypoints(path) -> np.ndarray:
    return decode_keypoints(_read_bytes(path))


@dataclass
class Trajectory:
    """Timestamped world-from-camera poses (TUM convention, quaternion x, y, z, w)."""

    timestamps: np.ndarray
    positions: np.ndarray
    quats: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quats = np.asarray(self.quats, dtype=float).reshape(-1, 4)
        if not (len(self.timestamps) == len(self.positions) == len(self.quats)):
            raise DataError("trajectory columns differ in length")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses) -> "Trajectory":
        poses = list(poses)
        return cls(timestamps, [p.translation for p in poses], [p.quat for p in poses])

    def poses(self) -> list[Pose]:
        return [Pose(q, t) for q, t in zip(self.quats, self.positions)]

    def validate(self) -> None:
        if len(self) > 1 and np.any(np.diff(self.timestamps) <= 0):
            i = int(np.argmax(np.diff(self.timestamps) <= 0)) + 1
            raise DataError(f"timestamps not strictly increasing at record {i}")
        norms = np.linalg.norm(self.quats, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DataError("trajectory quaternion is not unit length")


def parse_trajectory(text: str, source: str = "<string>") -> Trajectory:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.replace(",", " ").split()
        if len(parts) != 8:
            raise DataError(f"{source}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            values = [float(x) for x in parts]
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric field") from None
        if not all(np.isfinite(values)):
            raise DataError(f"{source}:{lineno}: non-finite value")
        rows.append(values)
    arr = np.array(rows, dtype=float).reshape(-1, 8)
    traj = Trajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:8])
    traj.validate()
    return traj


def format_trajectory(traj: Trajectory, header: str | None = None) -> str:
    traj.validate()
    lines = [f"# {header}"] if header else []
    lines.append("# timestamp tx ty tz qx qy qz qw")
    for ts, p, q in zip(traj.timestamps, traj.positions, traj.quats):
        lines.append(" ".join(repr(float(x)) for x in (ts, *p, *q)))
    return "\n".join(lines) + "\n"


def read_trajectory(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None
    return parse_trajectory(text, source=str(path))


def write_trajectory(path, traj: Trajectory, header: str | None = None) -> None:
    Path(path).write_text(format_trajectory(traj, header))


# -- key = value configs -----------------------------------------------------

def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text(), source=str(path))
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


# -- sequence directories ----------------------------------------------------

def frame_stem(index: int) -> str:
    return f"{index:06d}"


@dataclass
class SequenceInfo:
    root: Path
    fps: float
    frame_count: int
    intrinsics: CameraIntrinsics
    extra: dict = field(default_factory=dict)

    def timestamp(self, index: int) -> float:
        return index / self.fps

    def frame_path(self, index: int, ext: str) -> Path:
        return self.root / "frames" / f"{frame_stem(index)}.{ext}"


def write_sequence_cfg(path, fps: float, frame_count: int, k: CameraIntrinsics, **extra) -> None:
    values = {
        "fps": repr(float(fps)),
        "frame_count": frame_count,
        "width": k.width,
        "height": k.height,
        "fx": repr(float(k.fx)),
        "fy": repr(float(k.fy)),
        "cx": repr(float(k.cx)),
        "cy": repr(float(k.cy)),
    }
    values.update(extra)
    Path(path).write_text(format_kv(values))


def open_sequence(sequence_dir) -> SequenceInfo:
    root = Path(sequence_dir)
    if not root.is_dir():
        raise DataError(f"sequence directory not found: {root}")
    for name in ("sequence.cfg", "groundtruth.txt"):
        if not (root / name).is_file():
            raise DataError(f"missing file: {root / name}")
    cfg = read_kv(root / "sequence.cfg")
    try:
        k = CameraIntrinsics(float(cfg.pop("fx")), float(cfg.pop("fy")), float(cfg.pop("cx")),
                             float(cfg.pop("cy")), int(cfg.pop("width")), int(cfg.pop("height")))
        fps = float(cfg.pop("fps"))
        count = int(cfg.pop("frame_count"))
    except KeyError as exc:
        raise DataError(f"{root / 'sequence.cfg'}: missing key {exc.args[0]}") from None
    except ValueError as exc:
        raise DataError(f"{root / 'sequence.cfg'}: {exc}") from None
    if fps <= 0 or count < 0:
        raise DataError(f"{root / 'sequence.cfg'}: invalid fps or frame_count")
    return SequenceInfo(root, fps, count, k, cfg)


@dataclass
class FrameBundle:
    index: int
    timestamp: float
    keypoints: np.ndarray
    depth: np.ndarray
    masks: InstanceMask


def load_frame_bundle(sequence_dir, index: int, info: SequenceInfo | None = None) -> FrameBundle:
    """Read the depth, mask and keypoint files of one frame."""
    info = info or open_sequence(sequence_dir)
    if not 0 <= index < info.frame_count:
        raise DataError(f"frame index {index} outside sequence of {info.frame_count} frames")
    paths = {ext: info.frame_path(index, ext) for ext in ("depth", "mask", "kpts")}
    for ext, path in paths.items():
        if not path.is_file():
            rel = os.path.relpath(path, info.root)
            raise DataError(f"missing file: {rel}")
    depth = read_depth(paths["depth"])
    masks = read_mask(paths["mask"])
    kpts = read_keypoints(paths["kpts"])
    k = info.intrinsics
    if depth.shape != (k.height, k.width) or masks.shape != depth.shape:
        raise DataError(f"frame {index}: raster dimensions disagree with sequence.cfg")
    return FrameBundle(index, info.timestamp(index), kpts, depth, masks)
