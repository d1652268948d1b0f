"""File formats: motion log CSV, recording manifest, encoded-window container.

Motion log CSV: one frame per row, exactly 22 columns with a required
header. Timestamps in seconds, positions in meters, rotations as
(x, y, z, w) quaternion components.

Manifest: a JSON-lines sidecar, one object per recording with keys
``user_id``, ``condition``, ``height_cm`` and ``path`` (relative to the
manifest file).

Encoded dataset (magic ``MDRF1``): a little-endian binary container of
fixed-length feature windows. Layout: 5-byte magic, float64 fps, uint32
window length, uint32 feature count, uint32 window count; then per window
three length-prefixed (uint16) UTF-8 strings (user_id, condition,
window_id) followed by window_length x feature_count float32 values.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import FeatureWindow
from .errors import DataFormatError
from .geometry import MotionRecording

MOTION_CSV_HEADER = [
    "t",
    "hmd_px", "hmd_py", "hmd_pz", "hmd_rx", "hmd_ry", "hmd_rz", "hmd_rw",
    "l_px", "l_py", "l_pz", "l_rx", "l_ry", "l_rz", "l_rw",
    "r_px", "r_py", "r_pz", "r_rx", "r_ry", "r_rz", "r_rw",
]

_DATASET_MAGIC = b"MDRF1"


def write_motion_csv(rec: MotionRecording, path) -> None:
    """Write the 22-column frame log. Floats use repr so rewrites are byte-identical."""
    path = Path(path)
    rows = np.hstack([
        rec.t[:, None],
        rec.hmd_pos, rec.hmd_rot,
        rec.left_pos, rec.left_rot,
        rec.right_pos, rec.right_rot,
    ])
    with path.open("w", newline="") as fh:
        fh.write(",".join(MOTION_CSV_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def parse_motion_row(fields: list[str], where: str) -> np.ndarray:
    """Parse one 22-column CSV row into floats; raises DataFormatError with location."""
    if len(fields) != len(MOTION_CSV_HEADER):
        raise DataFormatError(
            f"{where}: expected {len(MOTION_CSV_HEADER)} columns, got {len(fields)}")
    try:
        return np.array([float(v) for v in fields], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{where}: {exc}") from None


def read_motion_csv(path, user_id: str, condition: str, height_cm: float) -> MotionRecording:
    path = Path(path)
    values = []
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty motion log") from None
        if header != MOTION_CSV_HEADER:
            raise DataFormatError(f"{path}: bad header {header[:3]}...")
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            values.append(parse_motion_row(fields, f"{path}:{lineno}"))
    if len(values) < 2:
        raise DataFormatError(f"{path}: motion log needs at least 2 frames")
    rows = np.stack(values)
    return MotionRecording(
        user_id=user_id, condition=condition, height_cm=height_cm,
        t=rows[:, 0],
        hmd_pos=rows[:, 1:4], hmd_rot=rows[:, 4:8],
        left_pos=rows[:, 8:11], left_rot=rows[:, 11:15],
        right_pos=rows[:, 15:18], right_rot=rows[:, 18:22],
    )


@dataclass(frozen=True)
class ManifestEntry:
    user_id: str
    condition: str
    height_cm: float
    path: str


def write_manifest(entries: list[ManifestEntry], path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for e in entries:
            fh.write(json.dumps({
                "user_id": e.user_id,
                "condition": e.condition,
                "height_cm": e.height_cm,
                "path": e.path,
            }, sort_keys=True) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with path.open("r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(ManifestEntry(
                    user_id=str(obj["user_id"]),
                    condition=str(obj["condition"]),
                    height_cm=float(obj["height_cm"]),
                    path=str(obj["path"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad manifest entry: {exc}") from None
    if not entries:
        raise DataFormatError(f"{path}: manifest is empty")
    return entries


def load_recording(entry: ManifestEntry, base_dir) -> MotionRecording:
    return read_motion_csv(Path(base_dir) / entry.path,
                           entry.user_id, entry.condition, entry.height_cm)


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataFormatError("string field too long for container")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataFormatError(f"truncated dataset file while reading {what}")
    return raw


def _read_str(fh, what: str) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2, what))
    return _read_exact(fh, n, what).decode("utf-8")


def write_dataset(windows: list[FeatureWindow], fps: float, path) -> None:
    """Persist encoded windows in the MDRF1 container."""
    path = Path(path)
    if windows:
        window_len, n_features = windows[0].features.shape
    else:
        window_len, n_features = 0, 0
    with path.open("wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<dIII", float(fps), window_len, n_features, len(windows)))
        for w in windows:
            if w.features.shape != (window_len, n_features):
                raise DataFormatError("all windows in a dataset must share one shape")
            _write_str(fh, w.user_id)
            _write_str(fh, w.condition)
            _write_str(fh, w.window_id)
            fh.write(w.features.astype("<f4", copy=False).tobytes())


def read_dataset(path) -> tuple[list[FeatureWindow], float]:
    """Load an MDRF1 container; returns (windows, fps)."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(_DATASET_MAGIC))
        if magic != _DATASET_MAGIC:
            raise DataFormatError(f"{path}: not an encoded dataset (bad magic {magic!r})")
        fps, window_len, n_features, n_windows = struct.unpack(
            "<dIII", _read_exact(fh, 20, "header"))
        windows = []
        payload = window_len * n_features * 4
        for i in range(n_windows):
            user_id = _read_str(fh, f"window {i} user_id")
            condition = _read_str(fh, f"window {i} condition")
            window_id = _read_str(fh, f"window {i} window_id")
            raw = _read_exact(fh, payload, f"window {i} payload")
            feats = np.frombuffer(raw, dtype="<f4").reshape(window_len, n_features).copy()
            windows.append(FeatureWindow(
                window_id=window_id, user_id=user_id, condition=condition, features=feats))
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes after declared windows")
    return windows, fps
