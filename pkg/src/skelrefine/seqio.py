"""Sequence file IO.

A sequence file is line-delimited JSON: a header object
``{"frame_rate_hz": 30.0, "encoding": "absolute"}`` followed by one record
``{"t": i, "joints": [48 floats]}`` per frame, in frame order. A CSV export
with 49 columns (frame index plus the 48 coordinates) is provided for
plotting.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .skeleton import POSE_DIM, Encoding, JointId, SkeletonSequence

_AXES = ("x", "y", "z")

CSV_COLUMNS = ["frame"] + [
    f"{joint.name.lower()}_{axis}" for joint in JointId for axis in _AXES
]


def write_sequence(path, seq: SkeletonSequence) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"frame_rate_hz": seq.frame_rate_hz, "encoding": seq.encoding.value}
        fh.write(json.dumps(header) + "\n")
        for t in range(len(seq)):
            record = {"t": t, "joints": [float(v) for v in seq.data[t]]}
            fh.write(json.dumps(record) + "\n")


def read_sequence(path) -> SkeletonSequence:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read sequence file {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty sequence file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed header line: {exc}") from exc
    if not isinstance(header, dict) or "frame_rate_hz" not in header or "encoding" not in header:
        raise DataError(f"{path}: header must carry frame_rate_hz and encoding")
    try:
        encoding = Encoding(header["encoding"])
    except ValueError as exc:
        raise DataError(f"{path}: unknown encoding {header['encoding']!r}") from exc
    frame_rate = header["frame_rate_hz"]
    if not isinstance(frame_rate, (int, float)) or not frame_rate > 0:
        raise DataError(f"{path}: frame_rate_hz must be a positive number")

    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed frame record: {exc}") from exc
        joints = record.get("joints")
        if not isinstance(joints, list) or len(joints) != POSE_DIM:
            raise DataError(f"{path}:{lineno}: frame record needs {POSE_DIM} joint values")
        if record.get("t") != len(frames):
            raise DataError(
                f"{path}:{lineno}: frame index {record.get('t')!r}, expected {len(frames)}"
            )
        values = [float(v) for v in joints]
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: non-finite joint value")
        frames.append(values)
    if not frames:
        raise DataError(f"{path}: sequence file has no frames")
    return SkeletonSequence(np.array(frames), encoding, float(frame_rate))


def write_csv(path, seq: SkeletonSequence) -> None:
    """49-column CSV export: frame index plus all 48 coordinates."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for t in range(len(seq)):
            writer.writerow([t] + [repr(float(v)) for v in seq.data[t]])
