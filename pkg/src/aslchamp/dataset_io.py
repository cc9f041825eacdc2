"""Line-delimited dataset files.

One UTF-8 line per sample, each a self-describing JSON record; the first line
is a header carrying the magic string and schema version:

    {"magic": "ASLCHAMP-DS", "schema_version": 1, "provenance": "..."}
    {"label": "COFFEE", "signer_id": "s00", "handedness": "right",
     "duration_s": 3.0, "frames": [{"t": 0.0, "left": {...}, "right": {...}}]}

Hand records hold "present", "loc" (25x3), "rot" (25x3) and "hand_rot" (3).
Floats are written with Python's shortest round-trip representation, so a
read-back dataset is numerically identical to what was written.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .gesture import (
    GestureDataset,
    GestureSample,
    HandFrame,
    JointFrame,
    sign_class,
    validate_dataset,
    validate_sample,
)

MAGIC = "ASLCHAMP-DS"
SCHEMA_VERSION = 1


class FormatError(Exception):
    """File is not a dataset file or is structurally broken."""


class SchemaError(Exception):
    """File parsed, but a record violates the sample schema."""


def _hand_to_obj(hand: HandFrame) -> dict:
    return {
        "present": hand.present,
        "loc": hand.locations.tolist(),
        "rot": hand.rotations.tolist(),
        "hand_rot": hand.hand_rotation.tolist(),
    }


def _hand_from_obj(obj: dict) -> HandFrame:
    try:
        return HandFrame(
            locations=np.array(obj["loc"], dtype=np.float64),
            rotations=np.array(obj["rot"], dtype=np.float64),
            hand_rotation=np.array(obj["hand_rot"], dtype=np.float64),
            present=bool(obj["present"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad hand record: {e}") from e


def _sample_to_line(sample: GestureSample) -> str:
    obj = {
        "label": sample.label.name,
        "signer_id": sample.signer_id,
        "handedness": sample.handedness,
        "duration_s": sample.duration_s,
        "frames": [
            {"t": f.timestamp_s, "left": _hand_to_obj(f.left), "right": _hand_to_obj(f.right)}
            for f in sample.frames
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def _sample_from_obj(obj: dict, line_no: int) -> GestureSample:
    try:
        label = sign_class(obj["label"])
    except KeyError as e:
        raise SchemaError(f"line {line_no}: {e}") from e
    try:
        frames = tuple(
            JointFrame(
                timestamp_s=float(f["t"]),
                left=_hand_from_obj(f["left"]),
                right=_hand_from_obj(f["right"]),
            )
            for f in obj["frames"]
        )
        sample = GestureSample(
            label=label,
            frames=frames,
            signer_id=str(obj["signer_id"]),
            handedness=str(obj["handedness"]),
            duration_s=float(obj["duration_s"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"line {line_no}: bad sample record: {e}") from e
    report = validate_sample(sample)
    if not report.ok:
        raise SchemaError(f"line {line_no}: sample fails validation: "
                          f"{report.findings[0].rule} at frame {report.findings[0].frame}")
    return sample


def write_dataset(ds: GestureDataset, path: str | os.PathLike) -> None:
    """Write a validated dataset; round-trips bit-exactly through read_dataset."""
    report = validate_dataset(ds)
    if not report.ok:
        f = report.findings[0]
        raise SchemaError(f"dataset fails validation: {f.rule} on {f.field}")
    header = {"magic": MAGIC, "schema_version": ds.schema_version, "provenance": ds.provenance}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for sample in ds.samples:
            fh.write(_sample_to_line(sample) + "\n")


def read_dataset(path: str | os.PathLike) -> GestureDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise FormatError("empty file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise FormatError(f"bad header: {e}") from e
        if not isinstance(header, dict) or header.get("magic") != MAGIC:
            raise FormatError(f"bad magic: expected {MAGIC!r}")
        version = header.get("schema_version")
        if version != SCHEMA_VERSION:
            raise FormatError(f"unsupported schema_version {version!r}")

        samples = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"line {line_no}: bad record: {e}") from e
            samples.append(_sample_from_obj(obj, line_no))
    return GestureDataset(
        samples=tuple(samples),
        schema_version=version,
        provenance=str(header.get("provenance", "")),
    )
