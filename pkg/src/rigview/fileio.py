"""On-disk formats: depth rasters, bitmaps, images, and rig documents.

Depth files are a 16-byte header {magic "DPTH", u32 width, u32 height,
u32 reserved} followed by row-major little-endian float32 values; invalid
depths are NaN. Masks are binary PBM (P4) with bit 1 = set. Images are PNG
with 8-bit channels; in memory they are float64 arrays in [0, 1].
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Intrinsics, RigState, SE3Pose

DEPTH_MAGIC = b"DPTH"


def write_depth(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError("depth raster must be 2-D")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<III", w, h, 0))
        f.write(values.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DEPTH_MAGIC:
            raise ValueError(f"{path}: bad depth magic {magic!r}")
        w, h, _ = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    return data.reshape(h, w).astype(np.float64)


def write_pbm(path, bits: np.ndarray) -> None:
    bits = np.asarray(bits).astype(bool)
    if bits.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = bits.shape
    packed = np.packbits(bits.astype(np.uint8), axis=1)
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(packed.tobytes())


def read_pbm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P4":
            raise ValueError(f"{path}: not a binary PBM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(x) for x in line.split())
        row_bytes = (w + 7) // 8
        packed = np.frombuffer(f.read(row_bytes * h), dtype=np.uint8)
    bits = np.unpackbits(packed.reshape(h, row_bytes), axis=1)[:, :w]
    return bits.astype(bool)


def write_image(path, img: np.ndarray) -> None:
    """Write an H x W x 3 float image in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path)


def read_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------------------
# Rig and trajectory document
# ---------------------------------------------------------------------------

def _pose_to_dict(p: SE3Pose) -> dict:
    return {"quat": [float(v) for v in p.quat], "trans": [float(v) for v in p.trans]}


def _pose_from_dict(d: dict) -> SE3Pose:
    return SE3Pose(np.asarray(d["quat"], float), np.asarray(d["trans"], float))


def save_rig(path, rig: RigState, intrinsics: list[Intrinsics],
             names: list[str] | None = None) -> None:
    names = names or [f"cam{k}" for k in range(rig.n_cameras)]
    doc = {
        "cameras": [
            {
                "name": names[k],
                "intrinsics": {
                    "fx": intrinsics[k].fx, "fy": intrinsics[k].fy,
                    "cx": intrinsics[k].cx, "cy": intrinsics[k].cy,
                    "width": intrinsics[k].width, "height": intrinsics[k].height,
                },
                "delta": _pose_to_dict(rig.deltas[k]),
            }
            for k in range(rig.n_cameras)
        ],
        "ego_poses": [
            {"timestamp": i, **_pose_to_dict(rig.ego_poses[i])}
            for i in range(rig.n_timestamps)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_rig(path) -> tuple[RigState, list[Intrinsics], list[str]]:
    with open(path) as f:
        doc = json.load(f)
    names = [c["name"] for c in doc["cameras"]]
    intrinsics = [Intrinsics(**c["intrinsics"]) for c in doc["cameras"]]
    deltas = [_pose_from_dict(c["delta"]) for c in doc["cameras"]]
    egos = [_pose_from_dict(e) for e in sorted(doc["ego_poses"], key=lambda e: e["timestamp"])]
    return RigState(egos, deltas), intrinsics, names


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
