#!/usr/bin/env python3
"""Reformat a local copy of the UCI HAR dataset into the tsda layout.

Input: the extracted "UCI HAR Dataset" directory (with train/ and test/
subdirectories holding Inertial Signals). Output: one domain per subject,
each carrying a single unsplit "all" payload; run `tsda prepare` afterwards
to apply the stratified split and normalization.

This script only reformats files already on disk; it downloads nothing.

Usage:
    python3 scripts/convert_ucihar.py "/path/to/UCI HAR Dataset" data/ucihar_raw
    tsda prepare --manifest data/ucihar_raw/manifest.json --out data/ucihar
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

SIGNALS = [
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
]


def load_portion(root: Path, portion: str):
    signals = []
    for name in SIGNALS:
        path = root / portion / "Inertial Signals" / f"{name}_{portion}.txt"
        signals.append(np.loadtxt(path, dtype=np.float32))
    x = np.stack(signals, axis=1)  # (N, 9, 128)
    y = np.loadtxt(root / portion / f"y_{portion}.txt", dtype=np.int32) - 1  # 0-based
    subjects = np.loadtxt(root / portion / f"subject_{portion}.txt", dtype=np.int32)
    return x, y, subjects


def write_samples(path: Path, x: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"TSDA1")
        f.write(struct.pack("<III", *x.shape))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def write_labels(path: Path, y: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(y)))
        f.write(np.ascontiguousarray(y, dtype="<i4").tobytes())


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src, out = Path(sys.argv[1]), Path(sys.argv[2])

    xs, ys, subs = [], [], []
    for portion in ("train", "test"):
        x, y, s = load_portion(src, portion)
        xs.append(x)
        ys.append(y)
        subs.append(s)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    subjects = np.concatenate(subs)

    domains = []
    for sid in sorted(np.unique(subjects)):
        mask = subjects == sid
        rel = f"domain_{sid}/all"
        write_samples(out / rel / "samples.f32le", x[mask])
        write_labels(out / rel / "labels.i32le", y[mask])
        domains.append({
            "id": int(sid),
            "all": {
                "samples": f"{rel}/samples.f32le",
                "labels": f"{rel}/labels.i32le",
                "count": int(mask.sum()),
            },
        })
        print(f"subject {sid}: {int(mask.sum())} windows")

    manifest = {
        "name": "ucihar",
        "num_domains": len(domains),
        "channels": 9,
        "classes": 6,
        "window_length": 128,
        "domains": domains,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out / 'manifest.json'}")


if __name__ == "__main__":
    main()
