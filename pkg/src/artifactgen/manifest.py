"""Window files, manifests, split and class-map CSVs.

Window binary format "AGW1": magic, little-endian u32 C, u32 L, u32 label,
then C*L float32 values channel-major. The manifest is a JSON document binding
window paths to labels, subjects, splits and normalization stats, hashed
against the run configuration for reproducibility.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .normalize import NormMeta
from .windowing import ClassMap, Window

__all__ = [
    "MAGIC",
    "MANIFEST_VERSION",
    "SPLITS",
    "write_window_file",
    "read_window_file",
    "ManifestEntry",
    "Manifest",
    "SplitViolation",
    "validate_split",
    "config_hash",
    "write_split_csv",
    "read_split_csv",
    "write_class_map_csv",
    "read_class_map_csv",
    "load_window_set",
]

MAGIC = b"AGW1"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")

_HEADER = struct.Struct("<4sIII")


def write_window_file(path: str | Path, data: np.ndarray, label: int) -> None:
    """Write one (C, L) window as AGW1: header then float32 LE, channel-major."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"window must be (C, L), got {data.shape}")
    c, length = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, c, length, int(label)))
        f.write(payload)


def read_window_file(path: str | Path) -> tuple[np.ndarray, int]:
    """Read an AGW1 window file, returning float32 (C, L) data and its label."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, c, length, label = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        payload = f.read(4 * c * length)
    if len(payload) != 4 * c * length:
        raise ValueError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, length)
    return data, int(label)


@dataclass
class ManifestEntry:
    path: str
    label: int
    subject: str
    split: str
    length: int
    norm: dict

    def to_dict(self) -> dict:
        return {"path": self.path, "label": self.label, "subject": self.subject,
                "split": self.split, "L": self.length, "norm": self.norm}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(path=d["path"], label=int(d["label"]), subject=d["subject"],
                   split=d["split"], length=int(d["L"]), norm=dict(d["norm"]))


@dataclass
class Manifest:
    config_hash: str
    seed: int
    class_map: ClassMap
    entries: list[ManifestEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "class_map": self.class_map.as_pairs(),
            "entries": [e.to_dict() for e in self.entries],
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        with open(path) as f:
            d = json.load(f)
        pairs = sorted(d["class_map"], key=lambda p: p[1])
        if [i for _, i in pairs] != list(range(len(pairs))):
            raise ValueError("class map indices must be 0..K-1")
        return cls(
            config_hash=d["config_hash"],
            seed=int(d["seed"]),
            class_map=ClassMap(tuple(n for n, _ in pairs)),
            entries=[ManifestEntry.from_dict(e) for e in d["entries"]],
            version=int(d["version"]),
        )

    def norm_schemes(self) -> set[str]:
        return {e.norm.get("scheme", "none") for e in self.entries}


class SplitViolation(ValueError):
    """A subject appears in more than one split."""


def validate_split(manifest: Manifest) -> dict:
    """Assert subject-disjoint splits; report per-split subject/window counts per class.

    Raises :class:`SplitViolation` naming the first offending subject. An empty
    split only warns (desk-scale corpora may lack one).
    """
    subject_splits: dict[str, str] = {}
    for e in manifest.entries:
        if e.split not in SPLITS:
            raise ValueError(f"entry {e.path}: unknown split '{e.split}'")
        prev = subject_splits.get(e.subject)
        if prev is None:
            subject_splits[e.subject] = e.split
        elif prev != e.split:
            raise SplitViolation(
                f"subject '{e.subject}' appears in both '{prev}' and '{e.split}' splits")

    k = len(manifest.class_map)
    report = {s: {"subjects": set(), "windows": 0, "per_class": [0] * k} for s in SPLITS}
    for e in manifest.entries:
        r = report[e.split]
        r["subjects"].add(e.subject)
        r["windows"] += 1
        r["per_class"][e.label] += 1
    for s in SPLITS:
        report[s]["subjects"] = sorted(report[s]["subjects"])
        if not report[s]["windows"]:
            warnings.warn(f"split '{s}' is empty", stacklevel=2)
    return report


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON serialization of a config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_split_csv(path: str | Path, assignment: dict[str, str]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subject_id", "split"])
        for subject in sorted(assignment):
            w.writerow([subject, assignment[subject]])


def read_split_csv(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["subject_id", "split"]:
            raise ValueError(f"{path}: expected header 'subject_id,split'")
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: malformed row {row!r}")
            subject, split = row[0].strip(), row[1].strip()
            if split not in SPLITS:
                raise ValueError(f"{path}: unknown split '{split}' for subject '{subject}'")
            if subject in out and out[subject] != split:
                raise SplitViolation(f"subject '{subject}' assigned to both "
                                     f"'{out[subject]}' and '{split}'")
            out[subject] = split
    return out


def write_class_map_csv(path: str | Path, class_map: ClassMap) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label_name", "index"])
        for name, idx in class_map.as_pairs():
            w.writerow([name, idx])


def read_class_map_csv(path: str | Path) -> ClassMap:
    pairs: list[tuple[str, int]] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label_name", "index"]:
            raise ValueError(f"{path}: expected header 'label_name,index'")
        for row in reader:
            if not row:
                continue
            pairs.append((row[0].strip(), int(row[1])))
    pairs.sort(key=lambda p: p[1])
    if [i for _, i in pairs] != list(range(len(pairs))):
        raise ValueError(f"{path}: indices must be exactly 0..K-1")
    return ClassMap(tuple(n for n, _ in pairs))


def write_windows(
    windows: list[Window],
    out_dir: str | Path,
    split_of: dict[str, str],
    cfg_hash: str,
    seed: int,
    class_map: ClassMap,
) -> Manifest:
    """Write windows as AGW1 files under ``out_dir`` and build the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, w in enumerate(windows):
        split = split_of.get(w.subject_id)
        if split is None:
            raise ValueError(f"subject '{w.subject_id}' missing from split assignment")
        name = f"w{i:06d}.agw"
        write_window_file(out_dir / name, w.data, w.label)
        norm = w.norm.to_dict() if isinstance(w.norm, NormMeta) else {"scheme": "none"}
        entries.append(ManifestEntry(path=name, label=w.label, subject=w.subject_id,
                                     split=split, length=w.data.shape[1], norm=norm))
    return Manifest(config_hash=cfg_hash, seed=seed, class_map=class_map, entries=entries)


def load_window_set(
    manifest: Manifest,
    base_dir: str | Path,
    split: str | None = None,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load windows referenced by a manifest into (N, C, L) float64 arrays.

    Returns (data, labels, subjects), optionally restricted to one split.
    """
    base = Path(base_dir)
    chunks, labels, subjects = [], [], []
    for e in manifest.entries:
        if split is not None and e.split != split:
            continue
        data, label = read_window_file(base / e.path)
        if label != e.label:
            raise ValueError(f"{e.path}: file label {label} != manifest label {e.label}")
        chunks.append(data.astype(np.float64))
        labels.append(e.label)
        subjects.append(e.subject)
    if not chunks:
        raise ValueError(f"no windows for split '{split}'" if split else "empty manifest")
    shapes = {c.shape for c in chunks}
    if len(shapes) != 1:
        raise ValueError(f"non-uniform window shapes: {sorted(shapes)}")
    return np.stack(chunks), np.asarray(labels, dtype=np.int64), subjects
