"""On-disk embedding sets and distance matrices.

A set lives in a directory holding ``manifest.json``, a row-major
little-endian float32 ``features.bin`` and a ``labels.csv`` with header
``person_id,cam_id``. Distance matrices reuse the layout with dtype
``f64le`` and one label table per axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadValueError,
    IoFailureError,
    MalformedManifestError,
    MissingFileError,
    SizeMismatchError,
)

MANIFEST = "manifest.json"
FEATURE_FILE = "features.bin"
LABEL_FILE = "labels.csv"

_DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8")}


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    features: np.ndarray
    person_ids: np.ndarray
    cam_ids: np.ndarray
    name: str = ""

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        pids = np.asarray(self.person_ids, dtype=np.int64).reshape(-1)
        cams = np.asarray(self.cam_ids, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise BadValueError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if not (len(pids) == len(cams) == feats.shape[0]):
            raise BadValueError(
                f"label count mismatch: {feats.shape[0]} rows, "
                f"{len(pids)} person ids, {len(cams)} cam ids"
            )
        if not np.isfinite(feats).all():
            raise BadValueError("features contain NaN or Inf")
        if (pids < 0).any() or (cams < 0).any():
            raise BadValueError("labels must be non-negative")
        for arr in (feats, pids, cams):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "person_ids", pids)
        object.__setattr__(self, "cam_ids", cams)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def as_float64(self) -> np.ndarray:
        return self.features.astype(np.float64)

    def subset(self, index, name: str | None = None) -> "EmbeddingSet":
        index = np.asarray(index)
        return EmbeddingSet(
            self.features[index],
            self.person_ids[index],
            self.cam_ids[index],
            self.name if name is None else name,
        )

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.name == other.name
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.person_ids, other.person_ids)
            and np.array_equal(self.cam_ids, other.cam_ids)
        )


@dataclass
class Manifest:
    n: int
    dim: int
    dtype: str = "f32le"
    feature_file: str = FEATURE_FILE
    label_file: str = LABEL_FILE
    metric_hint: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "dim": self.dim,
            "dtype": self.dtype,
            "feature_file": self.feature_file,
            "label_file": self.label_file,
        }
        if self.metric_hint is not None:
            doc["metric_hint"] = self.metric_hint
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc) -> "Manifest":
        if not isinstance(doc, dict):
            raise MalformedManifestError("manifest must be a JSON object")
        try:
            n, dim = doc["n"], doc["dim"]
            dtype = doc["dtype"]
            feature_file, label_file = doc["feature_file"], doc["label_file"]
        except KeyError as exc:
            raise MalformedManifestError(f"manifest missing key {exc}") from None
        for key, val in (("n", n), ("dim", dim)):
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise MalformedManifestError(f"manifest {key} must be a positive integer, got {val!r}")
        if dtype not in _DTYPES:
            raise MalformedManifestError(f"unsupported dtype token {dtype!r}")
        if not isinstance(feature_file, str) or not isinstance(label_file, str):
            raise MalformedManifestError("file entries must be strings")
        known = {"n", "dim", "dtype", "feature_file", "label_file", "metric_hint"}
        return cls(
            n=n,
            dim=dim,
            dtype=dtype,
            feature_file=feature_file,
            label_file=label_file,
            metric_hint=doc.get("metric_hint"),
            extra={k: v for k, v in doc.items() if k not in known},
        )


def read_manifest(dir_path) -> Manifest:
    path = Path(dir_path) / MANIFEST
    if not path.is_file():
        raise MissingFileError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifestError(f"{path}: {exc}") from None
    return Manifest.from_dict(doc)


def _read_matrix(dir_path: Path, filename: str, rows: int, cols: int, dtype: str) -> np.ndarray:
    path = dir_path / filename
    if not path.is_file():
        raise MissingFileError(f"missing feature file {path}")
    dt = _DTYPES[dtype]
    expected = rows * cols * dt.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise SizeMismatchError(
            f"{path}: {actual} bytes, manifest implies {rows}x{cols}x{dt.itemsize} = {expected}"
        )
    data = np.fromfile(path, dtype=dt).reshape(rows, cols)
    if not np.isfinite(data).all():
        raise BadValueError(f"{path} contains NaN or Inf")
    return data


def _read_labels(path: Path, rows: int) -> tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise MissingFileError(f"missing label file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["person_id", "cam_id"]:
            raise MalformedManifestError(f"{path}: header must be 'person_id,cam_id'")
        pids, cams = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise BadValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                pid, cam = int(row[0]), int(row[1])
            except ValueError:
                raise BadValueError(f"{path}:{lineno}: non-integer label") from None
            if pid < 0 or cam < 0:
                raise BadValueError(f"{path}:{lineno}: negative label")
            pids.append(pid)
            cams.append(cam)
    if len(pids) != rows:
        raise SizeMismatchError(f"{path}: {len(pids)} label rows, manifest says {rows}")
    return np.array(pids, dtype=np.int64), np.array(cams, dtype=np.int64)


def _write_labels(path: Path, person_ids, cam_ids) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["person_id", "cam_id"])
        writer.writerows(zip(np.asarray(person_ids).tolist(), np.asarray(cam_ids).tolist()))


def load_embedding_set(dir_path) -> EmbeddingSet:
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise MissingFileError(f"not a directory: {dir_path}")
    manifest = read_manifest(dir_path)
    if manifest.dtype != "f32le":
        raise MalformedManifestError(f"embedding sets must be f32le, got {manifest.dtype!r}")
    feats = _read_matrix(dir_path, manifest.feature_file, manifest.n, manifest.dim, manifest.dtype)
    pids, cams = _read_labels(dir_path / manifest.label_file, manifest.n)
    return EmbeddingSet(feats.astype(np.float32), pids, cams, str(manifest.extra.get("name", "")))


def save_embedding_set(emb: EmbeddingSet, dir_path, metric_hint: str | None = None) -> None:
    dir_path = Path(dir_path)
    manifest = Manifest(n=emb.n, dim=emb.dim, metric_hint=metric_hint, extra={"name": emb.name})
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        emb.features.astype("<f4").tofile(dir_path / FEATURE_FILE)
        _write_labels(dir_path / LABEL_FILE, emb.person_ids, emb.cam_ids)
        (dir_path / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot write embedding set to {dir_path}: {exc}") from exc


def save_distance_matrix(dm, dir_path) -> None:
    """Dump a :class:`~reidbench.distances.DistanceMatrix` as f64le plus both label tables."""
    dir_path = Path(dir_path)
    q, g = dm.values.shape
    manifest = Manifest(
        n=q,
        dim=g,
        dtype="f64le",
        feature_file="distances.bin",
        label_file="query_labels.csv",
        metric_hint=dm.metric,
        extra={"gallery_label_file": "gallery_labels.csv"},
    )
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(dm.values, dtype="<f8").tofile(dir_path / manifest.feature_file)
        _write_labels(dir_path / manifest.label_file, dm.query_pids, dm.query_cams)
        _write_labels(dir_path / "gallery_labels.csv", dm.gallery_pids, dm.gallery_cams)
        (dir_path / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot write distance matrix to {dir_path}: {exc}") from exc


def load_distance_matrix(dir_path):
    from .distances import DistanceMatrix

    dir_path = Path(dir_path)
    manifest = read_manifest(dir_path)
    if manifest.dtype != "f64le":
        raise MalformedManifestError(f"distance matrices must be f64le, got {manifest.dtype!r}")
    if manifest.metric_hint is None:
        raise MalformedManifestError("distance matrix manifest lacks metric_hint")
    values = _read_matrix(dir_path, manifest.feature_file, manifest.n, manifest.dim, "f64le")
    qp, qc = _read_labels(dir_path / manifest.label_file, manifest.n)
    gallery_file = manifest.extra.get("gallery_label_file", "gallery_labels.csv")
    gp, gc = _read_labels(dir_path / gallery_file, manifest.dim)
    return DistanceMatrix(values.astype(np.float64), manifest.metric_hint, qp, qc, gp, gc)
