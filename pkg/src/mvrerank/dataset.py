"""Feature-matrix and metadata ingestion for query/gallery sets."""

from __future__ import annotations

import ast
import csv
import os
import struct
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import InputDataError

PathLike = Union[str, os.PathLike]

_NPY_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"<f4": np.float32, "<f8": np.float64}
_META_HEADER = ["image_id", "person_id", "camera_id"]


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """L2-normalize each row, returning float32. Raises on zero-norm rows.

    Norms are computed in float64 so that re-normalizing an already
    normalized matrix perturbs no element by more than one float32 ulp.
    """
    norms = np.linalg.norm(values.astype(np.float64, copy=False), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise InputDataError(f"zero-norm feature row at index {zero[0]}")
    out = values / norms[:, None]
    return np.ascontiguousarray(out, dtype=np.float32)


class FeatureMatrix:
    """Immutable row-major matrix of unit-norm float32 feature vectors."""

    def __init__(self, values: np.ndarray, *, normalize: bool = True):
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise InputDataError(f"feature array must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputDataError(f"feature array must be non-empty, got shape {arr.shape}")
        if arr.dtype == np.float64:
            warnings.warn("down-converting float64 features to float32", stacklevel=2)
        arr = arr.astype(np.float32, copy=not normalize)
        if not np.isfinite(arr).all():
            raise InputDataError("feature array contains NaN or Inf")
        if normalize:
            arr = normalize_rows(arr)
        arr.flags.writeable = False
        self.values = arr

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __repr__(self) -> str:
        return f"FeatureMatrix(rows={self.rows}, dim={self.dim})"


@dataclass(frozen=True)
class ItemMeta:
    """Per-image identity and camera labels.

    person_id -1 marks a distractor; camera_id -1 marks an unknown camera
    (which disables camera-based filtering for that item).
    """

    image_id: str
    person_id: int
    camera_id: int


@dataclass
class Dataset:
    """Validated, immutable query/gallery feature sets with aligned metadata."""

    query_features: FeatureMatrix
    query_meta: list[ItemMeta]
    gallery_features: FeatureMatrix
    gallery_meta: list[ItemMeta]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def _meta_array(self, key: str, meta: list[ItemMeta], attr: str) -> np.ndarray:
        if key not in self._cache:
            self._cache[key] = np.array([getattr(m, attr) for m in meta], dtype=np.int64)
        return self._cache[key]

    @property
    def query_person_ids(self) -> np.ndarray:
        return self._meta_array("qp", self.query_meta, "person_id")

    @property
    def query_camera_ids(self) -> np.ndarray:
        return self._meta_array("qc", self.query_meta, "camera_id")

    @property
    def gallery_person_ids(self) -> np.ndarray:
        return self._meta_array("gp", self.gallery_meta, "person_id")

    @property
    def gallery_camera_ids(self) -> np.ndarray:
        return self._meta_array("gc", self.gallery_meta, "camera_id")


def _read_npy_header(f, path) -> tuple[np.dtype, tuple[int, int]]:
    magic = f.read(6)
    if magic != _NPY_MAGIC:
        raise InputDataError(f"{path}: malformed header, bad NPY magic bytes {magic!r}")
    version = f.read(2)
    if version != b"\x01\x00":
        raise InputDataError(f"{path}: malformed header, unsupported NPY version {version!r}")
    raw_len = f.read(2)
    if len(raw_len) != 2:
        raise InputDataError(f"{path}: malformed header, truncated header length")
    (header_len,) = struct.unpack("<H", raw_len)
    header_bytes = f.read(header_len)
    if len(header_bytes) != header_len:
        raise InputDataError(f"{path}: malformed header, truncated header dictionary")
    try:
        header = ast.literal_eval(header_bytes.decode("latin1"))
        descr = header["descr"]
        fortran = header["fortran_order"]
        shape = tuple(header["shape"])
    except Exception as exc:
        raise InputDataError(f"{path}: malformed header dictionary") from exc
    if descr not in _SUPPORTED_DESCRS:
        raise InputDataError(f"{path}: unsupported element type {descr!r} (need <f4 or <f8)")
    if fortran:
        raise InputDataError(f"{path}: fortran_order arrays are not supported")
    if len(shape) != 2:
        raise InputDataError(f"{path}: feature array must be 2-D, got shape {shape}")
    return np.dtype(_SUPPORTED_DESCRS[descr]), shape


def load_features(path: PathLike) -> FeatureMatrix:
    """Read an NPY v1.0 file and return its rows L2-normalized as float32."""
    try:
        with open(path, "rb") as f:
            dtype, shape = _read_npy_header(f, path)
            count = shape[0] * shape[1]
            data = np.fromfile(f, dtype=dtype, count=count)
    except OSError as exc:
        raise InputDataError(f"cannot read feature file {path}: {exc}") from exc
    if data.size != count:
        raise InputDataError(f"{path}: payload has {data.size} values, header declares {count}")
    return FeatureMatrix(data.reshape(shape))


def save_features(path: PathLike, values: np.ndarray | FeatureMatrix) -> None:
    """Write a float32 matrix in the NPY v1.0 container format."""
    arr = values.values if isinstance(values, FeatureMatrix) else np.asarray(values, dtype=np.float32)
    with open(path, "wb") as f:
        np.lib.format.write_array(f, arr, version=(1, 0))


def load_meta(path: PathLike) -> list[ItemMeta]:
    """Read per-image metadata from a `image_id,person_id,camera_id` CSV."""
    meta: list[ItemMeta] = []
    seen: set[str] = set()
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != _META_HEADER:
                raise InputDataError(
                    f"{path}: expected header {','.join(_META_HEADER)!r}, got {header}"
                )
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise InputDataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
                image_id, person_raw, camera_raw = row
                try:
                    person_id = int(person_raw)
                    camera_id = int(camera_raw)
                except ValueError as exc:
                    raise InputDataError(
                        f"{path}:{lineno}: non-integer person_id/camera_id {row[1:]!r}"
                    ) from exc
                if image_id in seen:
                    raise InputDataError(f"{path}:{lineno}: duplicate image_id {image_id!r}")
                seen.add(image_id)
                meta.append(ItemMeta(image_id, person_id, camera_id))
    except OSError as exc:
        raise InputDataError(f"cannot read metadata file {path}: {exc}") from exc
    return meta


def save_meta(path: PathLike, meta: list[ItemMeta]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_META_HEADER)
        for m in meta:
            writer.writerow([m.image_id, m.person_id, m.camera_id])


def validate(dataset: Dataset) -> Dataset:
    """Check cross-component invariants, returning the dataset unchanged."""
    qf, gf = dataset.query_features, dataset.gallery_features
    if qf.dim != gf.dim:
        raise InputDataError(f"query dim {qf.dim} != gallery dim {gf.dim}")
    if len(dataset.query_meta) != qf.rows:
        raise InputDataError(
            f"query meta has {len(dataset.query_meta)} rows, features have {qf.rows}"
        )
    if len(dataset.gallery_meta) != gf.rows:
        raise InputDataError(
            f"gallery meta has {len(dataset.gallery_meta)} rows, features have {gf.rows}"
        )
    return dataset


def load_dataset(
    query_features: PathLike,
    query_meta: PathLike,
    gallery_features: PathLike,
    gallery_meta: PathLike,
) -> Dataset:
    """Load and validate all four dataset components."""
    return validate(
        Dataset(
            query_features=load_features(query_features),
            query_meta=load_meta(query_meta),
            gallery_features=load_features(gallery_features),
            gallery_meta=load_meta(gallery_meta),
        )
    )
