"""Dataset and artifact file I/O.

Two dataset formats are supported:

* CSV with a header row; the label column is selected by name and every
  other column is a feature, in header order.
* A raw little-endian float32 row-major tensor file with a JSON sidecar
  ``{"n":…,"d":…,"k":…,"dtype":"f32","labels":"<path>"}``; labels are a raw
  little-endian uint32 file.  The sidecar may optionally carry per-feature
  ``{"bounds": {"lo": […], "hi": […]}}``.

The sidecar lives at ``<tensor>.json``; loaders accept either the tensor
path or the sidecar path.  All writers go through an atomic temp+rename.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidInput, MalformedFile
from .moments import ClassMoments, LabeledDataset

__all__ = [
    "load_dataset",
    "save_dataset",
    "dataset_format",
    "json_dumps",
    "write_text_atomic",
    "write_bytes_atomic",
    "moments_to_dict",
    "moments_from_dict",
]


def json_dumps(obj) -> str:
    """Serialize with shortest round-trip float formatting, newline-terminated."""
    return json.dumps(obj, indent=2) + "\n"


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def dataset_format(path: str | Path) -> str:
    """Classify a dataset path as 'csv' or 'f32'."""
    name = str(path)
    if name.endswith(".csv"):
        return "csv"
    return "f32"


def load_dataset(path: str | Path, label_col: str = "label") -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"no such file: {path}")
    if dataset_format(path) == "csv":
        return _load_csv(path, label_col)
    return _load_f32(path)


def _load_csv(path: Path, label_col: str) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile(f"{path}: empty CSV")
        if label_col not in header:
            raise DataFormatError(f"{path}: no column named {label_col!r} in header")
        label_idx = header.index(label_col)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]
        rows: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno
                )
            try:
                labels.append(int(row[label_idx]))
                rows.append([float(v) for i, v in enumerate(row) if i != label_idx])
            except ValueError as exc:
                raise DataFormatError(f"{path}: {exc}", line=lineno) from None
    if not rows:
        raise MalformedFile(f"{path}: CSV has a header but no data rows")
    X = np.asarray(rows, dtype=np.float64)
    z = np.asarray(labels, dtype=np.int64)
    if z.min() < 0:
        raise DataFormatError(f"{path}: negative class label {int(z.min())}")
    return LabeledDataset.from_arrays(X, z, feature_names=feature_names)


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    """Resolve (tensor, sidecar) from either path."""
    name = str(path)
    if name.endswith(".json"):
        return Path(name[: -len(".json")]), path
    return path, Path(name + ".json")


def _load_f32(path: Path) -> LabeledDataset:
    tensor_path, sidecar_path = _sidecar_paths(path)
    if not sidecar_path.exists():
        raise DataFormatError(f"no sidecar found at {sidecar_path}")
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{sidecar_path}: {exc}") from None
    for key in ("n", "d", "k", "dtype", "labels"):
        if key not in meta:
            raise MalformedFile(f"{sidecar_path}: missing key {key!r}")
    if meta["dtype"] != "f32":
        raise DataFormatError(f"{sidecar_path}: unsupported dtype {meta['dtype']!r}")
    n, d, k = int(meta["n"]), int(meta["d"]), int(meta["k"])
    if not tensor_path.exists():
        raise DataFormatError(f"no tensor file at {tensor_path}")
    raw = np.fromfile(tensor_path, dtype="<f4")
    if raw.size != n * d:
        raise MalformedFile(
            f"{tensor_path}: expected {n * d} float32 values, found {raw.size}"
        )
    labels_path = Path(meta["labels"])
    if not labels_path.is_absolute():
        labels_path = sidecar_path.parent / labels_path
    if not labels_path.exists():
        raise DataFormatError(f"no labels file at {labels_path}")
    z = np.fromfile(labels_path, dtype="<u4")
    if z.size != n:
        raise MalformedFile(f"{labels_path}: expected {n} labels, found {z.size}")
    bounds = None
    if "bounds" in meta and meta["bounds"] is not None:
        b = meta["bounds"]
        try:
            bounds = (
                np.asarray(b["lo"], dtype=np.float64),
                np.asarray(b["hi"], dtype=np.float64),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedFile(f"{sidecar_path}: bad bounds: {exc}") from None
    X = raw.reshape(n, d).astype(np.float64)
    return LabeledDataset.from_arrays(X, z.astype(np.int64), k=k, bounds=bounds)


def save_dataset(
    ds: LabeledDataset, path: str | Path, fmt: str | None = None, label_col: str = "label"
) -> list[Path]:
    """Write a dataset; returns the list of files created."""
    path = Path(path)
    if fmt is None:
        fmt = dataset_format(path)
    if fmt == "csv":
        _save_csv(ds, path, label_col)
        return [path]
    return _save_f32(ds, path)


def _save_csv(ds: LabeledDataset, path: Path, label_col: str) -> None:
    names = ds.feature_names or [f"f{i}" for i in range(ds.d)]
    if len(names) != ds.d:
        names = [f"f{i}" for i in range(ds.d)]
    lines = [",".join(names + [label_col])]
    for i in range(ds.n):
        lines.append(",".join(repr(float(v)) for v in ds.X[i]) + f",{int(ds.z[i])}")
    write_text_atomic(path, "\n".join(lines) + "\n")


def _save_f32(ds: LabeledDataset, path: Path) -> list[Path]:
    tensor_path, sidecar_path = _sidecar_paths(path)
    labels_path = Path(str(tensor_path) + ".labels")
    write_bytes_atomic(tensor_path, ds.X.astype("<f4").tobytes())
    write_bytes_atomic(labels_path, ds.z.astype("<u4").tobytes())
    meta = {
        "n": ds.n,
        "d": ds.d,
        "k": ds.k,
        "dtype": "f32",
        "labels": labels_path.name,
    }
    if ds.bounds is not None:
        meta["bounds"] = {"lo": ds.bounds[0].tolist(), "hi": ds.bounds[1].tolist()}
    write_text_atomic(sidecar_path, json_dumps(meta))
    return [tensor_path, labels_path, sidecar_path]


def moments_to_dict(m: ClassMoments) -> dict:
    return {
        "k": m.k,
        "d": m.d,
        "counts": m.counts.tolist(),
        "priors": m.priors.tolist(),
        "means": m.means.tolist(),
        "covs": m.covs.tolist(),
        "global_mean": m.global_mean.tolist(),
        "global_cov": m.global_cov.tolist(),
        "cross_cov": m.cross_cov.tolist(),
        "shrinkage": m.shrinkage,
        "ridge": m.ridge.tolist(),
    }


def moments_from_dict(obj: dict) -> ClassMoments:
    try:
        return ClassMoments(
            k=int(obj["k"]),
            d=int(obj["d"]),
            counts=np.asarray(obj["counts"], dtype=np.int64),
            priors=np.asarray(obj["priors"], dtype=np.float64),
            means=np.asarray(obj["means"], dtype=np.float64),
            covs=np.asarray(obj["covs"], dtype=np.float64),
            global_mean=np.asarray(obj["global_mean"], dtype=np.float64),
            global_cov=np.asarray(obj["global_cov"], dtype=np.float64),
            cross_cov=np.asarray(obj["cross_cov"], dtype=np.float64),
            shrinkage=float(obj["shrinkage"]),
            ridge=np.asarray(obj["ridge"], dtype=np.float64),
        )
    except KeyError as exc:
        raise MalformedFile(f"moments file missing key {exc}") from None
