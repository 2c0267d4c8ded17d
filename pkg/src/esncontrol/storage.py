"""Self-describing file containers and deterministic CSV output.

Datasets and models are stored as versioned JSON. Float arrays are serialized
as C99 hexadecimal float literals (``float.hex``), which round-trip the exact
binary value; scalar configuration floats rely on JSON shortest-repr round
tripping. CSV cells are written with ``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .esn import EsnModel, EsnParams
from .mfe import MfeParams, Trajectory

DATASET_FORMAT = "mfe-dataset"
MODEL_FORMAT = "esn-model"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a container file has an unexpected format or version."""


def _floats_to_hex(arr: np.ndarray) -> list:
    return [float.hex(float(x)) for x in np.asarray(arr, dtype=np.float64).ravel()]


def _floats_from_hex(data: list, shape: tuple[int, ...]) -> np.ndarray:
    return np.array([float.fromhex(x) for x in data], dtype=np.float64).reshape(shape)


def _dense_to_json(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": _floats_to_hex(arr)}


def _dense_from_json(obj: dict) -> np.ndarray:
    return _floats_from_hex(obj["data"], tuple(obj["shape"]))


def _sparse_to_json(arr: np.ndarray) -> dict:
    rows, cols = np.nonzero(arr)
    return {"shape": list(arr.shape), "rows": rows.tolist(), "cols": cols.tolist(),
            "vals": _floats_to_hex(arr[rows, cols])}


def _sparse_from_json(obj: dict) -> np.ndarray:
    arr = np.zeros(tuple(obj["shape"]))
    vals = _floats_from_hex(obj["vals"], (len(obj["vals"]),))
    arr[np.asarray(obj["rows"], dtype=int), np.asarray(obj["cols"], dtype=int)] = vals
    return arr


def _check_header(obj: dict, expected_format: str):
    if obj.get("format") != expected_format:
        raise FormatError(f"expected {expected_format!r} file, got {obj.get('format')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported {expected_format} version {obj.get('version')!r}")


def save_dataset(path, trajectories: list[Trajectory], params: MfeParams,
                 seed: int | None = None, meta: dict | None = None) -> None:
    obj = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "params": asdict(params),
        "seed": seed,
        "meta": meta or {},
        "series": [
            {
                "times": _floats_to_hex(t.times),
                "q": _dense_to_json(t.states),
                "re": _floats_to_hex(t.re),
                "k": _floats_to_hex(t.k),
            }
            for t in trajectories
        ],
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")


def load_dataset(path) -> tuple[list[Trajectory], MfeParams, int | None, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    _check_header(obj, DATASET_FORMAT)
    params = MfeParams(**obj["params"])
    series = []
    for s in obj["series"]:
        states = _dense_from_json(s["q"])
        n = states.shape[0]
        series.append(Trajectory(
            times=_floats_from_hex(s["times"], (n,)),
            states=states,
            re=_floats_from_hex(s["re"], (n,)),
            k=_floats_from_hex(s["k"], (n,)),
        ))
    return series, params, obj.get("seed"), obj.get("meta", {})


def save_model(path, model: EsnModel) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "params": {**asdict(model.params),
                   "input_scaling": list(model.params.input_scaling)
                   if model.params.input_scaling is not None else None},
        "input_scaling": _floats_to_hex(model.input_scaling)
        if model.input_scaling is not None else None,
        "w_in": _dense_to_json(model.w_in),
        "w": _sparse_to_json(model.w),
        "w_c": _dense_to_json(model.w_c),
        "w_out": _dense_to_json(model.w_out) if model.w_out is not None else None,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")


def load_model(path) -> EsnModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    _check_header(obj, MODEL_FORMAT)
    raw = dict(obj["params"])
    if raw.get("input_scaling") is not None:
        raw["input_scaling"] = tuple(raw["input_scaling"])
    params = EsnParams(**raw)
    scaling = obj.get("input_scaling")
    return EsnModel(
        params=params,
        w_in=_dense_from_json(obj["w_in"]),
        w=_sparse_from_json(obj["w"]),
        w_c=_dense_from_json(obj["w_c"]),
        w_out=_dense_from_json(obj["w_out"]) if obj.get("w_out") is not None else None,
        input_scaling=_floats_from_hex(scaling, (len(scaling),))
        if scaling is not None else None,
    )


def format_cell(value) -> str:
    """Deterministic CSV cell formatting; floats use shortest round-trip repr."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
