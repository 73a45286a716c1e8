"""On-disk formats: weight container, vocabulary files, corpora and CSV reports.

Weight container layout::

    cubenmt-weights\\n
    {json manifest on one line}\\n
    payload: little-endian float32, row-major, tensors in manifest order

The manifest records ``format_version``, the model dimensions and, per
tensor, its name, shape and byte offset into the payload.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import Dims, ModelParams, RESERVED, Vocabulary, param_shapes
from .numerics import DimensionError

MAGIC = b"cubenmt-weights\n"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _manifest(params: ModelParams):
    records = []
    offset = 0
    for name, shape in param_shapes(params.dims).items():
        records.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape)) * 4
    return {
        "format_version": FORMAT_VERSION,
        "dims": params.dims.as_dict(),
        "tensors": records,
        "payload_bytes": offset,
    }


def save_weights(params: ModelParams, path) -> None:
    manifest = _manifest(params)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(manifest, separators=(",", ":")).encode("utf-8") + b"\n")
        for rec in manifest["tensors"]:
            f.write(np.ascontiguousarray(params[rec["name"]], dtype="<f4").tobytes())


def load_weights(path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a weight container")
    nl = data.index(b"\n", len(MAGIC))
    manifest = json.loads(data[len(MAGIC):nl].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {manifest.get('format_version')}")
    payload = memoryview(data)[nl + 1:]
    if len(payload) != manifest["payload_bytes"]:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    dims = Dims(**manifest["dims"])
    expected = param_shapes(dims)
    tensors = {}
    for rec in manifest["tensors"]:
        shape = tuple(rec["shape"])
        if expected.get(rec["name"]) != shape:
            raise DimensionError(f"{rec['name']}: shape {shape} disagrees with dims {dims}")
        n = int(np.prod(shape))
        start = rec["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=start)
        tensors[rec["name"]] = arr.reshape(shape)
    return ModelParams(dims, tensors)


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(tokens[:3]) != RESERVED:
        raise FormatError(f"{path}: first three lines must be {' '.join(RESERVED)}")
    return Vocabulary(tokens)


def read_corpus(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def write_corpus(sentences, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in sentences:
            f.write(" ".join(s) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
