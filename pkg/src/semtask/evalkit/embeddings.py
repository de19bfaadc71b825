"""Precomputed instance embeddings: in-memory store plus EMB1 / CSV codecs.

EMB1 layout (little-endian)::

    b"EMB1" | u32 dim | u64 count | count x record
    record = u16 len | id utf-8 | u16 len | class id utf-8 | dim x f32
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import (
    DimensionMismatch,
    DuplicateInstance,
    MissingInstance,
    NonFiniteVector,
    ValidationError,
)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIQ")
_LEN = struct.Struct("<H")


class EmbeddingStore:
    """Immutable map instance id -> (class id, float32 vector)."""

    def __init__(self, instance_ids: Sequence[str], class_ids: Sequence[str], vectors):
        vectors = np.array(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D array of vectors, got shape {vectors.shape}")
        if not (len(instance_ids) == len(class_ids) == vectors.shape[0]):
            raise DimensionMismatch("ids, classes and vectors differ in length")
        if vectors.shape[1] < 1:
            raise DimensionMismatch("embedding dimension must be positive")
        self.instance_ids = tuple(instance_ids)
        self.class_ids = tuple(class_ids)
        self._index: dict[str, int] = {}
        for i, iid in enumerate(self.instance_ids):
            if iid in self._index:
                raise DuplicateInstance(iid)
            self._index[iid] = i
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            raise NonFiniteVector(self.instance_ids[int(np.argmax(bad))])
        vectors.setflags(write=False)
        self.vectors = vectors

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.instance_ids)

    def __contains__(self, instance_id) -> bool:
        return instance_id in self._index

    def __getitem__(self, instance_id: str) -> tuple[str, np.ndarray]:
        i = self.row(instance_id)
        return self.class_ids[i], self.vectors[i]

    def row(self, instance_id: str, task_id=None) -> int:
        try:
            return self._index[instance_id]
        except KeyError:
            raise MissingInstance(instance_id, task_id) from None

    def matrix(self, instance_ids: Iterable[str], task_id=None) -> np.ndarray:
        """Stack vectors of ``instance_ids`` as a float64 array."""
        rows = [self.row(i, task_id) for i in instance_ids]
        return self.vectors[rows].astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.instance_ids == other.instance_ids
            and self.class_ids == other.class_ids
            and np.array_equal(self.vectors, other.vectors)
        )


def encode_binary(store: EmbeddingStore) -> bytes:
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, store.dim, len(store)))
    vectors = store.vectors.astype("<f4")
    for iid, cid, vec in zip(store.instance_ids, store.class_ids, vectors):
        for text in (iid, cid):
            raw = text.encode("utf-8")
            out.write(_LEN.pack(len(raw)))
            out.write(raw)
        out.write(vec.tobytes())
    return out.getvalue()


def decode_binary(data: bytes) -> EmbeddingStore:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated EMB1 header")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValidationError("not an EMB1 file")
    if dim < 1:
        raise DimensionMismatch("EMB1 dimension must be positive")
    pos = _HEADER.size
    ids, classes = [], []
    vectors = np.empty((count, dim), dtype=np.float32)
    width = 4 * dim
    try:
        for r in range(count):
            fields = []
            for _ in range(2):
                (n,) = _LEN.unpack_from(data, pos)
                pos += _LEN.size
                raw = data[pos : pos + n]
                if len(raw) != n:
                    raise struct.error("short string")
                fields.append(raw.decode("utf-8"))
                pos += n
            if pos + width > len(data):
                raise struct.error("short vector")
            vectors[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
            pos += width
            ids.append(fields[0])
            classes.append(fields[1])
    except struct.error:
        raise ValidationError(f"truncated EMB1 record #{len(ids)}") from None
    if pos != len(data):
        raise ValidationError(f"{len(data) - pos} trailing bytes after EMB1 records")
    return EmbeddingStore(ids, classes, vectors)


def encode_csv(store: EmbeddingStore) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance_id", "class_id", *(f"v{i}" for i in range(store.dim))])
    for iid, cid, vec in zip(store.instance_ids, store.class_ids, store.vectors):
        # 9 significant digits round-trip float32 exactly
        writer.writerow([iid, cid, *(format(float(v), ".9g") for v in vec)])
    return buf.getvalue()


def decode_csv(text: str) -> EmbeddingStore:
    reader = csv.reader(io.StringIO(text))
    ids, classes, rows = [], [], []
    dim = None
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if lineno == 1 and row[0] == "instance_id":
            continue
        if len(row) < 3:
            raise DimensionMismatch(f"line {lineno}: no vector values")
        if dim is None:
            dim = len(row) - 2
        elif len(row) - 2 != dim:
            raise DimensionMismatch(f"line {lineno}: expected {dim} values, got {len(row) - 2}")
        try:
            rows.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        ids.append(row[0])
        classes.append(row[1])
    if dim is None:
        raise ValidationError("no embedding records")
    return EmbeddingStore(ids, classes, np.array(rows, dtype=np.float64).reshape(len(rows), dim))


def load_embeddings(source: str | Path | bytes) -> EmbeddingStore:
    """Load an EMB1 or CSV embedding file (format sniffed from the magic)."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    if data[:4] == MAGIC:
        return decode_binary(data)
    return decode_csv(data.decode("utf-8"))


def save_embeddings(store: EmbeddingStore, path: str | Path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "emb1")
    if fmt == "csv":
        path.write_text(encode_csv(store), encoding="utf-8")
    else:
        path.write_bytes(encode_binary(store))
