"""Embedding, patch and patch-graph file formats.

Binary embedding layout (all little-endian)::

    b"L2GE" | u64 n | u64 d | n*d f64 row-major | n u64 node ids
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .graph import EmbeddingMatrix

MAGIC = b"L2GE"
BINARY_SUFFIX = ".l2ge"


def write_embedding_binary(emb, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([emb.n, emb.d], dtype="<u8").tobytes())
        fh.write(np.asarray(emb.values, dtype="<f8").tobytes(order="C"))
        fh.write(np.asarray(emb.node_ids, dtype="<u8").tobytes())


def read_embedding_binary(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError("bad magic bytes, not an embedding file", path)
    if len(raw) < 20:
        raise ParseError("truncated header", path)
    n, d = (int(x) for x in np.frombuffer(raw, dtype="<u8", count=2, offset=4))
    expected = 20 + 8 * n * d + 8 * n
    if len(raw) != expected:
        raise ParseError(f"expected {expected} bytes for n={n}, d={d}, got {len(raw)}", path)
    values = np.frombuffer(raw, dtype="<f8", count=n * d, offset=20).reshape(n, d)
    ids = np.frombuffer(raw, dtype="<u8", count=n, offset=20 + 8 * n * d)
    return EmbeddingMatrix(values.astype(np.float64), ids)


def write_embedding_text(emb, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{emb.n} {emb.d}\n")
        for nid, row in zip(emb.node_ids, emb.values):
            fh.write(f"{nid} " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embedding_text(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("header must be 'n d'", path, 1)
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError("header must be 'n d'", path, 1) from None
        ids = np.empty(n, dtype=np.int64)
        values = np.empty((n, d))
        row = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if row >= n:
                raise ParseError("more rows than declared", path, lineno)
            if len(parts) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(parts)}", path, lineno)
            try:
                ids[row] = int(parts[0])
                values[row] = [float(x) for x in parts[1:]]
            except ValueError:
                raise ParseError("malformed number", path, lineno) from None
            row += 1
    if row != n:
        raise ParseError(f"declared {n} rows, found {row}", path)
    return EmbeddingMatrix(values, ids)


def write_embedding(emb, path):
    path = Path(path)
    if path.suffix == BINARY_SUFFIX:
        write_embedding_binary(emb, path)
    else:
        write_embedding_text(emb, path)


def read_embedding(path):
    """Read either format, sniffing the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_embedding_binary(path)
    return read_embedding_text(path)


def write_patches(patches, path):
    with open(path, "w", encoding="utf-8") as fh:
        for k, nodes in enumerate(patches):
            fh.write(f"{k}: " + " ".join(str(int(x)) for x in np.sort(nodes)) + "\n")


def read_patches(path):
    patches = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            head, _, rest = line.partition(":")
            try:
                k = int(head)
                nodes = np.array([int(x) for x in rest.split()], dtype=np.int64)
            except ValueError:
                raise ParseError("expected 'k: id id ...'", path, lineno) from None
            if k != len(patches):
                raise ParseError(f"patch index {k} out of sequence", path, lineno)
            patches.append(np.unique(nodes))
    if not patches:
        raise DataError(f"{path}: no patches")
    return patches


def write_patch_edges(edges, overlaps, path):
    with open(path, "w", encoding="utf-8") as fh:
        for (i, j), w in zip(edges, overlaps):
            fh.write(f"{int(i)} {int(j)} {int(w)}\n")


def read_patch_edges(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError("expected 'i j overlap_size'", path, lineno)
            try:
                rows.append([int(x) for x in parts])
            except ValueError:
                raise ParseError("non-integer field", path, lineno) from None
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return arr[:, :2], arr[:, 2]


def patch_coords_path(directory, k, role=None):
    stem = f"patch_{k:05d}" if role is None else f"patch_{k:05d}.{role}"
    return Path(directory) / f"{stem}{BINARY_SUFFIX}"
