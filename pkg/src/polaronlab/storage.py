"""Deterministic on-disk artifacts: binary operator files and JSON helpers.

An operator file is a little-endian header ``(dimension, nnz, flags)`` as
three unsigned 64-bit words, followed by one record per stored entry:
``(row: int64, col: int64, value: float64)``.  A JSON sidecar carries the
assembly parameters and the SHA-256 of the binary payload; every load
re-hashes and refuses corrupted files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import CacheCorruptionError
from .fock import SparseOperator, _canonical_csr

_HEADER = struct.Struct("<QQQ")
_RECORD_DTYPE = np.dtype([("row", "<i8"), ("col", "<i8"), ("value", "<f8")])
_FLAG_HERMITIAN = 1


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_bytes(data: bytes) -> str:
    """Content hash used for artifact manifests."""
    return _sha256(data)


def json_dumps(payload: Dict[str, Any]) -> str:
    """Canonical JSON used for all artifacts (sorted keys, stable floats)."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    Path(path).write_text(json_dumps(payload) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text())


def config_hash(payload: Dict[str, Any]) -> str:
    """Content hash of a JSON-serializable configuration."""
    return _sha256(json.dumps(payload, sort_keys=True).encode())


def operator_bytes(op: SparseOperator) -> bytes:
    """Serialize an operator to the binary triplet format."""
    mat = _canonical_csr(op.matrix)
    coo = mat.tocoo()
    records = np.empty(coo.nnz, dtype=_RECORD_DTYPE)
    records["row"] = coo.row
    records["col"] = coo.col
    records["value"] = coo.data
    flags = _FLAG_HERMITIAN if op.hermitian else 0
    header = _HEADER.pack(mat.shape[0], coo.nnz, flags)
    return header + records.tobytes()


def operator_payload(op: SparseOperator, meta: Dict[str, Any]) -> Tuple[bytes, Dict[str, Any]]:
    """Binary blob plus sidecar dict for an operator, without touching disk."""
    blob = operator_bytes(op)
    sidecar = {
        "dimension": op.dim,
        "nnz": op.nnz,
        "hermitian": op.hermitian,
        "sha256": _sha256(blob),
        "meta": meta,
    }
    return blob, sidecar


def save_operator(op: SparseOperator, base: Path, meta: Dict[str, Any]) -> Dict[str, Any]:
    """Write ``base.bin`` + ``base.json`` and return the sidecar payload."""
    base = Path(base)
    blob, sidecar = operator_payload(op, meta)
    base.with_suffix(".bin").write_bytes(blob)
    write_json(base.with_suffix(".json"), sidecar)
    return sidecar


def load_operator(base: Path) -> Tuple[SparseOperator, Dict[str, Any]]:
    """Load an operator, verifying its content hash; raises on mismatch."""
    base = Path(base)
    bin_path = base.with_suffix(".bin")
    sidecar = read_json(base.with_suffix(".json"))
    blob = bin_path.read_bytes()
    if _sha256(blob) != sidecar.get("sha256"):
        raise CacheCorruptionError(f"content hash mismatch for {bin_path}")
    if len(blob) < _HEADER.size:
        raise CacheCorruptionError(f"truncated operator file {bin_path}")
    dim, nnz, flags = _HEADER.unpack_from(blob)
    records = np.frombuffer(blob, dtype=_RECORD_DTYPE, offset=_HEADER.size)
    if records.shape[0] != nnz:
        raise CacheCorruptionError(f"record count mismatch in {bin_path}")
    mat = sp.coo_matrix(
        (records["value"], (records["row"], records["col"])), shape=(int(dim), int(dim))
    )
    op = SparseOperator(matrix=_canonical_csr(mat), hermitian=bool(flags & _FLAG_HERMITIAN))
    return op, sidecar
