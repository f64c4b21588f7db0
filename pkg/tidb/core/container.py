# tidb/core/container.py
"""
The "TIDB" binary container shared by scaling tensors, feature files and checkpoints.

Layout (little-endian):
    magic      4 bytes   b"TIDB"
    version    u32
    kind       4 bytes   type tag, see ContainerKind
    header_len u32
    header     header_len bytes of UTF-8 JSON (ContainerHeader)
    arrays     each array listed in the header, row-major float64, in header order
"""

import struct
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import ValidationError

from .constants import CONTAINER_MAGIC, CONTAINER_VERSION
from .errors import FormatError
from ..models.data_models import ArraySpec, ContainerHeader

_PREFIX = struct.Struct("<4sI4sI")
_DTYPE = np.dtype("<f8")


class ContainerKind(str, Enum):
    SCALING_TENSOR = "PSI_"
    FEATURES = "FEAT"
    CHECKPOINT = "CKPT"


def write_container(path: Path | str, kind: ContainerKind, meta: Dict[str, Any],
                    arrays: Dict[str, np.ndarray]) -> None:
    """Writes `arrays` (converted to float64) and the JSON-serialisable `meta` to `path`."""
    specs = [ArraySpec(name=name, shape=list(np.shape(arr))) for name, arr in arrays.items()]
    header = ContainerHeader(kind=kind.value, meta=meta, arrays=specs)
    payload = header.model_dump_json().encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(CONTAINER_MAGIC, CONTAINER_VERSION, kind.value.encode("ascii"), len(payload)))
        f.write(payload)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes(order="C"))


def read_container(path: Path | str, kind: ContainerKind) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Reads a container written by `write_container`, checking magic, version and type tag."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e

    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path} is too short to be a TIDB container")
    magic, version, tag, header_len = _PREFIX.unpack_from(raw, 0)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"{path} is not a TIDB container (magic {magic!r})")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path} has unsupported container version {version}")
    if tag != kind.value.encode("ascii"):
        raise FormatError(f"{path} holds {tag.decode('ascii', 'replace')!r}, expected {kind.value!r}")

    offset = _PREFIX.size
    try:
        header = ContainerHeader.model_validate_json(raw[offset:offset + header_len])
    except ValidationError as e:
        raise FormatError(f"{path} has a corrupt header: {e}") from e
    offset += header_len

    arrays: Dict[str, np.ndarray] = {}
    for spec in header.arrays:
        count = int(np.prod(spec.shape, dtype=np.int64)) if spec.shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"{path} is truncated inside array {spec.name!r}")
        values = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=offset)
        arrays[spec.name] = values.reshape(spec.shape).astype(np.float64)
        offset += nbytes
    return header.meta, arrays
