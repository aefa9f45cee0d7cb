"""Plain-text tensor checkpoints.

Layout: a header line ``EBGFN-CKPT 1``, then one line per tensor::

    name ndim dim_0 ... dim_{ndim-1} v_0 v_1 ...

Values are row-major and written with ``repr`` so float64 round-trips
exactly.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

HEADER = "EBGFN-CKPT 1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> str:
    lines = [HEADER]
    for name, value in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"invalid tensor name {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        fields = [name, str(arr.ndim), *map(str, arr.shape)]
        fields += [repr(float(v)) for v in arr.ravel()]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict[str, np.ndarray]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise CheckpointError("missing checkpoint header")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        try:
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2:2 + ndim])
            values = np.array([float(v) for v in fields[2 + ndim:]], dtype=np.float64)
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"line {lineno}: {exc}") from None
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"line {lineno}: {name} has {values.size} values for shape {shape}")
        if name in out:
            raise CheckpointError(f"line {lineno}: duplicate tensor {name}")
        out[name] = values.reshape(shape)
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(tensors))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_text())
