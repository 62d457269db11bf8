"""Exponential-moving-average teacher parameter maintenance.

Parameters are named 1-D float64 arrays (a ParameterSet); the hosting
network lives in an external trainer and exchanges values through the
binary parameter file: a sequence of records, each
``u32 name length | UTF-8 name | u64 value count | little-endian f64
values``, sorted by name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

ParameterSet = dict[str, np.ndarray]


@dataclass(frozen=True)
class EmaConfig:
    alpha: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")


def _normalize(params: Mapping[str, np.ndarray]) -> ParameterSet:
    out = {}
    for name, values in params.items():
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite values")
        out[name] = arr
    return out


def init_from(student: Mapping[str, np.ndarray]) -> ParameterSet:
    """Deep-copy the student parameters to seed the teacher."""
    return {name: arr.copy() for name, arr in _normalize(student).items()}


def ema_update(
    teacher: Mapping[str, np.ndarray],
    student: Mapping[str, np.ndarray],
    cfg: EmaConfig = EmaConfig(),
) -> ParameterSet:
    """One decay step: t' = alpha * t + (1 - alpha) * s per value."""
    teacher = _normalize(teacher)
    student = _normalize(student)
    if teacher.keys() != student.keys():
        raise ValueError(
            f"parameter name mismatch: {sorted(teacher)} vs {sorted(student)}"
        )
    out = {}
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ValueError(
                f"parameter {name!r} shape mismatch: {t.shape} vs {s.shape}"
            )
        out[name] = cfg.alpha * t + (1.0 - cfg.alpha) * s
    return out


def save_parameters(params: Mapping[str, np.ndarray], path) -> None:
    params = _normalize(params)
    with open(path, "wb") as f:
        for name in sorted(params):
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            arr = params[name]
            f.write(struct.pack("<Q", arr.size))
            f.write(arr.astype("<f8").tobytes())


def load_parameters(path) -> ParameterSet:
    data = Path(path).read_bytes()
    params: ParameterSet = {}
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated parameter file (name length)")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len + 8 > len(data):
            raise ValueError("truncated parameter file (name or count)")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        end = pos + 8 * count
        if end > len(data):
            raise ValueError(f"truncated parameter file (values of {name!r})")
        values = np.frombuffer(data[pos:end], dtype="<f8").astype(np.float64)
        pos = end
        if name in params:
            raise ValueError(f"duplicate parameter name {name!r}")
        params[name] = values
    return _normalize(params)
