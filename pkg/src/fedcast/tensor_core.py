"""Named tensors, L1 deviations, weighted averaging and the binary frame format.

A :class:`ParameterSet` is an immutable, lexicographically ordered mapping
from tensor name to a float64 numpy array. All reductions go through
:mod:`fedcast._kernels` so that sums are taken in flat index order and are
reproducible bit for bit.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import CongruenceError, FormatError, InvalidTensorError, NormalizationError

MAGIC = b"FCAST01\n"
#: Deviation reported for a tensor that moved away from an all-zero reference.
INF_DEVIATION = math.inf
WEIGHT_TOL = 1e-12


def as_tensor(values, *, copy: bool = True) -> np.ndarray:
    """Validate ``values`` and return them as a read-only float64 array."""
    if copy:
        arr = np.array(values, dtype=np.float64, order="C")
    else:
        arr = np.ascontiguousarray(values, dtype=np.float64)
    if any(d <= 0 for d in arr.shape):
        raise InvalidTensorError(f"tensor dims must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidTensorError("tensor contains non-finite values")
    arr.flags.writeable = False
    return arr


class ParameterSet(Mapping[str, np.ndarray]):
    """Immutable ordered collection of named tensors.

    Iteration order is always lexicographic by name, independent of the
    order the entries were supplied in.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, object] | Iterable[tuple[str, object]] = (),
                 *, copy: bool = True):
        items = entries.items() if isinstance(entries, Mapping) else entries
        store: dict[str, np.ndarray] = {}
        for name, values in items:
            if not isinstance(name, str) or not name:
                raise InvalidTensorError(f"tensor names must be non-empty strings, got {name!r}")
            if name in store:
                raise InvalidTensorError(f"duplicate tensor name {name!r}")
            store[name] = as_tensor(values, copy=copy)
        self._entries = {k: store[k] for k in sorted(store)}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}:{tuple(v.shape)}" for k, v in self._entries.items())
        return f"ParameterSet({inner})"

    def __eq__(self, other) -> bool:
        """Exact (bitwise) equality of names, shapes and values."""
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self.names() == other.names() and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.values(), other.values())
        )

    __hash__ = None

    def names(self) -> list[str]:
        return list(self._entries)

    def schema(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._entries.items()}

    def numel(self) -> int:
        return sum(v.size for v in self._entries.values())

    def is_congruent(self, other: "ParameterSet") -> bool:
        return self.schema() == other.schema()

    def replace(self, updates: Mapping[str, object]) -> "ParameterSet":
        """Return a copy with some tensors swapped out (names must exist)."""
        for name, values in updates.items():
            if name not in self._entries:
                raise CongruenceError(f"unknown tensor {name!r}")
            if np.shape(values) != self._entries[name].shape:
                raise CongruenceError(f"shape mismatch for {name!r}")
        out = ParameterSet.__new__(ParameterSet)
        merged = dict(self._entries)
        merged.update({name: as_tensor(values) for name, values in updates.items()})
        out._entries = {k: merged[k] for k in sorted(merged)}
        return out


def check_congruent(a: ParameterSet, b: ParameterSet) -> None:
    if a.is_congruent(b):
        return
    sa, sb = a.schema(), b.schema()
    if sa.keys() != sb.keys():
        diff = sorted(set(sa) ^ set(sb))
        raise CongruenceError(f"tensor name sets differ: {diff[:5]}")
    bad = [k for k in sa if sa[k] != sb[k]]
    raise CongruenceError(f"shape mismatch for {bad[0]!r}: {sa[bad[0]]} vs {sb[bad[0]]}")


def _flat(t) -> np.ndarray:
    arr = np.ascontiguousarray(t, dtype=np.float64).reshape(-1)
    return arr


def l1_norm(t) -> float:
    """Sum of absolute values, accumulated in flat index order."""
    arr = _flat(t)
    if not np.isfinite(arr).all():
        raise InvalidTensorError("tensor contains non-finite values")
    return _kernels.l1_norm(arr)


def tensor_deviation(curr, prev) -> float:
    """Relative L1 change ``|curr - prev|_1 / |prev|_1``.

    Returns 0.0 for identical tensors and :data:`INF_DEVIATION` when ``prev``
    is all zeros but ``curr`` is not.
    """
    c, p = np.asarray(curr), np.asarray(prev)
    if c.shape != p.shape:
        raise CongruenceError(f"shape mismatch: {c.shape} vs {p.shape}")
    num, den = _kernels.deviation_norms(_flat(c), _flat(p))
    if den > 0.0:
        return num / den
    return 0.0 if num == 0.0 else INF_DEVIATION


@dataclass(frozen=True)
class DeviationProfile:
    round: int
    client_id: int
    devs: dict[str, float] = field(default_factory=dict)

    def values(self) -> list[float]:
        return [self.devs[k] for k in sorted(self.devs)]


def deviation_profile(curr: ParameterSet, prev: ParameterSet, round: int,
                      client_id: int) -> DeviationProfile:
    check_congruent(curr, prev)
    devs = {name: tensor_deviation(curr[name], prev[name]) for name in curr}
    return DeviationProfile(round=round, client_id=client_id, devs=devs)


def check_weights(weights: Sequence[float]) -> None:
    if any(not math.isfinite(w) or w < 0 for w in weights):
        raise NormalizationError(f"weights must be finite and non-negative: {list(weights)}")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise NormalizationError(f"weights sum to {total!r}, expected 1")


def weighted_average(sets: Sequence[ParameterSet], weights: Sequence[float]) -> ParameterSet:
    """Elementwise ``sum_k weights[k] * sets[k]``, accumulated in list order."""
    if not sets:
        raise CongruenceError("no parameter sets to average")
    if len(sets) != len(weights):
        raise NormalizationError(f"{len(sets)} sets but {len(weights)} weights")
    check_weights(weights)
    for s in sets[1:]:
        check_congruent(sets[0], s)
    out = {}
    for name, ref in sets[0].items():
        acc = np.zeros(ref.size, dtype=np.float64)
        for s, w in zip(sets, weights):
            _kernels.axpy(acc, _flat(s[name]), float(w))
        out[name] = acc.reshape(ref.shape)
    return ParameterSet(out, copy=False)


# -- binary frames -----------------------------------------------------------

def encode_frame(name: str, t: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    shape = t.shape
    head = struct.pack(f"<I{len(raw)}sI{len(shape)}I", len(raw), raw, len(shape), *shape)
    return head + np.ascontiguousarray(t, dtype="<f8").tobytes()


def encode_frames(params: Mapping[str, np.ndarray]) -> bytes:
    return b"".join(encode_frame(name, params[name]) for name in sorted(params))


def frame_size(t: np.ndarray, name: str) -> int:
    return 4 + len(name.encode("utf-8")) + 4 + 4 * t.ndim + 8 * t.size


def _read(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError("truncated tensor frame")
    return data


def decode_frames(data: bytes, count: int | None = None) -> tuple[dict[str, np.ndarray], int]:
    """Decode ``count`` frames (or all remaining) and return them with the bytes consumed."""
    buf = io.BytesIO(data)
    out: dict[str, np.ndarray] = {}
    while (count is None and buf.tell() < len(data)) or (count is not None and len(out) < count):
        (nlen,) = struct.unpack("<I", _read(buf, 4))
        name = _read(buf, nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", _read(buf, 4))
        shape = struct.unpack(f"<{rank}I", _read(buf, 4 * rank))
        numel = math.prod(shape)
        values = np.frombuffer(_read(buf, 8 * numel), dtype="<f8").astype(np.float64)
        if name in out:
            raise FormatError(f"duplicate frame {name!r}")
        out[name] = values.reshape(shape)
    names = list(out)
    if names != sorted(names):
        raise FormatError("frames are not in lexicographic order")
    return out, buf.tell()


def dumps(params: ParameterSet) -> bytes:
    return MAGIC + encode_frames(params)


def loads(data: bytes) -> ParameterSet:
    if not data.startswith(MAGIC):
        raise FormatError("bad checkpoint magic")
    frames, _ = decode_frames(data[len(MAGIC):])
    return ParameterSet(frames, copy=False)


def save(params: ParameterSet, path: str | Path) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> ParameterSet:
    return loads(Path(path).read_bytes())
