"""Which tensors a client transmits.

Strategies: send everything, a random fraction, the top/bottom half by
deviation, or everything on one side of a threshold. All of them return a
:class:`PartialUpdate` holding the client's unmodified tensor values.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, SelectionError
from .tensor_core import DeviationProfile, ParameterSet, decode_frames, encode_frames, frame_size

HEADER = struct.Struct("<IIQdI")


@dataclass(frozen=True)
class SelectionStats:
    total_tensors: int
    sent_tensors: int
    bytes_sent: int

    @property
    def saved_tensors(self) -> int:
        return self.total_tensors - self.sent_tensors

    @property
    def saving_ratio(self) -> float:
        if self.total_tensors == 0:
            return 0.0
        return 1.0 - self.sent_tensors / self.total_tensors


@dataclass
class PartialUpdate:
    client_id: int
    round: int
    sent: dict[str, np.ndarray] = field(default_factory=dict)
    n_k: int = 0
    train_loss: float = 0.0

    def names(self) -> list[str]:
        return sorted(self.sent)

    def encoded_size(self) -> int:
        return HEADER.size + sum(frame_size(t, name) for name, t in self.sent.items())

    def stats(self, total_tensors: int) -> SelectionStats:
        return SelectionStats(total_tensors, len(self.sent), self.encoded_size())

    def encode(self) -> bytes:
        head = HEADER.pack(self.client_id, self.round, self.n_k, float(self.train_loss), len(self.sent))
        return head + encode_frames(self.sent)

    @classmethod
    def decode(cls, data: bytes) -> "PartialUpdate":
        if len(data) < HEADER.size:
            raise FormatError("truncated partial update header")
        client_id, rnd, n_k, loss, count = HEADER.unpack_from(data)
        frames, used = decode_frames(data[HEADER.size:], count)
        if HEADER.size + used != len(data):
            raise FormatError("trailing bytes after partial update frames")
        return cls(client_id, rnd, frames, n_k, loss)


def _update(params: ParameterSet, names: Iterable[str], meta: Mapping) -> PartialUpdate:
    sent = {name: params[name] for name in sorted(names)}
    return PartialUpdate(sent=sent, **meta)


def _check_profile(params: ParameterSet, profile: DeviationProfile) -> None:
    missing = [n for n in params if n not in profile.devs]
    if missing:
        raise SelectionError(f"no deviation for tensors {missing[:5]}")
    extra = [n for n in profile.devs if n not in params]
    if extra:
        raise SelectionError(f"deviations for unknown tensors {extra[:5]}")


def select_send_all(params: ParameterSet, *, client_id: int = 0, round: int = 0,
                    n_k: int = 0, train_loss: float = 0.0) -> PartialUpdate:
    return _update(params, params, dict(client_id=client_id, round=round, n_k=n_k, train_loss=train_loss))


def random_count(fraction: float, total: int) -> int:
    """``round(fraction * total)`` with halves rounded up."""
    if not 0.0 <= fraction <= 1.0:
        raise SelectionError(f"fraction must be in [0, 1], got {fraction}")
    return min(total, int(math.floor(fraction * total + 0.5)))


def select_random(params: ParameterSet, fraction: float, seed: int, *, client_id: int = 0,
                  round: int = 0, n_k: int = 0, train_loss: float = 0.0) -> PartialUpdate:
    names = params.names()
    count = random_count(fraction, len(names))
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(len(names), size=count, replace=False) if count else []
    return _update(params, [names[i] for i in chosen],
                   dict(client_id=client_id, round=round, n_k=n_k, train_loss=train_loss))


def dp_names(devs: Mapping[str, float], mode: str) -> list[str]:
    """Top (``g``) or bottom (``l``) ``ceil(L/2)`` names by deviation."""
    if mode not in ("g", "l"):
        raise SelectionError(f"mode must be 'g' or 'l', got {mode!r}")
    ranked = sorted(devs, key=lambda n: (-devs[n], n))
    half = math.ceil(len(ranked) / 2)
    return ranked[:half] if mode == "g" else ranked[len(ranked) - half:]


def threshold_names(devs: Mapping[str, float], theta: float, mode: str) -> list[str]:
    """``g``: dev >= theta; ``l``: dev < theta."""
    if mode not in ("g", "l"):
        raise SelectionError(f"mode must be 'g' or 'l', got {mode!r}")
    if not theta >= 0:
        raise SelectionError(f"threshold must be >= 0, got {theta}")
    if mode == "g":
        return sorted(n for n, d in devs.items() if d >= theta)
    return sorted(n for n, d in devs.items() if d < theta)


def select_dp(params: ParameterSet, profile: DeviationProfile, mode: str, *, n_k: int = 0,
              train_loss: float = 0.0) -> PartialUpdate:
    _check_profile(params, profile)
    return _update(params, dp_names(profile.devs, mode),
                   dict(client_id=profile.client_id, round=profile.round, n_k=n_k, train_loss=train_loss))


def select_threshold(params: ParameterSet, profile: DeviationProfile, theta: float, mode: str, *,
                     n_k: int = 0, train_loss: float = 0.0) -> PartialUpdate:
    _check_profile(params, profile)
    return _update(params, threshold_names(profile.devs, theta, mode),
                   dict(client_id=profile.client_id, round=profile.round, n_k=n_k, train_loss=train_loss))
