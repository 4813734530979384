"""Synthetic multi-direction "translation" data.

A direction is a token substitution (a permutation of the alphabet),
optionally applied to the reversed source. Each pair also carries its
direction id, which the engine receives as a one-hot tag in the same way a
multilingual model receives a target-language token.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import FLConfig
from .seeding import make_rng


@dataclass(frozen=True)
class DirectionSpec:
    direction_id: int
    substitution: tuple[int, ...]
    reversed: bool

    @property
    def vocab_size(self) -> int:
        return len(self.substitution)

    def translate(self, src: np.ndarray) -> np.ndarray:
        """Apply the direction rule to an ``(n, S)`` or ``(S,)`` token array."""
        src = np.asarray(src)
        table = np.asarray(self.substitution)
        return table[src[..., ::-1]] if self.reversed else table[src]


@dataclass(frozen=True)
class TranslationPair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]
    direction: int = 0


def make_direction(master_seed: int, direction_id: int, vocab_size: int = 16) -> DirectionSpec:
    """Seeded Fisher-Yates substitution plus a fair coin for reversal."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    rng = make_rng(master_seed, "direction", direction_id)
    perm = list(range(vocab_size))
    for i in range(vocab_size - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    rev = bool(rng.integers(0, 2))
    return DirectionSpec(direction_id, tuple(perm), rev)


class Dataset:
    """Array-backed list of translation pairs."""

    def __init__(self, src: np.ndarray, tgt: np.ndarray, direction: np.ndarray):
        self.src = np.asarray(src, dtype=np.int64)
        self.tgt = np.asarray(tgt, dtype=np.int64)
        self.direction = np.asarray(direction, dtype=np.int64)
        if self.src.shape != self.tgt.shape or self.src.ndim != 2:
            raise ValueError(f"src/tgt shapes differ or are not 2-D: {self.src.shape} {self.tgt.shape}")
        if self.direction.shape != (len(self.src),):
            raise ValueError("one direction id per pair required")

    @classmethod
    def from_pairs(cls, pairs: Sequence[TranslationPair], seq_len: int | None = None) -> "Dataset":
        if not pairs:
            width = seq_len or 0
            return cls(np.zeros((0, width), int), np.zeros((0, width), int), np.zeros(0, int))
        return cls(np.array([p.src for p in pairs]), np.array([p.tgt for p in pairs]),
                   np.array([p.direction for p in pairs]))

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        return cls(np.concatenate([p.src for p in parts]), np.concatenate([p.tgt for p in parts]),
                   np.concatenate([p.direction for p in parts]))

    def __len__(self) -> int:
        return len(self.src)

    def __iter__(self) -> Iterator[TranslationPair]:
        for s, t, d in zip(self.src, self.tgt, self.direction):
            yield TranslationPair(tuple(int(x) for x in s), tuple(int(x) for x in t), int(d))

    def __getitem__(self, idx) -> "Dataset":
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Dataset(self.src[idx], self.tgt[idx], self.direction[idx])

    def pairs(self) -> list[TranslationPair]:
        return list(self)

    def digest(self) -> bytes:
        return self.src.tobytes() + self.tgt.tobytes() + self.direction.tobytes()


def sample_pairs(spec: DirectionSpec, count: int, seed: int, seq_len: int = 8) -> list[TranslationPair]:
    return _sample(spec, count, np.random.Generator(np.random.PCG64(seed)), seq_len).pairs()


def _sample(spec: DirectionSpec, count: int, rng: np.random.Generator, seq_len: int) -> Dataset:
    if count < 0:
        raise ValueError("count must be >= 0")
    src = rng.integers(0, spec.vocab_size, size=(count, seq_len))
    return Dataset(src, spec.translate(src), np.full(count, spec.direction_id))


@dataclass
class DataPartition:
    mode: str
    directions: list[DirectionSpec]
    train: list[Dataset]
    validation: Dataset
    test: Dataset

    @property
    def n_k(self) -> list[int]:
        return [len(d) for d in self.train]

    @property
    def n(self) -> int:
        return sum(self.n_k)

    def weights(self) -> list[float]:
        n = self.n
        return [nk / n for nk in self.n_k]


def build_partition(config: FLConfig) -> DataPartition:
    """Split training data across clients; validation/test cover every direction."""
    config.validate()
    task, K, seed = config.task, config.num_clients, config.seed
    dirs = [make_direction(seed, d, task.vocab_size) for d in range(K)]
    train = []
    for k, size in enumerate(task.client_sizes(K)):
        rng = make_rng(seed, "train", k)
        if config.data_mode == "non_iid":
            train.append(_sample(dirs[k], size, rng, task.seq_len))
        else:
            which = rng.integers(0, K, size=size)
            src = rng.integers(0, task.vocab_size, size=(size, task.seq_len))
            tgt = np.empty_like(src)
            for d in dirs:
                mask = which == d.direction_id
                tgt[mask] = d.translate(src[mask])
            train.append(Dataset(src, tgt, which))
    val = Dataset.concat([_sample(d, task.val_per_direction, make_rng(seed, "val", d.direction_id),
                                  task.seq_len) for d in dirs])
    test = Dataset.concat([_sample(d, task.test_per_direction, make_rng(seed, "test", d.direction_id),
                                   task.seq_len) for d in dirs])
    return DataPartition(config.data_mode, dirs, train, val, test)


def dump_tsv(data: Dataset | Sequence[TranslationPair], path: str | Path) -> None:
    """One pair per line: ``src<TAB>tgt<TAB>direction``, tokens space separated."""
    pairs = data if isinstance(data, Dataset) else Dataset.from_pairs(list(data))
    lines = []
    for p in pairs:
        lines.append(f"{' '.join(map(str, p.src))}\t{' '.join(map(str, p.tgt))}\t{p.direction}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_tsv(path: str | Path, direction: int = 0) -> list[TranslationPair]:
    """Inverse of :func:`dump_tsv`; two-column files get ``direction`` as their tag."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated columns")
        src = tuple(int(t) for t in cols[0].split())
        tgt = tuple(int(t) for t in cols[1].split())
        if len(src) != len(tgt):
            raise ValueError(f"{path}:{lineno}: src and tgt lengths differ")
        pairs.append(TranslationPair(src, tgt, int(cols[2]) if len(cols) == 3 else direction))
    return pairs
