"""Feedforward per-position sequence mapper with hand-written gradients.

The input is the one-hot source sequence (``S*V`` columns) followed by a
second copy placed in the block of its direction tag, the way a multilingual
model is conditioned on the target language. ``depth`` affine layers with
tanh between them produce ``S*V`` logits, read as ``S`` independent
softmaxes over the vocabulary.

Each weight matrix is stored as ``row_blocks`` separate named tensors
(``layer{i}.w.block{j}``) so that tensor-level selection has something to
choose between; biases are ``layer{i}.b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .errors import CongruenceError
from .synth_task import Dataset, TranslationPair
from .tensor_core import ParameterSet


@dataclass(frozen=True)
class LossReport:
    loss: float
    count: int = 0

    def __float__(self) -> float:
        return self.loss


def weight_name(layer: int, block: int) -> str:
    return f"layer{layer}.w.block{block}"


def bias_name(layer: int) -> str:
    return f"layer{layer}.b"


def _as_dataset(batch) -> Dataset:
    if isinstance(batch, Dataset):
        return batch
    return Dataset.from_pairs(list(batch))


class Engine:
    """Stateless operations on parameter sets of one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.config.validate()
        self._dims = self.config.layer_dims()
        self._splits = [np.array_split(np.arange(out), self.config.row_blocks) for out, _ in self._dims]
        self._schema = {}
        for i, (out, fan_in) in enumerate(self._dims):
            for j, rows in enumerate(self._splits[i]):
                self._schema[weight_name(i, j)] = (len(rows), fan_in)
            self._schema[bias_name(i)] = (out,)
        self._schema = dict(sorted(self._schema.items()))

    @property
    def schema(self) -> dict[str, tuple[int, ...]]:
        return dict(self._schema)

    @property
    def num_tensors(self) -> int:
        return len(self._schema)

    def check(self, params: ParameterSet) -> None:
        if params.schema() != self._schema:
            raise CongruenceError("parameter set does not match the engine schema")

    # -- parameter layout ------------------------------------------------------
    def init_model(self, seed: int) -> ParameterSet:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.Generator(np.random.PCG64(seed))
        layers = []
        for out, fan_in in self._dims:
            a = math.sqrt(6.0 / (fan_in + out))
            layers.append((rng.uniform(-a, a, size=(out, fan_in)), np.zeros(out)))
        return self.pack(layers)

    def unpack(self, params: ParameterSet) -> list[tuple[np.ndarray, np.ndarray]]:
        """Full (writable) ``(W, b)`` per layer, assembled from the row blocks."""
        self.check(params)
        layers = []
        for i in range(len(self._dims)):
            blocks = [params[weight_name(i, j)] for j in range(self.config.row_blocks)]
            layers.append((np.vstack(blocks), np.array(params[bias_name(i)])))
        return layers

    def pack(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> ParameterSet:
        entries = {}
        for i, (w, b) in enumerate(layers):
            for j, rows in enumerate(self._splits[i]):
                entries[weight_name(i, j)] = w[rows[0]:rows[-1] + 1]
            entries[bias_name(i)] = b
        return ParameterSet(entries)

    # -- forward / backward ----------------------------------------------------
    def active_columns(self, data: Dataset) -> np.ndarray:
        """Indices of the ``2*S`` nonzero input columns of each pair."""
        cfg = self.config
        if np.any((data.direction < 0) | (data.direction >= cfg.num_tags)):
            raise ValueError(f"direction ids must lie in [0, {cfg.num_tags})")
        shared = np.arange(cfg.seq_len) * cfg.vocab_size + data.src
        tagged = shared + (1 + data.direction[:, None]) * cfg.output_width
        return np.concatenate([shared, tagged], axis=1)

    def encode(self, data: Dataset) -> np.ndarray:
        """Dense one-hot input matrix ``(n, input_width)``."""
        n = len(data)
        x = np.zeros((n, self.config.input_width))
        if n:
            x[np.arange(n)[:, None], self.active_columns(data)] = 1.0
        return x

    def _logits(self, layers, x):
        acts = [x]
        h = x
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            a = h @ w.T + b
            h = a if i == last else np.tanh(a)
            acts.append(h)
        return acts

    def _loss_and_dlogits(self, logits: np.ndarray, tgt: np.ndarray, need_grad: bool):
        cfg = self.config
        n = logits.shape[0]
        z = logits.reshape(n, cfg.seq_len, cfg.vocab_size)
        z = z - z.max(axis=2, keepdims=True)
        ez = np.exp(z)
        denom = ez.sum(axis=2, keepdims=True)
        logp = z - np.log(denom)
        picked = np.take_along_axis(logp, tgt[:, :, None], axis=2)
        loss = -float(picked.sum()) / (n * cfg.seq_len)
        if not need_grad:
            return loss, None
        d = ez / denom
        np.put_along_axis(d, tgt[:, :, None], np.take_along_axis(d, tgt[:, :, None], axis=2) - 1.0, axis=2)
        d /= n * cfg.seq_len
        return loss, d.reshape(n, -1)

    def _grads(self, layers, x, tgt):
        acts = self._logits(layers, x)
        loss, delta = self._loss_and_dlogits(acts[-1], tgt, True)
        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            if i:
                delta = (delta @ w) * (1.0 - acts[i] ** 2)
        return loss, grads

    def forward_loss(self, params: ParameterSet, batch) -> LossReport:
        """Mean cross-entropy over positions and batch items."""
        data = _as_dataset(batch)
        if len(data) == 0:
            raise ValueError("empty batch")
        layers = self.unpack(params)
        acts = self._logits(layers, self.encode(data))
        loss, _ = self._loss_and_dlogits(acts[-1], data.tgt, False)
        return LossReport(loss, len(data))

    def backward(self, params: ParameterSet, batch) -> ParameterSet:
        """Exact gradient of :meth:`forward_loss`, congruent to ``params``."""
        data = _as_dataset(batch)
        if len(data) == 0:
            raise ValueError("empty batch")
        _, grads = self._grads(self.unpack(params), self.encode(data), data.tgt)
        return self.pack(grads)

    def logits(self, params: ParameterSet, data: Dataset) -> np.ndarray:
        """Per-position logits, shape ``(n, S, V)``."""
        acts = self._logits(self.unpack(params), self.encode(data))
        return acts[-1].reshape(len(data), self.config.seq_len, self.config.vocab_size)

    # -- training / decoding ---------------------------------------------------
    def local_train(self, params: ParameterSet, dataset: Dataset, epochs: int = 1, lr: float = 0.05,
                    seed: int = 0, batch_size: int = 2) -> tuple[ParameterSet, LossReport]:
        """Minibatch SGD; returns final params and the mean loss of the last epoch."""
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        if epochs < 1 or lr < 0:
            raise ValueError("epochs must be >= 1 and lr >= 0")
        rng = np.random.Generator(np.random.PCG64(seed))
        layers = self.unpack(params)
        # the first layer is kept transposed so one-hot inputs become row gathers
        emb = np.ascontiguousarray(layers[0][0].T)
        b0 = layers[0][1]
        rest = layers[1:]
        cols_all, y_all = self.active_columns(dataset), dataset.tgt
        n = len(dataset)
        epoch_loss = 0.0
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                cols = cols_all[idx]
                a = emb[cols].sum(axis=1) + b0
                acts = [np.tanh(a) if rest else a]
                for i, (w, b) in enumerate(rest):
                    a = acts[-1] @ w.T + b
                    acts.append(a if i == len(rest) - 1 else np.tanh(a))
                loss, delta = self._loss_and_dlogits(acts[-1], y_all[idx], True)
                total += loss * len(idx)
                for i in range(len(rest) - 1, -1, -1):
                    w, b = rest[i]
                    gw, gb = delta.T @ acts[i], delta.sum(axis=0)
                    delta = (delta @ w) * (1.0 - acts[i] ** 2)
                    if lr:
                        w -= lr * gw
                        b -= lr * gb
                if lr:
                    step = lr * delta
                    for row, c in zip(step, cols):
                        emb[c] -= row
                    b0 -= step.sum(axis=0)
            epoch_loss = total / n
        layers[0] = (emb.T, b0)
        return self.pack(layers), LossReport(epoch_loss, n)

    def decode(self, params: ParameterSet, data: Dataset) -> np.ndarray:
        """Greedy argmax per position; ties go to the lowest token id."""
        return np.argmax(self.logits(params, data), axis=2)

    def greedy_decode(self, params: ParameterSet, src: Sequence[int], direction: int = 0) -> tuple[int, ...]:
        pair = TranslationPair(tuple(src), tuple(src), direction)
        return tuple(int(t) for t in self.decode(params, Dataset.from_pairs([pair]))[0])
