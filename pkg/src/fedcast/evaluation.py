"""Translation-quality metrics and deviation histogram export."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor_core import DeviationProfile


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    @property
    def scaled(self) -> float:
        return 100.0 * self.score


def _ngrams(seq: Sequence[int], n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu_stats(hypotheses, references, max_order: int) -> tuple[list[int], list[int], int, int]:
    """Corpus-level clipped matches and totals per order, plus both lengths."""
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]],
                max_order: int = 4) -> BleuScore:
    """Corpus BLEU with exponential smoothing of zero-match orders.

    The k-th order with no matches gets a numerator of ``1 / 2**k``, as in
    sacreBLEU's ``smooth:exp``. ``max_order`` is clamped to the longest
    hypothesis so short corpora still have a defined score.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    order = min(max_order, max(len(h) for h in hypotheses))
    if order == 0:
        return BleuScore(0.0, (), 0.0, 0, sum(len(r) for r in references))
    matches, totals, hyp_len, ref_len = bleu_stats(hypotheses, references, order)
    precisions = []
    smooth = 1.0
    for m, t in zip(matches, totals):
        if m == 0:
            smooth *= 2.0
            precisions.append(1.0 / (smooth * t))
        else:
            precisions.append(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / order)
    return BleuScore(min(score, 1.0), tuple(precisions), bp, hyp_len, ref_len)


def token_accuracy(hypotheses, references) -> float:
    """Fraction of positions where hypothesis and reference agree."""
    hyp = [list(h) for h in hypotheses]
    ref = [list(r) for r in references]
    if len(hyp) != len(ref):
        raise ValueError("corpus lengths differ")
    total = correct = 0
    for h, r in zip(hyp, ref):
        if len(h) != len(r):
            raise ValueError("sequence lengths differ")
        total += len(h)
        correct += sum(a == b for a, b in zip(h, r))
    return correct / total if total else 0.0


def token_accuracy_array(hyp: np.ndarray, ref: np.ndarray) -> float:
    if hyp.shape != ref.shape:
        raise ValueError("sequence lengths differ")
    return float((hyp == ref).mean()) if hyp.size else 0.0


# -- histograms --------------------------------------------------------------

def format_dev(dev: float) -> str:
    if math.isinf(dev):
        return "inf"
    return format(dev, ".17g")


def histogram_path(directory: str | Path, round: int, client_id: int) -> Path:
    return Path(directory) / f"hist_r{round}_c{client_id}.tsv"


def export_histograms(profiles: Sequence[DeviationProfile], directory: str | Path) -> list[Path]:
    """Write one ``tensor_name<TAB>dev`` file per (round, client)."""
    if not profiles:
        raise ValueError("no profiles to export")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for prof in profiles:
        path = histogram_path(directory, prof.round, prof.client_id)
        rows = ["tensor_name\tdev\n"]
        rows += [f"{name}\t{format_dev(prof.devs[name])}\n" for name in sorted(prof.devs)]
        path.write_text("".join(rows), encoding="utf-8")
        paths.append(path)
    return paths


def read_histogram(path: str | Path) -> dict[str, float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "tensor_name\tdev":
        raise ValueError(f"{path}: missing histogram header")
    out = {}
    for line in lines[1:]:
        name, dev = line.split("\t")
        out[name] = float(dev)
    return out
