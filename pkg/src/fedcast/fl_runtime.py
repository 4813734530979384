"""Round loop: broadcast, local training, selection, partial aggregation, meta step.

Client work inside a round is independent and may run on a thread pool;
aggregation always accumulates clients in ascending id order, and every
random stream is derived from ``(seed, purpose, round, client)``, so results
do not depend on scheduling.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .config import FLConfig, StrategyKind
from .errors import CongruenceError, FedcastError
from .evaluation import corpus_bleu, token_accuracy_array
from .meta_threshold import (MetaEvalContext, MetaModule, calibrate, estimate_dloss_dtheta,
                             eval_val_loss, init_meta, meta_forward, meta_update, sample_val_batches)
from .model_engine import Engine
from .seeding import derive_seed
from .selection import (PartialUpdate, SelectionStats, select_dp, select_random, select_send_all,
                        select_threshold)
from .synth_task import DataPartition, build_partition
from .tensor_core import DeviationProfile, ParameterSet, check_weights, deviation_profile

log = logging.getLogger(__name__)

STAGES = ("local", "select", "maml", "send", "agg")


def aggregate_partial(partials: Sequence[PartialUpdate], prev_global: ParameterSet,
                      weights: Sequence[float], policy: str = "server_prev") -> ParameterSet:
    """FedAvg over partial updates.

    ``server_prev``: a client that did not send a tensor contributes the
    previous global value instead. ``reweight_senders``: the tensor is the
    weighted mean over the clients that sent it. Either way a tensor nobody
    sent keeps its previous global value exactly.
    """
    if not partials:
        raise FedcastError("no partial updates to aggregate")
    if len(partials) != len(weights):
        raise FedcastError(f"{len(partials)} updates but {len(weights)} weights")
    if policy not in ("server_prev", "reweight_senders"):
        raise FedcastError(f"unknown fallback policy {policy!r}")
    check_weights(weights)
    order = sorted(range(len(partials)), key=lambda i: partials[i].client_id)
    schema = prev_global.schema()
    for p in partials:
        for name, t in p.sent.items():
            if name not in schema:
                raise CongruenceError(f"client {p.client_id} sent unknown tensor {name!r}")
            if tuple(t.shape) != schema[name]:
                raise CongruenceError(f"client {p.client_id} sent {name!r} with shape {t.shape}")
    out = {}
    for name, prev in prev_global.items():
        senders = [i for i in order if name in partials[i].sent]
        if not senders:
            out[name] = prev
            continue
        acc = np.zeros(prev.size)
        prev_flat = prev.reshape(-1)
        if policy == "server_prev" or len(senders) == len(order):
            # with every client sending, renormalizing is the identity; skip it to keep exact FedAvg bits
            for i in order:
                src = partials[i].sent.get(name)
                flat = prev_flat if src is None else np.ascontiguousarray(src).reshape(-1)
                _kernels.axpy(acc, flat, float(weights[i]))
        else:
            total = sum(weights[i] for i in senders)
            if total <= 0:
                out[name] = prev
                continue
            for i in senders:
                _kernels.axpy(acc, np.ascontiguousarray(partials[i].sent[name]).reshape(-1),
                              float(weights[i]) / total)
        out[name] = acc.reshape(prev.shape)
    return ParameterSet(out, copy=False)


@dataclass
class RoundRecord:
    round: int
    strategy: str
    mode: str
    warm: bool
    train_losses: list[float]
    theta: float | None
    l_val: float
    bleu: float
    token_acc: float
    saving_mean: float
    bytes_round: int
    sent_per_client: list[int]
    timings: dict[str, float]
    dloss_dtheta: float | None = None
    meta_l_val: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CommLedger:
    total_tensors: int
    stats: list[list[SelectionStats]] = field(default_factory=list)
    timings: list[dict[str, float]] = field(default_factory=list)

    def extended(self, stats: list[SelectionStats], timings: dict[str, float]) -> "CommLedger":
        return CommLedger(self.total_tensors, self.stats + [stats], self.timings + [timings])

    def cumulative_bytes(self) -> list[int]:
        out, acc = [], 0
        for row in self.stats:
            acc += sum(s.bytes_sent for s in row)
            out.append(acc)
        return out

    def cumulative_sent(self) -> list[int]:
        out, acc = [], 0
        for row in self.stats:
            acc += sum(s.sent_tensors for s in row)
            out.append(acc)
        return out

    def stage_totals(self) -> dict[str, float]:
        return {s: sum(t[s] for t in self.timings) for s in STAGES}

    def to_dict(self) -> dict:
        return {
            "total_tensors": self.total_tensors,
            "rounds": [
                {"clients": [dict(sent=s.sent_tensors, saved=s.saved_tensors, bytes=s.bytes_sent,
                                  saving_ratio=s.saving_ratio) for s in row], "timings": t}
                for row, t in zip(self.stats, self.timings)
            ],
            "cumulative_bytes": self.cumulative_bytes(),
        }


@dataclass
class FLState:
    round: int
    server: ParameterSet
    references: list[ParameterSet]
    meta: MetaModule | None
    ledger: CommLedger
    profiles: list[DeviationProfile] = field(default_factory=list)


@dataclass
class ExperimentResult:
    config: FLConfig
    records: list[RoundRecord]
    ledger: CommLedger
    final: ParameterSet
    profiles: list[DeviationProfile]


@dataclass
class _ClientOutput:
    params: ParameterSet
    loss: float
    profile: DeviationProfile


class Simulator:
    """Holds the data partition and engine for one configuration."""

    def __init__(self, config: FLConfig, partition: DataPartition | None = None):
        self.config = config.validate()
        self.engine = Engine(config.model_config())
        self.partition = partition or build_partition(config)
        self.weights = self.partition.weights()

    def seed(self, label: str, *keys: int) -> int:
        return derive_seed(self.config.seed, label, *keys)

    def init_state(self) -> FLState:
        server = self.engine.init_model(self.seed("init"))
        meta = None
        if self.config.strategy is StrategyKind.METASEND:
            meta = init_meta(self.config.num_clients, self.config.meta, self.seed("meta_init"))
        refs = [server] * self.config.num_clients
        return FLState(0, server, refs, meta, CommLedger(self.engine.num_tensors))

    # -- client side -----------------------------------------------------------
    def _client_step(self, r: int, k: int, server: ParameterSet, reference: ParameterSet) -> _ClientOutput:
        cfg = self.config
        params, loss = self.engine.local_train(server, self.partition.train[k], cfg.local_epochs, cfg.lr,
                                               seed=self.seed("train", r, k), batch_size=cfg.batch_size)
        ref = server if cfg.deviation_reference == "global_prev" else reference
        return _ClientOutput(params, loss.loss, deviation_profile(params, ref, r, k))

    def _select(self, r: int, k: int, out: _ClientOutput, theta: float | None, warm: bool) -> PartialUpdate:
        cfg = self.config
        meta = dict(n_k=self.partition.n_k[k], train_loss=out.loss)
        if warm or cfg.strategy is StrategyKind.SEND_ALL:
            return select_send_all(out.params, client_id=k, round=r, **meta)
        if cfg.strategy is StrategyKind.RAND_SEND:
            return select_random(out.params, cfg.rand_fraction, self.seed("randsend", r, k),
                                 client_id=k, round=r, **meta)
        if cfg.strategy is StrategyKind.DP:
            return select_dp(out.params, out.profile, cfg.mode, **meta)
        return select_threshold(out.params, out.profile, theta, cfg.mode, **meta)

    def _map(self, fn, items):
        if self.config.parallel_clients > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallel_clients) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    # -- one round -------------------------------------------------------------
    def run_round(self, state: FLState) -> tuple[FLState, RoundRecord]:
        cfg = self.config
        r = state.round + 1
        K = cfg.num_clients
        warm = r <= cfg.warm_start_rounds
        timings = {}

        t0 = time.perf_counter()
        outs = self._map(lambda k: self._client_step(r, k, state.server, state.references[k]), range(K))
        timings["local"] = time.perf_counter() - t0
        losses = [o.loss for o in outs]

        t0 = time.perf_counter()
        theta = None
        if not warm and cfg.strategy.uses_threshold:
            if cfg.strategy is StrategyKind.METASEND:
                if cfg.meta.calibrate_init and not state.meta.calibrated:
                    pooled = [d for o in outs for d in o.profile.devs.values() if math.isfinite(d)]
                    if pooled:
                        state = replace(state, meta=calibrate(state.meta, losses, float(np.median(pooled))))
                theta = meta_forward(state.meta, losses)
            elif cfg.strategy is StrategyKind.FIXED_THRESHOLD:
                theta = cfg.fixed_theta
            else:
                rng = np.random.Generator(np.random.PCG64(self.seed("theta", r)))
                theta = float(rng.uniform(0.0, 1.0))
        t_theta = time.perf_counter() - t0

        t0 = time.perf_counter()
        partials = self._map(lambda k: self._select(r, k, outs[k], theta, warm), range(K))
        timings["select"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        payloads = [p.encode() for p in partials]
        received = [PartialUpdate.decode(b) for b in payloads]
        timings["send"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        server = aggregate_partial(received, state.server, self.weights, cfg.fallback)
        timings["agg"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        meta, dtheta, meta_l_val = state.meta, None, None
        if theta is not None and cfg.strategy is StrategyKind.METASEND:
            batches = sample_val_batches(self.partition.validation, cfg.meta.batches,
                                         cfg.meta.batch_size, self.seed("meta_batches", r))
            ctx = MetaEvalContext(
                engine=self.engine, client_params=[o.params for o in outs],
                profiles=[o.profile for o in outs], n_k=list(self.partition.n_k), train_losses=losses,
                aggregate=lambda ps: aggregate_partial(ps, state.server, self.weights, cfg.fallback),
                batches=batches, mode=cfg.mode,
            )
            dtheta = estimate_dloss_dtheta(ctx, theta, cfg.meta.eps_fd, cfg.meta.theta_max)
            meta_l_val = eval_val_loss(self.engine, server, batches).loss
            meta = meta_update(state.meta, losses, dtheta)
        timings["maml"] = t_theta + time.perf_counter() - t0

        stats = [p.stats(self.engine.num_tensors) for p in received]
        for s, b in zip(stats, payloads):
            assert s.bytes_sent == len(b)
        ledger = state.ledger.extended(stats, timings)

        part = self.partition
        l_val = self.engine.forward_loss(server, part.validation).loss
        hyp = self.engine.decode(server, part.test)
        bleu = corpus_bleu(hyp.tolist(), part.test.tgt.tolist()).score
        record = RoundRecord(
            round=r, strategy=cfg.strategy.value, mode=cfg.mode if cfg.strategy.uses_mode else "",
            warm=warm, train_losses=losses, theta=theta, l_val=l_val, bleu=bleu,
            token_acc=token_accuracy_array(hyp, part.test.tgt),
            saving_mean=float(np.mean([s.saving_ratio for s in stats])),
            bytes_round=sum(s.bytes_sent for s in stats),
            sent_per_client=[s.sent_tensors for s in stats], timings=timings,
            dloss_dtheta=dtheta, meta_l_val=meta_l_val,
        )
        profiles = [o.profile for o in outs]
        if cfg.deviation_reference == "last_sent":
            refs = [state.references[k].replace(p.sent) for k, p in enumerate(partials)]
        else:
            refs = [o.params for o in outs]
        return FLState(r, server, refs, meta, ledger, profiles), record

    def run(self) -> ExperimentResult:
        state = self.init_state()
        records, profiles = [], []
        for _ in range(self.config.rounds):
            state, rec = self.run_round(state)
            records.append(rec)
            profiles.extend(state.profiles)
            log.info("round %d l_val=%.4f bleu=%.2f saving=%.3f theta=%s", rec.round, rec.l_val,
                     100 * rec.bleu, rec.saving_mean, rec.theta)
        return ExperimentResult(self.config, records, state.ledger, state.server, profiles)


def run_experiment(config: FLConfig) -> ExperimentResult:
    return Simulator(config).run()
