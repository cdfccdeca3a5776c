"""Almost-everywhere reliable dissemination over walk tokens.

Two protocols: the direct one (every node floods gamma*n*ceil(log n)
tokens carrying its payload through the walk protocol) and the
stage-duplication one (start with lam tokens per node; each stage applies
an aggregate overcapacity discard, duplicates every kept token twice with
the step counter reset, and runs one walk phase; stages run until the
per-source budget reaches n log n). Receivers decode each source by
strict majority over the receipts carrying that source id; ties and
empty receipt sets decode to `undecided`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .walk import (TokenBatch, TraversalLog, WalkContext, _draw_out_slots,
                   _group_rank, create_tokens, run_phase, run_walk_protocol)

UNDECIDED = np.iinfo(np.int32).min


@dataclass
class StagePlan:
    lam: int
    delta: float
    num_stages: int          # i*, smallest i with lam * 2^i >= n * ceil(log n)

    def total(self, i: int) -> float:
        return self.lam * (2 * (1 + self.delta)) ** i

    def keep_bound(self, i: int) -> int:
        """Aggregate overcapacity bound applied at the start of stage i."""
        return max(1, int(math.floor((1 + self.delta) * self.total(i - 1))))


def make_stage_plan(config) -> StagePlan:
    lam = config.lam_value
    target = config.n * config.log_n
    i_star = 0
    while lam * 2**i_star < target:
        i_star += 1
    return StagePlan(lam=lam, delta=config.delta_value, num_stages=max(1, i_star))


@dataclass
class DecodeResult:
    decoded: np.ndarray        # (n, n) payload per (receiver, source), UNDECIDED sentinel
    receipt_counts: np.ndarray  # (n, n) number of receipts per pair


def majority_decode(receipts: list) -> object | None:
    """Strict-majority payload of one source's receipt list; None = undecided."""
    if not receipts:
        return None
    values, counts = np.unique(np.asarray(receipts), return_counts=True)
    best = int(np.argmax(counts))
    if 2 * counts[best] > len(receipts):
        return values[best].item()
    return None


def decode_received(endpoints: TokenBatch, n: int,
                    mask: np.ndarray | None = None) -> DecodeResult:
    """Vectorized per-(receiver, source) strict-majority decode."""
    if mask is None:
        mask = np.ones(len(endpoints), dtype=bool)
    holder = endpoints.holder[mask].astype(np.int64)
    src = endpoints.claimed_src[mask].astype(np.int64)
    payload = endpoints.payload[mask].astype(np.int64)
    decoded = np.full((n, n), UNDECIDED, dtype=np.int64)
    counts_mat = np.zeros((n, n), dtype=np.int64)
    if len(holder) == 0:
        return DecodeResult(decoded, counts_mat)
    pair = holder * n + src
    pmin = payload.min()
    pspan = int(payload.max() - pmin) + 1
    triple = pair * pspan + (payload - pmin)
    tvals, tcounts = np.unique(triple, return_counts=True)
    tpair = tvals // pspan
    tpayload = tvals % pspan + pmin
    # order triples by (pair, count) so the last entry of each pair group
    # is a maximal-count payload; strict majority checked against totals
    order = np.lexsort((tcounts, tpair))
    sp, sc, spay = tpair[order], tcounts[order], tpayload[order]
    last = np.r_[sp[1:] != sp[:-1], True]
    pair_ids = sp[last]
    best_counts = sc[last]
    best_payloads = spay[last]
    # receipts per pair
    upair, ucounts = np.unique(pair, return_counts=True)
    counts_mat[(upair // n), (upair % n)] = ucounts
    pair_total = counts_mat[(pair_ids // n), (pair_ids % n)]
    is_major = 2 * best_counts > pair_total
    rcv = (pair_ids // n)[is_major]
    s = (pair_ids % n)[is_major]
    decoded[rcv, s] = best_payloads[is_major]
    return DecodeResult(decoded, counts_mat)


def decode_correctness(decode: DecodeResult, payloads: np.ndarray,
                       byz_mask: np.ndarray, source_frac: float = 0.95) -> dict:
    """How many honest receivers decode at least source_frac of honest sources."""
    n = len(payloads)
    honest = np.flatnonzero(~byz_mask)
    truth = np.asarray(payloads, dtype=np.int64)
    correct = decode.decoded[np.ix_(honest, honest)] == truth[honest][np.newaxis, :]
    per_receiver = correct.sum(axis=1)
    good_receivers = int(np.sum(per_receiver >= source_frac * len(honest)))
    return {
        "good_receivers": good_receivers,
        "honest": len(honest),
        "per_receiver_correct": per_receiver,
        "mean_correct_fraction": float(per_receiver.mean() / len(honest)),
    }


@dataclass
class AeridResult:
    endpoints: TokenBatch
    records: TraversalLog | None
    rounds: int
    stage_good_max: list        # per stage: max per-source good count after duplication
    plan: StagePlan | None
    ctx: WalkContext


def aerid_v1(ctx: WalkContext, payloads: np.ndarray, adversary=None,
             ranks: np.ndarray | None = None, record: bool = False) -> AeridResult:
    res = run_walk_protocol(ctx, total=ctx.config.direct_total, adversary=adversary,
                            payloads=np.asarray(payloads, dtype=np.int32),
                            ranks=ranks, record=record)
    return AeridResult(endpoints=res.endpoints, records=res.records,
                       rounds=res.rounds, stage_good_max=[], plan=None, ctx=ctx)


def _duplicate_stage(ctx: WalkContext, tokens: TokenBatch, stage: int,
                     keep_bound: int) -> TokenBatch:
    """Overcapacity discard then twofold duplication at every holder."""
    # keep the first keep_bound tokens per holder, in arrival (qseq) order
    order = np.lexsort((tokens.qseq, tokens.holder))
    rank = _group_rank(tokens.holder[order])
    keep_sorted = rank < keep_bound
    kept_idx = order[keep_sorted]
    kept_idx.sort()  # preserve array order for determinism
    dup = np.repeat(kept_idx, 2)
    k = len(dup)
    holders = tokens.holder[dup].astype(np.int32)
    # fresh per-holder counters: (stage << 32) | per-holder index
    horder = np.argsort(holders, kind="stable")
    per_holder = np.empty(k, dtype=np.int64)
    per_holder[horder] = _group_rank(holders[horder])
    batch = TokenBatch(
        tid=(ctx.next_tid + np.arange(k)).astype(np.int32),
        origin=tokens.origin[dup].copy(),
        claimed_src=tokens.claimed_src[dup].copy(),
        rank=tokens.rank[dup].copy(),
        counter=(np.int64(stage) << np.int64(32)) + per_holder,
        stage=np.full(k, stage, dtype=np.int32),
        step=np.zeros(k, dtype=np.int32),
        payload=tokens.payload[dup].copy(),
        holder=holders,
        out_nbr=np.empty(k, dtype=np.int32),
        qseq=ctx.next_qseq + np.arange(k, dtype=np.int64),
        good=tokens.good[dup].copy(),
        lowcong=tokens.lowcong[dup].copy(),
    )
    batch.out_nbr = _draw_out_slots(ctx, batch.holder, ctx.round_number)
    ctx.next_tid += k
    ctx.next_qseq += k
    if ctx.record_meta:
        ctx.meta.append((batch.tid.copy(), batch.claimed_src.copy(),
                         batch.rank.copy(), batch.counter.copy(), batch.stage.copy()))
    return batch


def aerid_v2(ctx: WalkContext, payloads: np.ndarray, adversary=None,
             ranks: np.ndarray | None = None, record: bool = False) -> AeridResult:
    cfg = ctx.config
    plan = make_stage_plan(cfg)
    log = TraversalLog() if record else None
    tokens = create_tokens(ctx, plan.lam, ctx.round_number,
                           payloads=np.asarray(payloads, dtype=np.int32),
                           ranks=ranks, stage=0)
    ctx.current_payloads = np.asarray(payloads, dtype=np.int32)
    stage_good_max = []
    for i in range(1, plan.num_stages + 1):
        ctx.transcript.append("stage_start", i, ctx.round_number, len(tokens))
        tokens = _duplicate_stage(ctx, tokens, i, plan.keep_bound(i))
        good_src = tokens.claimed_src[tokens.good]
        stage_good_max.append(int(np.bincount(good_src, minlength=cfg.n).max())
                              if len(good_src) else 0)
        tokens = run_phase(ctx, tokens, cfg.rw_length, adversary=adversary,
                           record=log, congestion_bound=cfg.congestion_bound)
    ctx.transcript.fold("v2_endpoints", tokens.holder)
    ctx.transcript.fold("v2_payloads", tokens.payload)
    return AeridResult(endpoints=tokens, records=log, rounds=ctx.stats.rounds,
                       stage_good_max=stage_good_max, plan=plan, ctx=ctx)


def run_aerid(ctx: WalkContext, payloads: np.ndarray, adversary=None,
              ranks: np.ndarray | None = None, record: bool = False) -> AeridResult:
    fn = aerid_v1 if ctx.config.variant == "v1" else aerid_v2
    return fn(ctx, payloads, adversary=adversary, ranks=ranks, record=record)
