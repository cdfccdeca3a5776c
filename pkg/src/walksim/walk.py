"""Phase-batched random-walk token flooding with caps and blacklisting.

Tokens are held in struct-of-arrays form and every round is processed
with vectorized numpy passes: outbox FIFO selection, per-edge cap
enforcement, ingest counting with blacklist triggers, and incremental
oracle flags (goodness, boundary crossings, congestion). Semantics are
per-node: each token's routing randomness comes from the keyed stream of
the node holding it, and a node's view is limited to its own queues.

Protocol shape per phase: every honest node creates d*cap tokens, routes
each to a uniformly random non-blacklisted neighbor's outbox, then for
rw_length rounds dequeues at most cap tokens per outbox and ingests at
most cap tokens per neighbor; a neighbor exceeding the ingest cap in a
round is blacklisted immediately (nothing from it is ingested that round)
and the edge is treated as dead from then on, in both directions. Phase
boundaries hard-reset outboxes. Number of phases = ceil(total/cap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import ExperimentConfig, Transcript, choose_byzantine
from .graph import Graph, CoreSubgraph, extract_core, generate_regular_expander
from .metrics import tv_distance
from .streams import node_round_keys, uniforms


@dataclass
class TokenBatch:
    """Struct-of-arrays token pool for one phase."""

    tid: np.ndarray          # global creation index
    origin: np.ndarray       # true creating node (oracle-only)
    claimed_src: np.ndarray  # source id carried in the token (may be forged)
    rank: np.ndarray
    counter: np.ndarray      # int64; duplication stage packed in the high bits
    stage: np.ndarray
    step: np.ndarray
    payload: np.ndarray
    holder: np.ndarray       # node whose outbox the token sits in
    out_nbr: np.ndarray      # outbox slot 0..d-1 at the holder
    qseq: np.ndarray         # FIFO order within an outbox
    good: np.ndarray         # origin in core and true path entirely in core
    lowcong: np.ndarray      # never exceeded the per-(stage,step,edge) bound

    def __len__(self) -> int:
        return len(self.tid)

    _FIELDS = ("tid", "origin", "claimed_src", "rank", "counter", "stage",
               "step", "payload", "holder", "out_nbr", "qseq", "good", "lowcong")

    def compress(self, keep: np.ndarray) -> None:
        for name in self._FIELDS:
            setattr(self, name, getattr(self, name)[keep])

    def extend(self, other: "TokenBatch") -> None:
        for name in self._FIELDS:
            setattr(self, name, np.concatenate([getattr(self, name), getattr(other, name)]))

    @staticmethod
    def empty() -> "TokenBatch":
        i32 = lambda: np.empty(0, dtype=np.int32)
        return TokenBatch(
            tid=i32(), origin=i32(), claimed_src=i32(), rank=i32(),
            counter=np.empty(0, dtype=np.int64), stage=i32(),
            step=i32(), payload=i32(), holder=i32(), out_nbr=i32(),
            qseq=np.empty(0, dtype=np.int64),
            good=np.empty(0, dtype=bool), lowcong=np.empty(0, dtype=bool),
        )


@dataclass
class RunStats:
    created: int = 0
    created_core_origin: int = 0
    crossings: int = 0           # tokens that crossed the core boundary (either way)
    blacklist_events: int = 0
    ingested_bad: int = 0        # adversary tokens accepted by honest nodes
    rounds: int = 0
    waits_ok: bool = True        # step >= rounds_elapsed - waits identity held


class TraversalLog:
    """Oracle-side record of every token traversal (for path tables)."""

    def __init__(self):
        self.tids: list[np.ndarray] = []
        self.src: list[np.ndarray] = []
        self.dst: list[np.ndarray] = []
        self.step_after: list[np.ndarray] = []
        self.rounds: list[int] = []

    def append(self, rnd, tids, src, dst, step_after):
        self.rounds.append(rnd)
        self.tids.append(tids.astype(np.int32))
        self.src.append(src.astype(np.int32))
        self.dst.append(dst.astype(np.int32))
        self.step_after.append(step_after.astype(np.int32))

    def concatenated(self):
        if not self.tids:
            z = np.empty(0, dtype=np.int32)
            return z, z, z, z
        return (np.concatenate(self.tids), np.concatenate(self.src),
                np.concatenate(self.dst), np.concatenate(self.step_after))


class WalkContext:
    """Shared per-run state: topology, blacklists, oracle masks, counters."""

    def __init__(self, config: ExperimentConfig, graph: Graph | None = None,
                 byzantine: set[int] | None = None, core: CoreSubgraph | None = None,
                 transcript: Transcript | None = None):
        self.config = config
        self.graph = graph or generate_regular_expander(config.n, config.d, config.seed)
        self.byzantine = byzantine if byzantine is not None else choose_byzantine(config)
        self.byz_mask = np.zeros(self.graph.n, dtype=bool)
        for b in self.byzantine:
            self.byz_mask[b] = True
        if core is None and self.graph.n <= 1024:
            core = extract_core(self.graph, self.byzantine, config.theta)
        self.core = core
        self.core_mask = (core.member_mask if core is not None
                          else ~self.byz_mask)
        self.transcript = transcript or Transcript(config)
        n, d = self.graph.n, self.graph.d
        self.adj = self.graph.adjacency
        # slot_of[v, u] = position of u in v's adjacency row (-1 if non-edge)
        self.slot_of = np.full((n, n), -1, dtype=np.int16)
        rows = np.repeat(np.arange(n), d)
        self.slot_of[rows, self.adj.reshape(-1)] = np.tile(np.arange(d), n)
        # blacklist[u, j] = u ignores its j-th neighbor
        self.blacklist = np.zeros((n, d), dtype=bool)
        self.allowed_slots = np.tile(np.arange(d, dtype=np.int32), (n, 1))
        self.allowed_count = np.full(n, d, dtype=np.int32)
        self.stats = RunStats()
        self.round_number = 0
        self.next_tid = 0
        self.next_qseq = 0
        self.extra: dict = {}                   # cross-layer state (coin schedule etc.)
        self.record_meta = False                # capture per-tid identities for path tables
        self.meta: list[tuple] = []             # (tid, claimed, rank, counter, stage) arrays
        self.absorbed_now: dict | None = None   # tokens delivered into Byzantine nodes
        self.pending_relay: list[dict] = []     # adversary-side buffer (relay strategies)
        self.current_payloads: np.ndarray | None = None  # oracle view for full-info strategies
        self.tokens: TokenBatch | None = None

    def rebuild_allowed(self) -> None:
        n, d = self.graph.n, self.graph.d
        self.allowed_slots = np.zeros((n, d), dtype=np.int32)
        for u in range(n):
            ok = np.flatnonzero(~self.blacklist[u])
            self.allowed_count[u] = len(ok)
            self.allowed_slots[u, : len(ok)] = ok

    def add_blacklist(self, node: int, slot: int, rnd: int) -> None:
        if not self.blacklist[node, slot]:
            self.blacklist[node, slot] = True
            self.stats.blacklist_events += 1
            self.transcript.append("blacklist", rnd, int(node), int(self.adj[node, slot]))
            ok = np.flatnonzero(~self.blacklist[node])
            self.allowed_count[node] = len(ok)
            self.allowed_slots[node, : len(ok)] = ok


def _group_rank(sorted_keys: np.ndarray) -> np.ndarray:
    """Rank of each element within its run of equal (sorted) keys."""
    if len(sorted_keys) == 0:
        return np.empty(0, dtype=np.int64)
    new_group = np.r_[True, sorted_keys[1:] != sorted_keys[:-1]]
    starts = np.flatnonzero(new_group)
    gid = np.cumsum(new_group) - 1
    return np.arange(len(sorted_keys)) - starts[gid]


def _draw_out_slots(ctx: WalkContext, holders: np.ndarray, rnd: int,
                    pos_offset: np.ndarray | int = 0) -> np.ndarray:
    """Uniform outbox slot for each token from its holder's (node, round) stream.

    `holders` need not be sorted; the draw index is the token's arrival
    position at that holder this round (plus pos_offset), so draws are
    deterministic and per-node-sequential.
    """
    if len(holders) == 0:
        return np.empty(0, dtype=np.int32)
    order = np.argsort(holders, kind="stable")
    pos = _group_rank(holders[order])
    keys = node_round_keys(ctx.config.seed, holders[order], rnd)
    u = uniforms(keys, pos + pos_offset)
    counts = ctx.allowed_count[holders[order]]
    choice = np.minimum((u * counts).astype(np.int64), np.maximum(counts - 1, 0))
    slots = ctx.allowed_slots[holders[order], choice]
    out = np.empty(len(holders), dtype=np.int32)
    out[order] = slots
    return out


def create_tokens(ctx: WalkContext, count_per_node: int, rnd: int,
                  payloads: np.ndarray | None = None,
                  ranks: np.ndarray | None = None,
                  stage: int = 0, counter_start: int = 0) -> TokenBatch:
    """Each honest node creates `count_per_node` tokens carrying its payload."""
    n = ctx.graph.n
    honest = np.flatnonzero(~ctx.byz_mask).astype(np.int32)
    owners = np.repeat(honest, count_per_node)
    k = len(owners)
    if payloads is None:
        payloads = np.zeros(n, dtype=np.int32)
    if ranks is None:
        ranks = np.zeros(n, dtype=np.int32)
    counters = (np.int64(stage) << np.int64(32)) + counter_start + np.tile(
        np.arange(count_per_node, dtype=np.int64), len(honest))
    batch = TokenBatch(
        tid=(ctx.next_tid + np.arange(k)).astype(np.int32),
        origin=owners.copy(),
        claimed_src=owners.copy(),
        rank=np.asarray(ranks, dtype=np.int32)[owners],
        counter=counters,
        stage=np.full(k, stage, dtype=np.int32),
        step=np.zeros(k, dtype=np.int32),
        payload=np.asarray(payloads, dtype=np.int32)[owners],
        holder=owners.copy(),
        out_nbr=np.empty(k, dtype=np.int32),
        qseq=ctx.next_qseq + np.arange(k, dtype=np.int64),
        good=ctx.core_mask[owners],
        lowcong=np.ones(k, dtype=bool),
    )
    batch.out_nbr = _draw_out_slots(ctx, batch.holder, rnd)
    ctx.next_tid += k
    ctx.next_qseq += k
    ctx.stats.created += k
    ctx.stats.created_core_origin += int(ctx.core_mask[owners].sum())
    if ctx.record_meta:
        ctx.meta.append((batch.tid.copy(), batch.claimed_src.copy(),
                         batch.rank.copy(), batch.counter.copy(), batch.stage.copy()))
    return batch


def run_phase(ctx: WalkContext, tokens: TokenBatch, rw_length: int,
              adversary=None, record: TraversalLog | None = None,
              congestion_bound: int | None = None) -> TokenBatch:
    """Run one walk phase of rw_length rounds over the given token pool."""
    cfg = ctx.config
    cap = cfg.cap
    d = ctx.graph.d
    ctx.tokens = tokens
    for _ in range(rw_length):
        rnd = ctx.round_number
        # ---- outbox FIFO selection: at most cap per outbox, dead edges hold ----
        key = tokens.holder.astype(np.int64) * d + tokens.out_nbr
        # single packed-key sort (outbox major, FIFO order minor)
        order = np.argsort((key << np.int64(44)) | tokens.qseq)
        rank_in_box = _group_rank(key[order])
        sendable = rank_in_box < cap
        sendable &= ~ctx.blacklist[tokens.holder[order], tokens.out_nbr[order]]
        send_idx = order[sendable]
        dest = ctx.adj[tokens.holder[send_idx], tokens.out_nbr[send_idx]].astype(np.int32)

        to_adv = ctx.byz_mask[dest]
        absorbed_idx = send_idx[to_adv]
        moved_idx = send_idx[~to_adv]
        new_holder = dest[~to_adv]

        # ---- honest routing randomness for this round (visible to adversary) ----
        next_slots = _draw_out_slots(ctx, new_holder, rnd)

        # adversary receives everything delivered into Byzantine nodes
        ctx.absorbed_now = {
            "claimed_src": tokens.claimed_src[absorbed_idx].copy(),
            "rank": tokens.rank[absorbed_idx].copy(),
            "counter": tokens.counter[absorbed_idx].copy(),
            "stage": tokens.stage[absorbed_idx].copy(),
            "step": tokens.step[absorbed_idx].copy(),
            "payload": tokens.payload[absorbed_idx].copy(),
            "entered_at": dest[to_adv].copy(),
        }
        ctx.stats.crossings += int(np.sum(ctx.core_mask[tokens.holder[absorbed_idx]]))

        # ---- adversary acts (rushing: after honest draws) ----
        injections = adversary.walk_round(ctx, rnd) if adversary is not None else None

        inj_batch = None
        if injections is not None and len(injections["src"]) > 0:
            inj_batch = _process_injections(ctx, injections, rnd, cap,
                                            pos_base_holders=new_holder)

        # ---- apply honest moves ----
        move_src = tokens.holder[moved_idx].copy()
        prev_in_core = ctx.core_mask[move_src]
        now_in_core = ctx.core_mask[new_holder]
        ctx.stats.crossings += int(np.sum(prev_in_core != now_in_core))
        tokens.holder[moved_idx] = new_holder
        tokens.step[moved_idx] += 1
        tokens.good[moved_idx] &= now_in_core
        tokens.out_nbr[moved_idx] = next_slots
        # FIFO: arrivals are queued behind everything already waiting
        arr_order = np.argsort(new_holder * np.int64(d) + next_slots, kind="stable")
        q = np.empty(len(moved_idx), dtype=np.int64)
        q[arr_order] = ctx.next_qseq + np.arange(len(moved_idx))
        tokens.qseq[moved_idx] = q
        ctx.next_qseq += len(moved_idx)

        if record is not None and len(moved_idx):
            record.append(rnd, tokens.tid[moved_idx], move_src, new_holder,
                          tokens.step[moved_idx])

        if congestion_bound is not None and len(moved_idx):
            _update_congestion(ctx, tokens, moved_idx, move_src, new_holder,
                               congestion_bound)

        # ---- drop tokens absorbed by the adversary, add accepted injections ----
        if len(absorbed_idx) or inj_batch is not None:
            keep = np.ones(len(tokens), dtype=bool)
            keep[absorbed_idx] = False
            tokens.compress(keep)
            if inj_batch is not None:
                tokens.extend(inj_batch)
        ctx.round_number += 1
        ctx.stats.rounds += 1
    ctx.transcript.append("phase_end", ctx.round_number, len(tokens),
                          int(tokens.good.sum()), ctx.stats.crossings,
                          ctx.stats.blacklist_events)
    return tokens


def _update_congestion(ctx, tokens, moved_idx, move_src, new_holder, bound):
    """Flag tokens sharing a (source, stage, step, edge) beyond the bound."""
    n = ctx.graph.n
    src = tokens.claimed_src[moved_idx].astype(np.int64)
    stage = tokens.stage[moved_idx].astype(np.int64)
    step = tokens.step[moved_idx].astype(np.int64)
    edge = move_src.astype(np.int64) * n + new_holder
    packed = (((src * 64 + stage) * 8192 + step) * (n * n)) + edge
    order = np.argsort(packed, kind="stable")
    sorted_packed = packed[order]
    new_group = np.r_[True, sorted_packed[1:] != sorted_packed[:-1]]
    gid = np.cumsum(new_group) - 1
    counts = np.bincount(gid)
    over = counts[gid] > bound
    tokens.lowcong[moved_idx[order[over]]] = False


def _process_injections(ctx: WalkContext, inj: dict, rnd: int, cap: int,
                        pos_base_holders: np.ndarray) -> TokenBatch | None:
    """Apply ingest caps and blacklisting to adversary-sent tokens."""
    src = np.asarray(inj["src"], dtype=np.int32)
    dst = np.asarray(inj["dst"], dtype=np.int32)
    k = len(src)
    slot_rev = ctx.slot_of[dst, src]  # receiver-side slot of the sender
    if np.any(slot_rev < 0):
        raise RuntimeError("adversary attempted to send on a non-edge")
    if np.any(~ctx.byz_mask[src]):
        raise RuntimeError("adversary may emit only from Byzantine nodes")
    # already-blacklisted edges: ignored outright, not even counted
    live = ~ctx.blacklist[dst, slot_rev]
    # count per directed edge, trigger blacklists
    edge_key = dst.astype(np.int64) * ctx.graph.n + src
    keys, inverse, counts = np.unique(edge_key[live], return_inverse=True,
                                      return_counts=True)
    over = counts > cap
    if over.any():
        for ek in keys[over]:
            v, u = int(ek // ctx.graph.n), int(ek % ctx.graph.n)
            ctx.add_blacklist(v, int(ctx.slot_of[v, u]), rnd)
        ok_local = ~over[inverse]
    else:
        ok_local = np.ones(int(live.sum()), dtype=bool)
    accepted = np.flatnonzero(live)
    accepted = accepted[ok_local]
    if len(accepted) == 0:
        return None
    ctx.stats.ingested_bad += len(accepted)
    holders = dst[accepted]
    # crossing: adversary token entering the core
    ctx.stats.crossings += int(np.sum(ctx.core_mask[holders]))
    # routing draws continue the receiving node's stream after honest arrivals
    offset = np.zeros(len(holders), dtype=np.int64)
    if len(pos_base_holders):
        base_counts = np.bincount(pos_base_holders, minlength=ctx.graph.n)
        offset = base_counts[holders].astype(np.int64)
    out_nbr = _draw_out_slots(ctx, holders, rnd, pos_offset=offset)
    kk = len(accepted)
    batch = TokenBatch(
        tid=(ctx.next_tid + np.arange(kk)).astype(np.int32),
        origin=src[accepted].copy(),
        claimed_src=np.asarray(inj["claimed_src"], dtype=np.int32)[accepted],
        rank=np.asarray(inj["rank"], dtype=np.int32)[accepted],
        counter=np.asarray(inj["counter"], dtype=np.int64)[accepted],
        stage=np.asarray(inj["stage"], dtype=np.int32)[accepted],
        step=np.asarray(inj["step"], dtype=np.int32)[accepted],
        payload=np.asarray(inj["payload"], dtype=np.int32)[accepted],
        holder=holders.astype(np.int32),
        out_nbr=out_nbr,
        qseq=ctx.next_qseq + np.arange(kk, dtype=np.int64),
        good=np.zeros(kk, dtype=bool),
        lowcong=np.zeros(kk, dtype=bool),
    )
    ctx.next_tid += kk
    ctx.next_qseq += kk
    if ctx.record_meta:
        ctx.meta.append((batch.tid.copy(), batch.claimed_src.copy(),
                         batch.rank.copy(), batch.counter.copy(), batch.stage.copy()))
    return batch


def run_walk_protocol(ctx: WalkContext, total: int, adversary=None,
                      payloads: np.ndarray | None = None,
                      ranks: np.ndarray | None = None,
                      record: bool = False,
                      rw_length: int | None = None) -> "WalkResult":
    """Full multi-phase protocol; returns endpoint snapshots of every phase."""
    cfg = ctx.config
    cap = cfg.cap
    if rw_length is None:
        rw_length = cfg.rw_length
    num_phases = math.ceil(total / cap)
    log = TraversalLog() if record else None
    endpoints = TokenBatch.empty()
    for phase in range(num_phases):
        ctx.transcript.append("phase_start", phase, ctx.round_number)
        tokens = create_tokens(ctx, ctx.graph.d * cap, ctx.round_number,
                               payloads=payloads, ranks=ranks,
                               counter_start=phase * ctx.graph.d * cap)
        ctx.current_payloads = payloads
        tokens = run_phase(ctx, tokens, rw_length, adversary=adversary, record=log)
        endpoints.extend(tokens)     # phase hard reset: finished pool snapshotted
    ctx.transcript.fold("endpoints", endpoints.holder)
    ctx.transcript.fold("payloads", endpoints.payload)
    return WalkResult(endpoints=endpoints, records=log, rounds=ctx.stats.rounds,
                      num_phases=num_phases, stats=ctx.stats, ctx=ctx)


@dataclass
class WalkResult:
    endpoints: TokenBatch
    records: TraversalLog | None
    rounds: int
    num_phases: int
    stats: RunStats
    ctx: WalkContext


def classify_tokens(result: WalkResult, core: CoreSubgraph) -> dict:
    """Good/bad aggregates of a recorded run against the core oracle."""
    toks = result.endpoints
    good = int(toks.good.sum())
    return {
        "R_C": result.stats.created_core_origin,
        "created": result.stats.created,
        "good": good,
        "bad": len(toks) - good,
        "crossings": result.stats.crossings,
    }


def endpoint_distribution_test(result: WalkResult, core: CoreSubgraph) -> float:
    """TV distance between good-token endpoints and the core stationary law."""
    toks = result.endpoints
    ends = toks.holder[toks.good]
    counts = np.bincount(ends, minlength=result.ctx.graph.n)
    total = counts.sum()
    empirical = {int(u): counts[int(u)] / total for u in core.members}
    return tv_distance(empirical, {int(u): core.stationary[int(u)] for u in core.members})
