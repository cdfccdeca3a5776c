"""Repeated common-coin flips bootstrapped from recorded dissemination walks.

Initialization: every node draws a rank uniform in [1, n] and broadcasts
(id, rank) through the dissemination protocol with path recording; every
honest relay keeps a table of the walk records it forwarded. Phase i's
designated senders are the nodes of rank ((i-1) mod n)+1; each draws a
fair bit and sends it along its recorded walks. Honest relays forward a
coin message only when its (source, rank, counter, stage, step) key and
arrival edge match a recorded entry, so fabricated messages die at the
first honest hop; messages whose recorded token passed through a
Byzantine node surface with whatever bit the adversary chooses. Each node
outputs the majority bit of its conforming receipts (none/tie =
undecided).

A phase is `good` when exactly one honest node owns its rank and that
node's init broadcast reached almost all honest nodes through good
tokens; this is fixed by init-time oracle data before any flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aerid import AeridResult, run_aerid
from .streams import NodeStream, _mix
from .walk import WalkContext

RANK_ROUND = 1 << 40          # reserved stream slot for rank draws
FLIP_ROUND_BASE = (1 << 40) + 7


def draw_ranks(ctx: WalkContext) -> np.ndarray:
    """Honest ranks: independent uniforms on [1, n]; Byzantine entries are 0
    (their claimed ranks live inside the tokens they inject)."""
    n = ctx.graph.n
    ranks = np.zeros(n, dtype=np.int32)
    for u in range(n):
        if not ctx.byz_mask[u]:
            ranks[u] = 1 + NodeStream(ctx.config.seed, u, RANK_ROUND).randint(n)
    return ranks


def expected_unique_ranks(n: int, honest: int) -> float:
    """Exact expectation of ranks chosen by exactly one honest node."""
    return n * (honest / n) * (1 - 1 / n) ** (honest - 1)


def unique_rank_count(ranks: np.ndarray) -> int:
    vals, counts = np.unique(ranks[ranks > 0], return_counts=True)
    return int(np.sum(counts == 1))


def _hash_keys(salt: int, *fields) -> np.ndarray:
    """Vectorized 64-bit hash of parallel key-field arrays."""
    h = np.full(len(fields[0]), np.uint64(salt), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for f in fields:
            h = _mix(h + np.asarray(f).astype(np.uint64))
    return h


class RecordTable:
    """Walk-record membership for one node.

    Fast path: two independent 64-bit hashes over the sorted record set
    (a false accept needs a simultaneous collision in both, ~2^-128).
    Accepted messages are re-verified against the exact tuple set, so the
    forwarded-nonconforming count reported by flips is exact.
    """

    def __init__(self, key_fields: tuple[np.ndarray, ...]):
        self._fields = key_fields
        h1 = _hash_keys(0x517C, *key_fields)
        order = np.argsort(h1)
        self.h1 = h1[order]
        self.h2 = _hash_keys(0xA7E3, *key_fields)[order]
        self._exact: set | None = None

    def contains(self, *fields) -> np.ndarray:
        q1 = _hash_keys(0x517C, *fields)
        q2 = _hash_keys(0xA7E3, *fields)
        pos = np.searchsorted(self.h1, q1)
        pos = np.minimum(pos, len(self.h1) - 1) if len(self.h1) else pos
        if len(self.h1) == 0:
            return np.zeros(len(q1), dtype=bool)
        return (self.h1[pos] == q1) & (self.h2[pos] == q2)

    def contains_exact(self, key: tuple) -> bool:
        if self._exact is None:
            self._exact = set(zip(*(f.tolist() for f in self._fields)))
        return key in self._exact


def path_filter(table: RecordTable | None, claimed: int, rank: int, counter: int,
                stage: int, step: int, from_node: int, phase_rank: int) -> bool:
    """Accept a coin message iff it has the current phase's rank and an
    exactly matching walk record for its arrival edge."""
    if rank != phase_rank or table is None:
        return False
    hit = table.contains(np.array([claimed]), np.array([rank]),
                         np.array([counter]), np.array([stage]),
                         np.array([step]), np.array([from_node]))
    if not bool(hit[0]):
        return False
    return table.contains_exact((claimed, rank, counter, stage, step, from_node))


@dataclass
class FlipOutcome:
    phase: int
    rank: int
    good: bool
    low_congestion: bool
    sender: int | None            # unique honest designated sender if good
    sender_bit: int | None
    bits: np.ndarray              # per-node bit, -1 undecided (byz entries -1)
    junk_injected: int = 0
    junk_forwarded_nonconforming: int = 0


@dataclass
class CoinState:
    ctx: WalkContext
    ranks: np.ndarray
    init_result: AeridResult
    n_honest: int
    # endpoint token views sorted by rank
    tok_rank_sorted: dict = field(default_factory=dict)
    rank_bounds: np.ndarray | None = None
    good_phase: np.ndarray | None = None          # indexed by rank 1..n
    lowcong_phase: np.ndarray | None = None
    phase_sender: np.ndarray | None = None        # unique honest sender per rank, -1 otherwise
    tables: dict[int, RecordTable] = field(default_factory=dict)
    flip_rounds: int = 0
    schedule: list | None = None                  # coins_upfront prediction

    def sender_bit(self, node: int, phase: int) -> int:
        return NodeStream(self.ctx.config.seed, node, FLIP_ROUND_BASE + phase).bit()


def _broadcast_coverage(ctx: WalkContext, endpoints, mask: np.ndarray) -> np.ndarray:
    """Per-source count of distinct honest receivers holding a masked receipt."""
    n = ctx.graph.n
    holder = endpoints.holder[mask].astype(np.int64)
    src = endpoints.claimed_src[mask].astype(np.int64)
    honest_holder = ~ctx.byz_mask[holder]
    pair = np.unique(holder[honest_holder] * n + src[honest_holder])
    return np.bincount((pair % n).astype(np.int64), minlength=n)


def _build_tables(ctx: WalkContext, init: AeridResult, nodes: list[int]) -> dict[int, RecordTable]:
    """Per-node walk-record tables (key: claimed, rank, counter, stage, step, from)."""
    if init.records is None or not ctx.meta:
        return {}
    tid, src, dst, step_after = init.records.concatenated()
    size = ctx.next_tid
    claimed_by = np.zeros(size, dtype=np.int64)
    rank_by = np.zeros(size, dtype=np.int64)
    counter_by = np.zeros(size, dtype=np.int64)
    stage_by = np.zeros(size, dtype=np.int64)
    for m_tid, m_claimed, m_rank, m_counter, m_stage in ctx.meta:
        claimed_by[m_tid] = m_claimed
        rank_by[m_tid] = m_rank
        counter_by[m_tid] = m_counter
        stage_by[m_tid] = m_stage
    tables = {}
    want = np.zeros(ctx.graph.n, dtype=bool)
    want[nodes] = True
    sel = want[dst]
    for v in nodes:
        rows = sel & (dst == v)
        idx = np.flatnonzero(rows)
        t = tid[idx]
        tables[v] = RecordTable((claimed_by[t], rank_by[t], counter_by[t],
                                 stage_by[t], step_after[idx].astype(np.int64),
                                 src[idx].astype(np.int64)))
    return tables


def init_coin(ctx: WalkContext, adversary=None, build_tables: bool = True) -> CoinState:
    cfg = ctx.config
    ctx.record_meta = True
    ranks = draw_ranks(ctx)
    init = run_aerid(ctx, payloads=ranks, adversary=adversary, ranks=ranks, record=True)
    n = ctx.graph.n
    n_honest = int((~ctx.byz_mask).sum())
    toks = init.endpoints
    order = np.argsort(toks.rank, kind="stable")
    state = CoinState(ctx=ctx, ranks=ranks, init_result=init, n_honest=n_honest)
    state.tok_rank_sorted = {
        "rank": toks.rank[order],
        "claimed": toks.claimed_src[order],
        "holder": toks.holder[order],
        "origin": toks.origin[order],
        "good": toks.good[order],
        "lowcong": toks.lowcong[order],
    }
    state.rank_bounds = np.searchsorted(state.tok_rank_sorted["rank"],
                                        np.arange(n + 2))
    # phase-goodness oracle, fixed before any flip
    cover_good = _broadcast_coverage(ctx, toks, toks.good)
    cover_lc = _broadcast_coverage(ctx, toks, toks.good & toks.lowcong)
    need = (1 - cfg.fail_frac) * n
    state.good_phase = np.zeros(n + 1, dtype=bool)
    state.lowcong_phase = np.zeros(n + 1, dtype=bool)
    state.phase_sender = np.full(n + 1, -1, dtype=np.int64)
    honest_nodes = np.flatnonzero(~ctx.byz_mask)
    for r in range(1, n + 1):
        owners = honest_nodes[ranks[honest_nodes] == r]
        if len(owners) == 1:
            s = int(owners[0])
            state.phase_sender[r] = s
            state.good_phase[r] = cover_good[s] >= need
            state.lowcong_phase[r] = cover_lc[s] >= need
    # flip round cost (arithmetic identity, not simulated round-by-round)
    if cfg.variant == "v1":
        state.flip_rounds = math.ceil((n * cfg.log_n) / cfg.cap) * cfg.rw_length
    else:
        window = max(1, math.ceil(cfg.congestion_bound / cfg.cap))
        stages = init.plan.num_stages if init.plan else 1
        state.flip_rounds = stages * cfg.rw_length * window
    if build_tables:
        byz_adjacent = sorted({int(v) for b in ctx.byzantine
                               for v in ctx.adj[b] if not ctx.byz_mask[v]})
        state.tables = _build_tables(ctx, init, byz_adjacent)
    ctx.transcript.append("init_coin_done", ctx.round_number,
                          int(state.good_phase.sum()))
    return state


def _phase_rank(n: int, i: int) -> int:
    return ((i - 1) % n) + 1


def coin_flip(state: CoinState, i: int, adversary=None,
              check_filter: bool = True) -> FlipOutcome:
    """One flip; per-node outputs computed from conforming deliveries."""
    ctx = state.ctx
    cfg = ctx.config
    n = ctx.graph.n
    if i < 1:
        raise ValueError("phase index must be >= 1")
    r = _phase_rank(n, i)
    lo, hi = state.rank_bounds[r], state.rank_bounds[r + 1]
    sl = slice(lo, hi)
    claimed = state.tok_rank_sorted["claimed"][sl]
    holder = state.tok_rank_sorted["holder"][sl]
    origin = state.tok_rank_sorted["origin"][sl]
    lowcong = state.tok_rank_sorted["lowcong"][sl]
    honest_origin = ~ctx.byz_mask[origin]

    # every honest owner of rank r is a designated sender this phase
    honest_nodes = np.flatnonzero(~ctx.byz_mask)
    senders = honest_nodes[state.ranks[honest_nodes] == r]
    sender_bits = {int(s): state.sender_bit(int(s), i) for s in senders}

    ones = np.zeros(n, dtype=np.int64)
    zeros = np.zeros(n, dtype=np.int64)
    # honest-origin tokens deliver their sender's true bit along their
    # recorded walk; the stage-duplication variant discards overcongested
    # messages, so only low-congestion records carry
    deliver = honest_origin.copy()
    if cfg.variant == "v2":
        deliver &= lowcong
    if deliver.any() and sender_bits:
        bit_of = np.full(n, -1, dtype=np.int64)
        for s, b in sender_bits.items():
            bit_of[s] = b
        bits = bit_of[claimed[deliver]]
        ok = bits >= 0
        h = holder[deliver][ok]
        b = bits[ok]
        ones += np.bincount(h[b == 1], minlength=n)
        zeros += np.bincount(h[b == 0], minlength=n)
    # byzantine-origin tokens with this rank: delivered with the bit the
    # adversary picks, but receivers reject messages whose claimed source
    # did not decode to rank r at init, so only claims naming a genuine
    # rank-r owner get through (the stage-duplication variant additionally
    # drops them as overcongested)
    claim_ok = np.zeros(n + 1, dtype=bool)
    claim_ok[senders] = True
    byz_tok = ~honest_origin & claim_ok[np.minimum(claimed, n)]
    if cfg.variant == "v2":
        byz_tok &= lowcong
    if byz_tok.any() and adversary is not None:
        ref_bit = sender_bits[int(senders[0])] if len(senders) == 1 else 0
        adv_bit = adversary.coin_bad_path_bit(ref_bit)
        if adv_bit is not None:
            h = holder[byz_tok]
            if adv_bit == 1:
                ones += np.bincount(h, minlength=n)
            else:
                zeros += np.bincount(h, minlength=n)

    junk_injected = 0
    junk_bad_forwarded = 0
    if (check_filter and adversary is not None
            and getattr(adversary, "preferred_bit", None) is not None):
        junk_injected, junk_bad_forwarded = _inject_and_filter_junk(state, i, r, adversary)

    bits_out = np.full(n, -1, dtype=np.int8)
    maj1 = 2 * ones > (ones + zeros)
    maj0 = 2 * zeros > (ones + zeros)
    bits_out[maj1 & (ones + zeros > 0)] = 1
    bits_out[maj0 & (ones + zeros > 0)] = 0
    bits_out[ctx.byz_mask] = -1

    good = bool(state.good_phase[r])
    sender = int(state.phase_sender[r]) if state.phase_sender[r] >= 0 else None
    return FlipOutcome(
        phase=i, rank=r, good=good,
        low_congestion=bool(state.lowcong_phase[r]),
        sender=sender,
        sender_bit=sender_bits.get(sender) if sender is not None else None,
        bits=bits_out,
        junk_injected=junk_injected,
        junk_forwarded_nonconforming=junk_bad_forwarded,
    )


def _inject_and_filter_junk(state: CoinState, i: int, r: int, adversary) -> tuple[int, int]:
    """Adversary-fabricated coin messages vs the honest record filter.

    The strategy sprays messages over every key shape it can form on its
    edges; each is accepted only on an exact record match (in which case
    it corresponds to a genuinely recorded token and is conforming by
    definition). Returns (injected, forwarded-but-nonconforming): the
    second is computed with an exact oracle over accepted messages.
    """
    ctx = state.ctx
    cfg = ctx.config
    injected = 0
    bad_forwarded = 0
    for b in sorted(ctx.byzantine):
        for v in ctx.adj[b]:
            v = int(v)
            if ctx.byz_mask[v]:
                continue
            table = state.tables.get(v)
            cap = cfg.cap
            ks = np.arange(cap, dtype=np.int64)
            claimed = (ks * 2654435761 + i) % ctx.graph.n
            counter = (ks * 40503 + i * 977) % (1 << 20)
            stage = ks % 4
            step = ks % cfg.rw_length + 1
            rank = np.full(cap, r, dtype=np.int64)
            frm = np.full(cap, b, dtype=np.int64)
            injected += cap
            if table is None or len(table.h1) == 0:
                continue
            hits = table.contains(claimed, rank, counter, stage, step, frm)
            for j in np.flatnonzero(hits):
                key = (int(claimed[j]), int(rank[j]), int(counter[j]),
                       int(stage[j]), int(step[j]), int(frm[j]))
                if not table.contains_exact(key):
                    bad_forwarded += 1
    return injected, bad_forwarded


def predict_schedule(state: CoinState, phases: int, adversary=None) -> list[int]:
    """Pre-compute every phase's majority coin bit (coins_upfront mode).

    Flips depend only on init-time data, so with the unsafe up-front
    drawing the whole schedule is knowable before phase 1; it is published
    to the adversary through ctx.extra.
    """
    out = []
    for i in range(1, phases + 1):
        fo = coin_flip(state, i, adversary=adversary, check_filter=False)
        votes = fo.bits[~state.ctx.byz_mask]
        ones = int(np.sum(votes == 1))
        zeros = int(np.sum(votes == 0))
        # undecided nodes fall back to bit 0 by convention
        zeros += int(np.sum(votes == -1))
        out.append(1 if ones > zeros else 0)
    return out
