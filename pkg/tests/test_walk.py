import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from walksim import ExperimentConfig, WalkContext, make_strategy, run_walk_protocol
from walksim.walk import TokenBatch, _group_rank, create_tokens, run_phase


def _ctx(**kw):
    defaults = dict(n=32, d=4, seed=0)
    defaults.update(kw)
    return WalkContext(ExperimentConfig(**defaults))


@given(st.lists(st.integers(0, 5), min_size=0, max_size=60))
@settings(max_examples=60, deadline=None)
def test_group_rank_matches_naive(keys):
    keys = np.sort(np.array(keys, dtype=np.int64))
    got = _group_rank(keys)
    seen: dict = {}
    for i, k in enumerate(keys.tolist()):
        assert got[i] == seen.get(k, 0)
        seen[k] = seen.get(k, 0) + 1


def test_token_conservation_without_adversary():
    ctx = _ctx()
    res = run_walk_protocol(ctx, total=2 * ctx.config.cap)
    assert len(res.endpoints) == ctx.stats.created
    assert res.num_phases == 2
    assert ctx.stats.created == 2 * ctx.graph.n * ctx.graph.d * ctx.config.cap


def test_steps_bounded_by_rounds_and_mostly_complete():
    # random outbox assignment occasionally overfills a queue, so a few
    # tokens wait, but never gain steps and rarely lose many
    ctx = _ctx()
    res = run_walk_protocol(ctx, total=ctx.config.cap)
    rw = ctx.config.rw_length
    assert np.all(res.endpoints.step <= rw)
    assert np.mean(rw - res.endpoints.step) < 2.0
    assert np.mean(res.endpoints.step == rw) > 0.3


def test_all_tokens_good_without_byzantine():
    ctx = _ctx()
    res = run_walk_protocol(ctx, total=ctx.config.cap)
    assert res.endpoints.good.all()
    assert ctx.stats.crossings == 0


def test_payload_and_source_carried_unchanged():
    ctx = _ctx()
    payloads = np.arange(32, dtype=np.int32) * 3 + 1
    res = run_walk_protocol(ctx, total=ctx.config.cap, payloads=payloads)
    assert np.array_equal(res.endpoints.payload,
                          payloads[res.endpoints.claimed_src])
    assert np.array_equal(res.endpoints.claimed_src, res.endpoints.origin)


def test_deterministic_replay_same_digest():
    r1 = run_walk_protocol(_ctx(seed=4), total=2 * 24)
    c2 = _ctx(seed=4)
    r2 = run_walk_protocol(c2, total=2 * 24)
    assert np.array_equal(r1.endpoints.holder, r2.endpoints.holder)
    assert r1.ctx.transcript.digest() == c2.transcript.digest()
    r3 = run_walk_protocol(_ctx(seed=5), total=2 * 24)
    assert r1.ctx.transcript.digest() != r3.ctx.transcript.digest()


def test_endpoints_near_stationary():
    ctx = WalkContext(ExperimentConfig(n=64, d=6, seed=1))
    res = run_walk_protocol(ctx, total=ctx.config.cap)
    from walksim import endpoint_distribution_test
    assert endpoint_distribution_test(res, ctx.core) < 0.05


class _OverCapOnce:
    """Sends cap+1 tokens on one byzantine edge in round 0, then nothing."""

    def __init__(self, excess=1):
        self.excess = excess
        self.sent_round = None
        self.edge = None

    def walk_round(self, ctx, rnd):
        if self.sent_round is not None:
            return None
        b = sorted(ctx.byzantine)[0]
        v = int(ctx.adj[b][0])
        if ctx.byz_mask[v]:
            return None
        self.sent_round, self.edge = rnd, (b, v)
        k = ctx.config.cap + self.excess
        return {
            "src": np.full(k, b, dtype=np.int32),
            "dst": np.full(k, v, dtype=np.int32),
            "claimed_src": np.zeros(k, dtype=np.int32),
            "rank": np.zeros(k, dtype=np.int32),
            "counter": np.arange(k, dtype=np.int64),
            "stage": np.zeros(k, dtype=np.int32),
            "step": np.zeros(k, dtype=np.int32),
            "payload": np.zeros(k, dtype=np.int32),
        }

    def coin_bad_path_bit(self, sender_bit):
        return None


def test_over_cap_blacklists_and_ingests_zero():
    ctx = _ctx(byzantine_count=2)
    adv = _OverCapOnce()
    run_walk_protocol(ctx, total=ctx.config.cap, adversary=adv)
    b, v = adv.edge
    slot = int(ctx.slot_of[v, b])
    assert ctx.blacklist[v, slot]
    # the violating round's batch was dropped entirely and nothing later got in
    assert ctx.stats.ingested_bad == 0
    events = [e for e in ctx.transcript.events if e[0] == "blacklist"]
    assert (("blacklist", adv.sent_round, v, b) in events)


def test_at_cap_is_accepted_not_blacklisted():
    ctx = _ctx(byzantine_count=2)
    adv = _OverCapOnce(excess=0)
    run_walk_protocol(ctx, total=ctx.config.cap, adversary=adv)
    b, v = adv.edge
    assert not ctx.blacklist[v, int(ctx.slot_of[v, b])]
    assert ctx.stats.ingested_bad == ctx.config.cap


def test_injected_tokens_are_never_good():
    ctx = _ctx(byzantine_count=2)
    adv = make_strategy("flooder", rate=0.5)
    res = run_walk_protocol(ctx, total=ctx.config.cap, adversary=adv)
    injected = ctx.byz_mask[res.endpoints.origin]
    assert injected.any()
    assert not res.endpoints.good[injected].any()
    assert not res.endpoints.lowcong[injected].any()


def test_tokens_walking_into_byzantine_nodes_disappear():
    ctx = _ctx(byzantine_count=4)
    res = run_walk_protocol(ctx, total=ctx.config.cap)
    assert len(res.endpoints) < ctx.stats.created
    assert not ctx.byz_mask[res.endpoints.holder].any()


def test_good_flag_requires_path_in_core():
    ctx = _ctx(byzantine_count=4)
    res = run_walk_protocol(ctx, total=ctx.config.cap)
    toks = res.endpoints
    # good tokens must originate and end inside the core
    assert ctx.core_mask[toks.origin[toks.good]].all()
    assert ctx.core_mask[toks.holder[toks.good]].all()
    # tokens created outside the core are never good
    assert not toks.good[~ctx.core_mask[toks.origin]].any()


def test_adversary_cannot_send_on_non_edges():
    ctx = _ctx(byzantine_count=1)

    class BadAdv:
        def walk_round(self, inner, rnd):
            b = sorted(inner.byzantine)[0]
            non_nbr = next(x for x in range(inner.graph.n)
                           if x != b and x not in set(inner.adj[b].tolist()))
            one = lambda v, dt: np.array([v], dtype=dt)
            return {"src": one(b, np.int32), "dst": one(non_nbr, np.int32),
                    "claimed_src": one(0, np.int32), "rank": one(0, np.int32),
                    "counter": one(0, np.int64), "stage": one(0, np.int32),
                    "step": one(0, np.int32), "payload": one(0, np.int32)}

    with pytest.raises(RuntimeError):
        run_walk_protocol(ctx, total=ctx.config.cap, adversary=BadAdv())


def test_fifo_order_respected_under_congestion():
    # two outbox loads above cap: the first cap by queue order leave first
    ctx = _ctx()
    cap = ctx.config.cap
    tokens = create_tokens(ctx, ctx.graph.d * cap, 0)
    # force every token of node 0 into outbox slot 0
    sel = tokens.holder == 0
    tokens.out_nbr[sel] = 0
    first_ids = set(tokens.tid[sel][np.argsort(tokens.qseq[sel])][:cap].tolist())
    before_steps = tokens.step[sel].copy()
    out = run_phase(ctx, tokens, 1)
    sel2 = np.isin(out.tid, list(first_ids))
    assert np.all(out.step[sel2] == 1)          # the first cap moved
    held = (out.origin == 0) & (out.holder == 0) & (out.step == 0)
    assert held.sum() == sel.sum() - cap        # the rest waited
