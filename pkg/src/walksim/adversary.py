"""Pluggable full-information Byzantine strategies.

A strategy sees the entire simulation state each round, after honest
randomness is drawn (rushing), and may emit arbitrarily many messages on
edges incident to Byzantine nodes. It cannot spoof the link-level sender
and cannot touch honest state. All strategy randomness comes from keyed
streams of the master seed, so runs replay exactly.

Two call surfaces: `act(env)` for the generic message engine, and
`walk_round(ctx, rnd)` returning token-injection arrays for the
vectorized walk protocols. Coin-time behavior is expressed through the
`coin_bad_path_bit` / `preferred_bit` hooks consulted by the coin layer.
"""

from __future__ import annotations

import numpy as np

from .engine import Message
from .streams import node_round_keys, uniforms


class AdversaryStrategy:
    name = "base"

    def __init__(self, **params):
        self.params = params

    # generic message engine
    def act(self, env) -> list[Message]:
        return []

    # vectorized walk protocols: return injection arrays or None
    def walk_round(self, ctx, rnd):
        return None

    # bit delivered along a byzantine-touched recorded coin path
    # (None = the message is dropped inside the byzantine node)
    def coin_bad_path_bit(self, sender_bit: int) -> int | None:
        return None

    # whether the strategy injects coin messages on every possible key
    preferred_bit: int | None = None


def _adv_uniforms(ctx, rnd: int, count: int, salt: int) -> np.ndarray:
    keys = node_round_keys(ctx.config.seed, np.full(count, ctx.graph.n + salt), rnd)
    return uniforms(keys, np.arange(count))


def _byz_edges(ctx) -> tuple[np.ndarray, np.ndarray]:
    srcs, dsts = [], []
    for b in sorted(ctx.byzantine):
        for v in ctx.adj[b]:
            if not ctx.byz_mask[v]:
                srcs.append(b)
                dsts.append(int(v))
    return np.array(srcs, dtype=np.int32), np.array(dsts, dtype=np.int32)


class Silent(AdversaryStrategy):
    """Byzantine nodes send nothing and swallow whatever reaches them."""
    name = "silent"


class Flooder(AdversaryStrategy):
    """Sends rate*cap junk tokens per Byzantine-incident edge per round."""
    name = "flooder"

    def __init__(self, rate: float = 2.0, **params):
        super().__init__(rate=rate, **params)
        self.rate = rate

    def act(self, env):
        out = []
        per_edge = max(0, int(self.rate))
        for b, v in env.byzantine_edges():
            for i in range(per_edge):
                out.append(Message(b, v, ("junk", i)))
        return out

    def walk_round(self, ctx, rnd):
        per_edge = int(self.rate * ctx.config.cap)
        if per_edge == 0:
            return None
        src, dst = _byz_edges(ctx)
        if len(src) == 0:
            return None
        src = np.repeat(src, per_edge)
        dst = np.repeat(dst, per_edge)
        k = len(src)
        u = _adv_uniforms(ctx, rnd, k, salt=1)
        claimed = (u * ctx.graph.n).astype(np.int32)
        return {
            "src": src, "dst": dst, "claimed_src": claimed,
            "rank": np.zeros(k, dtype=np.int32),
            "counter": np.arange(k, dtype=np.int64) + (np.int64(rnd) << 32),
            "stage": np.zeros(k, dtype=np.int32),
            "step": np.zeros(k, dtype=np.int32),
            "payload": np.full(k, -1, dtype=np.int32),
        }


class TokenCorruptor(AdversaryStrategy):
    """Relays tokens that walk into Byzantine nodes, corrupted.

    Payload bits are flipped on every relayed token and a configurable
    fraction of relays carries a forged source id. Emission never exceeds
    cap per edge per round (so the relay is never blacklisted).
    """
    name = "token_corruptor"

    def __init__(self, forge_fraction: float = 0.5, **params):
        super().__init__(forge_fraction=forge_fraction, **params)
        self.forge_fraction = forge_fraction
        self._buffer: dict | None = None

    def _enqueue(self, absorbed: dict) -> None:
        if absorbed is None or len(absorbed["claimed_src"]) == 0:
            return
        if self._buffer is None:
            self._buffer = {k: v.copy() for k, v in absorbed.items()}
        else:
            for k in self._buffer:
                self._buffer[k] = np.concatenate([self._buffer[k], absorbed[k]])

    def walk_round(self, ctx, rnd):
        self._enqueue(ctx.absorbed_now)
        if self._buffer is None or len(self._buffer["claimed_src"]) == 0:
            return None
        src, dst = _byz_edges(ctx)
        if len(src) == 0:
            return None
        cap = ctx.config.cap
        budget = len(src) * cap
        take = min(budget, len(self._buffer["claimed_src"]))
        relay = {k: v[:take] for k, v in self._buffer.items()}
        self._buffer = {k: v[take:] for k, v in self._buffer.items()}
        # spread over the byzantine edges round-robin
        slots = np.tile(np.arange(len(src)), cap)[:take]
        u = _adv_uniforms(ctx, rnd, take, salt=2)
        forged = u < self.forge_fraction
        claimed = relay["claimed_src"].copy()
        u2 = _adv_uniforms(ctx, rnd + (1 << 20), take, salt=2)
        claimed[forged] = (u2[forged] * ctx.graph.n).astype(np.int32)
        return {
            "src": src[slots], "dst": dst[slots],
            "claimed_src": claimed,
            "rank": relay["rank"],
            "counter": relay["counter"],
            "stage": relay["stage"],
            "step": relay["step"],
            "payload": relay["payload"] ^ 1,   # flip the payload bit(s)
        }

    def coin_bad_path_bit(self, sender_bit: int) -> int | None:
        return 1 - sender_bit


class CoinBiaser(AdversaryStrategy):
    """Pushes a preferred bit into every coin flip.

    During initialization it floods (at cap rate, never blacklisted) with
    tokens claiming every rank, so that its own recorded walks exist for
    every phase; during flips it emits its preferred bit along those
    walks and injects messages on all other keys, which honest relays
    drop as non-conforming.
    """
    name = "coin_biaser"

    def __init__(self, preferred_bit: int = 1, **params):
        super().__init__(preferred_bit=preferred_bit, **params)
        self.preferred_bit = preferred_bit

    def walk_round(self, ctx, rnd):
        src, dst = _byz_edges(ctx)
        if len(src) == 0:
            return None
        cap = ctx.config.cap
        src = np.repeat(src, cap)
        dst = np.repeat(dst, cap)
        k = len(src)
        u = _adv_uniforms(ctx, rnd, k, salt=3)
        claimed = (u * ctx.graph.n).astype(np.int32)
        ranks = 1 + (np.arange(k, dtype=np.int64) + rnd) % ctx.graph.n
        return {
            "src": src, "dst": dst, "claimed_src": claimed,
            "rank": ranks.astype(np.int32),
            "counter": np.arange(k, dtype=np.int64) + (np.int64(rnd) << 32),
            "stage": np.zeros(k, dtype=np.int32),
            "step": np.zeros(k, dtype=np.int32),
            "payload": np.full(k, self.preferred_bit, dtype=np.int32),
        }

    def coin_bad_path_bit(self, sender_bit: int) -> int | None:
        return self.preferred_bit


class TallyOscillator(AdversaryStrategy):
    """Splits sampled tallies around the strong-majority threshold.

    With coins_upfront the whole coin schedule is visible before phase 1
    (the coin layer publishes it in ctx.extra); the strategy then decides
    each phase whether to reinforce the standing majority or to shave
    tallies under the threshold so that the coin re-splits the votes.
    Under the faithful post-tally ordering the same controller runs
    blind and degrades to a best-effort split attack.
    """
    name = "tally_oscillator"

    def __init__(self, margin: float = 0.0, **params):
        super().__init__(margin=margin, **params)
        self.margin = margin

    def _target_vote(self, ctx) -> tuple[int, float]:
        votes = ctx.current_payloads
        if votes is None:
            return 1, 0.0
        honest = ~ctx.byz_mask
        f1 = float(np.mean(votes[honest]))
        m = 1 if f1 >= 0.5 else 0
        fm = max(f1, 1 - f1)
        coin = ctx.extra.get("upcoming_coin") if hasattr(ctx, "extra") else None
        thr = ctx.config.tally_threshold
        if coin is not None and coin == m:
            # coin agrees with the majority: reinforce so nobody dips below
            return m, 1.0
        # push the majority tally just under the threshold so that the
        # noise tail (or everyone) falls through to the coin
        want = thr - self.margin
        if fm <= want:
            return 1 - m, 0.0
        q = 1.0 - want / fm
        return 1 - m, min(1.0, q / (1 - q))

    def walk_round(self, ctx, rnd):
        vote, intensity = self._target_vote(ctx)
        if intensity <= 0:
            return None
        src, dst = _byz_edges(ctx)
        if len(src) == 0:
            return None
        cap = ctx.config.cap
        n_h = int((~ctx.byz_mask).sum())
        # total honest receipts ~ n_h * d * cap; spread the needed share
        # across the phase's rounds and the byzantine edges
        total_needed = intensity * n_h * ctx.graph.d * cap
        per_edge = int(min(cap, np.ceil(total_needed / (ctx.config.rw_length * len(src)))))
        if per_edge == 0:
            return None
        src = np.repeat(src, per_edge)
        dst = np.repeat(dst, per_edge)
        k = len(src)
        u = _adv_uniforms(ctx, rnd, k, salt=4)
        claimed = (u * ctx.graph.n).astype(np.int32)
        return {
            "src": src, "dst": dst, "claimed_src": claimed,
            "rank": np.zeros(k, dtype=np.int32),
            "counter": np.arange(k, dtype=np.int64) + (np.int64(rnd) << 32),
            "stage": np.zeros(k, dtype=np.int32),
            "step": np.zeros(k, dtype=np.int32),
            "payload": np.full(k, vote, dtype=np.int32),
        }

    def coin_bad_path_bit(self, sender_bit: int) -> int | None:
        return 1 - sender_bit


STRATEGIES = {
    "silent": Silent,
    "flooder": Flooder,
    "token_corruptor": TokenCorruptor,
    "coin_biaser": CoinBiaser,
    "tally_oscillator": TallyOscillator,
}


def make_strategy(name: str, **params) -> AdversaryStrategy:
    if name not in STRATEGIES:
        raise ValueError(f"unknown adversary strategy: {name}")
    return STRATEGIES[name](**params)
