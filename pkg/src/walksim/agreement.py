"""Iterated binary voting with sampled tallies and a shared coin.

Each phase every honest node floods vote tokens carrying its current bit
for one walk phase and reads the receipts that land on it: `maj` is the
strict majority bit of its receipts (tie keeps the current vote) and
`tally` the majority's share of them. Strictly after sampling the phase's
common coin is flipped; a node keeps `maj` when its tally clears the
strong-majority threshold and otherwise adopts its coin output (undecided
coin reads count as bit 0). The default budget is 4n phases.

The coins_upfront switch moves every coin draw to initialization time
(flip outputs depend only on init-time data, so the full schedule is
computable before phase 1) and publishes the schedule to the adversary —
the unsafe ordering that oscillation attacks need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coin import CoinState, coin_flip, init_coin, predict_schedule
from .walk import WalkContext, create_tokens, run_phase


@dataclass
class PhaseRecord:
    phase: int
    coin_rank: int
    coin_good: bool
    majority_bit: int            # honest majority after the update
    agree_frac: float            # honest share holding the majority bit
    mean_tally: float
    strong_count: int            # honest nodes whose tally cleared the threshold


@dataclass
class AgreementResult:
    final_votes: np.ndarray
    phases: list[PhaseRecord] = field(default_factory=list)
    agreed_phase: int | None = None     # first phase after which unanimity held to the end
    rounds_walked: int = 0
    rounds_logical: int = 0             # includes the per-phase coin-flip cost
    coin_state: CoinState | None = None

    def agreement_frac_by(self, phase: int) -> float:
        recs = [p for p in self.phases if p.phase <= phase]
        return recs[-1].agree_frac if recs else 0.0


def _sample_tallies(ctx: WalkContext, votes: np.ndarray, adversary) -> tuple:
    """One walk phase of vote tokens; per-node (ones, zeros) receipt counts."""
    cfg = ctx.config
    n = ctx.graph.n
    tokens = create_tokens(ctx, ctx.graph.d * cfg.cap, ctx.round_number,
                           payloads=votes)
    tokens = run_phase(ctx, tokens, cfg.rw_length, adversary=adversary)
    payload = tokens.payload
    holder = tokens.holder
    valid = (payload == 0) | (payload == 1)
    ones = np.bincount(holder[valid & (payload == 1)], minlength=n)
    zeros = np.bincount(holder[valid & (payload == 0)], minlength=n)
    return ones, zeros


def run_agreement(ctx: WalkContext, inputs: np.ndarray,
                  adversary=None) -> AgreementResult:
    cfg = ctx.config
    n = ctx.graph.n
    honest = ~ctx.byz_mask
    votes = np.asarray(inputs, dtype=np.int32).copy()
    ctx.current_payloads = votes

    state = init_coin(ctx, adversary=adversary, build_tables=False)
    num_phases = cfg.phase_count
    if cfg.coins_upfront:
        ctx.extra["coin_schedule"] = predict_schedule(state, num_phases,
                                                      adversary=adversary)

    result = AgreementResult(final_votes=votes, coin_state=state)
    agree_target = 1.0 - cfg.fail_frac
    reached: int | None = None
    for i in range(1, num_phases + 1):
        if cfg.coins_upfront:
            ctx.extra["upcoming_coin"] = ctx.extra["coin_schedule"][i - 1]
        ctx.current_payloads = votes
        ones, zeros = _sample_tallies(ctx, votes, adversary)
        total = ones + zeros
        maj = np.where(ones > zeros, 1, np.where(zeros > ones, 0, votes))
        with np.errstate(invalid="ignore", divide="ignore"):
            tally = np.where(total > 0,
                             np.maximum(ones, zeros) / np.maximum(total, 1), 0.0)
        # the coin is flipped strictly after sampling
        flip = coin_flip(state, i, adversary=adversary, check_filter=False)
        coin_bits = np.where(flip.bits >= 0, flip.bits, 0)
        strong = tally > cfg.tally_threshold
        new_votes = np.where(strong, maj, coin_bits).astype(np.int32)
        votes[honest] = new_votes[honest]
        result.rounds_logical += cfg.rw_length + state.flip_rounds

        hv = votes[honest]
        f1 = float(np.mean(hv == 1))
        frac = max(f1, 1 - f1)
        mbit = 1 if f1 >= 0.5 else 0
        result.phases.append(PhaseRecord(
            phase=i, coin_rank=flip.rank, coin_good=flip.good,
            majority_bit=mbit, agree_frac=frac,
            mean_tally=float(tally[honest].mean()),
            strong_count=int(strong[honest].sum()),
        ))
        ctx.transcript.append("agree_phase", i, int((hv == 1).sum()),
                              int((hv == 0).sum()), int(flip.good))
        if frac >= agree_target:
            if reached is None:
                reached = i
            if cfg.early_stop:
                break

    result.final_votes = votes
    result.agreed_phase = reached
    result.rounds_walked = ctx.stats.rounds
    ctx.transcript.fold("final_votes", votes)
    ctx.transcript.append("agreement_done", result.agreed_phase
                          if result.agreed_phase is not None else -1)
    return result


def evaluate(result: AgreementResult, inputs: np.ndarray,
             byz_mask: np.ndarray) -> dict:
    """Validity / agreement summary for one run."""
    honest = ~byz_mask
    hv = result.final_votes[honest]
    f1 = float(np.mean(hv == 1))
    out_bit = 1 if f1 >= 0.5 else 0
    unanimous_input = (len(set(np.asarray(inputs)[honest].tolist())) == 1)
    n = len(byz_mask)
    if unanimous_input:
        b = int(np.asarray(inputs)[honest][0])
        validity_ok = bool(np.sum(hv == b) >= 0.95 * n)
    else:
        validity_ok = True
    return {
        "agree_frac": max(f1, 1 - f1),
        "output_bit": out_bit,
        "agreed_phase": result.agreed_phase,
        "validity_ok": validity_ok,
        "phases_run": len(result.phases),
    }
