import numpy as np
import pytest

from walksim import ExperimentConfig, WalkContext, evaluate, make_strategy, run_agreement


def _run(inputs=None, **kw):
    defaults = dict(n=32, d=4, seed=0, num_phases=12, early_stop=True)
    defaults.update(kw)
    cfg = ExperimentConfig(**defaults)
    ctx = WalkContext(cfg)
    adv = make_strategy(cfg.adversary_name, **cfg.adversary_params)
    if inputs is None:
        inputs = np.zeros(cfg.n, dtype=np.int32)
    res = run_agreement(ctx, inputs, adversary=adv)
    return ctx, inputs, res


@pytest.mark.parametrize("bit", [0, 1])
def test_validity_with_unanimous_inputs(bit):
    ctx, inputs, res = _run(np.full(32, bit, dtype=np.int32))
    honest = ~ctx.byz_mask
    assert np.all(res.final_votes[honest] == bit)
    assert evaluate(res, inputs, ctx.byz_mask)["validity_ok"]


def test_validity_holds_under_byzantine_silence():
    inputs = np.ones(32, dtype=np.int32)
    # the validity gate counts against all n, so |B| must stay below 0.05*n
    ctx, inputs, res = _run(inputs, byzantine_count=1, seed=2)
    ev = evaluate(res, inputs, ctx.byz_mask)
    assert ev["validity_ok"]
    assert ev["output_bit"] == 1


def test_split_inputs_reach_agreement():
    rng = np.random.default_rng(7)
    inputs = rng.integers(0, 2, 32).astype(np.int32)
    ctx, inputs, res = _run(inputs, seed=3)
    ev = evaluate(res, inputs, ctx.byz_mask)
    assert ev["agree_frac"] >= 0.95
    assert ev["agreed_phase"] is not None
    assert ev["agreed_phase"] <= 12


def test_early_stop_cuts_phases():
    _, _, res = _run(np.ones(32, dtype=np.int32))
    assert len(res.phases) < 12
    assert res.agreed_phase == res.phases[-1].phase


def test_full_budget_runs_without_early_stop():
    _, _, res = _run(np.ones(32, dtype=np.int32), early_stop=False, num_phases=5)
    assert len(res.phases) == 5


def test_phase_records_are_consistent():
    ctx, _, res = _run(np.ones(32, dtype=np.int32), early_stop=False, num_phases=4)
    for i, rec in enumerate(res.phases, start=1):
        assert rec.phase == i
        assert 1 <= rec.coin_rank <= 32
        assert 0.5 <= rec.agree_frac <= 1.0
        assert 0.0 <= rec.mean_tally <= 1.0
    assert res.rounds_logical > res.rounds_walked


def test_deterministic_across_reruns():
    _, _, r1 = _run(np.ones(32, dtype=np.int32), seed=9)
    ctx2, _, r2 = _run(np.ones(32, dtype=np.int32), seed=9)
    assert np.array_equal(r1.final_votes, r2.final_votes)
    assert [p.agree_frac for p in r1.phases] == [p.agree_frac for p in r2.phases]


def test_coins_upfront_publishes_schedule_to_adversary():
    cfg = ExperimentConfig(n=32, d=4, seed=1, num_phases=6,
                           coins_upfront=True, early_stop=False)
    ctx = WalkContext(cfg)
    res = run_agreement(ctx, np.ones(32, dtype=np.int32),
                        adversary=make_strategy("silent"))
    sched = ctx.extra["coin_schedule"]
    assert len(sched) == 6 and set(sched) <= {0, 1}
    assert ctx.extra["upcoming_coin"] == sched[len(res.phases) - 1]


def test_evaluate_reports_disagreement_honestly():
    class R:
        final_votes = np.array([0, 1] * 16, dtype=np.int32)
        agreed_phase = None
        phases = []
    ev = evaluate(R(), np.ones(32, dtype=np.int32), np.zeros(32, dtype=bool))
    assert ev["agree_frac"] == 0.5
    assert not ev["validity_ok"]
