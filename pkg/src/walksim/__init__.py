"""Deterministic simulator for Byzantine-resilient random-walk protocols
on regular expanders: token flooding with caps and blacklists, reliable
almost-everywhere dissemination, repeated common coins, and iterated
binary voting, with exact spectral oracles and pluggable full-information
adversaries."""

from .engine import ConfigError, ExperimentConfig, RoundBudgetExceeded, Transcript
from .graph import (CoreSubgraph, Graph, SpectralProfile, extract_core,
                    generate_regular_expander, spectral_profile)
from .walk import (TokenBatch, WalkContext, WalkResult, classify_tokens,
                   endpoint_distribution_test, run_walk_protocol)
from .aerid import (UNDECIDED, AeridResult, decode_correctness, decode_received,
                    run_aerid)
from .coin import (CoinState, FlipOutcome, coin_flip, draw_ranks,
                   expected_unique_ranks, init_coin, predict_schedule,
                   unique_rank_count)
from .agreement import AgreementResult, evaluate, run_agreement
from .adversary import STRATEGIES, AdversaryStrategy, make_strategy
from .metrics import binomial_bounds, binomial_test, tv_distance

__version__ = "0.1.0"
__all__ = [
    "ConfigError", "ExperimentConfig", "RoundBudgetExceeded", "Transcript",
    "CoreSubgraph", "Graph", "SpectralProfile", "extract_core",
    "generate_regular_expander", "spectral_profile",
    "TokenBatch", "WalkContext", "WalkResult", "classify_tokens",
    "endpoint_distribution_test", "run_walk_protocol",
    "UNDECIDED", "AeridResult", "decode_correctness", "decode_received",
    "run_aerid",
    "CoinState", "FlipOutcome", "coin_flip", "draw_ranks",
    "expected_unique_ranks", "init_coin", "predict_schedule",
    "unique_rank_count",
    "AgreementResult", "evaluate", "run_agreement",
    "STRATEGIES", "AdversaryStrategy", "make_strategy",
    "binomial_bounds", "binomial_test", "tv_distance",
    "__version__",
]
