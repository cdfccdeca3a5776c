"""Synchronous-round execution model.

Each round: (1) honest nodes draw their randomness and stage outgoing
messages, (2) the adversary observes the entire state including that
randomness (rushing) and stages messages on Byzantine-incident edges,
(3) delivery, (4) honest receive/update. The Byzantine set is fixed
before round 0 and runs are pure functions of (config, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .streams import NodeStream


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class RoundBudgetExceeded(RuntimeError):
    """Round budget expired before the protocol terminated (exit code 4)."""


def log2_ceil(n: int) -> int:
    return max(1, math.ceil(math.log2(n)))


@dataclass
class ExperimentConfig:
    n: int = 64
    d: int = 6
    byzantine_count: int = 0
    seed: int = 0
    a: float = 1.0                  # per-edge cap constant: cap = a * ceil(log n)^3
    b: float = 2.0                  # protocol-side mixing estimate: tau = b * ceil(log n)
    whp_exponent: float = 3.0
    gamma: float = 1.0              # direct-dissemination budget: total = gamma * n * ceil(log n)
    lam: int | None = None          # stage-duplication base budget, default ceil(log n)^3
    delta: float | None = None      # stage-duplication slack, default 1 / ceil(log n)
    epsilon: float = 0.5
    tally_threshold: float = 0.9
    num_phases: int | None = None   # agreement phases, default 4n
    adversary_name: str = "silent"
    adversary_params: dict = field(default_factory=dict)
    variant: str = "v2"
    theta: float = 0.5
    congestion_factor: float = 8.0  # congestion bound = factor * lam / delta
    fail_frac: float = 0.05
    coins_upfront: bool = False
    tau_override: int | None = None
    round_budget_factor: float = 50.0
    early_stop: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 4:
            raise ConfigError("n must be at least 4")
        if not 3 <= self.d < self.n:
            raise ConfigError("need 3 <= d < n")
        if (self.n * self.d) % 2 != 0:
            raise ConfigError("n * d must be even")
        if not 0 <= self.byzantine_count < self.n:
            raise ConfigError("byzantine_count must be in [0, n)")
        if not 0.5 < self.tally_threshold < 1:
            raise ConfigError("tally_threshold must be in (0.5, 1)")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.variant not in ("v1", "v2"):
            raise ConfigError("variant must be v1 or v2")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must be in (0, 1)")

    # ---- derived protocol constants ----
    @property
    def log_n(self) -> int:
        return log2_ceil(self.n)

    @property
    def cap(self) -> int:
        return max(1, int(self.a * self.log_n**3))

    @property
    def tau(self) -> int:
        if self.tau_override is not None:
            return self.tau_override
        return max(1, int(self.b * self.log_n))

    @property
    def rw_length(self) -> int:
        return 2 * self.tau

    @property
    def lam_value(self) -> int:
        return self.lam if self.lam is not None else self.log_n**3

    @property
    def delta_value(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.log_n

    @property
    def congestion_bound(self) -> int:
        return max(1, int(self.congestion_factor * self.lam_value / self.delta_value))

    @property
    def phase_count(self) -> int:
        return self.num_phases if self.num_phases is not None else 4 * self.n

    @property
    def direct_total(self) -> int:
        """Per-node token budget of the direct dissemination protocol."""
        return max(1, int(self.gamma * self.n * self.log_n))

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        fields = set(cls.__dataclass_fields__)
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def choose_byzantine(config: ExperimentConfig) -> set[int]:
    """Static Byzantine set, fixed before round 0, derived from the seed."""
    if config.byzantine_count == 0:
        return set()
    rng = np.random.default_rng([config.seed, 0xB12A17])
    picks = rng.choice(config.n, size=config.byzantine_count, replace=False)
    return {int(x) for x in picks}


class Transcript:
    """Append-only, replayable event log plus a running digest.

    High-volume token traversals are folded into the digest and into
    compact per-phase summaries rather than stored one event per row.
    """

    def __init__(self, config: ExperimentConfig):
        self.config_hash = config.config_hash()
        self.seed = config.seed
        self.events: list[tuple] = []
        self.complete = True
        self._digest = hashlib.sha256(self.config_hash.encode())

    def append(self, *event) -> None:
        self.events.append(event)
        self._digest.update(repr(event).encode())

    def fold(self, label: str, array: np.ndarray) -> None:
        """Absorb a bulk array into the digest without storing it."""
        self._digest.update(label.encode())
        self._digest.update(np.ascontiguousarray(array).tobytes())

    def digest(self) -> str:
        return self._digest.hexdigest()

    def canonical_bytes(self) -> bytes:
        head = f"{self.config_hash} {self.seed} {int(self.complete)}\n".encode()
        body = "\n".join(repr(e) for e in self.events).encode()
        return head + body + b"\n" + self.digest().encode()


@dataclass
class Message:
    sender: int
    receiver: int
    payload: object


class RoundEnv:
    """Full-information view handed to the adversary each round.

    Honest protocol code never sees this object; it is given only its own
    node id, neighbor list, state dict, and per-round stream.
    """

    def __init__(self, graph, byzantine: set[int], config: ExperimentConfig):
        self.graph = graph
        self.byzantine = byzantine
        self.config = config
        self.round_number = 0
        self.node_state: dict[int, dict] = {u: {} for u in range(graph.n)}
        self.staged: list[Message] = []     # honest messages staged this round
        self.honest_randomness: dict = {}   # visible to the adversary (rushing)
        self.extra: dict = {}               # protocol-specific global state (oracle/adversary view)

    def byzantine_edges(self) -> list[tuple[int, int]]:
        out = []
        for b in self.byzantine:
            for v in self.graph.neighbors(b):
                out.append((b, int(v)))
        return out


def run(config: ExperimentConfig, protocol, adversary, max_rounds: int | None = None) -> Transcript:
    """Generic synchronous-round driver for message protocols.

    `protocol` implements stage(node, neighbors, state, stream) -> [(nbr,
    payload)], receive(node, deliveries, state) and done(round) -> bool.
    `adversary` implements act(env) -> [Message] and may emit only on
    Byzantine-incident edges (engine-enforced).
    """
    from .graph import generate_regular_expander

    graph = generate_regular_expander(config.n, config.d, config.seed)
    byzantine = choose_byzantine(config)
    env = RoundEnv(graph, byzantine, config)
    transcript = Transcript(config)
    transcript.append("byzantine", tuple(sorted(byzantine)))
    if max_rounds is None:
        max_rounds = max(1, int(config.round_budget_factor * config.rw_length))

    for rnd in range(max_rounds):
        env.round_number = rnd
        env.staged = []
        env.honest_randomness = {}
        # 1. honest staging, randomness drawn first and made visible
        for u in range(graph.n):
            if u in byzantine:
                continue
            stream = NodeStream(config.seed, u, rnd)
            out = protocol.stage(u, graph.neighbors(u), env.node_state[u], stream)
            env.honest_randomness[u] = [nbr for nbr, _ in out]
            for nbr, payload in out:
                env.staged.append(Message(u, int(nbr), payload))
        # 2. adversary observes everything, then stages
        adv_msgs = list(adversary.act(env))
        for m in adv_msgs:
            if m.sender not in byzantine or m.receiver not in set(
                int(x) for x in graph.neighbors(m.sender)
            ):
                raise RuntimeError("adversary may emit only on Byzantine-incident edges")
        # 3 + 4. delivery with link-level sender identity, honest receive
        inboxes: dict[int, list[Message]] = {}
        for m in env.staged + adv_msgs:
            inboxes.setdefault(m.receiver, []).append(m)
        for u in range(graph.n):
            if u in byzantine:
                continue
            protocol.receive(u, inboxes.get(u, []), env.node_state[u])
        transcript.append("round", rnd, len(env.staged), len(adv_msgs))
        if protocol.done(rnd):
            return transcript

    transcript.complete = False
    raise RoundBudgetExceeded(f"protocol did not terminate in {max_rounds} rounds")
