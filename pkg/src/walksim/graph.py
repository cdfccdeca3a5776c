"""Regular expander topologies and exact spectral / mixing oracles.

Generation uses the stub-pairing (configuration) model with rejection of
self-loops, multi-edges and disconnected results. All oracle quantities
(second eigenvalue, mixing times, core stationary distribution) are
computed exactly with dense linear algebra; they are measurement devices
and are never consulted by protocol code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dense linear algebra is refused above this size; protocol simulation
# does not need the oracles to run.
DENSE_ORACLE_CAP = 4096

DEFAULT_RETRY_BUDGET = 200


class GenerationError(RuntimeError):
    """Raised when no acceptable graph is found within the retry budget."""


class CoreExtractionError(ValueError):
    """Raised when pruning leaves no component of at least n/2 nodes."""


@dataclass
class Graph:
    n: int
    d: int
    adjacency: np.ndarray  # (n, d) int array, row u = sorted neighbors of u

    def neighbors(self, u: int) -> np.ndarray:
        return self.adjacency[u]

    def edge_set(self) -> set[tuple[int, int]]:
        out = set()
        for u in range(self.n):
            for v in self.adjacency[u]:
                out.add((min(u, int(v)), max(u, int(v))))
        return out

    def transition_matrix(self, lazy: bool = False) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.d)
        p[rows, self.adjacency.reshape(-1)] = 1.0 / self.d
        if lazy:
            p = 0.5 * (p + np.eye(self.n))
        return p


@dataclass
class SpectralProfile:
    second_eigenvalue_modulus: float
    cheeger_lower_bound: float
    mixing_time: int
    converged: bool = True


@dataclass
class CoreSubgraph:
    members: np.ndarray          # sorted node ids
    core_adjacency: dict[int, np.ndarray]
    edge_count: int
    core_mixing_time: int
    stationary: dict[int, float]
    member_mask: np.ndarray = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return len(self.members)

    def degree(self, u: int) -> int:
        return len(self.core_adjacency[u])


def _is_connected(adj_lists: dict[int, list[int]], nodes: list[int]) -> bool:
    if not nodes:
        return False
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in adj_lists[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def generate_regular_expander(
    n: int, d: int, seed: int, retry_budget: int = DEFAULT_RETRY_BUDGET
) -> Graph:
    """Random simple connected d-regular graph on n nodes, deterministic per seed."""
    if n < 4:
        raise ValueError("n must be at least 4")
    if not 3 <= d < n:
        raise ValueError("need 3 <= d < n")
    if (n * d) % 2 != 0:
        raise ValueError("n * d must be even")

    rng = np.random.default_rng(seed)
    for _ in range(retry_budget):
        stubs = np.repeat(np.arange(n), d)
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        # repair self-loops and duplicate edges by random pair switches
        # (raw pairings are almost never simple at moderate d)
        m = len(pairs)
        for _rep in range(50 * m):
            u = np.minimum(pairs[:, 0], pairs[:, 1])
            v = np.maximum(pairs[:, 0], pairs[:, 1])
            keys = u.astype(np.int64) * n + v
            order = np.argsort(keys, kind="stable")
            dup = np.zeros(m, dtype=bool)
            dup[order[1:]] = keys[order[1:]] == keys[order[:-1]]
            bad = (u == v) | dup
            if not bad.any():
                break
            bad_idx = np.flatnonzero(bad)
            partners = rng.integers(0, m, size=len(bad_idx))
            # sequential scalar swaps: overlapping picks must not clobber stubs
            for i, j in zip(bad_idx.tolist(), partners.tolist()):
                pairs[i, 1], pairs[j, 1] = pairs[j, 1], pairs[i, 1]
        else:
            continue
        u = np.minimum(pairs[:, 0], pairs[:, 1])
        v = np.maximum(pairs[:, 0], pairs[:, 1])
        adj = {w: [] for w in range(n)}
        for a, b in zip(u.tolist(), v.tolist()):
            adj[a].append(b)
            adj[b].append(a)
        if not _is_connected(adj, list(range(n))):
            continue
        mat = np.array([sorted(adj[w]) for w in range(n)], dtype=np.int32)
        return Graph(n=n, d=d, adjacency=mat)
    raise GenerationError(f"no simple connected {d}-regular graph found in {retry_budget} tries")


def _mixing_time_by_powers(p: np.ndarray, stationary: np.ndarray, eps: float, max_steps: int):
    """Smallest t with max_v ||P^t e_v - pi||_inf <= eps, by exact powering."""
    m = p.copy()
    for t in range(1, max_steps + 1):
        if np.max(np.abs(m - stationary[np.newaxis, :])) <= eps:
            return t, True
        m = m @ p
    return max_steps, False


def spectral_profile(g: Graph, lazy: bool = False, max_steps: int | None = None) -> SpectralProfile:
    if g.n > DENSE_ORACLE_CAP:
        raise ValueError(f"dense oracle disabled above n={DENSE_ORACLE_CAP}")
    p = g.transition_matrix(lazy=lazy)
    eigs = np.linalg.eigvalsh(p)  # symmetric for regular graphs
    mods = np.sort(np.abs(eigs))[::-1]
    lam2 = float(mods[1])
    eps = 1.0 / g.n**3
    if max_steps is None:
        max_steps = max(200, 20 * g.n)
    stationary = np.full(g.n, 1.0 / g.n)
    t, ok = _mixing_time_by_powers(p, stationary, eps, max_steps)
    # cheeger bound from the signed second eigenvalue of the walk matrix
    lam2_signed = float(np.sort(eigs)[-2])
    return SpectralProfile(
        second_eigenvalue_modulus=lam2,
        cheeger_lower_bound=(1.0 - lam2_signed) / 2.0,
        mixing_time=t,
        converged=ok,
    )


def extract_core(
    g: Graph,
    byzantine: set[int],
    theta: float = 0.5,
    max_steps: int | None = None,
) -> CoreSubgraph:
    """Iterative-pruning core oracle.

    Removes the byzantine set, then repeatedly removes any node that has
    lost more than theta*d of its original neighbors, and keeps the
    largest connected component of what remains.
    """
    if not byzantine <= set(range(g.n)):
        raise ValueError("byzantine set must be a subset of the nodes")
    if not 0 < theta < 1:
        raise ValueError("theta must be in (0,1)")
    if g.n > DENSE_ORACLE_CAP:
        raise ValueError(f"dense oracle disabled above n={DENSE_ORACLE_CAP}")

    alive = np.ones(g.n, dtype=bool)
    for b in byzantine:
        alive[b] = False
    limit = theta * g.d
    while True:
        lost = np.zeros(g.n)
        for u in range(g.n):
            if alive[u]:
                lost[u] = np.sum(~alive[g.adjacency[u]])
        drop = alive & (lost > limit)
        if not drop.any():
            break
        alive[drop] = False

    nodes = [u for u in range(g.n) if alive[u]]
    adj_lists = {u: [int(v) for v in g.adjacency[u] if alive[v]] for u in nodes}
    # largest connected component
    unvisited = set(nodes)
    best: list[int] = []
    while unvisited:
        start = next(iter(unvisited))
        comp = {start}
        stack = [start]
        unvisited.discard(start)
        while stack:
            u = stack.pop()
            for v in adj_lists[u]:
                if v in unvisited:
                    unvisited.discard(v)
                    comp.add(v)
                    stack.append(v)
        if len(comp) > len(best):
            best = sorted(comp)

    if len(best) < g.n / 2:
        raise CoreExtractionError(
            f"core has {len(best)} < n/2 nodes; parameters outside the assumed regime"
        )

    members = np.array(best, dtype=np.int32)
    core_adj = {u: np.array([v for v in adj_lists[u] if v in set(best)], dtype=np.int32)
                for u in best}
    edge_count = sum(len(core_adj[u]) for u in best) // 2
    stationary = {u: len(core_adj[u]) / (2.0 * edge_count) for u in best}

    # exact mixing time of the standard walk on the component
    k = len(best)
    index = {u: i for i, u in enumerate(best)}
    p = np.zeros((k, k))
    for u in best:
        deg = len(core_adj[u])
        for v in core_adj[u]:
            p[index[u], index[v]] = 1.0 / deg
    pi = np.array([stationary[u] for u in best])
    eps = 1.0 / g.n**3
    if max_steps is None:
        max_steps = max(200, 20 * g.n)
    t, _ = _mixing_time_by_powers(p, pi, eps, max_steps)

    mask = np.zeros(g.n, dtype=bool)
    mask[members] = True
    return CoreSubgraph(
        members=members,
        core_adjacency=core_adj,
        edge_count=edge_count,
        core_mixing_time=t,
        stationary=stationary,
        member_mask=mask,
    )


def conditioned_walk_distribution(core: CoreSubgraph, start: int, steps: int) -> dict[int, float]:
    """Exact distribution of a standard walk on the core after `steps` steps."""
    if start not in core.stationary:
        raise ValueError("start must be a core member")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    members = [int(u) for u in core.members]
    index = {u: i for i, u in enumerate(members)}
    k = len(members)
    vec = np.zeros(k)
    vec[index[start]] = 1.0
    p = np.zeros((k, k))
    for u in members:
        deg = len(core.core_adjacency[u])
        for v in core.core_adjacency[u]:
            p[index[u], index[v]] = 1.0 / deg
    for _ in range(steps):
        vec = vec @ p
    return {u: float(vec[index[u]]) for u in members}


def write_graph_file(g: Graph, path: str) -> None:
    """Text format: line 1 `n d`, then `u v` (u < v), lexicographic."""
    edges = sorted(g.edge_set())
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.d}\n")
        for u, v in edges:
            fh.write(f"{u} {v}\n")


def read_graph_file(path: str) -> Graph:
    with open(path) as fh:
        n, d = (int(x) for x in fh.readline().split())
        adj = {u: [] for u in range(n)}
        for line in fh:
            if not line.strip():
                continue
            u, v = (int(x) for x in line.split())
            adj[u].append(v)
            adj[v].append(u)
    mat = np.array([sorted(adj[u]) for u in range(n)], dtype=np.int32)
    return Graph(n=n, d=d, adjacency=mat)
