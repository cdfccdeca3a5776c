import numpy as np
import pytest

from walksim.graph import (DENSE_ORACLE_CAP, CoreExtractionError, GenerationError,
                           Graph, extract_core, generate_regular_expander,
                           read_graph_file, spectral_profile, write_graph_file)


def _check_regular_simple_connected(g):
    n, d = g.n, g.d
    deg = np.bincount(g.adjacency.reshape(-1), minlength=n)
    assert (deg == d).all()
    for u in range(n):
        row = g.adjacency[u]
        assert len(set(row.tolist())) == d          # no multi-edges
        assert u not in row                         # no self-loops
        for v in row:
            assert u in g.adjacency[v]              # symmetric
    # connectivity
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in g.adjacency[u]:
            if int(v) not in seen:
                seen.add(int(v))
                stack.append(int(v))
    assert len(seen) == n


@pytest.mark.parametrize("n,d", [(16, 4), (64, 6), (100, 5), (256, 6)])
def test_generator_produces_valid_graphs(n, d):
    for seed in range(3):
        _check_regular_simple_connected(generate_regular_expander(n, d, seed))


def test_generator_deterministic():
    a = generate_regular_expander(64, 6, 5)
    b = generate_regular_expander(64, 6, 5)
    assert np.array_equal(a.adjacency, b.adjacency)
    c = generate_regular_expander(64, 6, 6)
    assert not np.array_equal(a.adjacency, c.adjacency)


def test_generator_rejects_bad_parameters():
    with pytest.raises(ValueError):
        generate_regular_expander(3, 2, 0)
    with pytest.raises(ValueError):
        generate_regular_expander(10, 2, 0)
    with pytest.raises(ValueError):
        generate_regular_expander(9, 5, 0)  # odd stub count


def test_cross_check_against_networkx():
    nx = pytest.importorskip("networkx")
    g = generate_regular_expander(64, 6, 1)
    h = nx.Graph(list(g.edge_set()))
    assert nx.is_connected(h)
    assert all(deg == 6 for _, deg in h.degree())


def test_spectral_profile_frozen_values():
    g = generate_regular_expander(64, 6, 1)
    p = spectral_profile(g)
    assert p.second_eigenvalue_modulus == pytest.approx(0.7021680106644476, rel=1e-9)
    assert p.cheeger_lower_bound == pytest.approx(0.15949960045108158, rel=1e-9)
    assert p.mixing_time == 29
    assert p.converged


def test_spectral_profile_well_below_trivial_bound():
    # random 6-regular graphs concentrate near the Ramanujan value 2*sqrt(5)/6
    for seed in range(3):
        p = spectral_profile(generate_regular_expander(128, 6, seed))
        assert p.second_eigenvalue_modulus < 0.85


def test_transition_matrix_doubly_stochastic():
    g = generate_regular_expander(32, 4, 0)
    p = g.transition_matrix()
    assert np.allclose(p.sum(axis=0), 1)
    assert np.allclose(p.sum(axis=1), 1)


def test_dense_oracle_cap_enforced():
    g = Graph(n=DENSE_ORACLE_CAP + 2, d=4,
              adjacency=np.zeros((DENSE_ORACLE_CAP + 2, 4), dtype=np.int32))
    with pytest.raises(ValueError):
        spectral_profile(g)


def test_extract_core_no_byzantine_is_whole_graph():
    g = generate_regular_expander(64, 6, 1)
    core = extract_core(g, set())
    assert core.size == 64
    assert sum(core.stationary.values()) == pytest.approx(1.0)
    # regular graph: stationary is uniform
    assert core.stationary[0] == pytest.approx(1 / 64)


def test_extract_core_frozen_values():
    g = generate_regular_expander(64, 6, 1)
    core = extract_core(g, {52, 57, 58})
    assert core.size == 61
    assert core.edge_count == 174
    assert core.core_mixing_time == 31
    assert sum(core.stationary.values()) == pytest.approx(1.0)
    # stationary mass of a core node is deg/(2|E|)
    u = int(core.members[0])
    assert core.stationary[u] == pytest.approx(core.degree(u) / (2 * core.edge_count))
    assert not any(b in set(core.members.tolist()) for b in (52, 57, 58))


def test_extract_core_prunes_low_degree_honest_nodes():
    g = generate_regular_expander(64, 6, 1)
    # a node with more than theta*d byzantine neighbors must be pruned
    victim_neighbors = set(int(v) for v in g.adjacency[0][:4])
    core = extract_core(g, victim_neighbors)
    assert 0 not in set(core.members.tolist())


def test_extract_core_fails_when_core_too_small():
    g = generate_regular_expander(16, 4, 0)
    with pytest.raises(CoreExtractionError):
        extract_core(g, set(range(9)))


def test_graph_file_roundtrip(tmp_path):
    g = generate_regular_expander(32, 4, 2)
    path = tmp_path / "g.txt"
    write_graph_file(g, path)
    h = read_graph_file(path)
    assert h.n == g.n and h.d == g.d
    assert np.array_equal(h.adjacency, g.adjacency)
