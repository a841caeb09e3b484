import numpy as np
import pytest

from tmpgnn.graph import SynthConfig, TemporalMultilayerGraph, synth_graph


def random_graph(num_nodes, num_layers, num_streams=1, p=0.4, directed=False, seed=0):
    """Erdos-Renyi layers with uniform stream values in (0.1, 1)."""
    rng = np.random.default_rng(seed)
    lt, lu, lv = [], [], []
    for t in range(num_layers):
        draw = rng.random((num_nodes, num_nodes)) < p
        if not directed:
            draw = np.triu(draw, 1)
        np.fill_diagonal(draw, False)
        u, v = np.nonzero(draw)
        lt += [t] * len(u)
        lu += u.tolist()
        lv += v.tolist()
    feats = rng.uniform(0.1, 1.0, size=(len(lt), num_streams))
    return TemporalMultilayerGraph(num_nodes, num_layers, num_streams, lt, lu, lv, feats,
                                   directed=directed)


def dense_supra(g, omega, coupling_matrix, stream=0):
    """Brute-force blockdiag(A^(t)) + omega * kron(A~, I) on dense arrays."""
    N, T = g.num_nodes, g.num_layers
    C = np.zeros((N * T, N * T))
    for t, u, v, x in zip(g.layer, g.src, g.dst, g.features):
        w = x[stream] if g.num_streams else 1.0
        C[u + N * t, v + N * t] = w
        if not g.directed:
            C[v + N * t, u + N * t] = w
    return C + omega * np.kron(coupling_matrix, np.eye(N))


@pytest.fixture
def small_graph():
    return random_graph(6, 4, num_streams=2, p=0.5, seed=1)


@pytest.fixture
def sbm_graph():
    return synth_graph(SynthConfig(num_nodes=12, num_layers=4, num_streams=2, communities=2,
                                   seed=0))


@pytest.fixture
def fixtures_nt64():
    """Assorted graphs with N*T <= 64, directed and undirected."""
    out = []
    for seed, (N, T, directed) in enumerate([(4, 3, False), (8, 8, False), (5, 6, True),
                                              (16, 4, False), (3, 10, True), (2, 2, False)]):
        out.append(random_graph(N, T, num_streams=1, p=0.5, directed=directed, seed=seed))
    out.append(synth_graph(SynthConfig(num_nodes=8, num_layers=8, seed=3)))
    return out


# --------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
