import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qtfraud.graphs import TransactionGraph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_graph(edges, triangles=(), bias=None, nodes=None):
    """Small helper for hand-built graphs: edges as (src, dst, w[, t])."""
    norm_edges = []
    for e in edges:
        if len(e) == 3:
            norm_edges.append((e[0], e[1], float(e[2]), 0))
        else:
            norm_edges.append((e[0], e[1], float(e[2]), int(e[3])))
    node_set = {e[0] for e in norm_edges} | {e[1] for e in norm_edges}
    for t in triangles:
        node_set.update(t[:3])
    if nodes:
        node_set.update(nodes)
    node_tuple = tuple(sorted(node_set))
    if bias is None:
        bias = {v: 1.0 / len(node_tuple) for v in node_tuple} if node_tuple else {}
    return TransactionGraph(
        nodes=node_tuple,
        edges=tuple(norm_edges),
        triangles=tuple((a, b, c, float(g)) for a, b, c, g in triangles),
        node_bias=bias,
    )


@pytest.fixture
def graph_factory():
    return make_graph
