import logging

import numpy as np
import pytest

from agbp.analysis import wls_solve
from agbp.generator import GeneratorSpec, generate_model
from agbp.graph import build_factor_graph
from agbp.model import ClusterPartition, LinearModel

# Strictly diagonally dominant, clusters {0, 1, 2} and {3, 4, 5}; rows 2 and 3 tie them.
TWO_CLUSTER_H = np.array([
    [3.0, 1.0, 0.5, 0.0, 0.0, 0.0],
    [1.0, 4.0, 1.0, 0.0, 0.0, 0.0],
    [0.5, 1.0, 3.0, 0.7, 0.0, 0.0],
    [0.0, 0.0, 0.7, 3.0, 1.0, 0.5],
    [0.0, 0.0, 0.0, 1.0, 4.0, 1.0],
    [0.0, 0.0, 0.0, 0.5, 1.0, 3.0],
])
TWO_CLUSTER_X = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

# 4-variable chain with leaf factors on both ends: a tree.
CHAIN_H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [1.0, -0.5, 0.0, 0.0],
    [0.0, 2.0, 1.0, 0.0],
    [0.0, 0.0, 1.0, 1.5],
    [0.0, 0.0, 0.0, 2.0],
])


@pytest.fixture
def two_cluster_model():
    return LinearModel.from_dense(TWO_CLUSTER_H, TWO_CLUSTER_H @ TWO_CLUSTER_X, np.ones(6),
                                  home_cluster=[0, 0, 0, 1, 1, 1])


@pytest.fixture
def two_cluster_partition():
    return ClusterPartition.contiguous([3, 3])


@pytest.fixture
def two_cluster_graph(two_cluster_model):
    return build_factor_graph(two_cluster_model)


@pytest.fixture
def chain_model():
    return LinearModel.from_dense(CHAIN_H, [0.3, -1.2, 2.5, 0.7, 4.0], [1.0, 0.5, 2.0, 1.0, 0.25])


@pytest.fixture
def chain_graph(chain_model):
    return build_factor_graph(chain_model)


@pytest.fixture
def diagonal_graph():
    return build_factor_graph(LinearModel.from_dense(np.diag([2.0, -1.0, 4.0]), [4.0, 3.0, 2.0], [1.0, 2.0, 0.5]))


@pytest.fixture
def agbp_logs(caplog):
    """caplog wired to the ``agbp`` logger, which stops propagation once configured."""
    logger = logging.getLogger("agbp")
    logger.addHandler(caplog.handler)
    caplog.set_level(logging.DEBUG, logger="agbp")
    yield caplog
    logger.removeHandler(caplog.handler)


@pytest.fixture
def small_spec():
    return GeneratorSpec(cluster_count=2, rows_per_cluster=10, cols_per_cluster=10,
                         internal_edges=30, tie_edges=3, matrix_kind="symmetric",
                         diagonal_increment=0.01, seed=1)


# Square and diagonally dominant; the cavity of each variable without its own row is underdetermined.
SQUARE_H = np.array([[3.0, 1.0], [1.0, 4.0]])

PAPER_SIZE = GeneratorSpec(cluster_count=2, rows_per_cluster=100, cols_per_cluster=100, internal_edges=600,
                           tie_edges=5, matrix_kind="symmetric", diagonal_increment=0.01)


@pytest.fixture
def square_graph():
    return build_factor_graph(LinearModel.from_dense(SQUARE_H, SQUARE_H @ [1.0, 2.0], [1.0, 1.0]))


@pytest.fixture(scope="module")
def paper_size_instance():
    model, partition = generate_model(PAPER_SIZE.model_copy(update={"seed": 42}))
    return build_factor_graph(model), partition, wls_solve(model)
