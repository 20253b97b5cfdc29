import numpy as np
import pytest

from graphshed.clustering import Cluster, ClusteringResult


def make_clusters(specs):
    """Hand fixture: specs is a list of (center, tc, size) triples.

    Member point ids are assigned consecutively so expansion math stays
    checkable by hand.
    """
    clusters = []
    next_pid = 0
    for cid, (center, tc, size) in enumerate(specs):
        members = np.arange(next_pid, next_pid + size, dtype=np.int64)
        next_pid += size
        clusters.append(
            Cluster(
                id=cid,
                center=np.asarray(center, dtype=np.float64),
                tc=float(tc),
                members=members,
                size=size,
            )
        )
    return clusters


def as_clustering(clusters):
    n = sum(c.size for c in clusters)
    assignment = np.empty(n, dtype=np.int64)
    for c in clusters:
        assignment[c.members] = c.id
    return ClusteringResult(clusters, assignment, iterations_run=1)


@pytest.fixture
def cluster_factory():
    return make_clusters
