import math

import numpy as np
import pytest

from graphshed.clubbing import (
    CoarsenState,
    Matching,
    club,
    contract,
    graph_cost,
    kink_detected,
    load_partitions,
    pwm,
    save_cost_history,
    save_partitions,
)
from graphshed.clustering import cluster
from graphshed.data import gen_dataset_one
from graphshed.knitting import HeuristicParams, knit

from conftest import as_clustering, make_clusters
from test_shedding import graph_of

E = math.e


def oracle_pwm(adj, edge_cut):
    """Independent sort-then-scan matching oracle."""
    edges = sorted(
        ((i, j, w) for i in adj for j, w in adj[i].items() if i < j and w >= edge_cut),
        key=lambda e: (-e[2], e[0], e[1]),
    )
    used, pairs = set(), []
    for i, j, _ in edges:
        if i not in used and j not in used:
            pairs.append((i, j))
            used.update((i, j))
    return pairs


class TestPwm:
    def test_path_fixture(self):
        g = graph_of([(1, 1)] * 4, [(0, 1, 5.0), (1, 2, 4.0), (2, 3, 3.5)])
        assert pwm(g, 3.2).pairs == [(0, 1), (2, 3)]

    def test_high_cut_empty(self):
        g = graph_of([(1, 1)] * 4, [(0, 1, 5.0), (1, 2, 4.0), (2, 3, 3.5)])
        assert pwm(g, 6.0).pairs == []

    def test_star_matches_one_pair(self):
        g = graph_of([(1, 1)] * 4, [(0, 1, 4.0), (0, 2, 4.0), (0, 3, 4.0)])
        m = pwm(g, 1.0)
        assert len(m.pairs) == 1
        assert m.pairs[0][0] == 0 or m.pairs[0][1] == 0

    def test_matching_validity_no_repeated_nodes(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = 30
            g = graph_of([(1, 1)] * n, [])
            for _ in range(80):
                i, j = rng.integers(0, n, 2)
                if i != j:
                    i, j = int(min(i, j)), int(max(i, j))
                    w = float(rng.random() * 10)
                    g.adj[i][j] = w
                    g.adj[j][i] = w
            m = pwm(g, 2.0)
            flat = [x for pair in m.pairs for x in pair]
            assert len(flat) == len(set(flat))

    @pytest.mark.parametrize("seed", range(5))
    def test_equals_independent_oracle_on_random_graphs(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            n = int(rng.integers(5, 40))
            g = graph_of([(1, 1)] * n, [])
            for _ in range(n * 3):
                i, j = rng.integers(0, n, 2)
                if i != j:
                    i, j = int(min(i, j)), int(max(i, j))
                    w = float(np.round(rng.random() * 8, 3))
                    g.adj[i][j] = w
                    g.adj[j][i] = w
            cut = float(rng.random() * 4)
            assert pwm(g, cut).pairs == oracle_pwm(g.adj, cut)


class TestContract:
    def make_state(self, g, ids=None):
        ids = ids if ids is not None else sorted(g.adj)
        sizes = {i: int(g.sizes[i]) for i in ids}
        return CoarsenState(g, ids, sizes)

    def test_weighted_tc(self):
        g = graph_of([(1, 10), (-1, 30)], [(0, 1, 100.0)])
        state = self.make_state(g)
        contract(state, Matching([(0, 1)]), HeuristicParams())
        assert state.tc[0] == pytest.approx(-0.5)
        assert state.sizes[0] == 40

    def test_min_id_survives(self):
        g = graph_of([(1, 1)] * 8, [(3, 7, 9.0)])
        state = self.make_state(g)
        contract(state, Matching([(7, 3)]), HeuristicParams())
        assert 3 in state.adj and 7 not in state.adj
        assert state.find(7) == 3

    def test_reassessed_pure_pair_weighs_three(self):
        # two contracted pure supernodes joined by an edge: re-assessment
        # with C_I = e^1.5, C_E = 1 gives exactly 1 + 1 + 1
        g = graph_of(
            [(1, 2), (1, 2), (1, 2), (1, 2)],
            [(0, 1, 50.0), (2, 3, 50.0), (1, 2, 7.0)],
        )
        state = self.make_state(g)
        params = HeuristicParams(C_I_reassess=E**1.5, C_E_reassess=1.0)
        contract(state, Matching([(0, 1), (2, 3)]), params)
        assert state.adj[0][2] == pytest.approx(3.0)

    def test_parallel_edges_keep_max_when_neighbor_not_critical(self):
        g = graph_of(
            [(1, 1), (1, 1), (1, 1)],
            [(0, 1, 9.0), (0, 2, 2.0), (1, 2, 5.0)],
        )
        state = self.make_state(g)
        contract(state, Matching([(0, 1)]), HeuristicParams())
        assert state.adj[0][2] == pytest.approx(5.0)

    def test_stale_matching_rejected(self):
        g = graph_of([(1, 1)] * 4, [(0, 1, 9.0), (2, 3, 8.0)])
        state = self.make_state(g)
        contract(state, Matching([(0, 1)]), HeuristicParams())
        with pytest.raises(ValueError, match="stale"):
            contract(state, Matching([(1, 2)]), HeuristicParams())


class TestGraphCost:
    def test_sum_above_cut(self):
        g = graph_of([(1, 1)] * 4, [(0, 1, 3.0), (1, 2, 10.0), (2, 3, 2982.958)])
        assert graph_cost(g, 3.20) == pytest.approx(2992.958)

    def test_no_qualifying_edges(self):
        g = graph_of([(1, 1)] * 2, [(0, 1, 3.0)])
        assert graph_cost(g, 5.0) == 0.0

    def test_minus_inf_sums_everything(self):
        g = graph_of([(1, 1)] * 3, [(0, 1, 1.0), (1, 2, 2.0)])
        assert graph_cost(g, -math.inf) == pytest.approx(3.0)

    def test_strictly_above_cut(self):
        g = graph_of([(1, 1)] * 2, [(0, 1, 3.2)])
        assert graph_cost(g, 3.2) == 0.0


class TestKinkDetected:
    def test_sharp_drop_is_kink(self):
        # deltas -100 then -5 with theta 0.2
        assert kink_detected(100.0, 200.0, 95.0, 0.2)

    def test_similar_slope_not_kink(self):
        # deltas -100 then -95
        assert not kink_detected(100.0, 200.0, 5.0, 0.2)

    def test_flat_costs_not_kink(self):
        assert not kink_detected(50.0, 50.0, 50.0, 0.2)

    def test_theta_bounds(self):
        with pytest.raises(ValueError):
            kink_detected(1.0, 2.0, 0.5, 1.5)


def knitted_fixture(n=4000, n_c=40, seed=7, **kw):
    ds = gen_dataset_one(n, 2, margin=0.1, seed=seed)
    res = cluster(ds, n_c, iters=4, seed=0)
    params = HeuristicParams(ens_iters=1, R=2.0, **kw)
    g = knit(res.clusters, params)
    return ds, res, g, params


class TestClub:
    def test_zero_iterations_yields_singletons(self):
        from graphshed.shedding import shed

        ds, res, g, params = knitted_fixture(max_coarsen_iters=0)
        parts = club(g, res, params, ds.targets)
        assert len(parts) == len(shed(g, params.gs_edge_cut))
        assert all(len(p.cluster_ids) == 1 for p in parts.partitions)

    def test_partitions_disjoint_and_cover_relevant(self):
        from graphshed.shedding import shed

        ds, res, g, params = knitted_fixture()
        parts = club(g, res, params, ds.targets)
        seen: list[int] = []
        for p in parts.partitions:
            seen += p.cluster_ids
        assert len(seen) == len(set(seen))
        assert sorted(seen) == shed(g, params.gs_edge_cut)

    def test_cost_history_non_increasing(self):
        ds, res, g, params = knitted_fixture()
        parts = club(g, res, params, ds.targets)
        assert len(parts.cost_history) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(parts.cost_history, parts.cost_history[1:]))

    def test_matching_candidates_never_grow(self):
        from graphshed.shedding import shed

        ds, res, g, params = knitted_fixture()
        relevant = shed(g, params.gs_edge_cut)
        state = CoarsenState(g, relevant, {i: int(g.sizes[i]) for i in relevant})
        prev = None
        for _ in range(params.max_coarsen_iters):
            m = pwm(state, params.gc_edge_cut)
            candidates = sum(
                1 for i in state.adj for j, w in state.adj[i].items()
                if i < j and w >= params.gc_edge_cut
            )
            if prev is not None:
                assert candidates <= prev
            prev = candidates
            if not m.pairs:
                break
            contract(state, m, params)

    def test_trivial_reassessment_shuts_clubbing_off(self):
        # initial constants dominate either way; with re-assessed weights
        # pinned at 3 (< the matching cut) contraction stops after the
        # original edges, leaving at least as many partitions
        ds, res, g, params = knitted_fixture()
        case1 = HeuristicParams(
            ens_iters=1, R=2.0, C_I_reassess=E**1.5, C_E_reassess=1.0
        )
        case2 = HeuristicParams(ens_iters=1, R=2.0, C_I_reassess=1.0, C_E_reassess=1.0)
        parts1 = club(g, res, case1, ds.targets)
        parts2 = club(g, res, case2, ds.targets)
        assert len(parts2) >= len(parts1)

    def test_point_ids_expand_members(self):
        ds, res, g, params = knitted_fixture()
        parts = club(g, res, params, ds.targets)
        for p in parts.partitions:
            want = np.unique(np.concatenate([res.clusters[c].members for c in p.cluster_ids]))
            assert np.array_equal(p.point_ids, want)
            t = ds.targets[p.point_ids]
            assert p.class_counts == (int(np.sum(t == -1)), int(np.sum(t == 1)))

    def test_kink_stop_can_terminate_early(self):
        ds, res, g, _ = knitted_fixture()
        free_run = club(g, res, HeuristicParams(ens_iters=1, R=2.0, max_coarsen_iters=10), ds.targets)
        kinked = club(
            g, res,
            HeuristicParams(ens_iters=1, R=2.0, max_coarsen_iters=10, stop_on_kink=True, kink_theta=0.2),
            ds.targets,
        )
        assert kinked.iterations_run <= free_run.iterations_run

    def test_serialization_round_trip(self, tmp_path):
        ds, res, g, params = knitted_fixture()
        parts = club(g, res, params, ds.targets)
        p = tmp_path / "parts.jsonl"
        save_partitions(parts, p, config={"gc_edge_cut": params.gc_edge_cut})
        back = load_partitions(p)
        assert len(back) == len(parts)
        assert back.cost_history == pytest.approx(parts.cost_history)
        for a, b in zip(parts.partitions, back.partitions):
            assert a.id == b.id and a.cluster_ids == b.cluster_ids
            assert np.array_equal(a.point_ids, b.point_ids)

    def test_cost_history_csv(self, tmp_path):
        p = tmp_path / "cost.csv"
        save_cost_history([10.0, 4.0, 3.5], p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "iteration,cost"
        assert len(lines) == 4
