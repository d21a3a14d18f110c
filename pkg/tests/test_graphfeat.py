import io
import random

import numpy as np
import pytest

from privaml import graphfeat
from privaml.data import DAY_SECONDS, Account, Transaction
from privaml.graphfeat import (
    DynamicGraph,
    Edge,
    OutOfOrderEdge,
    WindowConfig,
    bin_index,
    bin_labels,
    enrich,
    oracle_enrich,
)

A = Account(0, "a")
B = Account(0, "b")
C = Account(1, "c")
D = Account(1, "d")
E = Account(2, "e")
K = Account(2, "k")
H = Account(3, "h")
M1, M2, M3 = Account(3, "m1"), Account(4, "m2"), Account(4, "m3")


def edge(src, dst, ts, amount=100, tx_id=None):
    return Edge(timestamp=ts, src=src, dst=dst, amount=amount, tx_id=tx_id or f"e{ts}")


def tx_of(e, currency="USD", payment="Wire", label=False):
    return Transaction(
        tx_id=e.tx_id,
        timestamp=e.timestamp,
        src=e.src,
        dst=e.dst,
        amount=e.amount,
        currency=currency,
        payment_format=payment,
        is_laundering=label,
    )


def run_window(history, query, cfg=None):
    """Feed history edges then the query; return the query's enriched row."""
    cfg = cfg or WindowConfig()
    g = DynamicGraph(cfg)
    row = None
    for e in history:
        row = enrich(g, tx_of(e), cfg)
    return enrich(g, tx_of(query), cfg)


class TestBins:
    def test_labels(self):
        assert bin_labels((2, 3, 4, 5)) == ("2", "3", "4", "5p")

    def test_index(self):
        bins = (2, 3, 4, 5)
        assert bin_index(bins, 1) == -1
        assert bin_index(bins, 2) == 0
        assert bin_index(bins, 4) == 2
        assert bin_index(bins, 5) == 3
        assert bin_index(bins, 11) == 3  # last bin is open-ended


class TestWindow:
    def test_eviction_is_closed_at_the_cutoff(self):
        g = DynamicGraph()
        g.insert(edge(A, B, 0))
        g.insert(edge(A, C, 5))
        g.evict_older_than(5)
        assert [e.timestamp for e in g.edges] == [5]
        # an edge exactly window_seconds old survives
        g2 = DynamicGraph()
        g2.insert(edge(A, B, 0))
        enrich(g2, tx_of(edge(B, C, DAY_SECONDS, tx_id="q")))
        assert len(g2.edges) == 2

    def test_out_of_order_rejected(self):
        g = DynamicGraph()
        g.insert(edge(A, B, 10))
        with pytest.raises(OutOfOrderEdge):
            g.insert(edge(A, C, 9))
        with pytest.raises(OutOfOrderEdge):
            enrich(g, tx_of(edge(A, C, 3)))

    def test_equal_timestamps_allowed(self):
        g = DynamicGraph()
        g.insert(edge(A, B, 10))
        g.insert(edge(B, C, 10))
        assert len(g) == 2

    def test_degree_bookkeeping_after_eviction(self):
        g = DynamicGraph()
        g.insert(edge(A, B, 0, amount=5))
        g.insert(edge(A, B, 1, amount=7))
        g.insert(edge(C, B, 2, amount=9))
        g.evict_older_than(1)
        assert g.deg_out[A] == 1
        assert g.deg_in[B] == 2
        assert A not in g.agg_out or g.agg_out[A][0] == 1
        g.evict_older_than(3)
        assert len(g) == 0
        assert g.deg_in == {} and g.deg_out == {}
        assert g.agg_in == {} and g.agg_out == {}


class TestSingleHop:
    def test_hand_worked_counts(self):
        # window: A->B, C->B, A->C, then query A->B
        # fan_in(B) = |{A, C}| = 2, fan_out(A) = |{B, C}| = 2
        # degree_in(B) = 3 edges, degree_out(A) = 3 edges (query included)
        row = run_window(
            [edge(A, B, 10), edge(C, B, 20), edge(A, C, 30)],
            edge(A, B, 40, tx_id="q"),
            WindowConfig(tier="single_hop"),
        )
        assert row.single_hop == {"fan_in": 2, "fan_out": 2, "degree_in": 3, "degree_out": 3}

    def test_parallel_edges_count_in_degree_not_fan(self):
        row = run_window(
            [edge(A, B, 1), edge(A, B, 2)],
            edge(A, B, 3, tx_id="q"),
            WindowConfig(tier="single_hop"),
        )
        assert row.single_hop == {"fan_in": 1, "fan_out": 1, "degree_in": 3, "degree_out": 3}


def mh(row):
    return row.multi_hop


ZERO_SG = {"sg_2": 0, "sg_3": 0, "sg_4": 0, "sg_5p": 0}
ZERO_CY = {"cycle_2": 0, "cycle_3": 0, "cycle_4": 0, "cycle_5p": 0}
ZERO_TC = {"tcycle_2": 0, "tcycle_3": 0, "tcycle_4": 0, "tcycle_5p": 0}
MH_CFG = WindowConfig(tier="multi_hop")


class TestScatterGather:
    def test_gather_role_hand_worked(self):
        # H scatters to M1,M2,M3; all forward to K; the query M3->K is the
        # last gather edge of one pattern with 3 intermediates
        history = [
            edge(H, M1, 1),
            edge(H, M2, 2),
            edge(H, M3, 3),
            edge(M1, K, 4),
            edge(M2, K, 5),
        ]
        row = run_window(history, edge(M3, K, 6, tx_id="q"), MH_CFG)
        assert {k: v for k, v in mh(row).items() if k.startswith("sg_")} == {
            **ZERO_SG,
            "sg_3": 1,
        }

    def test_scatter_role_hand_worked(self):
        # M1 and M2 both forward to K; query H->M2 completes the hub's side
        # of a 2-intermediate pattern (H, {M1, M2}, K)
        history = [edge(M1, K, 1), edge(M2, K, 2), edge(H, M1, 3)]
        row = run_window(history, edge(H, M2, 4, tx_id="q"), MH_CFG)
        assert {k: v for k, v in mh(row).items() if k.startswith("sg_")} == {
            **ZERO_SG,
            "sg_2": 1,
        }

    def test_single_intermediate_does_not_count(self):
        row = run_window([edge(H, M1, 1)], edge(M1, K, 2, tx_id="q"), MH_CFG)
        assert {k: v for k, v in mh(row).items() if k.startswith("sg_")} == ZERO_SG


class TestCycles:
    def test_triangle(self):
        row = run_window([edge(A, B, 1), edge(B, C, 2)], edge(C, A, 3, tx_id="q"), MH_CFG)
        got = mh(row)
        assert {k: v for k, v in got.items() if k.startswith("cycle_")} == {
            **ZERO_CY,
            "cycle_3": 1,
        }
        # timestamps increase along B->C->A? walk starts at the query's dst:
        # A->B (1), B->C (2), closing C->A (3): strictly increasing
        assert {k: v for k, v in got.items() if k.startswith("tcycle_")} == {
            **ZERO_TC,
            "tcycle_3": 1,
        }

    def test_two_cycle(self):
        row = run_window([edge(A, B, 1)], edge(B, A, 2, tx_id="q"), MH_CFG)
        assert mh(row)["cycle_2"] == 1
        assert mh(row)["tcycle_2"] == 1

    def test_parallel_edges_multiply(self):
        history = [edge(A, B, 1), edge(B, C, 2), edge(B, C, 3)]
        row = run_window(history, edge(C, A, 4, tx_id="q"), MH_CFG)
        assert mh(row)["cycle_3"] == 2

    def test_temporal_requires_increasing_stamps(self):
        # same shape as the triangle but the interior stamps decrease
        history = [edge(B, C, 3), edge(C, A, 3)]  # equal stamps: not increasing
        row = run_window(history, edge(A, B, 5, tx_id="q"), MH_CFG)
        assert mh(row)["cycle_3"] == 1
        assert mh(row)["tcycle_3"] == 0

    def test_temporal_counts_ordered_variant(self):
        history = [edge(B, C, 1), edge(C, A, 2)]
        row = run_window(history, edge(A, B, 5, tx_id="q"), MH_CFG)
        assert mh(row)["tcycle_3"] == 1

    def test_max_cycle_length_bounds_search(self):
        cfg = WindowConfig(tier="multi_hop", max_cycle_length=3)
        verts = [A, B, C, D]
        history = [edge(verts[i], verts[i + 1], i + 1) for i in range(3)]
        row = run_window(history, edge(D, A, 9, tx_id="q"), cfg)
        # the 4-cycle exceeds the limit
        assert all(v == 0 for k, v in mh(row).items() if k.startswith("cycle_"))

    def test_vertex_simple_cycles_only(self):
        # A->B, B->A, A->C would allow revisiting A; the 4-walk C->A->B->A
        # is not vertex-simple and must not appear
        history = [edge(A, B, 1), edge(B, A, 2), edge(A, C, 3)]
        row = run_window(history, edge(C, A, 4, tx_id="q"), MH_CFG)
        assert mh(row)["cycle_2"] == 1  # A->C, C->A
        assert mh(row)["cycle_4"] == 0


class TestVertexStats:
    def test_hand_worked_moments(self):
        # inbound amounts at C: 1, 1, 4
        # sum = 6, population var = 2, skew = 2 / 2**1.5 = 1/sqrt(2)
        history = [edge(A, C, 1, amount=1), edge(B, C, 2, amount=1)]
        row = run_window(history, edge(A, C, 3, amount=4, tx_id="q"), WindowConfig())
        assert row.vertex_stats["dst_in_sum"] == 6.0
        assert row.vertex_stats["dst_in_var"] == pytest.approx(2.0)
        assert row.vertex_stats["dst_in_skew"] == pytest.approx(0.7071067811865476)

    def test_symmetric_amounts_have_zero_skew(self):
        history = [edge(A, C, 1, amount=1), edge(B, C, 2, amount=2)]
        row = run_window(history, edge(A, C, 3, amount=3, tx_id="q"), WindowConfig())
        assert row.vertex_stats["dst_in_var"] == pytest.approx(2.0 / 3.0)
        assert row.vertex_stats["dst_in_skew"] == 0.0

    def test_small_samples(self):
        # n < 3: skew pinned to 0; n = 1: var 0
        row = run_window([edge(A, C, 1, amount=1)], edge(A, C, 2, amount=4, tx_id="q"))
        assert row.vertex_stats["dst_in_var"] == pytest.approx(2.25)
        assert row.vertex_stats["dst_in_skew"] == 0.0
        row = run_window([], edge(A, C, 5, amount=7, tx_id="q"))
        assert row.vertex_stats["dst_in_sum"] == 7.0
        assert row.vertex_stats["dst_in_var"] == 0.0

    def test_source_outbound_side(self):
        history = [edge(A, B, 1, amount=10), edge(A, C, 2, amount=20)]
        row = run_window(history, edge(A, D, 3, amount=30, tx_id="q"))
        assert row.vertex_stats["src_out_sum"] == 60.0

    def test_both_direction_stats_adds_columns(self):
        cfg = WindowConfig(both_direction_stats=True)
        row = run_window([edge(B, A, 1, amount=5)], edge(A, C, 2, amount=7, tx_id="q"), cfg)
        assert row.vertex_stats["src_in_sum"] == 5.0
        assert row.vertex_stats["dst_out_sum"] == 0.0

    def test_bad_direction(self):
        g = DynamicGraph()
        with pytest.raises(ValueError):
            graphfeat.vertex_stats(g, A, "sideways")


class TestBaseFeatures:
    def test_clock_fields(self):
        cfg = WindowConfig()
        t = tx_of(edge(A, C, 90000, amount=123))
        base = graphfeat.base_features(t, cfg)
        assert base["hour"] == 1.0  # 90000 s = day 1 + 1 h
        assert base["weekday"] == 1.0
        assert base["amount"] == 123.0
        assert base["same_bank"] == 0.0
        assert base["src_bank"] == 0.0 and base["dst_bank"] == 1.0

    def test_categorical_ordinals(self):
        cfg = WindowConfig()
        t = tx_of(edge(A, B, 0), currency="USD", payment="Wire")
        base = graphfeat.base_features(t, cfg)
        assert base["currency"] == 0.0
        assert base["payment_format"] == float(sorted(["ACH", "Wire", "Credit Card", "Cash", "Cheque"]).index("Wire"))
        assert base["same_bank"] == 1.0

    def test_unknown_categories_map_past_the_vocabulary(self):
        cfg = WindowConfig(currencies=("USD",), payment_formats=("Wire",))
        t = tx_of(edge(A, C, 0), currency="EUR", payment="Zelle")
        base = graphfeat.base_features(t, cfg)
        assert base["currency"] == 1.0
        assert base["payment_format"] == 1.0


class TestTierGating:
    def test_families_empty_above_tier(self):
        row = run_window([edge(A, B, 1)], edge(B, A, 2, tx_id="q"), WindowConfig(tier="basic"))
        assert row.single_hop == {} and row.multi_hop == {} and row.vertex_stats == {}
        row = run_window([edge(A, B, 1)], edge(B, A, 2, tx_id="q"), WindowConfig(tier="single_hop"))
        assert row.single_hop != {} and row.multi_hop == {} and row.vertex_stats == {}
        row = run_window([edge(A, B, 1)], edge(B, A, 2, tx_id="q"), WindowConfig(tier="multi_hop"))
        assert row.multi_hop != {} and row.vertex_stats == {}

    def test_columns_are_cumulative(self):
        cfg = WindowConfig()
        prev: tuple[str, ...] = ()
        for tier in graphfeat.TIERS:
            cols = graphfeat.tier_columns(cfg, tier)
            assert cols[: len(prev)] == prev
            assert len(cols) > len(prev)
            prev = cols
        assert graphfeat.tier_columns(cfg, "basic") == graphfeat.BASE_COLUMNS
        assert len(graphfeat.multi_hop_columns(cfg)) == 12

    def test_column_tier_lookup(self):
        cfg = WindowConfig()
        assert graphfeat.column_tier(cfg, "amount") == "basic"
        assert graphfeat.column_tier(cfg, "fan_in") == "single_hop"
        assert graphfeat.column_tier(cfg, "cycle_3") == "multi_hop"
        assert graphfeat.column_tier(cfg, "src_out_skew") == "vertex_stats"
        with pytest.raises(KeyError):
            graphfeat.column_tier(cfg, "nope")


def random_window(rng, n_vertices, n_edges, span):
    verts = [Account(rng.randrange(3), f"v{i}") for i in range(n_vertices)]
    history = []
    t = 0
    for i in range(n_edges):
        t += rng.randrange(0, span)
        src, dst = rng.sample(verts, 2)
        history.append(Edge(t, src, dst, rng.randrange(1, 50), f"e{i}"))
    src, dst = rng.sample(verts, 2)
    query = Edge(t + rng.randrange(0, span), src, dst, rng.randrange(1, 50), "q")
    return history, query


class TestOracleAgreement:
    def test_enrich_matches_exhaustive_oracle(self):
        # independent route: permutation / pair enumeration over the window
        rng = random.Random(20240817)
        cfg = WindowConfig(max_cycle_length=6)
        for trial in range(60):
            history, query = random_window(
                rng, n_vertices=rng.randrange(4, 9), n_edges=rng.randrange(5, 26), span=400
            )
            g = DynamicGraph(cfg)
            for e in history:
                enrich(g, tx_of(e), cfg)
            got = enrich(g, tx_of(query), cfg)
            want = oracle_enrich(history, query, cfg, tx=tx_of(query))
            assert got == want, f"trial {trial}"

    def test_agreement_with_eviction_pressure(self):
        rng = random.Random(7)
        cfg = WindowConfig(window_seconds=300, max_cycle_length=5)
        for trial in range(30):
            history, query = random_window(
                rng, n_vertices=rng.randrange(4, 8), n_edges=rng.randrange(10, 30), span=90
            )
            g = DynamicGraph(cfg)
            for e in history:
                enrich(g, tx_of(e), cfg)
            got = enrich(g, tx_of(query), cfg)
            want = oracle_enrich(history, query, cfg, tx=tx_of(query))
            assert got == want, f"trial {trial}"


class TestMatrix:
    def small_dataset(self):
        from privaml.data import Dataset

        txs = (
            tx_of(edge(A, B, 10, amount=5, tx_id="t1"), label=False),
            tx_of(edge(B, C, 20, amount=7, tx_id="t2"), label=True),
            tx_of(edge(C, A, 40 + DAY_SECONDS, amount=9, tx_id="t3"), label=False),
        )
        return Dataset(transactions=txs)

    def test_enrich_dataset_shapes(self):
        ds = self.small_dataset()
        fm = graphfeat.enrich_dataset(ds, tier="single_hop")
        assert fm.X.shape == (3, 12)
        assert fm.feature_names == graphfeat.tier_columns(graphfeat.dataset_config(ds), "single_hop")
        assert fm.tx_ids == ("t1", "t2", "t3")
        assert list(fm.y) == [0, 1, 0]
        assert fm.tier == "single_hop"

    def test_dataset_config_binds_vocabularies(self):
        ds = self.small_dataset()
        cfg = graphfeat.dataset_config(ds)
        assert cfg.currencies == ("USD",)
        assert "Wire" in cfg.payment_formats

    def test_split_matrix(self):
        ds = self.small_dataset()
        fm = graphfeat.enrich_dataset(ds, tier="basic")
        train, test = graphfeat.split_matrix(fm, 0)
        assert train.tx_ids == ("t1", "t2")
        assert test.tx_ids == ("t3",)
        assert train.X.shape[0] == 2 and test.X.shape[0] == 1

    def test_feature_csv_round_trip(self):
        ds = self.small_dataset()
        fm = graphfeat.enrich_dataset(ds, tier="vertex_stats")
        buf = io.StringIO()
        graphfeat.write_feature_csv(fm, buf)
        back = graphfeat.read_feature_csv(buf.getvalue())
        assert back.tier == fm.tier
        assert back.feature_names == fm.feature_names
        assert back.tx_ids == fm.tx_ids
        assert np.array_equal(back.X, fm.X)  # repr round trip is exact
        assert np.array_equal(back.y, fm.y)
        assert np.array_equal(back.timestamps, fm.timestamps)

    def test_tier_manifest(self):
        ds = self.small_dataset()
        cfg = graphfeat.dataset_config(ds)
        buf = io.StringIO()
        graphfeat.write_tier_manifest(cfg, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "column,tier"
        assert f"amount,basic" in lines
        assert len(lines) == 1 + len(graphfeat.tier_columns(cfg, "vertex_stats"))
