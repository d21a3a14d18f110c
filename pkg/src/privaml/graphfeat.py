"""Sliding-window transaction graph and per-edge feature extraction.

A DynamicGraph holds the edges of the most recent time window. Each incoming
transaction is enriched with four feature families computed over that window:

  basic        raw transaction fields (amount, time-of-day, banks, encodings)
  single_hop   fan-in/fan-out (distinct counterparties) and in/out degree
  multi_hop    histograms of scatter-gather, simple-cycle and temporal-cycle
               patterns the edge participates in, binned by pattern size
  vertex_stats sum / variance / skewness of amounts on the endpoint vertices

Tiers are cumulative in the order above. `oracle_enrich` recomputes every
family by exhaustive enumeration and exists for testing.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from itertools import permutations, product
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO, Union

import numpy as np

from .data import DAY_SECONDS, PAYMENT_FORMATS, Account, Dataset, Transaction
from .errors import DataError
from .errors import ConfigError

TIERS = ("basic", "single_hop", "multi_hop", "vertex_stats")

BASE_COLUMNS = (
    "amount",
    "hour",
    "weekday",
    "src_bank",
    "dst_bank",
    "currency",
    "payment_format",
    "same_bank",
)
SINGLE_HOP_COLUMNS = ("fan_in", "fan_out", "degree_in", "degree_out")
STAT_COLUMNS = (
    "src_out_sum",
    "src_out_var",
    "src_out_skew",
    "dst_in_sum",
    "dst_in_var",
    "dst_in_skew",
)
EXTRA_STAT_COLUMNS = (
    "src_in_sum",
    "src_in_var",
    "src_in_skew",
    "dst_out_sum",
    "dst_out_var",
    "dst_out_skew",
)


class OutOfOrderEdge(DataError):
    """A transaction arrived with a timestamp behind the stream head."""


class Edge(NamedTuple):
    timestamp: int
    src: Account
    dst: Account
    amount: int
    tx_id: str


def bin_labels(bins: Sequence[int]) -> tuple[str, ...]:
    """Human-readable labels for ascending size thresholds.

    (2, 3, 4, 5) -> ("2", "3", "4", "5p"): exact buckets plus an overflow
    bucket for sizes >= the last threshold.
    """
    labels = []
    for i, b in enumerate(bins):
        if i == len(bins) - 1:
            labels.append(f"{b}p")
        elif bins[i + 1] == b + 1:
            labels.append(f"{b}")
        else:
            labels.append(f"{b}-{bins[i + 1] - 1}")
    return tuple(labels)


def bin_index(bins: Sequence[int], size: int) -> int:
    """Index of the bucket holding `size`; -1 if below the first threshold."""
    idx = -1
    for i, b in enumerate(bins):
        if size >= b:
            idx = i
    return idx


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: int = DAY_SECONDS
    max_cycle_length: int = 6
    histogram_bins: tuple[int, ...] = (2, 3, 4, 5)
    tier: str = "vertex_stats"
    both_direction_stats: bool = False
    payment_formats: tuple[str, ...] = tuple(sorted(PAYMENT_FORMATS))
    currencies: tuple[str, ...] = ("USD",)

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be positive")
        if self.max_cycle_length < 2:
            raise ConfigError("max_cycle_length must be >= 2")
        if list(self.histogram_bins) != sorted(set(self.histogram_bins)):
            raise ConfigError("histogram_bins must be strictly ascending")
        if not self.histogram_bins:
            raise ConfigError("histogram_bins must be non-empty")
        if self.tier not in TIERS:
            raise ConfigError(f"tier must be one of {TIERS}")

    @property
    def tier_index(self) -> int:
        return TIERS.index(self.tier)


def _ordinal(vocab: tuple[str, ...], value: str) -> int:
    # unknown values map past the end of the vocabulary
    try:
        return vocab.index(value)
    except ValueError:
        return len(vocab)


def _moments(n: int, s1: int, s2: int, s3: int) -> tuple[float, float, float]:
    """Sum, population variance and Fisher-Pearson skewness from integer
    power sums. Skewness is 0 whenever n < 3 or the variance vanishes."""
    if n == 0:
        return 0.0, 0.0, 0.0
    mean = s1 / n
    var = s2 / n - mean * mean
    var = max(var, 0.0)
    if n < 3 or var == 0.0:
        return float(s1), var, 0.0
    m3 = s3 / n - 3.0 * mean * (s2 / n) + 2.0 * mean**3
    return float(s1), var, m3 / var**1.5


@dataclass(frozen=True)
class EnrichedRow:
    tx_id: str
    tier: str
    base: dict[str, float]
    single_hop: dict[str, int]
    multi_hop: dict[str, int]
    vertex_stats: dict[str, float]


class DynamicGraph:
    """Multigraph over the edges of one sliding time window.

    Single writer: edges must be inserted in non-decreasing timestamp order.
    Per-vertex amount power sums (count, sum, sum^2, sum^3) are maintained
    incrementally for both directions.
    """

    def __init__(self, cfg: Optional[WindowConfig] = None):
        self.cfg = cfg or WindowConfig()
        self._window: list[Edge] = []  # time-ordered; evicted from the front
        self._head = 0
        self.out: dict[Account, dict[Account, list[Edge]]] = {}
        self.inn: dict[Account, dict[Account, list[Edge]]] = {}
        self.deg_out: dict[Account, int] = {}
        self.deg_in: dict[Account, int] = {}
        self.agg_out: dict[Account, list[int]] = {}
        self.agg_in: dict[Account, list[int]] = {}
        self.last_ts: Optional[int] = None

    def __len__(self) -> int:
        return len(self._window) - self._head

    @property
    def edges(self) -> list[Edge]:
        return self._window[self._head :]

    def _bump(self, agg: dict, deg: dict, vertex: Account, amount: int, sign: int):
        a = agg.setdefault(vertex, [0, 0, 0, 0])
        a[0] += sign
        a[1] += sign * amount
        a[2] += sign * amount * amount
        a[3] += sign * amount * amount * amount
        deg[vertex] = deg.get(vertex, 0) + sign
        if a[0] == 0:
            del agg[vertex]
            del deg[vertex]

    def insert(self, edge: Edge) -> None:
        if self.last_ts is not None and edge.timestamp < self.last_ts:
            raise OutOfOrderEdge(
                f"edge {edge.tx_id} at t={edge.timestamp} behind stream head {self.last_ts}"
            )
        self.last_ts = edge.timestamp
        self._window.append(edge)
        self.out.setdefault(edge.src, {}).setdefault(edge.dst, []).append(edge)
        self.inn.setdefault(edge.dst, {}).setdefault(edge.src, []).append(edge)
        self._bump(self.agg_out, self.deg_out, edge.src, edge.amount, +1)
        self._bump(self.agg_in, self.deg_in, edge.dst, edge.amount, +1)

    def evict_older_than(self, cutoff: int) -> None:
        """Drop every edge with timestamp < cutoff (window is closed: the
        edge exactly at the cutoff stays)."""
        while self._head < len(self._window) and self._window[self._head].timestamp < cutoff:
            edge = self._window[self._head]
            self._head += 1
            lst = self.out[edge.src][edge.dst]
            lst.remove(edge)
            if not lst:
                del self.out[edge.src][edge.dst]
                if not self.out[edge.src]:
                    del self.out[edge.src]
            lst = self.inn[edge.dst][edge.src]
            lst.remove(edge)
            if not lst:
                del self.inn[edge.dst][edge.src]
                if not self.inn[edge.dst]:
                    del self.inn[edge.dst]
            self._bump(self.agg_out, self.deg_out, edge.src, edge.amount, -1)
            self._bump(self.agg_in, self.deg_in, edge.dst, edge.amount, -1)
        if self._head > 4096 and self._head * 2 > len(self._window):
            self._window = self._window[self._head :]
            self._head = 0


def single_hop(graph: DynamicGraph, edge: Edge) -> dict[str, int]:
    return {
        "fan_in": len(graph.inn.get(edge.dst, {})),
        "fan_out": len(graph.out.get(edge.src, {})),
        "degree_in": graph.deg_in.get(edge.dst, 0),
        "degree_out": graph.deg_out.get(edge.src, 0),
    }


def _sg_size(graph: DynamicGraph, a: Account, b: Account) -> int:
    mids = graph.out.get(a, {}).keys() & graph.inn.get(b, {}).keys()
    return len(mids - {a, b})


def scatter_gather_hist(graph: DynamicGraph, edge: Edge, cfg: WindowConfig) -> dict[str, int]:
    """Count scatter-gather patterns the edge takes part in, binned by the
    number of intermediates.

    A pattern is (a, M, b): a != b and M is the maximal set of intermediates
    m with both a->m and m->b in the window, |M| >= 2. Each (a, b) pair
    contributes at most one pattern. The queried edge u->v participates
    either as a scatter edge (a = u, v in M) or as a gather edge (b = v,
    u in M); the two roles can never pick out the same (a, b) pair.
    """
    bins = cfg.histogram_bins
    hist = [0] * len(bins)
    u, v = edge.src, edge.dst
    if u != v:
        for b in graph.out.get(v, {}):
            if b == u or b == v:
                continue
            size = _sg_size(graph, u, b)
            if size >= 2:
                idx = bin_index(bins, size)
                if idx >= 0:
                    hist[idx] += 1
        for a in graph.inn.get(u, {}):
            if a == v or a == u:
                continue
            size = _sg_size(graph, a, v)
            if size >= 2:
                idx = bin_index(bins, size)
                if idx >= 0:
                    hist[idx] += 1
    return {f"sg_{lab}": c for lab, c in zip(bin_labels(bins), hist)}


def simple_cycle_hist(graph: DynamicGraph, edge: Edge, cfg: WindowConfig) -> dict[str, int]:
    """Count directed vertex-simple cycles through the edge, binned by cycle
    length in edges (2 .. max_cycle_length). Parallel edges give distinct
    cycles, so each completed path contributes the product of the edge
    multiplicities along it.
    """
    bins = cfg.histogram_bins
    hist = [0] * len(bins)
    u, v = edge.src, edge.dst
    max_len = cfg.max_cycle_length
    if u == v:
        return {f"cycle_{lab}": c for lab, c in zip(bin_labels(bins), hist)}

    def walk(cur: Account, depth: int, mult: int, visited: set[Account]) -> None:
        # depth = edges taken from v so far; closing via cur->u then the
        # queried edge makes a cycle of depth + 2 edges
        for nxt, parallel in graph.out.get(cur, {}).items():
            m = len(parallel)
            if nxt == u:
                if depth + 2 <= max_len:
                    idx = bin_index(bins, depth + 2)
                    if idx >= 0:
                        hist[idx] += mult * m
            elif nxt not in visited and depth + 3 <= max_len:
                visited.add(nxt)
                walk(nxt, depth + 1, mult * m, visited)
                visited.discard(nxt)

    walk(v, 0, 1, {u, v})
    return {f"cycle_{lab}": c for lab, c in zip(bin_labels(bins), hist)}


def temporal_cycle_hist(graph: DynamicGraph, edge: Edge, cfg: WindowConfig) -> dict[str, int]:
    """Like simple_cycle_hist, but the cycle's timestamps must strictly
    increase when traversed starting just after the queried edge, with the
    queried edge last (it carries the greatest timestamp under streaming).
    """
    bins = cfg.histogram_bins
    hist = [0] * len(bins)
    u, v = edge.src, edge.dst
    max_len = cfg.max_cycle_length
    limit = edge.timestamp
    if u == v:
        return {f"tcycle_{lab}": c for lab, c in zip(bin_labels(bins), hist)}

    def walk(cur: Account, depth: int, prev_ts: int, visited: set[Account]) -> None:
        for nxt, parallel in graph.out.get(cur, {}).items():
            if nxt == u:
                if depth + 2 <= max_len:
                    idx = bin_index(bins, depth + 2)
                    if idx >= 0:
                        for e in parallel:
                            if prev_ts < e.timestamp < limit:
                                hist[idx] += 1
            elif nxt not in visited and depth + 3 <= max_len:
                for e in parallel:
                    if prev_ts < e.timestamp < limit:
                        visited.add(nxt)
                        walk(nxt, depth + 1, e.timestamp, visited)
                        visited.discard(nxt)

    walk(v, 0, -1, {u, v})
    return {f"tcycle_{lab}": c for lab, c in zip(bin_labels(bins), hist)}


def vertex_stats(graph: DynamicGraph, vertex: Account, direction: str) -> dict[str, float]:
    """Sum / variance / skewness of window-edge amounts at `vertex` in the
    given direction ("inbound" or "outbound"). Unknown vertices yield zeros.
    """
    if direction == "inbound":
        agg = graph.agg_in.get(vertex)
    elif direction == "outbound":
        agg = graph.agg_out.get(vertex)
    else:
        raise ValueError(f"direction must be inbound or outbound, got {direction!r}")
    n, s1, s2, s3 = agg if agg else (0, 0, 0, 0)
    total, var, skew = _moments(n, s1, s2, s3)
    return {"sum": total, "var": var, "skew": skew}


def _stat_features(graph_or_edges, edge: Edge, cfg: WindowConfig, stats_fn) -> dict[str, float]:
    out: dict[str, float] = {}
    pairs = [("src_out", edge.src, "outbound"), ("dst_in", edge.dst, "inbound")]
    if cfg.both_direction_stats:
        pairs += [("src_in", edge.src, "inbound"), ("dst_out", edge.dst, "outbound")]
    for prefix, vertex, direction in pairs:
        s = stats_fn(graph_or_edges, vertex, direction)
        out[f"{prefix}_sum"] = s["sum"]
        out[f"{prefix}_var"] = s["var"]
        out[f"{prefix}_skew"] = s["skew"]
    return out


def base_features(tx: Transaction, cfg: WindowConfig) -> dict[str, float]:
    """Basic (window-free) features of one transaction."""
    return {
        "amount": float(tx.amount),
        "hour": float((tx.timestamp % DAY_SECONDS) // 3600),
        "weekday": float((tx.timestamp // DAY_SECONDS) % 7),
        "src_bank": float(tx.src.bank),
        "dst_bank": float(tx.dst.bank),
        "currency": float(_ordinal(cfg.currencies, tx.currency)),
        "payment_format": float(_ordinal(cfg.payment_formats, tx.payment_format)),
        "same_bank": 1.0 if tx.src.bank == tx.dst.bank else 0.0,
    }


def enrich(graph: DynamicGraph, tx: Transaction, cfg: Optional[WindowConfig] = None) -> EnrichedRow:
    """Advance the window to tx.timestamp, insert tx, and compute its
    feature families (up to cfg.tier) over the window including tx itself.
    """
    cfg = cfg or graph.cfg
    edge = Edge(tx.timestamp, tx.src, tx.dst, tx.amount, tx.tx_id)
    if graph.last_ts is not None and edge.timestamp < graph.last_ts:
        raise OutOfOrderEdge(
            f"edge {edge.tx_id} at t={edge.timestamp} behind stream head {graph.last_ts}"
        )
    graph.evict_older_than(edge.timestamp - cfg.window_seconds)
    graph.insert(edge)
    level = cfg.tier_index
    sh = single_hop(graph, edge) if level >= 1 else {}
    mh: dict[str, int] = {}
    if level >= 2:
        mh.update(scatter_gather_hist(graph, edge, cfg))
        mh.update(simple_cycle_hist(graph, edge, cfg))
        mh.update(temporal_cycle_hist(graph, edge, cfg))
    vs = _stat_features(graph, edge, cfg, vertex_stats) if level >= 3 else {}
    return EnrichedRow(
        tx_id=tx.tx_id,
        tier=cfg.tier,
        base=base_features(tx, cfg),
        single_hop=sh,
        multi_hop=mh,
        vertex_stats=vs,
    )


# ---------------------------------------------------------------------------
# Exhaustive oracle (test-only reference; no incremental state)


def _oracle_sg_hist(edges: list[Edge], edge: Edge, cfg: WindowConfig) -> dict[str, int]:
    bins = cfg.histogram_bins
    hist = [0] * len(bins)
    vertices = {e.src for e in edges} | {e.dst for e in edges}
    arcs = {(e.src, e.dst) for e in edges}
    for a in vertices:
        for b in vertices:
            if a == b:
                continue
            mids = {
                m
                for m in vertices
                if m not in (a, b) and (a, m) in arcs and (m, b) in arcs
            }
            if len(mids) < 2:
                continue
            participates = (edge.src == a and edge.dst in mids) or (
                edge.dst == b and edge.src in mids
            )
            if participates:
                idx = bin_index(bins, len(mids))
                if idx >= 0:
                    hist[idx] += 1
    return {f"sg_{lab}": c for lab, c in zip(bin_labels(bins), hist)}


def _oracle_cycles(
    edges: list[Edge], edge: Edge, cfg: WindowConfig, temporal: bool
) -> dict[str, int]:
    bins = cfg.histogram_bins
    hist = [0] * len(bins)
    prefix = "tcycle" if temporal else "cycle"
    u, v = edge.src, edge.dst
    if u == v:
        return {f"{prefix}_{lab}": c for lab, c in zip(bin_labels(bins), hist)}
    by_arc: dict[tuple[Account, Account], list[Edge]] = {}
    for e in edges:
        by_arc.setdefault((e.src, e.dst), []).append(e)
    others = sorted(
        ({e.src for e in edges} | {e.dst for e in edges}) - {u, v},
        key=lambda a: (a.bank, a.acct),
    )
    # vertex cycle = u -> v -> x1 -> ... -> xk -> u; the queried edge is the
    # (u, v) step and is traversed last when checking timestamp order
    for interior_len in range(0, cfg.max_cycle_length - 1):
        cycle_len = interior_len + 2
        if cycle_len > cfg.max_cycle_length:
            break
        for interior in permutations(others, interior_len):
            path = (v,) + interior + (u,)
            arc_seq = list(zip(path, path[1:]))
            if any(arc not in by_arc for arc in arc_seq):
                continue
            idx = bin_index(bins, cycle_len)
            if idx < 0:
                continue
            if not temporal:
                count = 1
                for arc in arc_seq:
                    count *= len(by_arc[arc])
                hist[idx] += count
            else:
                for combo in product(*(by_arc[arc] for arc in arc_seq)):
                    stamps = [e.timestamp for e in combo]
                    if all(a < b for a, b in zip(stamps, stamps[1:])) and (
                        stamps[-1] < edge.timestamp
                    ):
                        hist[idx] += 1
    return {f"{prefix}_{lab}": c for lab, c in zip(bin_labels(bins), hist)}


def _oracle_vertex_stats(edges: list[Edge], vertex: Account, direction: str) -> dict[str, float]:
    if direction == "inbound":
        amounts = [e.amount for e in edges if e.dst == vertex]
    else:
        amounts = [e.amount for e in edges if e.src == vertex]
    n = len(amounts)
    s1 = sum(amounts)
    s2 = sum(a * a for a in amounts)
    s3 = sum(a * a * a for a in amounts)
    total, var, skew = _moments(n, s1, s2, s3)
    return {"sum": total, "var": var, "skew": skew}


def oracle_enrich(
    window_edges: Iterable[Edge],
    edge: Edge,
    cfg: Optional[WindowConfig] = None,
    tx: Optional[Transaction] = None,
) -> EnrichedRow:
    """Reference enrichment by exhaustive enumeration over an explicit edge
    multiset. The window filter and the queried edge's inclusion are applied
    here, so callers pass the raw history. Intended for tests on small
    windows only; pass `tx` to reproduce the categorical basic features.
    """
    cfg = cfg or WindowConfig()
    edges = [e for e in window_edges if edge.timestamp - cfg.window_seconds <= e.timestamp]
    if edge not in edges:
        edges.append(edge)
    u, v = edge.src, edge.dst
    fan_in = len({e.src for e in edges if e.dst == v})
    fan_out = len({e.dst for e in edges if e.src == u})
    degree_in = sum(1 for e in edges if e.dst == v)
    degree_out = sum(1 for e in edges if e.src == u)
    level = cfg.tier_index
    sh = (
        {"fan_in": fan_in, "fan_out": fan_out, "degree_in": degree_in, "degree_out": degree_out}
        if level >= 1
        else {}
    )
    mh: dict[str, int] = {}
    if level >= 2:
        mh.update(_oracle_sg_hist(edges, edge, cfg))
        mh.update(_oracle_cycles(edges, edge, cfg, temporal=False))
        mh.update(_oracle_cycles(edges, edge, cfg, temporal=True))
    vs = _stat_features(edges, edge, cfg, _oracle_vertex_stats) if level >= 3 else {}
    if tx is None:
        tx = Transaction(
            tx_id=edge.tx_id,
            timestamp=edge.timestamp,
            src=edge.src,
            dst=edge.dst,
            amount=edge.amount,
            currency=cfg.currencies[0] if cfg.currencies else "",
            payment_format="",
            is_laundering=False,
        )
    base = base_features(tx, cfg)
    return EnrichedRow(
        tx_id=edge.tx_id,
        tier=cfg.tier,
        base=base,
        single_hop=sh,
        multi_hop=mh,
        vertex_stats=vs,
    )


# ---------------------------------------------------------------------------
# Dataset-level enrichment into a feature matrix


@dataclass(frozen=True)
class FeatureMatrix:
    tx_ids: tuple[str, ...]
    timestamps: np.ndarray  # int64, per row
    feature_names: tuple[str, ...]
    X: np.ndarray  # float64, rows x features
    y: np.ndarray  # uint8 labels
    tier: str

    def __post_init__(self):
        if self.X.shape != (len(self.tx_ids), len(self.feature_names)):
            raise ValueError("matrix shape disagrees with ids/names")

    def __len__(self) -> int:
        return len(self.tx_ids)


def multi_hop_columns(cfg: WindowConfig) -> tuple[str, ...]:
    labels = bin_labels(cfg.histogram_bins)
    return tuple(
        f"{prefix}_{lab}" for prefix in ("sg", "cycle", "tcycle") for lab in labels
    )


def tier_columns(cfg: WindowConfig, tier: str) -> tuple[str, ...]:
    """Deterministic column order for a cumulative feature tier."""
    if tier not in TIERS:
        raise ConfigError(f"tier must be one of {TIERS}")
    cols: tuple[str, ...] = BASE_COLUMNS
    level = TIERS.index(tier)
    if level >= 1:
        cols = cols + SINGLE_HOP_COLUMNS
    if level >= 2:
        cols = cols + multi_hop_columns(cfg)
    if level >= 3:
        cols = cols + STAT_COLUMNS
        if cfg.both_direction_stats:
            cols = cols + EXTRA_STAT_COLUMNS
    return cols


def column_tier(cfg: WindowConfig, name: str) -> str:
    if name in BASE_COLUMNS:
        return "basic"
    if name in SINGLE_HOP_COLUMNS:
        return "single_hop"
    if name in multi_hop_columns(cfg):
        return "multi_hop"
    if name in STAT_COLUMNS + EXTRA_STAT_COLUMNS:
        return "vertex_stats"
    raise KeyError(name)


def dataset_config(ds: Dataset, cfg: Optional[WindowConfig] = None, tier: str = "vertex_stats") -> WindowConfig:
    """Bind a window config to a dataset's categorical vocabularies."""
    cfg = cfg or WindowConfig()
    return replace(
        cfg,
        tier=tier,
        payment_formats=tuple(sorted({t.payment_format for t in ds.transactions})),
        currencies=tuple(sorted({t.currency for t in ds.transactions})),
    )


def enrich_dataset(
    ds: Dataset, tier: str = "vertex_stats", cfg: Optional[WindowConfig] = None
) -> FeatureMatrix:
    """Stream the dataset through a fresh window graph and assemble the
    feature matrix for the requested tier."""
    cfg = dataset_config(ds, cfg, tier)
    names = tier_columns(cfg, tier)
    graph = DynamicGraph(cfg)
    X = np.zeros((len(ds.transactions), len(names)), dtype=np.float64)
    y = np.zeros(len(ds.transactions), dtype=np.uint8)
    stamps = np.zeros(len(ds.transactions), dtype=np.int64)
    ids = []
    for i, tx in enumerate(ds.transactions):
        row = enrich(graph, tx, cfg)
        merged = {**row.base, **row.single_hop, **row.multi_hop, **row.vertex_stats}
        X[i] = [merged[name] for name in names]
        y[i] = 1 if tx.is_laundering else 0
        stamps[i] = tx.timestamp
        ids.append(tx.tx_id)
    return FeatureMatrix(
        tx_ids=tuple(ids), timestamps=stamps, feature_names=names, X=X, y=y, tier=tier
    )


def split_matrix(fm: FeatureMatrix, split_day: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Cut a feature matrix at a day boundary (train: day <= split_day)."""
    days = fm.timestamps // DAY_SECONDS
    train_mask = days <= split_day

    def take(mask: np.ndarray) -> FeatureMatrix:
        idx = np.flatnonzero(mask)
        return FeatureMatrix(
            tx_ids=tuple(fm.tx_ids[i] for i in idx),
            timestamps=fm.timestamps[idx],
            feature_names=fm.feature_names,
            X=fm.X[idx],
            y=fm.y[idx],
            tier=fm.tier,
        )

    return take(train_mask), take(~train_mask)


def write_feature_csv(fm: FeatureMatrix, dest: TextIO) -> None:
    dest.write(f"# tier={fm.tier}\n")
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["tx_id", "timestamp", "label", *fm.feature_names])
    for i in range(len(fm)):
        writer.writerow(
            [fm.tx_ids[i], int(fm.timestamps[i]), int(fm.y[i])]
            + [repr(float(x)) for x in fm.X[i]]
        )


def read_feature_csv(source: Union[str, TextIO]) -> FeatureMatrix:
    if isinstance(source, str):
        source = io.StringIO(source)
    first = source.readline()
    tier = "vertex_stats"
    if first.startswith("#"):
        for part in first[1:].strip().split():
            if part.startswith("tier="):
                tier = part.split("=", 1)[1]
        header_line = source.readline()
    else:
        header_line = first
    reader = csv.reader(io.StringIO(header_line))
    header = next(reader)
    names = tuple(header[3:])
    ids, stamps, labels, rows = [], [], [], []
    for row in csv.reader(source):
        if not row:
            continue
        ids.append(row[0])
        stamps.append(int(row[1]))
        labels.append(int(row[2]))
        rows.append([float(x) for x in row[3:]])
    X = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(names)))
    return FeatureMatrix(
        tx_ids=tuple(ids),
        timestamps=np.array(stamps, dtype=np.int64),
        feature_names=names,
        X=X,
        y=np.array(labels, dtype=np.uint8),
        tier=tier,
    )


def write_tier_manifest(cfg: WindowConfig, dest: TextIO) -> None:
    """Column-name to tier-tag manifest for the full feature set."""
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["column", "tier"])
    for name in tier_columns(cfg, "vertex_stats"):
        writer.writerow([name, column_tier(cfg, name)])
