"""Transaction datasets: parsing, synthesis, sampling, temporal splitting.

Amounts are stored as integer minor currency units (cents) so that all
downstream aggregation is exact. Timestamps are integer epoch seconds.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal, ROUND_HALF_EVEN, InvalidOperation
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO, Union

from .errors import ConfigError, DataError

DAY_SECONDS = 86_400
CENTS = 100  # minor units per major currency unit

CANONICAL_COLUMNS = (
    "timestamp",
    "from_bank",
    "from_account",
    "to_bank",
    "to_account",
    "amount",
    "currency",
    "payment_format",
    "is_laundering",
)

PAYMENT_FORMATS = ("ACH", "Wire", "Credit Card", "Cash", "Cheque")


class MalformedRow(DataError):
    """A CSV row that cannot be parsed into a valid transaction."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateTxId(DataError):
    def __init__(self, tx_id: str, line_no: int):
        super().__init__(f"line {line_no}: duplicate transaction id {tx_id!r}")
        self.tx_id = tx_id
        self.line_no = line_no


class UnreachableRatio(DataError):
    """Requested class ratio cannot be met by dropping majority rows."""


class DegenerateSplit(DataError):
    """Temporal split would leave the train or test side empty."""


class InvalidConfig(ConfigError):
    """Generator or parser configuration is out of range."""


class Account(NamedTuple):
    bank: int
    acct: str


class PatternKind(Enum):
    FAN_IN = "FanIn"
    FAN_OUT = "FanOut"
    GATHER_SCATTER = "GatherScatter"
    CYCLE = "Cycle"
    RANDOM = "Random"


@dataclass(frozen=True, slots=True)
class Transaction:
    tx_id: str
    timestamp: int
    src: Account
    dst: Account
    amount: int  # minor units, >= 0
    currency: str
    payment_format: str
    is_laundering: bool
    group_id: Optional[int] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.amount < 0:
            raise ValueError("amount must be >= 0")


@dataclass(frozen=True, slots=True)
class PatternGroup:
    group_id: int
    kind: PatternKind
    member_tx_ids: tuple[str, ...]


@dataclass(frozen=True)
class Dataset:
    """Immutable bundle of time-ordered transactions plus pattern groups.

    Transactions are sorted by (timestamp, tx_id); tx ids are unique.
    """

    transactions: tuple[Transaction, ...]
    groups: tuple[PatternGroup, ...] = ()

    def __post_init__(self):
        txs = tuple(sorted(self.transactions, key=lambda t: (t.timestamp, t.tx_id)))
        object.__setattr__(self, "transactions", txs)
        object.__setattr__(self, "groups", tuple(self.groups))
        seen = set()
        for t in txs:
            if t.tx_id in seen:
                raise DataError(f"duplicate transaction id {t.tx_id!r}")
            seen.add(t.tx_id)

    def __len__(self) -> int:
        return len(self.transactions)

    @property
    def accounts(self) -> set[Account]:
        out = set()
        for t in self.transactions:
            out.add(t.src)
            out.add(t.dst)
        return out

    @property
    def illicit_count(self) -> int:
        return sum(1 for t in self.transactions if t.is_laundering)

    @property
    def illicit_ratio(self) -> float:
        return self.illicit_count / len(self.transactions) if self.transactions else 0.0

    def by_id(self) -> dict[str, Transaction]:
        return {t.tx_id: t for t in self.transactions}


@dataclass(frozen=True)
class SplitResult:
    train: Dataset
    test: Dataset
    split_day: int
    train_fraction: float  # achieved, not requested


# ---------------------------------------------------------------------------
# CSV parsing and writing


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_amount(text: str) -> int:
    try:
        d = Decimal(text.strip())
    except InvalidOperation:
        raise ValueError(f"bad amount {text!r}")
    cents = d.scaleb(2).quantize(Decimal(1), rounding=ROUND_HALF_EVEN)
    return int(cents)


_BOOL_VALUES = {"0": False, "1": True, "false": False, "true": True}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"bad boolean {text!r}")


def parse_transactions(
    source: Union[str, TextIO, Iterable[str]],
    schema: Optional[dict[str, str]] = None,
    allow_self_transfers: bool = False,
) -> Dataset:
    """Parse a transaction CSV into a Dataset.

    `schema` maps canonical column names to the actual header names; columns
    not mentioned map to themselves. An optional "tx_id" mapping picks up
    explicit ids; otherwise rows get sequential ids in file order.

    Raises MalformedRow (with its line number) on the first invalid row and
    DuplicateTxId on a repeated id.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    schema = schema or {}
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: no header row")
    col_index: dict[str, int] = {}
    positions = {name.strip(): i for i, name in enumerate(header)}
    for canon in CANONICAL_COLUMNS:
        actual = schema.get(canon, canon)
        if actual not in positions:
            raise InvalidConfig(f"missing required column {actual!r}")
        col_index[canon] = positions[actual]
    id_col = None
    if "tx_id" in schema or "tx_id" in positions:
        actual = schema.get("tx_id", "tx_id")
        if actual not in positions:
            raise InvalidConfig(f"missing id column {actual!r}")
        id_col = positions[actual]

    txs: list[Transaction] = []
    seen_ids: set[str] = set()
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(row)}")
        try:
            ts = _parse_timestamp(row[col_index["timestamp"]])
            src = Account(int(row[col_index["from_bank"]]), row[col_index["from_account"]].strip())
            dst = Account(int(row[col_index["to_bank"]]), row[col_index["to_account"]].strip())
            amount = _parse_amount(row[col_index["amount"]])
            label = _parse_bool(row[col_index["is_laundering"]])
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc))
        if ts < 0:
            raise MalformedRow(line_no, "negative timestamp")
        if amount < 0:
            raise MalformedRow(line_no, "negative amount")
        if src == dst and not allow_self_transfers:
            raise MalformedRow(line_no, "self transfer not allowed")
        tx_id = row[id_col].strip() if id_col is not None else f"r{line_no - 1:08d}"
        if tx_id in seen_ids:
            raise DuplicateTxId(tx_id, line_no)
        seen_ids.add(tx_id)
        txs.append(
            Transaction(
                tx_id=tx_id,
                timestamp=ts,
                src=src,
                dst=dst,
                amount=amount,
                currency=row[col_index["currency"]].strip(),
                payment_format=row[col_index["payment_format"]].strip(),
                is_laundering=label,
            )
        )
    return Dataset(transactions=tuple(txs))


def write_csv(ds: Dataset, dest: TextIO) -> None:
    """Write a dataset as canonical CSV (with tx_id column)."""
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(("tx_id",) + CANONICAL_COLUMNS)
    for t in ds.transactions:
        writer.writerow(
            [
                t.tx_id,
                t.timestamp,
                t.src.bank,
                t.src.acct,
                t.dst.bank,
                t.dst.acct,
                f"{t.amount // CENTS}.{t.amount % CENTS:02d}",
                t.currency,
                t.payment_format,
                int(t.is_laundering),
            ]
        )


def write_groups(ds: Dataset, dest: TextIO) -> None:
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["group_id", "kind", "member_tx_ids"])
    for g in ds.groups:
        writer.writerow([g.group_id, g.kind.value, ";".join(g.member_tx_ids)])


def read_groups(source: Union[str, TextIO]) -> tuple[PatternGroup, ...]:
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    next(reader)  # header
    groups = []
    for row in reader:
        if not row:
            continue
        groups.append(
            PatternGroup(
                group_id=int(row[0]),
                kind=PatternKind(row[1]),
                member_tx_ids=tuple(row[2].split(";")) if row[2] else (),
            )
        )
    return tuple(groups)


def attach_groups(ds: Dataset, groups: Sequence[PatternGroup]) -> Dataset:
    """Return a dataset with group membership stamped onto transactions."""
    owner: dict[str, int] = {}
    for g in groups:
        for tid in g.member_tx_ids:
            owner[tid] = g.group_id
    txs = tuple(
        replace(t, group_id=owner[t.tx_id]) if t.tx_id in owner else t
        for t in ds.transactions
    )
    return Dataset(transactions=txs, groups=tuple(groups))


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic transaction generator.

    `group_counts` gives the number of laundering groups per pattern kind.
    `amount_signal` is the probability that an illicit transaction draws its
    amount from a narrow structuring band instead of the background
    distribution; it controls how separable the classes are on amount alone.
    """

    seed: int = 0
    n_accounts: int = 400
    n_banks: int = 12
    n_background: int = 4000
    span_days: int = 12
    group_counts: dict[PatternKind, int] = field(
        default_factory=lambda: {
            PatternKind.FAN_IN: 61,
            PatternKind.FAN_OUT: 80,
            PatternKind.GATHER_SCATTER: 77,
            PatternKind.CYCLE: 82,
            PatternKind.RANDOM: 70,
        }
    )
    group_size_range: tuple[int, int] = (4, 9)
    amount_range: tuple[int, int] = (1 * CENTS, 20_000 * CENTS)
    signal_band: tuple[int, int] = (9_000 * CENTS, 9_990 * CENTS)
    amount_signal: float = 0.8
    currency: str = "USD"

    def validate(self) -> None:
        if self.n_accounts < 12:
            raise InvalidConfig("need at least 12 accounts")
        if self.span_days < 2:
            raise InvalidConfig("span must cover at least 2 days")
        if not 0.0 <= self.amount_signal <= 1.0:
            raise InvalidConfig("amount_signal must be in [0, 1]")
        if self.amount_range[0] <= 0 or self.amount_range[0] >= self.amount_range[1]:
            raise InvalidConfig("amount range must be positive and increasing")
        if any(c < 0 for c in self.group_counts.values()):
            raise InvalidConfig("group counts must be >= 0")
        lo, hi = self.group_size_range
        if lo < 2 or hi < lo:
            raise InvalidConfig("group sizes must satisfy 2 <= lo <= hi")


class _Synth:
    def __init__(self, cfg: SyntheticConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.accounts = [
            Account(bank=self.rng.randrange(cfg.n_banks), acct=f"A{i:06d}")
            for i in range(cfg.n_accounts)
        ]
        self.span = cfg.span_days * DAY_SECONDS
        self.rows: list[dict] = []
        self.groups: list[PatternGroup] = []

    def licit_amount(self) -> int:
        lo, hi = self.cfg.amount_range
        return int(round(math.exp(self.rng.uniform(math.log(lo), math.log(hi)))))

    def illicit_amount(self) -> int:
        if self.rng.random() < self.cfg.amount_signal:
            lo, hi = self.cfg.signal_band
            return self.rng.randrange(lo, hi + 1)
        return self.licit_amount()

    def payment_format(self, illicit: bool) -> str:
        weights = (1, 3, 1, 2, 1) if illicit else (3, 2, 3, 1, 2)
        return self.rng.choices(PAYMENT_FORMATS, weights=weights, k=1)[0]

    def emit(self, ts, src, dst, amount, illicit, group_id=None):
        self.rows.append(
            dict(
                timestamp=int(ts),
                src=src,
                dst=dst,
                amount=amount,
                is_laundering=illicit,
                payment_format=self.payment_format(illicit),
                group_id=group_id,
            )
        )

    def background(self) -> None:
        for _ in range(self.cfg.n_background):
            src, dst = self.rng.sample(self.accounts, 2)
            self.emit(self.rng.randrange(self.span), src, dst, self.licit_amount(), False)

    def window(self) -> tuple[int, int]:
        length = int(self.rng.uniform(0.25, 1.0) * DAY_SECONDS)
        start = self.rng.randrange(self.span - length)
        return start, length

    def times(self, start: int, length: int, k: int) -> list[int]:
        # distinct, strictly increasing inside the window
        return sorted(self.rng.sample(range(start, start + max(length, k)), k))

    def pattern(self, kind: PatternKind, group_id: int) -> None:
        lo, hi = self.cfg.group_size_range
        size = self.rng.randint(lo, hi)
        start, length = self.window()
        first = len(self.rows)
        if kind is PatternKind.FAN_IN:
            hub, *spokes = self.rng.sample(self.accounts, size + 1)
            for ts, s in zip(self.times(start, length, size), spokes):
                self.emit(ts, s, hub, self.illicit_amount(), True, group_id)
        elif kind is PatternKind.FAN_OUT:
            hub, *spokes = self.rng.sample(self.accounts, size + 1)
            for ts, d in zip(self.times(start, length, size), spokes):
                self.emit(ts, hub, d, self.illicit_amount(), True, group_id)
        elif kind is PatternKind.GATHER_SCATTER:
            size = max(size, 4)
            k_in = size // 2
            hub, *others = self.rng.sample(self.accounts, size + 1)
            stamps = self.times(start, length, size)
            for ts, s in zip(stamps[:k_in], others[:k_in]):
                self.emit(ts, s, hub, self.illicit_amount(), True, group_id)
            for ts, d in zip(stamps[k_in:], others[k_in:]):
                self.emit(ts, hub, d, self.illicit_amount(), True, group_id)
        elif kind is PatternKind.CYCLE:
            size = min(size, 6)
            ring = self.rng.sample(self.accounts, size)
            stamps = self.times(start, length, size)
            for i, ts in enumerate(stamps):
                self.emit(ts, ring[i], ring[(i + 1) % size], self.illicit_amount(), True, group_id)
        elif kind is PatternKind.RANDOM:
            members = self.rng.sample(self.accounts, max(3, (size * 3) // 5 + 1))
            for ts in self.times(start, length, size):
                src, dst = self.rng.sample(members, 2)
                self.emit(ts, src, dst, self.illicit_amount(), True, group_id)
        else:  # pragma: no cover
            raise InvalidConfig(f"unknown pattern kind {kind}")
        member_rows = list(range(first, len(self.rows)))
        self.groups.append((group_id, kind, member_rows))

    def build(self) -> Dataset:
        self.background()
        group_id = 0
        for kind in PatternKind:
            for _ in range(self.cfg.group_counts.get(kind, 0)):
                self.pattern(kind, group_id)
                group_id += 1
        txs = []
        for i, row in enumerate(self.rows):
            txs.append(
                Transaction(
                    tx_id=f"T{i:07d}",
                    timestamp=row["timestamp"],
                    src=row["src"],
                    dst=row["dst"],
                    amount=row["amount"],
                    currency=self.cfg.currency,
                    payment_format=row["payment_format"],
                    is_laundering=row["is_laundering"],
                    group_id=row["group_id"],
                )
            )
        groups = tuple(
            PatternGroup(gid, kind, tuple(f"T{i:07d}" for i in rows))
            for gid, kind, rows in self.groups
        )
        return Dataset(transactions=tuple(txs), groups=groups)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Generate a synthetic dataset with labeled laundering pattern groups.

    Deterministic for a fixed config: equal configs produce identical
    datasets.
    """
    return _Synth(cfg).build()


def validate_pattern_group(ds: Dataset, group: PatternGroup) -> bool:
    """Check that a group's member transactions form the claimed topology."""
    index = ds.by_id()
    try:
        txs = [index[tid] for tid in group.member_tx_ids]
    except KeyError:
        return False
    if not txs or not all(t.is_laundering for t in txs):
        return False
    kind = group.kind
    if kind is PatternKind.FAN_IN:
        hubs = {t.dst for t in txs}
        srcs = [t.src for t in txs]
        return len(hubs) == 1 and len(set(srcs)) == len(srcs)
    if kind is PatternKind.FAN_OUT:
        hubs = {t.src for t in txs}
        dsts = [t.dst for t in txs]
        return len(hubs) == 1 and len(set(dsts)) == len(dsts)
    if kind is PatternKind.GATHER_SCATTER:
        candidates = set.intersection(*({t.src, t.dst} for t in txs))
        for hub in candidates:
            gather = [t for t in txs if t.dst == hub]
            scatter = [t for t in txs if t.src == hub]
            if len(gather) < 2 or len(scatter) < 2:
                continue
            if len(gather) + len(scatter) != len(txs):
                continue
            if max(t.timestamp for t in gather) <= min(t.timestamp for t in scatter):
                return True
        return False
    if kind is PatternKind.CYCLE:
        if len(txs) < 2:
            return False
        for a, b in zip(txs, txs[1:]):
            if a.dst != b.src or a.timestamp >= b.timestamp:
                return False
        if txs[-1].dst != txs[0].src:
            return False
        verts = [t.src for t in txs]
        return len(set(verts)) == len(verts)
    if kind is PatternKind.RANDOM:
        return True
    return False


# ---------------------------------------------------------------------------
# Sampling and splitting


def undersample_balanced(ds: Dataset, target_ratio: float, seed: int = 0) -> Dataset:
    """Drop uniformly chosen licit transactions until the illicit share
    reaches `target_ratio`. All illicit rows are kept.

    Raises UnreachableRatio if the target is below the existing share or
    cannot be hit within 0.005 by whole-row removal.
    """
    if not 0.0 < target_ratio < 1.0:
        raise InvalidConfig("target_ratio must be in (0, 1)")
    illicit = [t for t in ds.transactions if t.is_laundering]
    licit = [t for t in ds.transactions if not t.is_laundering]
    if not illicit or not licit:
        raise InvalidConfig("need both classes present to rebalance")
    current = len(illicit) / len(ds)
    if target_ratio < current - 1e-12:
        raise UnreachableRatio(
            f"target {target_ratio:.4f} below existing illicit share {current:.4f}"
        )
    keep_licit = round(len(illicit) * (1.0 - target_ratio) / target_ratio)
    keep_licit = min(keep_licit, len(licit))
    achieved = len(illicit) / (len(illicit) + keep_licit)
    if abs(achieved - target_ratio) > 0.005:
        raise UnreachableRatio(
            f"closest achievable share is {achieved:.4f}, wanted {target_ratio:.4f}"
        )
    if keep_licit == len(licit):
        return ds
    rng = random.Random(seed)
    kept_ids = {t.tx_id for t in rng.sample(licit, keep_licit)}
    txs = tuple(t for t in ds.transactions if t.is_laundering or t.tx_id in kept_ids)
    return Dataset(transactions=txs, groups=ds.groups)


def sample_pattern_groups(
    ds: Dataset, k: int, seed: int = 0, stratified: bool = False
) -> Dataset:
    """Keep the transactions of `k` randomly chosen pattern groups as the
    illicit class; drop the rest of the illicit rows. Licit rows survive
    untouched.

    With `stratified=True` the k groups are spread across pattern kinds by
    largest-remainder quotas instead of drawn uniformly from the pool.
    """
    if k < 0 or k > len(ds.groups):
        raise InvalidConfig(f"k must be in [0, {len(ds.groups)}]")
    rng = random.Random(seed)
    if stratified:
        by_kind: dict[PatternKind, list[PatternGroup]] = {}
        for g in ds.groups:
            by_kind.setdefault(g.kind, []).append(g)
        total = len(ds.groups)
        exact = {kind: k * len(gs) / total for kind, gs in by_kind.items()}
        quotas = {kind: int(x) for kind, x in exact.items()}
        shortfall = k - sum(quotas.values())
        for kind, _ in sorted(
            exact.items(), key=lambda kv: kv[1] - int(kv[1]), reverse=True
        )[:shortfall]:
            quotas[kind] += 1
        chosen: list[PatternGroup] = []
        for kind, gs in by_kind.items():
            chosen.extend(rng.sample(gs, min(quotas[kind], len(gs))))
    else:
        chosen = rng.sample(list(ds.groups), k)
    kept_ids = {g.group_id for g in chosen}
    member_ids = {tid for g in chosen for tid in g.member_tx_ids}
    txs = tuple(
        t
        for t in ds.transactions
        if (not t.is_laundering) or t.tx_id in member_ids
    )
    groups = tuple(g for g in ds.groups if g.group_id in kept_ids)
    return Dataset(transactions=txs, groups=groups)


def choose_split_day(timestamps: Sequence[int], train_fraction: float) -> int:
    """Earliest day whose cumulative row count first reaches `train_fraction`.
    That day closes the train side (inclusive)."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfig("train_fraction must be in (0, 1)")
    if len(timestamps) == 0:
        raise DegenerateSplit("empty dataset")
    days = sorted({int(ts) // DAY_SECONDS for ts in timestamps})
    counts = {d: 0 for d in days}
    for ts in timestamps:
        counts[int(ts) // DAY_SECONDS] += 1
    total = len(timestamps)
    running = 0
    for d in days:
        running += counts[d]
        if running / total >= train_fraction:
            return d
    return days[-1]


def temporal_split(ds: Dataset, train_fraction: float) -> SplitResult:
    """Split at a day boundary: the earliest day whose cumulative row count
    first reaches `train_fraction` closes the train side.

    Raises DegenerateSplit when either side would be empty.
    """
    split_day = choose_split_day([t.timestamp for t in ds.transactions], train_fraction)
    total = len(ds)
    train_txs = tuple(t for t in ds.transactions if t.timestamp // DAY_SECONDS <= split_day)
    test_txs = tuple(t for t in ds.transactions if t.timestamp // DAY_SECONDS > split_day)
    if not train_txs or not test_txs:
        raise DegenerateSplit(
            f"split at day {split_day} leaves {len(train_txs)} train / {len(test_txs)} test rows"
        )

    def side_groups(txs: tuple[Transaction, ...]) -> tuple[PatternGroup, ...]:
        present = {t.tx_id for t in txs}
        out = []
        for g in ds.groups:
            members = tuple(tid for tid in g.member_tx_ids if tid in present)
            if members:
                out.append(PatternGroup(g.group_id, g.kind, members))
        return tuple(out)

    return SplitResult(
        train=Dataset(transactions=train_txs, groups=side_groups(train_txs)),
        test=Dataset(transactions=test_txs, groups=side_groups(test_txs)),
        split_day=split_day,
        train_fraction=len(train_txs) / total,
    )


def dataset1(seed: int = 1, amount_signal: float = 0.8) -> Dataset:
    """Balanced benchmark: full pattern census, then undersampled to 50%."""
    cfg = SyntheticConfig(seed=seed, amount_signal=amount_signal)
    full = generate_synthetic(cfg)
    return undersample_balanced(full, 0.5, seed=seed)


def dataset2(seed: int = 2, amount_signal: float = 0.2, n_groups: int = 40) -> Dataset:
    """Imbalanced benchmark: keep a random subset of pattern groups so the
    illicit share lands near 5-6%."""
    cfg = SyntheticConfig(seed=seed, amount_signal=amount_signal)
    full = generate_synthetic(cfg)
    return sample_pattern_groups(full, n_groups, seed=seed)
