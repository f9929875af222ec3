"""Interaction logs -> per-user chronological sequences, splits, batches, negatives."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError, IngestError, ProtocolError

log = logging.getLogger(__name__)

FORMATS = ("movielens-dat", "amazon-csv", "jsonl")
CACHE_MAGIC = "ADRREC-CORPUS"
CACHE_VERSION = 1


@dataclass(frozen=True, slots=True)
class Interaction:
    user: str
    item: str
    timestamp: int

    def __post_init__(self):
        if not self.user or not self.item:
            raise ValueError("user and item must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


class InteractionLog(list):
    """A list of :class:`Interaction` that also remembers how many input lines were rejected."""

    def __init__(self, records=(), malformed: int = 0):
        super().__init__(records)
        self.malformed = malformed


def _parse_movielens(line: str) -> Interaction:
    user, item, _rating, ts = line.split("::")
    return Interaction(user.strip(), item.strip(), int(ts))


def _parse_jsonl(line: str) -> Interaction:
    rec = json.loads(line)
    return Interaction(str(rec["user"]), str(rec["item"]), int(rec["ts"]))


def _parse_amazon(line: str) -> Interaction:
    row = next(csv.reader([line]))
    if len(row) != 4:
        raise ValueError(f"expected 4 columns, got {len(row)}")
    user, item, _rating, ts = row
    return Interaction(user.strip(), item.strip(), int(float(ts)))


_PARSERS = {
    "movielens-dat": _parse_movielens,
    "amazon-csv": _parse_amazon,
    "jsonl": _parse_jsonl,
}


def parse_interactions(source: BinaryIO | bytes, format: str) -> InteractionLog:
    """Parse a raw interaction log.

    Records keep input order. Lines that fail to parse are skipped and counted
    in ``.malformed`` on the result (a header row in a CSV counts as one).
    """
    try:
        parse = _PARSERS[format]
    except KeyError:
        raise ConfigError(f"unknown format {format!r}; expected one of {FORMATS}") from None
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    out = InteractionLog()
    try:
        for raw in source:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                out.append(parse(line))
            except (ValueError, KeyError, TypeError, json.JSONDecodeError):
                out.malformed += 1
    except OSError as exc:
        raise IngestError(f"cannot read source: {exc}") from exc
    if out.malformed:
        log.warning("skipped %d malformed record(s)", out.malformed)
    return out


def read_interactions(path: str | Path, format: str) -> InteractionLog:
    try:
        with open(path, "rb") as fh:
            return parse_interactions(fh, format)
    except FileNotFoundError as exc:
        raise IngestError(f"no such file: {path}") from exc
    except IsADirectoryError as exc:
        raise IngestError(f"not a file: {path}") from exc


@dataclass
class UserSequences:
    """Filtered corpus: one chronological (items, times) pair per user.

    ``items[u]`` holds dense item indices in ``[1, n_items]``; index 0 is padding.
    User ``u`` (0-based position) has raw id ``user_ids[u]``; dense user index is
    ``u + 1``. Raw item id of index ``i`` is ``item_ids[i - 1]``.
    """

    user_ids: list[str]
    item_ids: list[str]
    items: list[np.ndarray]
    times: list[np.ndarray]
    min_count: int = 1

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_actions(self) -> int:
        return int(sum(len(s) for s in self.items))

    @property
    def t_min(self) -> int:
        return int(min(t.min() for t in self.times))

    def subset(self, users: Sequence[int]) -> "UserSequences":
        """Keep the given 0-based users; the item vocabulary is left untouched."""
        users = list(users)
        return UserSequences(
            [self.user_ids[u] for u in users],
            list(self.item_ids),
            [self.items[u] for u in users],
            [self.times[u] for u in users],
            self.min_count,
        )


def build_sequences(interactions: Sequence[Interaction], min_count: int = 5) -> UserSequences:
    """Iterative k-core filter followed by a stable per-user chronological sort."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    n = len(interactions)
    user_code: dict[str, int] = {}
    item_code: dict[str, int] = {}
    u = np.fromiter((user_code.setdefault(x.user, len(user_code)) for x in interactions), np.int64, n)
    i = np.fromiter((item_code.setdefault(x.item, len(item_code)) for x in interactions), np.int64, n)
    ts = np.fromiter((x.timestamp for x in interactions), np.int64, n)
    order = np.arange(n)

    while len(order):
        uc = np.bincount(u[order], minlength=len(user_code))
        ic = np.bincount(i[order], minlength=len(item_code))
        keep = (uc[u[order]] >= min_count) & (ic[i[order]] >= min_count)
        if keep.all():
            break
        order = order[keep]
    if not len(order):
        raise EmptyCorpusError(f"no interactions survive min_count={min_count}")

    # dense ids by first appearance among surviving events (order is ascending)
    u_keep, i_keep, t_keep = u[order], i[order], ts[order]
    _, u_first = np.unique(u_keep, return_index=True)
    u_rank = np.empty(len(user_code), np.int64)
    u_sorted = u_keep[np.sort(u_first)]
    u_rank[u_sorted] = np.arange(len(u_sorted))
    _, i_first = np.unique(i_keep, return_index=True)
    i_sorted = i_keep[np.sort(i_first)]
    i_rank = np.empty(len(item_code), np.int64)
    i_rank[i_sorted] = np.arange(1, len(i_sorted) + 1)

    dense_u = u_rank[u_keep]
    dense_i = i_rank[i_keep]
    perm = np.lexsort((np.arange(len(order)), t_keep, dense_u))
    dense_u, dense_i, t_keep = dense_u[perm], dense_i[perm], t_keep[perm]
    bounds = np.flatnonzero(np.diff(dense_u)) + 1
    items = np.split(dense_i, bounds)
    times = np.split(t_keep, bounds)

    inv_user = {v: k for k, v in user_code.items()}
    inv_item = {v: k for k, v in item_code.items()}
    return UserSequences(
        user_ids=[inv_user[c] for c in u_sorted.tolist()],
        item_ids=[inv_item[c] for c in i_sorted.tolist()],
        items=items,
        times=times,
        min_count=min_count,
    )


def split_leave_one_out(seq: Sequence):
    """``[..., val, test]`` -> ``(prefix, val, test)``; ``None`` when shorter than 3."""
    if len(seq) < 3:
        return None
    return seq[:-2], seq[-2], seq[-1]


@dataclass
class LeaveOneOut:
    """Per-user leave-one-out views over a :class:`UserSequences`.

    ``users`` lists the 0-based users that had at least 3 events; ``skipped``
    counts the rest.
    """

    corpus: UserSequences
    users: list[int]
    skipped: int = 0

    def train(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.corpus.items[u][:-2], self.corpus.times[u][:-2]) for u in self.users]

    def context(self, u: int, split: str) -> tuple[np.ndarray, np.ndarray, int, int]:
        """(context items, context times, target item, target time) for ``split`` in val/test."""
        items, times = self.corpus.items[u], self.corpus.times[u]
        cut = {"val": -2, "test": -1}[split]
        return items[:cut], times[:cut], int(items[cut]), int(times[cut])


def leave_one_out(corpus: UserSequences) -> LeaveOneOut:
    users, skipped = [], 0
    for u, seq in enumerate(corpus.items):
        if split_leave_one_out(seq) is None:
            skipped += 1
        else:
            users.append(u)
    if skipped:
        log.info("leave-one-out skipped %d user(s) with < 3 events", skipped)
    return LeaveOneOut(corpus, users, skipped)


@dataclass
class SequenceBatch:
    items: np.ndarray  # B x N int64, 0 = pad
    times: np.ndarray  # B x N int64
    pad_mask: np.ndarray  # B x N bool, True = real token
    targets: np.ndarray  # B x N int64, 0 where undefined
    users: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.items)


def left_pad(items: np.ndarray, times: np.ndarray, max_len: int):
    """Keep the last ``max_len`` events, left-padded with zeros."""
    items, times = items[-max_len:], times[-max_len:]
    k = len(items)
    out_i = np.zeros(max_len, np.int64)
    out_t = np.zeros(max_len, np.int64)
    if k:
        out_i[-k:] = items
        out_t[-k:] = times
    return out_i, out_t


def encode_sequence(items: np.ndarray, times: np.ndarray, max_len: int):
    """Truncate to the last ``max_len + 1`` events; inputs are the first N, targets shifted by one."""
    items, times = items[-(max_len + 1):], times[-(max_len + 1):]
    inp_i, inp_t = left_pad(items[:-1], times[:-1], max_len)
    tgt, _ = left_pad(items[1:], times[1:], max_len)
    return inp_i, inp_t, tgt


def make_batches(
    sequences: Sequence[tuple[np.ndarray, np.ndarray]],
    max_len: int,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    shuffle: bool = True,
) -> Iterator[SequenceBatch]:
    """Shuffled, left-padded next-item training batches.

    The shuffle depends only on ``(seed, epoch)``. Sequences with fewer than
    two events have no target and are dropped.
    """
    if max_len < 2 or batch_size < 1:
        raise ConfigError("need max_len >= 2 and batch_size >= 1")
    usable = np.array([u for u, (it, _) in enumerate(sequences) if len(it) >= 2], np.int64)
    if shuffle and len(usable):
        usable = usable[np.random.default_rng([seed, epoch]).permutation(len(usable))]
    for start in range(0, len(usable), batch_size):
        chunk = usable[start:start + batch_size]
        rows = [encode_sequence(*sequences[u], max_len) for u in chunk]
        items = np.stack([r[0] for r in rows])
        yield SequenceBatch(
            items=items,
            times=np.stack([r[1] for r in rows]),
            pad_mask=items != 0,
            targets=np.stack([r[2] for r in rows]),
            users=chunk,
        )


def sample_negatives(user: int, n: int, n_items: int, history, seed: int) -> list[int]:
    """``n`` distinct items from ``[1, n_items]`` minus ``history``, fixed by ``(user, seed)``."""
    hist = np.unique(np.asarray(list(history) if not isinstance(history, np.ndarray) else history, np.int64))
    hist = hist[(hist >= 1) & (hist <= n_items)]
    available = n_items - len(hist)
    if available < n:
        raise ProtocolError(f"user {user}: only {available} candidate negatives, need {n}")
    rng = np.random.default_rng([seed, user])
    if len(hist) * 2 > n_items or n * 4 > available:
        pool = np.setdiff1d(np.arange(1, n_items + 1), hist, assume_unique=True)
        return rng.choice(pool, size=n, replace=False).tolist()
    banned = set(hist.tolist())
    out: list[int] = []
    while len(out) < n:
        for c in rng.integers(1, n_items + 1, size=2 * (n - len(out))).tolist():
            if c not in banned:
                banned.add(c)
                out.append(c)
                if len(out) == n:
                    break
    return out


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_actions: int
    avg_length: float

    def as_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_actions": self.n_actions,
            "avg_length": self.avg_length,
        }


def dataset_stats(sequences: UserSequences) -> DatasetStats:
    if not sequences.n_users:
        raise EmptyCorpusError("empty corpus")
    n_actions = sequences.n_actions
    # count items actually present; equals n_items for any corpus from build_sequences
    present = len(np.unique(np.concatenate(sequences.items)))
    return DatasetStats(sequences.n_users, present, n_actions, n_actions / sequences.n_users)


def save_corpus(corpus: UserSequences, path: str | Path, meta: dict | None = None) -> None:
    header = {
        "n_users": corpus.n_users,
        "n_items": corpus.n_items,
        "min_count": corpus.min_count,
        "user_ids": corpus.user_ids,
        "item_ids": corpus.item_ids,
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CACHE_MAGIC}\t{CACHE_VERSION}\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for items, times in zip(corpus.items, corpus.times):
            fh.write(" ".join(f"{i}:{t}" for i, t in zip(items.tolist(), times.tolist())) + "\n")


def load_corpus(path: str | Path) -> UserSequences:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open corpus cache {path}: {exc}") from exc
    with fh:
        magic = fh.readline().rstrip("\n").split("\t")
        if len(magic) != 2 or magic[0] != CACHE_MAGIC:
            raise IngestError(f"{path}: not a corpus cache (bad magic)")
        if int(magic[1]) != CACHE_VERSION:
            raise IngestError(f"{path}: unsupported cache version {magic[1]}")
        header = json.loads(fh.readline())
        items, times = [], []
        for line in fh:
            pairs = np.array([p.split(":") for p in line.split()], np.int64).reshape(-1, 2)
            items.append(pairs[:, 0].copy())
            times.append(pairs[:, 1].copy())
    if len(items) != header["n_users"]:
        raise IngestError(f"{path}: truncated cache ({len(items)} of {header['n_users']} users)")
    return UserSequences(header["user_ids"], header["item_ids"], items, times, header["min_count"])


def cyclic_corpus(n_users: int = 500, period: int = 20, min_len: int = 25, max_len: int = 45,
                  seed: int = 0, step_seconds: int = 3600) -> UserSequences:
    """Synthetic corpus in which item ``i`` is always followed by ``i % period + 1``.

    Each user starts at a random phase; timestamps advance by ``step_seconds``
    from 2020-01-01 UTC.
    """
    rng = np.random.default_rng(seed)
    base = 1577836800
    items, times = [], []
    for u in range(n_users):
        length = int(rng.integers(min_len, max_len + 1))
        start = int(rng.integers(0, period))
        items.append((start + np.arange(length)) % period + 1)
        t0 = base + int(rng.integers(0, 86400 * 30))
        times.append(t0 + step_seconds * np.arange(length, dtype=np.int64))
    return UserSequences(
        user_ids=[f"u{u}" for u in range(n_users)],
        item_ids=[f"i{i}" for i in range(1, period + 1)],
        items=items,
        times=times,
        min_count=1,
    )
