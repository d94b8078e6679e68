"""Interaction logs, implicit-feedback matrices, splits, negatives and feature tables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

FEATURE_KINDS = ("categorical-onehot", "dense", "pretrained")


@dataclass(frozen=True)
class Interaction:
    user_idx: int
    item_idx: int
    rating: float
    timestamp: int


@dataclass
class InteractionLog:
    """Parsed interactions plus the external-id remap tables used to build them."""

    interactions: list[Interaction]
    user_ids: list[str]
    item_ids: list[str]

    def __len__(self):
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)

    def __getitem__(self, i):
        return self.interactions[i]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


def load_interactions(path, fmt: str = "tsv-4col") -> InteractionLog:
    """Read ``user<TAB>item<TAB>rating<TAB>timestamp`` lines.

    External ids are remapped to dense indices in order of first appearance.
    """
    if fmt != "tsv-4col":
        raise ParseError(f"unsupported interaction format {fmt!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(parts)}")
            u, i, r, t = parts
            try:
                rating = float(r)
                ts = int(float(t))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad rating/timestamp {r!r}/{t!r}") from None
            if ts < 0:
                raise ParseError(f"{path}:{lineno}: negative timestamp {ts}")
            ui = users.setdefault(u, len(users))
            ii = items.setdefault(i, len(items))
            out.append(Interaction(ui, ii, rating, ts))
    if not out:
        raise ParseError(f"{path}: no interactions")
    return InteractionLog(out, list(users), list(items))


@dataclass
class InteractionMatrix:
    """Binary user x item matrix stored as sorted per-user item rows (CSR layout)."""

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_pairs(cls, users, items, n_users: int, n_items: int) -> "InteractionMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= n_users
                           or items.min() < 0 or items.max() >= n_items):
            raise DataError("interaction index out of range")
        keys = np.unique(users * n_items + items)
        u, i = np.divmod(keys, n_items)
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.add.at(indptr, u + 1, 1)
        return cls(n_users, n_items, np.cumsum(indptr), i.astype(np.int64))

    @property
    def rows(self) -> list[list[int]]:
        return [self.row(u).tolist() for u in range(self.n_users)]

    def row(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user]:self.indptr[user + 1]]

    def degree(self, user=None):
        deg = np.diff(self.indptr)
        return deg if user is None else int(deg[user])

    def contains(self, user: int, item: int) -> bool:
        r = self.row(user)
        k = np.searchsorted(r, item)
        return bool(k < r.size and r[k] == item)

    @cached_property
    def keys(self) -> np.ndarray:
        """Sorted ``user * n_items + item`` codes of every stored entry."""
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), self.degree())
        return users * self.n_items + self.indices

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def density(self) -> float:
        return self.nnz / (self.n_users * self.n_items)

    def item_popularity(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_items)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_users, self.n_items), dtype=np.int64)
        u = np.repeat(np.arange(self.n_users), self.degree())
        dense[u, self.indices] = 1
        return dense

    def to_scipy(self):
        import scipy.sparse as sp
        data = np.ones(self.indices.size, dtype=np.int64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_users, self.n_items))


def build_matrix(interactions: Sequence[Interaction], n_users: int | None = None,
                 n_items: int | None = None) -> InteractionMatrix:
    """Binarize: any observed interaction sets the cell to 1, duplicates collapse."""
    if len(interactions) == 0:
        raise DataError("cannot build a matrix from zero interactions")
    users = np.fromiter((x.user_idx for x in interactions), dtype=np.int64, count=len(interactions))
    items = np.fromiter((x.item_idx for x in interactions), dtype=np.int64, count=len(interactions))
    if isinstance(interactions, InteractionLog):
        n_users = n_users or interactions.n_users
        n_items = n_items or interactions.n_items
    n_users = n_users if n_users is not None else int(users.max()) + 1
    n_items = n_items if n_items is not None else int(items.max()) + 1
    return InteractionMatrix.from_pairs(users, items, n_users, n_items)


@dataclass
class Split:
    train: list[Interaction]
    test: dict[int, Interaction]
    dropped_users: list[int] = field(default_factory=list)


def leave_one_out_split(interactions: Sequence[Interaction]) -> Split:
    """Hold out each user's latest interaction (ties go to the larger item index).

    Users with a single interaction stay in training and are left out of the test set.
    """
    by_user: dict[int, list[Interaction]] = {}
    for x in interactions:
        by_user.setdefault(x.user_idx, []).append(x)
    test: dict[int, Interaction] = {}
    dropped = []
    for u, xs in by_user.items():
        if len(xs) < 2:
            dropped.append(u)
            continue
        test[u] = max(xs, key=lambda x: (x.timestamp, x.item_idx))
    if dropped:
        log.info("leave-one-out: %d users with a single interaction excluded from test", len(dropped))
    held = {id(x) for x in test.values()}
    train = [x for x in interactions if id(x) not in held]
    return Split(train=train, test=test, dropped_users=sorted(dropped))


def sample_negatives(Y: InteractionMatrix, user: int, n: int, rng: np.random.Generator,
                     exclude: Iterable[int] = ()) -> list[int]:
    """Draw ``n`` distinct items the user never interacted with, uniformly."""
    seen = Y.row(user)
    extra = np.fromiter(exclude, dtype=np.int64)
    if extra.size:
        seen = np.union1d(seen, extra)
    free = Y.n_items - seen.size
    if free < n:
        raise DataError(f"user {user} has only {free} un-interacted items, {n} requested")
    if free <= 4 * n:
        pool = np.setdiff1d(np.arange(Y.n_items), seen, assume_unique=True)
        return rng.choice(pool, size=n, replace=False).tolist()
    # rejection sampling: cheap when the user has seen a small share of the catalogue
    out: list[int] = []
    taken: set[int] = set()
    while len(out) < n:
        for c in rng.integers(0, Y.n_items, size=2 * (n - len(out))).tolist():
            if c in taken:
                continue
            k = np.searchsorted(seen, c)
            if k < seen.size and seen[k] == c:
                continue
            taken.add(c)
            out.append(c)
            if len(out) == n:
                break
    return out


def sample_negatives_batch(Y: InteractionMatrix, users: np.ndarray, n: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Vectorised negatives: ``n`` un-interacted items per entry of ``users``.

    Draws are independent per row (with replacement across rows of the same
    user), which is the usual per-positive negative-sampling scheme.
    """
    users = np.asarray(users, dtype=np.int64)
    out = rng.integers(0, Y.n_items, size=(users.size, n))
    bad = _interacted(Y, np.repeat(users, n), out.reshape(-1)).reshape(out.shape)
    while bad.any():
        rows, cols = np.nonzero(bad)
        out[rows, cols] = rng.integers(0, Y.n_items, size=rows.size)
        bad[rows, cols] = _interacted(Y, users[rows], out[rows, cols])
    return out


def _interacted(Y: InteractionMatrix, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    keys = Y.keys
    if keys.size == 0:
        return np.zeros(np.shape(users), dtype=bool)
    q = users * Y.n_items + items
    k = np.searchsorted(keys, q)
    k = np.minimum(k, keys.size - 1)
    return keys[k] == q


# ---------------------------------------------------------------- features

@dataclass
class FeatureTable:
    dim: int
    entries: dict[str, np.ndarray]
    kind: str = "dense"

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"feature dim must be positive, got {self.dim}")
        if self.kind not in FEATURE_KINDS:
            raise DataError(f"unknown feature kind {self.kind!r}")
        for key, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise DataError(f"feature row {key!r} has {vec.size} values, expected {self.dim}")

    def get(self, key) -> np.ndarray | None:
        return self.entries.get(str(key))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return str(key) in self.entries

    def matrix(self, keys: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Stack rows for ``keys``; absent ids give zero rows. Returns (matrix, present mask)."""
        out = np.zeros((len(keys), self.dim))
        present = np.zeros(len(keys), dtype=bool)
        for r, k in enumerate(keys):
            v = self.entries.get(str(k))
            if v is not None:
                out[r] = v
                present[r] = True
        return out, present


def load_feature_table(path, kind: str = "dense") -> FeatureTable:
    """Read a feature file: ``#dim=<d>`` then ``id<TAB>v1,...,vd`` per line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#dim="):
            raise ParseError(f"{path}:1: expected '#dim=<d>' header, got {header!r}")
        try:
            dim = int(header[5:])
        except ValueError:
            raise ParseError(f"{path}:1: bad dim {header[5:]!r}") from None
        entries: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            key, sep, values = line.partition("\t")
            if not sep:
                raise ParseError(f"{path}:{lineno}: expected 'id<TAB>values'")
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value in row {key!r}") from None
            if vec.size != dim:
                raise ParseError(f"{path}:{lineno}: row {key!r} has {vec.size} values, expected {dim}")
            entries[key] = vec
    return FeatureTable(dim, entries, kind)


def save_feature_table(table: FeatureTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim={table.dim}\n")
        for key, vec in table.entries.items():
            fh.write(key + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")


def min_max_normalize(table: FeatureTable) -> FeatureTable:
    """Per coordinate ``(x - min) / (max - min)``; constant coordinates map to 0."""
    if table.kind != "dense":
        raise DataError(f"min-max normalisation applies to dense tables, not {table.kind!r}")
    if not table.entries:
        raise DataError("cannot normalise an empty feature table")
    keys = list(table.entries)
    X = np.stack([table.entries[k] for k in keys])
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    Z = np.where(span > 0, (X - lo) / safe, 0.0)
    return FeatureTable(table.dim, dict(zip(keys, Z)), "dense")


class OneHotEncoder:
    """Fixed-vocabulary one-hot encoding; unseen values encode as all zeros."""

    def __init__(self, vocabulary: Iterable[str]):
        self.vocabulary = list(dict.fromkeys(str(v) for v in vocabulary))
        if not self.vocabulary:
            raise DataError("one-hot vocabulary is empty")
        self.index = {v: i for i, v in enumerate(self.vocabulary)}

    @property
    def dim(self) -> int:
        return len(self.vocabulary)

    def transform(self, value) -> np.ndarray:
        vec = np.zeros(self.dim)
        i = self.index.get(str(value))
        if i is None:
            log.warning("one-hot: unseen category %r encoded as zeros", value)
        else:
            vec[i] = 1.0
        return vec


def one_hot_encode(values: dict, vocabulary: Iterable[str] | None = None) -> FeatureTable:
    """Encode a categorical column ``{id: category}`` as a one-hot FeatureTable.

    With no explicit vocabulary, the sorted set of observed categories is used.
    """
    if vocabulary is None:
        vocabulary = sorted({str(v) for v in values.values()})
    enc = OneHotEncoder(vocabulary)
    return FeatureTable(enc.dim, {str(k): enc.transform(v) for k, v in values.items()},
                        "categorical-onehot")
