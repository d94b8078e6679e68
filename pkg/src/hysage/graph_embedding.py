"""Biased random walks and the embedding fitted to their log co-occurrence counts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autograd import Parameter, adam_step
from .data import FeatureTable
from .errors import ConfigError, DataError, TrainingError
from .rng import hashed_uniforms
from .similarity import SimilarityMatrix

log = logging.getLogger(__name__)

@dataclass
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 20
    walks_per_node: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise ConfigError(f"walk p and q must be positive, got p={self.p}, q={self.q}")
        if self.walk_length < 2:
            raise ConfigError(f"walk_length must be >= 2, got {self.walk_length}")
        if self.walks_per_node < 1:
            raise ConfigError(f"walks_per_node must be >= 1, got {self.walks_per_node}")


def transition_probs(S: SimilarityMatrix, prev: int | None, cur: int,
                     p: float = 1.0, q: float = 1.0) -> list[tuple[int, float]]:
    """Next-hop distribution from ``cur`` given the node visited before it.

    Weight ``w(cur, x)`` is divided by ``p`` for a return to ``prev``, kept for
    neighbours of ``prev`` and divided by ``q`` otherwise. Without ``prev`` the
    plain edge weights are used.
    """
    nbrs, w = S.row(cur)
    if nbrs.size == 0:
        raise DataError(f"node {cur} has no neighbours")
    probs = w * _bias_factors(S, prev, nbrs, p, q)
    probs = probs / probs.sum()
    return list(zip(nbrs.tolist(), probs.tolist()))


def _bias_factors(S: SimilarityMatrix, prev, nbrs: np.ndarray, p: float, q: float) -> np.ndarray:
    if prev is None:
        return np.ones(nbrs.size)
    prev_nbrs, _ = S.row(prev)
    adjacent = np.isin(nbrs, prev_nbrs, assume_unique=True)
    factors = np.where(adjacent, 1.0, 1.0 / q)
    factors[nbrs == prev] = 1.0 / p
    return factors


def generate_walks(S: SimilarityMatrix, cfg: WalkConfig) -> np.ndarray:
    """Walks from every non-isolated node, ``walks_per_node`` times each.

    Returns an int array of shape (n_walks, walk_length); positions after a dead
    end hold -1. Each hop proposes a neighbour in proportion to edge weight and
    accepts it with probability ``factor / max_factor``, which leaves exactly the
    law of :func:`transition_probs`. Uniforms come from
    ``hashed_uniforms(seed, start, repeat, step, draw)``, so a walk depends only
    on its own coordinates and not on batching.
    """
    if S.n == 0:
        raise DataError("empty similarity graph")
    deg = S.degree()
    starts = np.flatnonzero(deg > 0)
    if S.n - starts.size:
        log.info("random walks: %d isolated nodes skipped", S.n - starts.size)
    reps = np.repeat(np.arange(cfg.walks_per_node), starts.size)
    origin = np.tile(starts, cfg.walks_per_node)
    walks = np.empty((origin.size, cfg.walk_length), dtype=np.int64)
    sampler = _Sampler(S, cfg)
    chunk = 1 << 16
    for lo in range(0, origin.size, chunk):
        walks[lo:lo + chunk] = sampler.run(origin[lo:lo + chunk], reps[lo:lo + chunk])
    return walks


class _Sampler:
    def __init__(self, S: SimilarityMatrix, cfg: WalkConfig):
        self.S, self.cfg = S, cfg
        self.deg = S.degree()
        self.cum = np.cumsum(S.weights)
        self.base = np.concatenate([[0.0], self.cum])[S.indptr[:-1]]
        self.total = np.bincount(np.repeat(np.arange(S.n), self.deg), weights=S.weights, minlength=S.n)
        self.edge_keys = np.repeat(np.arange(S.n, dtype=np.int64), self.deg) * S.n + S.indices
        self.inv_p, self.inv_q = 1.0 / cfg.p, 1.0 / cfg.q
        self.top = max(self.inv_p, 1.0, self.inv_q)
        self.unbiased = cfg.p == 1.0 and cfg.q == 1.0

    def _propose(self, cur, u):
        S = self.S
        j = np.searchsorted(self.cum, self.base[cur] + u * self.total[cur], side="right")
        j = np.clip(j, S.indptr[cur], S.indptr[cur + 1] - 1)
        return S.indices[j]

    def _factor(self, prev, cand):
        key = prev * self.S.n + cand
        k = np.minimum(np.searchsorted(self.edge_keys, key), self.edge_keys.size - 1)
        factor = np.where(self.edge_keys[k] == key, 1.0, self.inv_q)
        factor[cand == prev] = self.inv_p
        return factor

    def run(self, s: np.ndarray, r: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        out = np.full((s.size, cfg.walk_length), -1, dtype=np.int64)
        out[:, 0] = s
        cur, prev = s.copy(), np.full(s.size, -1, dtype=np.int64)
        alive = np.ones(s.size, dtype=bool)
        for t in range(1, cfg.walk_length):
            alive &= self.deg[cur] > 0
            nxt = cur.copy()
            pending = np.flatnonzero(alive)
            draw = 0
            while pending.size:
                cand = self._propose(cur[pending], hashed_uniforms(cfg.seed, s[pending], r[pending], t, draw))
                if t == 1 or self.unbiased:
                    ok = np.ones(pending.size, dtype=bool)
                else:
                    v = hashed_uniforms(cfg.seed, s[pending], r[pending], t, draw + 1)
                    ok = v * self.top < self._factor(prev[pending], cand)
                nxt[pending[ok]] = cand[ok]
                pending = pending[~ok]
                draw += 2
            out[alive, t] = nxt[alive]
            prev = np.where(alive, cur, prev)
            cur = nxt
        return out


def walks_as_lists(walks: np.ndarray) -> list[list[int]]:
    return [row[row >= 0].tolist() for row in walks]


# ---------------------------------------------------------------- co-occurrence

@dataclass
class CooccurrenceTable:
    """Counts per unordered node pair, stored once with ``a < b``."""

    n: int
    a: np.ndarray
    b: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return int(self.counts.size)

    def get(self, x: int, y: int) -> float:
        lo, hi = min(x, y), max(x, y)
        keys = self.a * self.n + self.b
        k = np.searchsorted(keys, lo * self.n + hi)
        if k < keys.size and keys[k] == lo * self.n + hi:
            return float(self.counts[k])
        return 0.0

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(x), int(y)): float(c) for x, y, c in zip(self.a, self.b, self.counts)}

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def _as_walk_array(walks) -> np.ndarray:
    if isinstance(walks, np.ndarray):
        return walks.astype(np.int64, copy=False)
    walks = list(walks)
    length = max((len(w) for w in walks), default=0)
    out = np.full((len(walks), length), -1, dtype=np.int64)
    for k, w in enumerate(walks):
        out[k, :len(w)] = w
    return out


def count_cooccurrences(walks, n: int | None = None) -> CooccurrenceTable:
    """Every pair of positions in a walk holding two different nodes adds 1 to that pair."""
    W = _as_walk_array(walks)
    if W.size == 0 or not (W >= 0).any():
        raise DataError("no walks to count")
    if n is None:
        n = int(W.max()) + 1
    L = W.shape[1]
    ii, jj = np.triu_indices(L, k=1)
    use_bincount = n * n <= 1 << 26
    total = np.zeros(n * n, dtype=np.int64) if use_bincount else None
    parts: list[tuple[np.ndarray, np.ndarray]] = []
    chunk = max(1, 2_000_000 // max(len(ii), 1))
    for lo in range(0, W.shape[0], chunk):
        block = W[lo:lo + chunk]
        x, y = block[:, ii].ravel(), block[:, jj].ravel()
        keep = (x >= 0) & (y >= 0) & (x != y)
        x, y = x[keep], y[keep]
        keys = np.minimum(x, y) * n + np.maximum(x, y)
        if use_bincount:
            total += np.bincount(keys, minlength=n * n)
        else:
            parts.append(np.unique(keys, return_counts=True))
    if use_bincount:
        keys = np.flatnonzero(total)
        counts = total[keys]
    else:
        allk = np.concatenate([k for k, _ in parts])
        allc = np.concatenate([c for _, c in parts])
        keys, inv = np.unique(allk, return_inverse=True)
        counts = np.bincount(inv, weights=allc).astype(np.int64)
    a, b = np.divmod(keys, n)
    return CooccurrenceTable(n, a, b, counts.astype(np.float64))


# ---------------------------------------------------------------- embedding

@dataclass
class EmbeddingTable:
    e: np.ndarray
    e_ctx: np.ndarray
    b: np.ndarray
    b_ctx: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.e.shape[1])

    @property
    def n(self) -> int:
        return int(self.e.shape[0])

    @classmethod
    def init(cls, n: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        r = 0.5 / dim
        return cls(rng.uniform(-r, r, (n, dim)), rng.uniform(-r, r, (n, dim)),
                   np.zeros(n), np.zeros(n))

    def scaled(self, c: float) -> "EmbeddingTable":
        return EmbeddingTable(self.e * c, self.e_ctx * c, self.b * c, self.b_ctx * c)


def _ordered_pairs(O: CooccurrenceTable):
    rows = np.concatenate([O.a, O.b])
    cols = np.concatenate([O.b, O.a])
    target = np.log(np.concatenate([O.counts, O.counts]))
    return rows, cols, target


def _residuals(emb: EmbeddingTable, rows, cols, target) -> np.ndarray:
    return (np.einsum("ij,ij->i", emb.e[rows], emb.e_ctx[cols])
            + emb.b[rows] + emb.b_ctx[cols] - target)


def glove_loss(emb: EmbeddingTable, O: CooccurrenceTable) -> float:
    """Sum over both orders of each stored pair of the squared log-count residual."""
    if len(O) == 0:
        raise DataError("empty co-occurrence table")
    if max(O.a.max(), O.b.max()) >= emb.n:
        raise DataError("co-occurrence table references nodes missing from the embedding table")
    r = _residuals(emb, *_ordered_pairs(O))
    return float(r @ r)


def _scatter(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    m = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(n, index.size))
    return np.asarray(m @ values)


def glove_grads(emb: EmbeddingTable, rows, cols, target):
    """Loss and gradients over the given ordered pairs."""
    r = _residuals(emb, rows, cols, target)
    g = 2.0 * r
    n = emb.n
    ge = _scatter(rows, g[:, None] * emb.e_ctx[cols], n)
    gc = _scatter(cols, g[:, None] * emb.e[rows], n)
    gb = np.bincount(rows, weights=g, minlength=n)
    gbc = np.bincount(cols, weights=g, minlength=n)
    return float(r @ r), ge, gc, gb, gbc


def train_embeddings(O: CooccurrenceTable, dim: int, epochs: int = 30, lr: float = 0.05,
                     seed: int = 0, batch_size: int = 65536, n: int | None = None) -> EmbeddingTable:
    """Fit main/context vectors and biases to ``log O`` with minibatch Adam."""
    if dim < 1:
        raise ConfigError(f"embedding dim must be >= 1, got {dim}")
    if len(O) == 0:
        raise DataError("empty co-occurrence table")
    n = O.n if n is None else n
    rng = np.random.default_rng(seed)
    emb = EmbeddingTable.init(n, dim, rng)
    params = [Parameter(emb.e, "e"), Parameter(emb.e_ctx, "e_ctx"),
              Parameter(emb.b, "b"), Parameter(emb.b_ctx, "b_ctx")]
    # Parameters copy their input; rebind the table to the live arrays
    emb.e, emb.e_ctx, emb.b, emb.b_ctx = (p.data for p in params)
    rows, cols, target = _ordered_pairs(O)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(rows.size)
        for lo in range(0, order.size, batch_size):
            idx = order[lo:lo + batch_size]
            _, ge, gc, gb, gbc = glove_grads(emb, rows[idx], cols[idx], target[idx])
            for p, g in zip(params, (ge, gc, gb, gbc)):
                p.grad = g
            adam_step(params, lr)
        loss = glove_loss(emb, O)
        if not np.isfinite(loss):
            raise TrainingError(f"embedding loss became non-finite at epoch {epoch + 1} (lr={lr})")
        history.append(loss)
        log.debug("embedding epoch %d loss %.6g", epoch + 1, loss)
    emb.loss_history = history
    return emb


def finalize(emb: EmbeddingTable) -> np.ndarray:
    """Row ``k`` is the final vector of node ``k``: main plus context embedding."""
    return emb.e + emb.e_ctx


def vectors_to_feature_table(vectors: np.ndarray, ids: Sequence[str]) -> FeatureTable:
    return FeatureTable(int(vectors.shape[1]), {str(k): v.copy() for k, v in zip(ids, vectors)},
                        "pretrained")
