"""Target-conditioned user interest from K sampled history items."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import InteractionMatrix
from .errors import ConfigError, DataError, ShapeError
from .layers import MLP
from .rng import hashed_uniforms


@dataclass
class InterestConfig:
    K: int = 8
    hidden_dims: list[int] | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"interest K must be >= 1, got {self.K}")

    def hidden_for(self, dim: int) -> list[int]:
        if self.hidden_dims is not None:
            return list(self.hidden_dims)
        return [dim, max(dim // 2, 1)]


def sample_history(user: int, Y_train: InteractionMatrix, target: int, K: int,
                   rng: np.random.Generator) -> list[int]:
    """K items from the user's history other than ``target``.

    Without replacement when the pool has at least K items, with replacement otherwise.
    """
    pool = Y_train.row(user)
    pool = pool[pool != target]
    if pool.size == 0:
        raise DataError(f"user {user} has no history items besides {target}")
    return rng.choice(pool, size=K, replace=pool.size < K).tolist()


def sample_history_batch(Y_train: InteractionMatrix, users: np.ndarray, targets: np.ndarray,
                         K: int, seed: int) -> np.ndarray:
    """History indices of shape (B, K) for many (user, target) pairs at once.

    The draw for a pair depends only on (seed, user, target), never on batch
    composition or order. Sampling rule is the same as :func:`sample_history`.
    """
    users = np.asarray(users, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    start = Y_train.indptr[users]
    deg = Y_train.indptr[users + 1] - start
    # position of the target inside the user's row, or deg when absent
    keys = Y_train.keys
    q = users * Y_train.n_items + targets
    if keys.size == 0:
        raise DataError("empty training matrix: no history to sample")
    k = np.minimum(np.searchsorted(keys, q), keys.size - 1)
    tpos = np.where(keys[k] == q, k - start, deg)
    pool = deg - (tpos < deg)
    if (pool == 0).any():
        b = int(np.flatnonzero(pool == 0)[0])
        raise DataError(f"user {users[b]} has no history items besides {targets[b]}")
    # Draw j picks uniformly among pool slots; without replacement, a repeat of an
    # earlier pick is redrawn, which keeps each draw uniform over the unused slots.
    replace = pool < K
    pick = np.empty((users.size, K), dtype=np.int64)
    for j in range(K):
        pending = np.arange(users.size)
        attempt = 0
        while pending.size:
            u = hashed_uniforms(seed, users[pending], targets[pending], j, attempt)
            idx = np.minimum((u * pool[pending]).astype(np.int64), pool[pending] - 1)
            clash = (pick[pending, :j] == idx[:, None]).any(axis=1) & ~replace[pending]
            pick[pending[~clash], j] = idx[~clash]
            pending = pending[clash]
            attempt += 1
    pick += pick >= tpos[:, None]
    return Y_train.indices[start[:, None] + pick]


class Valuation(MLP):
    """Scores a history item against the target: MLP([e_k, e_t, e_k - e_t]) -> scalar."""

    def __init__(self, dim: int, hidden: Sequence[int], rng: np.random.Generator, name: str = "valuation"):
        super().__init__([3 * dim, *hidden, 1], rng, name)
        self.dim = dim

    def score(self, history: np.ndarray, target: np.ndarray) -> Tensor:
        """history (..., K, d), target (..., d) -> valuations (..., K)."""
        history = np.asarray(history, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if history.shape[-1] != self.dim or target.shape[-1] != self.dim:
            raise ShapeError(f"valuation: embedding dims {history.shape[-1]}/{target.shape[-1]} "
                             f"do not match {self.dim}")
        t = np.broadcast_to(target[..., None, :], history.shape)
        x = np.concatenate([history, t, history - t], axis=-1)
        out = self(x)
        return ag.reshape(out, out.shape[:-1])


def valuation(e_k, e_target, params: Valuation) -> Tensor:
    e_k = np.asarray(e_k, dtype=np.float64)
    e_target = np.asarray(e_target, dtype=np.float64)
    if e_k.shape != e_target.shape:
        raise ShapeError(f"valuation: shapes {e_k.shape} and {e_target.shape} differ")
    return ag.reshape(params.score(e_k[None, :], e_target), ())


def interest_from_valuations(history: np.ndarray, values) -> tuple[Tensor, Tensor, Tensor]:
    """Softmax the valuations over K and pool the history.

    Returns (theta, weights, weighted history rows); the last term is each
    history embedding scaled by its weight, and sums over K to theta.
    """
    weights = ag.softmax(values, axis=-1)
    shape = weights.shape + (1,)
    contrib = ag.mul(history, ag.reshape(weights, shape))
    theta = ag.reduce_sum(contrib, axis=-2)
    return theta, weights, contrib


def user_interest(history_embs, e_target, params: Valuation) -> tuple[Tensor, Tensor]:
    history = np.asarray(history_embs, dtype=np.float64)
    if history.ndim < 2 or history.shape[-2] < 1:
        raise ShapeError("user_interest needs at least one history embedding")
    theta, weights, _ = interest_from_valuations(history, params.score(history, e_target))
    return theta, weights
