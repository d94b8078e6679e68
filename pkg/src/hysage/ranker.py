"""End-to-end scoring model over frozen graph embeddings and its training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .context import ContextFeatures, CrossNetwork, Fusion
from .data import InteractionMatrix, sample_negatives_batch
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .fusion import GlobalFusion, LocalInteraction
from .interest import InterestConfig, Valuation, interest_from_valuations, sample_history_batch
from .layers import MLP, Linear, Module

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_multimodal", "no_side_info", "no_interest", "no_interactive")
REPRESENTATIONS = ("user", "item", "context", "interest", "r_ut", "r_uc")
EVAL_SEED = 0x5EED
# sigmoid(36) = 1 - 2.3e-16 is still below 1.0 in float64; larger logits round to exactly 1
LOGIT_CLIP = 36.0


@dataclass
class TrainConfig:
    batch_size: int = 256
    negatives_per_positive: int = 4
    lr: float = 0.001
    l2: float = 1e-7
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.negatives_per_positive, self.epochs) < 1 or self.lr <= 0 or self.l2 < 0:
            raise ConfigError("train config values must be positive")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    n_pos: int
    n_neg: int
    wall_ms: float


TOWER_START = 4


def tower_widths(d_g: int) -> list[int]:
    """Hidden widths halving from ``TOWER_START * d_g`` down to 8."""
    widths = []
    w = TOWER_START * d_g
    while w >= 8:
        widths.append(w)
        w //= 2
    return widths or [8]


class RankingModel(Module):
    """Scores (user, item) pairs. Graph embeddings are read-only inputs, never parameters."""

    def __init__(self, user_vectors: np.ndarray, item_vectors: np.ndarray, Y_train: InteractionMatrix,
                 context: ContextFeatures, interest: InterestConfig | None = None,
                 variant: str = "full", seed: int = 0, d_g: int | None = None):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if user_vectors.shape[1] != item_vectors.shape[1]:
            raise ShapeError("user and item embeddings must share a dimension")
        self.user_vectors = np.array(user_vectors, dtype=np.float64)
        self.item_vectors = np.array(item_vectors, dtype=np.float64)
        self.user_vectors.flags.writeable = False
        self.item_vectors.flags.writeable = False
        self.Y_train = Y_train
        self.context = context
        self.interest = interest or InterestConfig()
        self.variant = variant
        self.seed = seed
        d = self.dim
        self.d_g = d_g or d
        D = context.dim
        K = self.interest.K
        rng = np.random.default_rng(seed)

        self.cross = self._adopt(CrossNetwork(D, context.schema.cross_depth, rng))
        self.fusion = self._adopt(Fusion(D, rng))
        if variant == "no_interactive":
            self.valuation = self._adopt(Valuation(d, self.interest.hidden_for(d), rng))
            self.flat = self._adopt(Linear(3 * d + D, self.d_g, rng, "flat"))
        else:
            if variant != "no_interest":
                self.valuation = self._adopt(Valuation(d, self.interest.hidden_for(d), rng))
            self.local_ut = self._adopt(LocalInteraction(K, d + D, rng, "local_ut"))
            self.local_uc = self._adopt(LocalInteraction(K, 3 * d, rng, "local_uc"))
            widths = {"user": d, "item": d, "context": D, "interest": d, "r_ut": d + D, "r_uc": 3 * d}
            self.global_fusion = self._adopt(GlobalFusion(widths, self.d_g, rng))
        self.tower = self._adopt(MLP([self.d_g, *tower_widths(self.d_g), 1], rng, "tower"))

    def _adopt(self, module: Module):
        self._params.update(module.named_parameters())
        return module

    @property
    def dim(self) -> int:
        return int(self.user_vectors.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.user_vectors.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_vectors.shape[0])

    def set_context(self, context: ContextFeatures) -> None:
        """Swap in freshly loaded feature tables; widths must match the trained schema."""
        if context.dim != self.context.dim:
            raise ShapeError(f"context width {context.dim} does not match trained width {self.context.dim}")
        self.context = context

    # -------------------------------------------------------------- forward

    def history(self, users: np.ndarray, items: np.ndarray, seed: int) -> np.ndarray:
        return sample_history_batch(self.Y_train, users, items, self.interest.K, seed)

    def forward(self, users, items, seed: int = EVAL_SEED) -> Tensor:
        """Logits of shape (B,) for aligned user and item index arrays."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise DataError("unknown user index")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise DataError("unknown item index")
        e_u = self.user_vectors[users]
        e_i = self.item_vectors[items]

        x0 = ag.Tensor(self.context.assemble(users, items))
        e_c = self.fusion(x0, self.cross(x0))

        B, K, d = users.size, self.interest.K, self.dim
        if self.variant == "no_interest":
            theta = ag.Tensor(np.zeros((B, d)))
            V_u = ag.Tensor(np.zeros((B, K, d)))
        else:
            hist = self.item_vectors[self.history(users, items, seed)]
            theta, _, V_u = interest_from_valuations(hist, self.valuation.score(hist, e_i))

        if self.variant == "no_interactive":
            flat = ag.concat([ag.Tensor(e_u), ag.Tensor(e_i), e_c, theta], axis=-1)
            rep = self.flat(flat)
        else:
            r_ut = self.local_ut(V_u, e_c)
            r_uc = self.local_uc(V_u, ag.Tensor(np.concatenate([e_u, e_i], axis=-1)))
            reps = {"user": ag.Tensor(e_u), "item": ag.Tensor(e_i), "context": e_c,
                    "interest": theta, "r_ut": r_ut, "r_uc": r_uc}
            rep = self.global_fusion(reps)
        logits = self.tower(rep)
        return ag.reshape(logits, (B,))

    def score_pairs(self, users, items, seed: int = EVAL_SEED, batch: int = 4096) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(users.size)
        with ag.no_grad():
            for lo in range(0, users.size, batch):
                logits = self.forward(users[lo:lo + batch], items[lo:lo + batch], seed).data
                out[lo:lo + batch] = ag.sigmoid(np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)).data
        return out

    # -------------------------------------------------------------- state

    def state_dict(self, with_optimizer: bool = True) -> dict[str, np.ndarray]:
        state = {}
        for name, p in self._params.items():
            state[f"param/{name}"] = p.data.copy()
            if with_optimizer:
                state[f"adam_m/{name}"] = p.adam_m.copy()
                state[f"adam_v/{name}"] = p.adam_v.copy()
                state[f"adam_step/{name}"] = np.array(float(p.step))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            key = f"param/{name}"
            if key not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            if state[key].shape != p.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {state[key].shape} != {p.shape}")
            p.data[...] = state[key]
            if f"adam_m/{name}" in state:
                p.adam_m[...] = state[f"adam_m/{name}"]
                p.adam_v[...] = state[f"adam_v/{name}"]
                p.step = int(state[f"adam_step/{name}"])


def forward_score(model: RankingModel, user: int, item: int, seed: int = EVAL_SEED) -> float:
    return float(model.score_pairs([user], [item], seed)[0])


def bce_loss(scores, labels, l2: float = 0.0, params: Sequence[Parameter] = ()) -> Tensor:
    """Summed binary cross-entropy on probabilities plus ``l2 * sum ||p||^2``."""
    scores = ag._lift(scores)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError(f"bce_loss: {scores.shape} scores vs {labels.shape} labels")
    if not np.all((scores.data > 0) & (scores.data < 1)):
        raise ValueError("bce_loss: scores must lie strictly inside (0, 1)")
    ll = ag.mul(ag.log(scores), labels) + ag.mul(ag.log(1.0 - scores), 1.0 - labels)
    return ag.scale(ag.reduce_sum(ll), -1.0) + _l2(l2, params)


def bce_with_logits(logits: Tensor, labels, l2: float = 0.0, params: Sequence[Parameter] = ()) -> Tensor:
    """Same objective as :func:`bce_loss` evaluated from logits (stable when saturated)."""
    labels = np.asarray(labels, dtype=np.float64)
    ll = ag.mul(ag.log_sigmoid(logits), labels) + ag.mul(ag.log_sigmoid(ag.scale(logits, -1.0)), 1.0 - labels)
    return ag.scale(ag.reduce_sum(ll), -1.0) + _l2(l2, params)


def _l2(l2: float, params) -> Tensor | float:
    if l2 == 0 or not params:
        return 0.0
    return ag.scale(ag.sum_squares(params), l2)


def training_pairs(Y: InteractionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Positive (user, item) pairs whose user keeps at least one other history item."""
    deg = Y.degree()
    users = np.repeat(np.arange(Y.n_users), deg)
    keep = deg[users] >= 2
    if not keep.all():
        log.info("training: %d positives from single-item users skipped", int((~keep).sum()))
    return users[keep], Y.indices[keep]


def train_epoch(model: RankingModel, config: TrainConfig, rng: np.random.Generator,
                epoch: int = 0) -> EpochStats:
    t0 = time.perf_counter()
    Y = model.Y_train
    pos_u, pos_i = training_pairs(Y)
    n = config.negatives_per_positive
    neg_i = sample_negatives_batch(Y, pos_u, n, rng).reshape(-1)
    users = np.concatenate([pos_u, np.repeat(pos_u, n)])
    items = np.concatenate([pos_i, neg_i])
    labels = np.concatenate([np.ones(pos_u.size), np.zeros(neg_i.size)])
    order = rng.permutation(users.size)
    history_seed = int(rng.integers(1 << 62))
    params = model.parameters()
    total = 0.0
    for lo in range(0, order.size, config.batch_size):
        idx = order[lo:lo + config.batch_size]
        logits = model.forward(users[idx], items[idx], history_seed)
        loss = bce_with_logits(logits, labels[idx], config.l2, params)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss in epoch {epoch}")
        for p in params:
            p.zero_grad()
        loss.backward()
        ag.adam_step(params, config.lr)
        total += value
    return EpochStats(epoch, total / users.size, int(pos_u.size), int(neg_i.size),
                      (time.perf_counter() - t0) * 1000.0)


def score_candidates(model: RankingModel, user: int, items: Sequence[int],
                     seed: int = EVAL_SEED) -> list[tuple[int, float]]:
    """Candidates sorted by descending score; ties go to the smaller item index."""
    items = [int(i) for i in items]
    if not items:
        raise ValueError("no candidates to score")
    if len(set(items)) != len(items):
        raise ValueError("duplicate candidate ids")
    arr = np.array(items, dtype=np.int64)
    scores = model.score_pairs(np.full(arr.size, user), arr, seed)
    order = np.lexsort((arr, -scores))
    return [(int(arr[k]), float(scores[k])) for k in order]
