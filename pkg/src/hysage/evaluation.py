"""Leave-one-out ranking evaluation with sampled negatives."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data import InteractionMatrix, Split, sample_negatives
from .errors import ConfigError, ParseError


@dataclass
class EvalConfig:
    n_eval_negatives: int = 99
    cutoffs: list[int] = field(default_factory=lambda: [5, 10, 20])
    seed: int = 0

    def __post_init__(self):
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("cutoffs must be positive")
        if self.n_eval_negatives < max(self.cutoffs) - 1:
            raise ConfigError(f"{self.n_eval_negatives} negatives cannot fill a top-{max(self.cutoffs)} list")


def _rank(ranked: Sequence[int], test_item: int, K: int) -> int:
    ranked = list(ranked)
    if len(ranked) < K:
        raise ValueError(f"ranked list has {len(ranked)} items, fewer than K={K}")
    try:
        return ranked.index(test_item) + 1
    except ValueError:
        raise ValueError(f"test item {test_item} is not among the candidates") from None


def hit_at_k(ranked: Sequence[int], test_item: int, K: int) -> int:
    return int(_rank(ranked, test_item, K) <= K)


def ndcg_at_k(ranked: Sequence[int], test_item: int, K: int) -> float:
    r = _rank(ranked, test_item, K)
    return 1.0 / math.log2(r + 1) if r <= K else 0.0


class Scorer(Protocol):
    def score_pairs(self, users: np.ndarray, items: np.ndarray) -> np.ndarray: ...


class PopularityScorer:
    """Scores an item by its number of training interactions."""

    def __init__(self, Y_train: InteractionMatrix):
        self.pop = Y_train.item_popularity().astype(np.float64)

    def score_pairs(self, users, items):
        return self.pop[np.asarray(items)]


class RandomScorer:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def score_pairs(self, users, items):
        return self.rng.random(len(items))


class OracleScorer:
    """Puts each user's held-out item first."""

    def __init__(self, split: Split):
        self.test = {u: x.item_idx for u, x in split.test.items()}

    def score_pairs(self, users, items):
        return np.array([1.0 if self.test.get(int(u)) == int(i) else 0.0 for u, i in zip(users, items)])


def eval_candidates(split: Split, Y_train: InteractionMatrix, n_negatives: int,
                    seed: int) -> dict[int, np.ndarray]:
    """Per test user: the held-out item first, then negatives outside train and test."""
    out = {}
    for u in sorted(split.test):
        test_item = split.test[u].item_idx
        rng = np.random.default_rng([seed, u])
        negs = sample_negatives(Y_train, u, n_negatives, rng, exclude=[test_item])
        out[u] = np.array([test_item, *negs], dtype=np.int64)
    return out


@dataclass
class EvalReport:
    cutoffs: list[int]
    hr: dict[int, float]
    ndcg: dict[int, float]
    details: list[tuple[int, int, int]] = field(default_factory=list)  # (user, test item, rank)

    def lines(self) -> list[str]:
        out = []
        for k in self.cutoffs:
            out.append(f"HR\t{k}\t{self.hr[k]:.6f}")
            out.append(f"NDCG\t{k}\t{self.ndcg[k]:.6f}")
        return out

    def table(self, title: str = "") -> str:
        rows = [title] if title else []
        rows.append(f"{'cutoff':>8} {'HR':>8} {'NDCG':>8}")
        for k in self.cutoffs:
            rows.append(f"{k:>8} {self.hr[k]:>8.4f} {self.ndcg[k]:>8.4f}")
        rows.append(f"users: {len(self.details)}")
        return "\n".join(rows)

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    def write_details(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("user\ttest_item\trank\n")
            for u, i, r in self.details:
                fh.write(f"{u}\t{i}\t{r}\n")


def parse_report(text: str) -> EvalReport:
    hr, ndcg = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[0] not in ("HR", "NDCG"):
            raise ParseError(f"report line {lineno}: expected 'metric<TAB>cutoff<TAB>value'")
        target = hr if parts[0] == "HR" else ndcg
        target[int(parts[1])] = float(parts[2])
    return EvalReport(sorted(hr), hr, ndcg)


def rank_of_first(scores: np.ndarray, items: np.ndarray) -> int:
    """1-based rank of ``items[0]`` under descending score, ties to the smaller item id."""
    order = np.lexsort((items, -scores))
    return int(np.flatnonzero(order == 0)[0]) + 1


def evaluate(scorer: Scorer, split: Split, Y_train: InteractionMatrix,
             config: EvalConfig | None = None,
             candidates: dict[int, np.ndarray] | None = None) -> EvalReport:
    config = config or EvalConfig()
    if candidates is None:
        candidates = eval_candidates(split, Y_train, config.n_eval_negatives, config.seed)
    users = sorted(candidates)
    flat_u = np.concatenate([np.full(candidates[u].size, u) for u in users])
    flat_i = np.concatenate([candidates[u] for u in users])
    scores = np.asarray(scorer.score_pairs(flat_u, flat_i), dtype=np.float64)
    details = []
    pos = 0
    ranks = np.empty(len(users), dtype=np.int64)
    for k, u in enumerate(users):
        c = candidates[u]
        ranks[k] = rank_of_first(scores[pos:pos + c.size], c)
        details.append((u, int(c[0]), int(ranks[k])))
        pos += c.size
    hr = {K: float(np.mean(ranks <= K)) for K in config.cutoffs}
    ndcg = {K: float(np.mean(np.where(ranks <= K, 1.0 / np.log2(ranks + 1), 0.0))) for K in config.cutoffs}
    return EvalReport(list(config.cutoffs), hr, ndcg, details)
