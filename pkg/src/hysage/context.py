"""Adaptive context vector: crossing layers over the assembled features, fused by two-way attention."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import FeatureTable, load_feature_table, min_max_normalize
from .errors import ConfigError, ShapeError
from .layers import Module

log = logging.getLogger(__name__)

ROLES = ("user", "item", "interaction")


@dataclass
class FieldSpec:
    name: str
    kind: str
    path: str | None = None
    table: FeatureTable | None = None

    @property
    def dim(self) -> int:
        if self.table is None:
            raise ConfigError(f"feature field {self.name!r} is not loaded")
        return self.table.dim

    def load(self) -> "FieldSpec":
        if self.path is None:
            raise ConfigError(f"feature field {self.name!r} has no path")
        table = load_feature_table(self.path, self.kind)
        if self.kind == "dense":
            table = min_max_normalize(table)
        return replace(self, table=table)


@dataclass
class ContextSchema:
    """Ordered user, item and interaction fields whose vectors are concatenated into x0."""

    user_fields: list[FieldSpec] = field(default_factory=list)
    item_fields: list[FieldSpec] = field(default_factory=list)
    interaction_fields: list[FieldSpec] = field(default_factory=list)
    cross_depth: int = 2

    def __post_init__(self):
        if self.cross_depth < 0:
            raise ConfigError(f"cross_depth must be >= 0, got {self.cross_depth}")

    def fields(self):
        for role in ROLES:
            for f in getattr(self, f"{role}_fields"):
                yield role, f

    @property
    def dims(self) -> list[int]:
        return [f.dim for _, f in self.fields()]

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def load(self) -> "ContextSchema":
        return ContextSchema([f.load() for f in self.user_fields],
                             [f.load() for f in self.item_fields],
                             [f.load() for f in self.interaction_fields],
                             self.cross_depth)

    def without_kinds(self, kinds: Sequence[str]) -> "ContextSchema":
        keep = lambda fs: [f for f in fs if f.kind not in kinds]  # noqa: E731
        return ContextSchema(keep(self.user_fields), keep(self.item_fields),
                             keep(self.interaction_fields), self.cross_depth)


def assemble_x0(user, item, schema: ContextSchema, tables: dict[str, FeatureTable] | None = None,
                expected_dims: Sequence[int] | None = None) -> np.ndarray:
    """Concatenate the user, item and interaction vectors of one pair in schema order.

    ``tables`` overrides the loaded table of a field by name. Missing ids give a
    zero block of that field's width.
    """
    parts = []
    for k, (role, f) in enumerate(schema.fields()):
        table = (tables or {}).get(f.name, f.table)
        if table is None:
            raise ConfigError(f"feature field {f.name!r} has no table")
        if expected_dims is not None and table.dim != expected_dims[k]:
            raise ShapeError(f"field {f.name!r}: table dim {table.dim} != schema dim {expected_dims[k]}")
        key = user if role == "user" else item if role == "item" else f"{user}|{item}"
        vec = table.get(key)
        if vec is None:
            log.warning("context: no %s row for id %r in field %r, using zeros", role, key, f.name)
            vec = np.zeros(table.dim)
        parts.append(vec)
    return np.concatenate(parts) if parts else np.zeros(0)


class ContextFeatures:
    """Index-addressed view of a loaded schema for batched assembly.

    Holds one dense matrix per role (rows follow the model's user/item indices),
    so swapping feature files means building a new instance, nothing else.
    An empty schema yields a single constant-zero column so downstream widths stay positive.
    """

    def __init__(self, schema: ContextSchema, user_ids: Sequence[str], item_ids: Sequence[str]):
        self.schema = schema
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_matrix = self._stack(schema.user_fields, self.user_ids, "user")
        self.item_matrix = self._stack(schema.item_fields, self.item_ids, "item")
        self.interaction_fields = list(schema.interaction_fields)
        self.dim_interaction = sum(f.dim for f in self.interaction_fields)
        raw = self.user_matrix.shape[1] + self.item_matrix.shape[1] + self.dim_interaction
        self.padded = raw == 0
        self.dim = max(raw, 1)

    @staticmethod
    def _stack(fields: Sequence[FieldSpec], ids: Sequence[str], role: str) -> np.ndarray:
        blocks = []
        for f in fields:
            m, present = f.table.matrix(ids)
            if not present.all():
                log.warning("context: %d of %d %s ids missing from field %r, using zeros",
                            int((~present).sum()), len(ids), role, f.name)
            blocks.append(m)
        return np.hstack(blocks) if blocks else np.zeros((len(ids), 0))

    def assemble(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        if self.padded:
            return np.zeros((len(users), 1))
        parts = [self.user_matrix[users], self.item_matrix[items]]
        if self.interaction_fields:
            keys = [f"{self.user_ids[u]}|{self.item_ids[i]}" for u, i in zip(users, items)]
            parts += [f.table.matrix(keys)[0] for f in self.interaction_fields]
        return np.hstack(parts)


def cross_layer(x0, xl, w, b) -> Tensor:
    """``x0 * (xl . w) + b + xl``; works on single vectors or row batches."""
    x0, xl = ag._lift(x0), ag._lift(xl)
    w, b = ag._lift(w), ag._lift(b)
    d = x0.shape[-1]
    if xl.shape != x0.shape or w.shape != (d,) or b.shape != (d,):
        raise ShapeError(f"cross_layer: shapes x0={x0.shape} xl={xl.shape} w={w.shape} b={b.shape}")
    s = ag.matmul(xl, w)
    if xl.data.ndim == 2:
        s = ag.reshape(s, (-1, 1))
    return x0 * s + b + xl


class CrossNetwork(Module):
    def __init__(self, dim: int, depth: int, rng: np.random.Generator, name: str = "cross"):
        super().__init__()
        self.depth = depth
        self.weights = [self.param(f"{name}.w{k}", rng.normal(0.0, 0.01, dim)) for k in range(depth)]
        self.biases = [self.param(f"{name}.b{k}", np.zeros(dim)) for k in range(depth)]

    def __call__(self, x0) -> Tensor:
        x0 = ag._lift(x0)
        x = x0
        for w, b in zip(self.weights, self.biases):
            x = cross_layer(x0, x, w, b)
        return x


def cross_network(x0, params: CrossNetwork) -> Tensor:
    return params(x0)


class Fusion(Module):
    """Attention over {x0, xL}: weights softmax(tanh(w_i . x_i + b_i))."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "fusion"):
        super().__init__()
        self.w0 = self.param(f"{name}.w0", rng.normal(0.0, 0.01, dim))
        self.wL = self.param(f"{name}.wL", rng.normal(0.0, 0.01, dim))
        self.b0 = self.param(f"{name}.b0", np.zeros(()))
        self.bL = self.param(f"{name}.bL", np.zeros(()))

    def weights(self, x0, xL) -> Tensor:
        x0, xL = ag._lift(x0), ag._lift(xL)
        if x0.shape != xL.shape:
            raise ShapeError(f"fuse: shapes {x0.shape} and {xL.shape} differ")
        l0 = ag.tanh(ag.matmul(x0, self.w0) + self.b0)
        lL = ag.tanh(ag.matmul(xL, self.wL) + self.bL)
        shape = (-1, 1) if x0.data.ndim == 2 else (1,)
        return ag.softmax(ag.concat([ag.reshape(l0, shape), ag.reshape(lL, shape)], axis=-1), axis=-1)

    def __call__(self, x0, xL) -> Tensor:
        x0, xL = ag._lift(x0), ag._lift(xL)
        alpha = self.weights(x0, xL)
        return x0 * alpha[..., 0:1] + xL * alpha[..., 1:2]


def fuse(x0, xL, params: Fusion) -> Tensor:
    return params(x0, xL)
