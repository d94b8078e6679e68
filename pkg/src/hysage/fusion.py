"""Local (pairwise) and global attention over the model's intermediate representations."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .layers import Module, glorot


class LocalInteraction(Module):
    """Attention over the K rows of concat(V_u^k, partner), one weight vector per k."""

    def __init__(self, K: int, width: int, rng: np.random.Generator, name: str):
        super().__init__()
        self.K, self.width = K, width
        self.W = self.param(f"{name}.W", rng.normal(0.0, 0.01, (K, width)))
        self.b = self.param(f"{name}.b", np.zeros(K))

    def __call__(self, V_u, partner) -> Tensor:
        return local_interaction(V_u, partner, self)


def local_interaction(V_u, partner, params: LocalInteraction) -> Tensor:
    """V_u (..., K, du) and partner (..., dp) -> R (..., du + dp)."""
    V_u, partner = ag._lift(V_u), ag._lift(partner)
    K = V_u.shape[-2]
    if K != params.K or V_u.shape[-1] + partner.shape[-1] != params.width \
            or V_u.shape[:-2] != partner.shape[:-1]:
        raise ShapeError(f"local_interaction: V_u {V_u.shape} and partner {partner.shape} "
                         f"do not fit K={params.K}, width={params.width}")
    # Every row of concat(V_u^k, partner) shares the partner block and the weights
    # sum to one, so the attended output is concat(sum_k alpha_k V_u^k, partner).
    du = V_u.shape[-1]
    W_u, W_p = params.W[:, :du], params.W[:, du:]
    logits = ag.tanh(ag.reduce_sum(ag.mul(V_u, W_u), axis=-1)
                     + ag.matmul(partner, ag.transpose(W_p)) + params.b)
    alpha = ag.softmax(logits, axis=-1)
    pooled = ag.reduce_sum(ag.mul(V_u, ag.reshape(alpha, alpha.shape + (1,))), axis=-2)
    return ag.concat([pooled, partner], axis=-1)


def local_attention(V_u, partner, params: LocalInteraction) -> Tensor:
    """The K attention weights of :func:`local_interaction`, shape (..., K)."""
    V_u, partner = ag._lift(V_u), ag._lift(partner)
    du = V_u.shape[-1]
    logits = np.tanh((V_u.data * params.W.data[:, :du]).sum(-1)
                     + partner.data @ params.W.data[:, du:].T + params.b.data)
    return ag.softmax(ag.Tensor(logits), axis=-1)


class GlobalFusion(Module):
    """Projects each named representation to a common width, then attends across them."""

    def __init__(self, widths: Mapping[str, int], out_dim: int, rng: np.random.Generator,
                 name: str = "global"):
        super().__init__()
        self.names = list(widths)
        self.out_dim = out_dim
        self.proj = {n: self.param(f"{name}.{n}.P", glorot(rng, w, out_dim)) for n, w in widths.items()}
        self.W = {n: self.param(f"{name}.{n}.W", rng.normal(0.0, 0.01, out_dim)) for n in widths}
        self.b = {n: self.param(f"{name}.{n}.b", np.zeros(())) for n in widths}

    def __call__(self, reps: Mapping[str, Tensor]) -> Tensor:
        return global_fuse(reps, self)


def global_fuse(reps: Mapping, params: GlobalFusion, return_weights: bool = False):
    if not reps:
        raise ShapeError("global_fuse: no representations")
    projected, logits = [], []
    for name, r in reps.items():
        if name not in params.proj:
            raise ConfigError(f"global_fuse: no projection registered for {name!r}")
        z = ag.matmul(r, params.proj[name])
        projected.append(z)
        logit = ag.tanh(ag.matmul(z, params.W[name]) + params.b[name])
        logits.append(ag.reshape(logit, logit.shape + (1,)))
    alpha = ag.softmax(ag.concat(logits, axis=-1), axis=-1)
    out = None
    for k, z in enumerate(projected):
        term = ag.mul(z, alpha[..., k:k + 1])
        out = term if out is None else out + term
    return (out, alpha) if return_weights else out
