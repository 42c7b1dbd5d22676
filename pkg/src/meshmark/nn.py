"""Neural building blocks on the tape: degree-normalized graph convolution,
batch normalization, graph residual blocks, pooling, a two-layer MLP head,
and the watermark encoder with row expansion.

Parameter structs hold plain float32 arrays; bind() swaps the learnable
fields for tape leaves so one struct type serves storage and forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray, Tape
from .mesh import Neighborhood
from .sparse import CsrMatrix

Array = Union[np.ndarray, DiffArray]

FEATURE_DIM = 64
LATENT_DIM = 64
MLP_HIDDEN = 128
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class GraphConvParams:
    w0: Array
    w1: Array
    bias: Array


@dataclass
class BatchNormState:
    gamma: Array
    beta: Array
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS


@dataclass
class ResidualBlockParams:
    conv1: GraphConvParams
    bn1: BatchNormState
    conv2: GraphConvParams
    bn2: BatchNormState
    projection: Optional[Array] = None  # present iff in_dim != out_dim


@dataclass
class EncoderParams:
    weight: Array
    bias: Array


@dataclass
class Mlp2Params:
    w1: Array
    b1: Array
    w2: Array
    b2: Array


# --- initialization ----------------------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_graph_conv(rng, d_in: int, d_out: int, dtype=np.float32) -> GraphConvParams:
    return GraphConvParams(glorot(rng, d_in, d_out, dtype),
                           glorot(rng, d_in, d_out, dtype),
                           np.zeros(d_out, dtype=dtype))


def init_batch_norm(d: int, dtype=np.float32) -> BatchNormState:
    return BatchNormState(np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype),
                          np.zeros(d, dtype=dtype), np.ones(d, dtype=dtype))


def init_residual_block(rng, d_in: int, d_out: int, dtype=np.float32) -> ResidualBlockParams:
    proj = glorot(rng, d_in, d_out, dtype) if d_in != d_out else None
    return ResidualBlockParams(init_graph_conv(rng, d_in, d_out, dtype),
                               init_batch_norm(d_out, dtype),
                               init_graph_conv(rng, d_out, d_out, dtype),
                               init_batch_norm(d_out, dtype),
                               proj)


def init_encoder(rng, length: int, d_latent: int = LATENT_DIM,
                 dtype=np.float32) -> EncoderParams:
    return EncoderParams(glorot(rng, length, d_latent, dtype),
                         np.zeros(d_latent, dtype=dtype))


def init_mlp2(rng, d_in: int, d_hidden: int, d_out: int,
              dtype=np.float32) -> Mlp2Params:
    return Mlp2Params(glorot(rng, d_in, d_hidden, dtype),
                      np.zeros(d_hidden, dtype=dtype),
                      glorot(rng, d_hidden, d_out, dtype),
                      np.zeros(d_out, dtype=dtype))


# --- parameter traversal ------------------------------------------------------

def walk_learnables(obj, prefix: str = "") -> Iterator[tuple[str, Array]]:
    """Yield (dotted-name, value) for every learnable field, in a fixed order.

    Works on both stored structs (ndarray fields) and bound structs
    (DiffArray fields).
    """
    if isinstance(obj, GraphConvParams):
        yield f"{prefix}w0", obj.w0
        yield f"{prefix}w1", obj.w1
        yield f"{prefix}bias", obj.bias
    elif isinstance(obj, BatchNormState):
        yield f"{prefix}gamma", obj.gamma
        yield f"{prefix}beta", obj.beta
    elif isinstance(obj, ResidualBlockParams):
        yield from walk_learnables(obj.conv1, f"{prefix}conv1.")
        yield from walk_learnables(obj.bn1, f"{prefix}bn1.")
        yield from walk_learnables(obj.conv2, f"{prefix}conv2.")
        yield from walk_learnables(obj.bn2, f"{prefix}bn2.")
        if obj.projection is not None:
            yield f"{prefix}projection", obj.projection
    elif isinstance(obj, EncoderParams):
        yield f"{prefix}weight", obj.weight
        yield f"{prefix}bias", obj.bias
    elif isinstance(obj, Mlp2Params):
        yield f"{prefix}w1", obj.w1
        yield f"{prefix}b1", obj.b1
        yield f"{prefix}w2", obj.w2
        yield f"{prefix}b2", obj.b2
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from walk_learnables(item, f"{prefix}{i}.")
    else:
        raise TypeError(f"cannot walk parameters of {type(obj).__name__}")


def walk_stats(obj, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    """Yield (dotted-name, array) for batch-norm running statistics."""
    if isinstance(obj, BatchNormState):
        yield f"{prefix}running_mean", obj.running_mean
        yield f"{prefix}running_var", obj.running_var
    elif isinstance(obj, ResidualBlockParams):
        yield from walk_stats(obj.bn1, f"{prefix}bn1.")
        yield from walk_stats(obj.bn2, f"{prefix}bn2.")
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from walk_stats(item, f"{prefix}{i}.")
    elif isinstance(obj, (GraphConvParams, EncoderParams, Mlp2Params)):
        return
    else:
        raise TypeError(f"cannot walk stats of {type(obj).__name__}")


# --- binding to a tape --------------------------------------------------------

def bind(obj, tape: Tape):
    """Copy of a parameter struct whose learnable fields are tape leaves.

    Batch-norm running statistics stay shared with the stored struct, so
    training-mode updates land in the original arrays.
    """
    if isinstance(obj, GraphConvParams):
        return GraphConvParams(tape.leaf(obj.w0), tape.leaf(obj.w1), tape.leaf(obj.bias))
    if isinstance(obj, BatchNormState):
        return replace(obj, gamma=tape.leaf(obj.gamma), beta=tape.leaf(obj.beta))
    if isinstance(obj, ResidualBlockParams):
        proj = None if obj.projection is None else tape.leaf(obj.projection)
        return ResidualBlockParams(bind(obj.conv1, tape), bind(obj.bn1, tape),
                                   bind(obj.conv2, tape), bind(obj.bn2, tape), proj)
    if isinstance(obj, EncoderParams):
        return EncoderParams(tape.leaf(obj.weight), tape.leaf(obj.bias))
    if isinstance(obj, Mlp2Params):
        return Mlp2Params(tape.leaf(obj.w1), tape.leaf(obj.b1),
                          tape.leaf(obj.w2), tape.leaf(obj.b2))
    if isinstance(obj, list):
        return [bind(x, tape) for x in obj]
    raise TypeError(f"cannot bind {type(obj).__name__}")


# --- forward operations -------------------------------------------------------

def _neighbor_operator(nbhd: Neighborhood, degree_normalize: bool, dtype) -> CsrMatrix:
    cache = getattr(nbhd, "_op_cache", None)
    if cache is None:
        cache = {}
        nbhd._op_cache = cache
    key = (degree_normalize, np.dtype(dtype).str)
    if key not in cache:
        base = nbhd.neighbor_mean_matrix if degree_normalize else nbhd.neighbor_sum_matrix
        cache[key] = base.astype(dtype)
    return cache[key]


def graph_conv(params: GraphConvParams, features: Array, nbhd: Neighborhood,
               degree_normalize: bool = True) -> DiffArray:
    """out_i = w0^T f_i + w1^T mean_{j in N(i)} f_j + bias.

    Degree-0 vertices contribute a zero neighbor term. With
    degree_normalize=False the neighbor mean becomes a plain sum (the
    normalization ablation).
    """
    n = features.shape[0] if isinstance(features, np.ndarray) else features.data.shape[0]
    dtype = features.data.dtype if isinstance(features, DiffArray) else np.asarray(features).dtype
    op = _neighbor_operator(nbhd, degree_normalize, dtype)
    self_term = ad.matmul(features, params.w0)
    nbr_term = ad.matmul(ad.sparse_matvec(op, features), params.w1)
    return ad.add(ad.add(self_term, nbr_term), ad.broadcast_rows(params.bias, n))


def batch_norm(bn: BatchNormState, features: Array, mode: str,
               update_running: bool = True) -> DiffArray:
    """Per-feature normalization over all rows.

    Train mode uses the population statistics of the given rows and, when
    update_running is set, folds them into the running estimates. Infer mode
    normalizes with the running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    x = features if isinstance(features, DiffArray) else DiffArray(np.asarray(features))
    n, d = x.data.shape
    if mode == "train":
        if n < 2:
            raise ValueError(f"batch_norm train mode needs >= 2 rows, got {n}")
        mu = ad.mean_(x, axis=0)
        centered = ad.sub(x, ad.broadcast_rows(mu, n))
        # std per feature = sqrt(var + eps), built from the row-norm primitive
        scaled_t = ad.scalar_mul(ad.transpose(centered), 1.0 / np.sqrt(n))
        std = ad.l2_norm_rows(scaled_t, eps=bn.eps)
        if update_running:
            m = bn.momentum
            batch_var = (std.data * std.data) - std.data.dtype.type(bn.eps)
            bn.running_mean[...] = (1 - m) * bn.running_mean + m * mu.data
            bn.running_var[...] = (1 - m) * bn.running_var + m * batch_var
        scale = ad.divide(bn.gamma, std)  # gamma/std folded per feature
    else:
        rm = np.asarray(bn.running_mean, dtype=x.data.dtype)
        rv = np.asarray(bn.running_var, dtype=x.data.dtype)
        inv_std = 1.0 / np.sqrt(rv + x.data.dtype.type(bn.eps))
        centered = ad.sub(x, ad.broadcast_rows(rm, n))
        scale = ad.mul(bn.gamma, inv_std)
    return ad.add(ad.mul(centered, ad.broadcast_rows(scale, n)),
                  ad.broadcast_rows(bn.beta, n))


def graph_residual_block(block: ResidualBlockParams, features: Array,
                         nbhd: Neighborhood, mode: str = "infer", *,
                         degree_normalize: bool = True,
                         use_batch_norm: bool = True,
                         update_running: bool = True) -> DiffArray:
    """Two conv+BN+ReLU stages plus a shortcut (identity, or a learned
    projection when the width changes)."""
    h = graph_conv(block.conv1, features, nbhd, degree_normalize)
    if use_batch_norm:
        h = batch_norm(block.bn1, h, mode, update_running)
    h = ad.relu(h)
    h = graph_conv(block.conv2, h, nbhd, degree_normalize)
    if use_batch_norm:
        h = batch_norm(block.bn2, h, mode, update_running)
    h = ad.relu(h)
    shortcut = features if block.projection is None else ad.matmul(features, block.projection)
    return ad.add(h, shortcut)


def global_average_pool(features: Array) -> DiffArray:
    n = features.shape[0] if isinstance(features, np.ndarray) else features.data.shape[0]
    if n < 1:
        raise ValueError("global_average_pool needs at least one row")
    return ad.mean_(features, axis=0)


def _vec_mat(v: Array, w: Array) -> DiffArray:
    # (d,) @ (d,k) -> (k,) composed from catalogue primitives
    return ad.sum_(ad.matmul(ad.broadcast_rows(v, 1), w), axis=0)


def mlp2(params: Mlp2Params, x: Array) -> DiffArray:
    """Two fully connected layers: ReLU after the first, linear output."""
    h = ad.relu(ad.add(_vec_mat(x, params.w1), params.b1))
    return ad.add(_vec_mat(h, params.w2), params.b2)


def encode_and_expand(params: EncoderParams, w: Array, n_vertices: int) -> DiffArray:
    """One fully connected layer to the latent code, repeated as a row for
    every vertex."""
    z = ad.add(_vec_mat(w, params.weight), params.bias)
    return ad.broadcast_rows(z, n_vertices)
