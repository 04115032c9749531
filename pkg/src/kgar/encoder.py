"""Attention-weighted relational graph convolution encoder.

Each layer runs two directional passes over the graph. Per direction, an
edge (j -> i) gets a score LeakyReLU(<W h_i, W h_j>), scores are softmax-
normalized within the group of i's neighbors sharing one relation, and the
node update is

    h_dir_i = ReLU(dropout( sum_r sum_j alpha_ij * W_r h_j + W_0 h_i ))

with W_r block-diagonal. The layer output is h_forward + h_backward. After
the last layer a fusion readout sums gated neighbor states per node:
f_i = sum over incident edges of g_rel * H[neighbor], both directions.

The hot loops are fused tape operations that recompute gathers in the
backward pass instead of retaining edge-expanded intermediates; peak
memory stays near O(V*D) rather than O(E*D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import (NumericFailure, Tensor, _acc, _block_backward_q,
                     _block_backward_x, _block_forward, _record)

_CHUNK = 16384  # edges per gather chunk in fused ops


@dataclass
class EncoderConfig:
    embed_dim: int = 500
    num_layers: int = 2
    num_blocks: int = 10
    dropout_attention: float = 0.6
    dropout_conv: float = 0.4
    leaky_slope: float = 0.2
    hidden_dim: int = None  # defaults to embed_dim; all layers share it

    def __post_init__(self):
        if self.hidden_dim is None:
            self.hidden_dim = self.embed_dim
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        for dim, label in ((self.embed_dim, "embed_dim"),
                           (self.hidden_dim, "hidden_dim")):
            if dim % self.num_blocks:
                raise ValueError(
                    f"num_blocks {self.num_blocks} does not divide {label} {dim}")
        for rate, label in ((self.dropout_attention, "dropout_attention"),
                            (self.dropout_conv, "dropout_conv")):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{label} must be in [0,1), got {rate}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(
                f"leaky_slope must be in (0,1), got {self.leaky_slope}")


# ---------------------------------------------------------------------------
# reference per-node operations (plain numpy, no tape)


def attention_coefficients(H, W, node, neighbors, slope=0.2):
    """Softmax-normalized scores of one node over a neighbor set.

    H and W are plain arrays; `neighbors` is a nonempty id sequence. The
    score of neighbor j is LeakyReLU(<W^T h_node, W^T h_j>).
    """
    if len(neighbors) == 0:
        raise ValueError("attention over an empty neighbor set is undefined")
    H = np.asarray(H, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    wx_i = H[node] @ W
    scores = np.array([wx_i @ (H[j] @ W) for j in neighbors])
    scores = np.where(scores > 0, scores, slope * scores)
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


def fuse_features(H, sparse, gates):
    """Gated neighbor sum for one node from its RelationSparseMatrix.

    Each stored relation id selects the learned scalar gate applied to that
    neighbor's row of H. Zero incident edges give the zero vector.
    """
    H = np.asarray(H, dtype=np.float64)
    gates = np.asarray(gates, dtype=np.float64).reshape(-1)
    f = np.zeros(H.shape[1])
    for row, _col, rel in sparse.entries:
        f += gates[rel] * H[row]
    return f


# ---------------------------------------------------------------------------
# fused tape operations


def edge_inner_product(hw, src, dst):
    """Per-edge inner products <hw[dst_k], hw[src_k]> as an (E,1) column."""
    v = hw.values
    n_edges = src.size
    e = np.empty(n_edges)
    for lo in range(0, n_edges, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        e[sl] = np.einsum("ij,ij->i", v[dst[sl]], v[src[sl]])
    out = Tensor(e[:, None] if n_edges else np.zeros((0, 1)))

    def bw(g):
        if hw.grad is None:
            hw.grad = np.zeros_like(v)
        gcol = g[:, 0:1]
        for lo in range(0, n_edges, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            np.add.at(hw.grad, dst[sl], gcol[sl] * v[src[sl]])
            np.add.at(hw.grad, src[sl], gcol[sl] * v[dst[sl]])

    _record(out, bw)
    return out


def attention_relational_aggregate(h, alpha, plan, rel_blocks, num_blocks,
                                   num_nodes):
    """sum_r sum_{edges k of r} alpha_k * (h[src_k] @ W_r) scattered to dst.

    rel_blocks[r] stacks relation r's blocks vertically, (D_in, D_out/B).
    Gathered edge features are recomputed in the backward pass.
    """
    din = h.shape[1]
    din_b = din // num_blocks
    dout_b = rel_blocks[0].shape[1]
    dout = num_blocks * dout_b
    hv, av = h.values, alpha.values
    res = np.zeros((num_nodes, dout))
    for r in range(len(rel_blocks)):
        lo, hi = plan.rel_starts[r], plan.rel_starts[r + 1]
        if lo == hi:
            continue
        xs = hv[plan.src[lo:hi]]
        ys = _block_forward(xs, rel_blocks[r].values, num_blocks, din_b, dout_b)
        np.add.at(res, plan.dst[lo:hi], av[lo:hi] * ys)
    out = Tensor(res)

    def bw(g):
        if h.grad is None:
            h.grad = np.zeros_like(hv)
        galpha = np.empty_like(av)
        for r in range(len(rel_blocks)):
            lo, hi = plan.rel_starts[r], plan.rel_starts[r + 1]
            if lo == hi:
                continue
            src, dst = plan.src[lo:hi], plan.dst[lo:hi]
            q = rel_blocks[r]
            xs = hv[src]
            ys = _block_forward(xs, q.values, num_blocks, din_b, dout_b)
            gd = g[dst]
            galpha[lo:hi] = np.einsum("ij,ij->i", ys, gd)[:, None]
            gys = av[lo:hi] * gd
            np.add.at(h.grad, src,
                      _block_backward_x(gys, q.values, num_blocks, din_b, dout_b))
            _acc(q, _block_backward_q(xs, gys, num_blocks, din_b, dout_b))
        _acc(alpha, galpha)

    _record(out, bw)
    return out


def gated_neighbor_sum(h, gates, plan, num_nodes):
    """sum over edges of gates[rel_k] * h[src_k], scattered to dst."""
    hv = h.values
    gv = gates.values
    res = np.zeros((num_nodes, h.shape[1]))
    for r in range(gates.shape[0]):
        lo, hi = plan.rel_starts[r], plan.rel_starts[r + 1]
        if lo == hi:
            continue
        np.add.at(res, plan.dst[lo:hi], gv[r, 0] * hv[plan.src[lo:hi]])
    out = Tensor(res)

    def bw(g):
        if h.grad is None:
            h.grad = np.zeros_like(hv)
        if gates.grad is None:
            gates.grad = np.zeros_like(gv)
        for r in range(gates.shape[0]):
            lo, hi = plan.rel_starts[r], plan.rel_starts[r + 1]
            if lo == hi:
                continue
            src, dst = plan.src[lo:hi], plan.dst[lo:hi]
            gd = g[dst]
            np.add.at(h.grad, src, gv[r, 0] * gd)
            gates.grad[r, 0] += float(np.einsum("ij,ij->", hv[src], gd))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# layer and full encoder


def conv_layer_forward(h, graph, weights, config, direction, training=False,
                       rng=None, hw=None, self_pre=None, layer=None):
    """One directional pass; returns the (|V|, D) directional hidden state.

    hw (h @ attention_W) and self_pre (h @ self_W) may be passed in so the
    two directions of a layer share them.
    """
    plan = graph.plan(direction)
    if self_pre is None:
        self_pre = T.matmul(h, weights.self_W)
    if plan.num_edges == 0:
        pre = self_pre
    else:
        if hw is None:
            hw = T.matmul(h, weights.att_W)
        scores = edge_inner_product(hw, plan.src, plan.dst)
        scores = T.leaky_relu(scores, config.leaky_slope)
        alpha = T.segment_softmax(scores, plan.seg_starts)
        alpha = T.dropout(alpha, config.dropout_attention, training, rng)
        agg = attention_relational_aggregate(
            h, alpha, plan, weights.blocks[direction], config.num_blocks,
            graph.num_entities)
        pre = T.add(agg, self_pre)
    pre = T.dropout(pre, config.dropout_conv, training, rng)
    # checked before the ReLU, which would silently zero NaNs
    bad = ~np.isfinite(pre.values)
    if bad.any():
        node = int(np.flatnonzero(bad.any(axis=1))[0])
        where = f"layer {layer}, " if layer is not None else ""
        raise NumericFailure(
            f"non-finite hidden state ({where}direction {direction}, "
            f"node {node})")
    return T.relu(pre)


def conv_stack(graph, params, config, training=False, rng=None):
    """The stacked conv layers only: embeddings -> final hidden states."""
    if training and rng is None and (config.dropout_attention > 0
                                     or config.dropout_conv > 0):
        raise ValueError("training mode with dropout needs an rng")
    h = params.embedding
    for layer_index, lw in enumerate(params.layers):
        hw = T.matmul(h, lw.att_W) if graph.num_triples else None
        self_pre = T.matmul(h, lw.self_W)
        h_fwd = conv_layer_forward(h, graph, lw, config, "forward", training,
                                   rng, hw, self_pre, layer=layer_index)
        h_bwd = conv_layer_forward(h, graph, lw, config, "backward", training,
                                   rng, hw, self_pre, layer=layer_index)
        h = T.add(h_fwd, h_bwd)
    return h


def encode(graph, params, config, training=False, rng=None):
    """Full encoder: embeddings -> stacked conv layers -> fusion readout."""
    h = conv_stack(graph, params, config, training, rng)
    f_fwd = gated_neighbor_sum(h, params.gates, graph.plan("forward"),
                               graph.num_entities)
    f_bwd = gated_neighbor_sum(h, params.gates, graph.plan("backward"),
                               graph.num_entities)
    return T.add(f_fwd, f_bwd)
