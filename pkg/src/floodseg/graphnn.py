"""Graph layers used at the network bottleneck.

The bottleneck feature grid is treated as a graph: one node per spatial cell,
edges between neighbouring cells. ``gat_conv`` mixes node features with
learned attention over each node's neighbourhood (self-loop included),
``cheb_conv`` applies a Chebyshev polynomial of the rescaled normalized
Laplacian, and ``center_of_mass`` appends per-channel soft-centroid
coordinates as two extra constant feature channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (ShapeError, Tensor, concat, leaky_relu, matmul, reshape, softmax,
                     tmean, transpose)


class Graph:
    """Undirected graph over nodes 0..node_count-1.

    Edges are stored once as (u, v) with u < v; self-loops are rejected here
    and added implicitly where a neighbourhood needs them (attention).
    """

    def __init__(self, node_count: int, edges):
        if node_count < 1:
            raise ValueError(f"Graph: node_count must be positive, got {node_count}")
        canonical = []
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"Graph: self-loop on node {u} is not allowed")
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise ValueError(f"Graph: edge ({u},{v}) outside 0..{node_count - 1}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"Graph: duplicate edge {key}")
            seen.add(key)
            canonical.append(key)
        self.node_count = node_count
        self.edges = sorted(canonical)
        self._adjacency = None
        self._attention_mask = None

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency without self-loops (float64)."""
        if self._adjacency is None:
            a = np.zeros((self.node_count, self.node_count), dtype=np.float64)
            for u, v in self.edges:
                a[u, v] = 1.0
                a[v, u] = 1.0
            self._adjacency = a
        return self._adjacency

    def attention_mask(self) -> np.ndarray:
        """Adjacency plus the identity: the attention neighbourhood of each node."""
        if self._attention_mask is None:
            self._attention_mask = self.adjacency() + np.eye(self.node_count)
        return self._attention_mask


def build_grid_graph(height: int, width: int, connectivity: int = 4) -> Graph:
    """Grid graph over row-major cells; connectivity 4 or 8 (adds diagonals)."""
    if connectivity not in (4, 8):
        raise ValueError(f"build_grid_graph: connectivity must be 4 or 8, got {connectivity}")
    if height < 1 or width < 1:
        raise ValueError(f"build_grid_graph: grid {height}x{width} is empty")
    edges = []
    for r in range(height):
        for c in range(width):
            node = r * width + c
            if c + 1 < width:
                edges.append((node, node + 1))
            if r + 1 < height:
                edges.append((node, node + width))
            if connectivity == 8 and r + 1 < height:
                if c + 1 < width:
                    edges.append((node, node + width + 1))
                if c - 1 >= 0:
                    edges.append((node, node + width - 1))
    return Graph(height * width, edges)


class NormalizedLaplacian:
    """Symmetric normalized Laplacian and its [-1, 1]-rescaled form.

    ``matrix`` is I - D^-1/2 A D^-1/2 with zero rows for isolated nodes;
    ``scaled`` subtracts the identity, pinning the spectrum into [-1, 1]
    (the largest eigenvalue of ``matrix`` is taken as 2).
    """

    def __init__(self, graph: Graph):
        a = graph.adjacency()
        deg = a.sum(axis=1)
        inv_sqrt = np.zeros_like(deg)
        connected = deg > 0
        inv_sqrt[connected] = 1.0 / np.sqrt(deg[connected])
        lap = -inv_sqrt[:, None] * a * inv_sqrt[None, :]
        lap[np.diag_indices_from(lap)] = np.where(connected, 1.0, 0.0)
        lap = (lap + lap.T) / 2.0
        self.node_count = graph.node_count
        self.matrix = lap
        self.scaled = lap - np.eye(graph.node_count)
        self._tensors: dict = {}

    def scaled_tensor(self, dtype) -> Tensor:
        key = np.dtype(dtype)
        if key not in self._tensors:
            self._tensors[key] = Tensor(self.scaled.astype(key))
        return self._tensors[key]


def normalized_laplacian(graph: Graph) -> NormalizedLaplacian:
    return NormalizedLaplacian(graph)


@dataclass
class GatParams:
    """Attention layer parameters: feature projection, edge scorer, slope."""

    weight: Tensor            # (out_dim, in_dim)
    attn: Tensor              # (2 * out_dim,)
    slope: float = 0.2

    def __post_init__(self):
        if self.weight.data.ndim != 2:
            raise ShapeError(f"GatParams: weight must be 2-D, got {self.weight.data.shape}")
        out_dim = self.weight.data.shape[0]
        if self.attn.data.shape != (2 * out_dim,):
            raise ShapeError(f"GatParams: attn shape {self.attn.data.shape} != ({2 * out_dim},)")

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]


_MASK_OFF = 1e30


def gat_conv(features: Tensor, graph: Graph, params: GatParams, return_attention: bool = False):
    """Attention-weighted neighbourhood mixing over graph nodes.

    Each node attends to its neighbours and itself: scores are a leaky-relu
    of a learned linear form on the projected feature pair, normalized with a
    softmax per node, and the output is a leaky-relu of the attention-weighted
    sum of projected neighbour features. Off-neighbourhood entries are pushed
    to -1e30 before the softmax so they contribute exactly zero weight.
    """
    if features.data.ndim != 2:
        raise ShapeError(f"gat_conv: features must be (nodes, dim), got {features.data.shape}")
    n, f = features.data.shape
    if n != graph.node_count:
        raise ShapeError(f"gat_conv: {n} feature rows for {graph.node_count} graph nodes")
    if f != params.in_dim:
        raise ShapeError(f"gat_conv: feature dim {f} != layer in_dim {params.in_dim}")
    fo = params.out_dim
    dtype = features.data.dtype

    z = matmul(features, transpose(params.weight))              # (n, out)
    attn_col = reshape(params.attn, (2 * fo, 1))
    source_score = matmul(z, attn_col[:fo, :])                  # (n, 1)
    target_score = matmul(z, attn_col[fo:, :])                  # (n, 1)
    scores = leaky_relu(source_score + transpose(target_score), params.slope)

    mask = graph.attention_mask().astype(dtype)
    off = Tensor(((mask - 1.0) * _MASK_OFF).astype(dtype))
    attention = softmax(scores * Tensor(mask) + off, axis=1)
    out = leaky_relu(matmul(attention, z), params.slope)
    if return_attention:
        return out, attention
    return out


@dataclass
class ChebParams:
    """One weight matrix per Chebyshev polynomial order, 0..K."""

    thetas: list = field(default_factory=list)

    def __post_init__(self):
        if not self.thetas:
            raise ShapeError("ChebParams: need at least theta_0")
        shape = self.thetas[0].data.shape
        for i, th in enumerate(self.thetas):
            if th.data.ndim != 2 or th.data.shape != shape:
                raise ShapeError(f"ChebParams: theta_{i} shape {th.data.shape} != {shape}")

    @property
    def order(self) -> int:
        return len(self.thetas) - 1

    @property
    def in_dim(self) -> int:
        return self.thetas[0].data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.thetas[0].data.shape[0]


def cheb_conv(features: Tensor, laplacian: NormalizedLaplacian, params: ChebParams) -> Tensor:
    """Chebyshev-polynomial graph filter of the rescaled Laplacian.

    Builds T_0 = X, T_1 = L~ X, T_k = 2 L~ T_{k-1} - T_{k-2} and returns
    sum_k T_k theta_k^T. Order 0 never touches the Laplacian, so it is the
    graph-independent linear map X theta_0^T.
    """
    if features.data.ndim != 2:
        raise ShapeError(f"cheb_conv: features must be (nodes, dim), got {features.data.shape}")
    n, f = features.data.shape
    if n != laplacian.node_count:
        raise ShapeError(f"cheb_conv: {n} feature rows for {laplacian.node_count} graph nodes")
    if f != params.in_dim:
        raise ShapeError(f"cheb_conv: feature dim {f} != layer in_dim {params.in_dim}")

    out = matmul(features, transpose(params.thetas[0]))
    if params.order == 0:
        return out
    lap = laplacian.scaled_tensor(features.data.dtype)
    t_prev, t_curr = features, matmul(lap, features)
    out = out + matmul(t_curr, transpose(params.thetas[1]))
    for k in range(2, params.order + 1):
        t_next = 2.0 * matmul(lap, t_curr) - t_prev
        out = out + matmul(t_next, transpose(params.thetas[k]))
        t_prev, t_curr = t_curr, t_next
    return out


def _axis_coords(extent: int, dtype) -> np.ndarray:
    if extent == 1:
        return np.full(1, 0.5, dtype=dtype)
    return (np.arange(extent) / (extent - 1)).astype(dtype)


def center_of_mass(features: Tensor):
    """Soft centroid per channel, plus the grid augmented with centroid channels.

    Each channel is softmax-normalized over all of its cells; the centroid is
    the probability-weighted mean of (row, col) coordinates normalized to
    [0, 1]. Returns ``(centroids, augmented)`` where centroids is (C, 2) and
    augmented is the input with two extra channels holding the channel-mean
    row and column centroid broadcast over the grid.
    """
    if features.data.ndim != 3:
        raise ShapeError(f"center_of_mass: expected (C,H,W), got {features.data.shape}")
    c, h, w = features.data.shape
    dtype = features.data.dtype

    rows = np.repeat(_axis_coords(h, dtype), w)[:, None]        # (h*w, 1)
    cols = np.tile(_axis_coords(w, dtype), h)[:, None]

    weights = softmax(reshape(features, (c, h * w)), axis=1)
    row_centroid = matmul(weights, Tensor(rows))                # (c, 1)
    col_centroid = matmul(weights, Tensor(cols))
    centroids = concat([row_centroid, col_centroid], axis=1)

    ones = Tensor(np.ones((1, h, w), dtype=dtype))
    row_channel = tmean(row_centroid) * ones
    col_channel = tmean(col_centroid) * ones
    augmented = concat([features, row_channel, col_channel], axis=0)
    return centroids, augmented
