"""Set abstraction: farthest point sampling, k-nearest-neighbor grouping
with a shared pooled MLP for downsampling, and inverse-distance
interpolation with a skip path for upsampling.

Distances are squared Euclidean throughout; neighbor ties break toward the
lower index, so all of this is deterministic.  Coordinates are plain arrays
(never differentiated); features are tensors on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor, tensor

INTERP_EPS = 1e-8


@dataclass
class SampleMap:
    """Bookkeeping of one downsampling step.

    selected: (m,) indices of the chosen centers in the parent set, in pick
    order.  neighbors: (m, K) parent indices per center.
    """

    selected: np.ndarray
    neighbors: np.ndarray
    d: int
    k: int

    def __post_init__(self):
        if len(np.unique(self.selected)) != self.selected.shape[0]:
            raise ContractError("selected center indices must be distinct")
        if self.neighbors.shape[0] != self.selected.shape[0]:
            raise ContractError("one neighbor row per selected center required")


def _coords_array(coords):
    coords = np.asarray(getattr(coords, "coords", coords), dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ContractError(f"coordinates must be (L, 3), got {coords.shape}")
    return coords


def square_distances(a, b):
    """(len(a), len(b)) squared Euclidean distances."""
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def fps(coords, m, start=0):
    """Greedy farthest point selection of m indices.

    Each pick maximizes the squared distance to the already-selected set;
    ties go to the lowest unselected index, so indices stay distinct even
    when every point coincides.  start is the deterministic seed pick.
    """
    coords = _coords_array(coords)
    l = coords.shape[0]
    if not 1 <= m <= l:
        raise ContractError(f"cannot select {m} of {l} points")
    if not 0 <= start < l:
        raise ContractError(f"seed index {start} out of range for {l} points")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    best = ((coords - coords[start]) ** 2).sum(axis=1)
    best[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(best))
        selected[i] = nxt
        dist = ((coords - coords[nxt]) ** 2).sum(axis=1)
        np.minimum(best, dist, out=best)
        best[nxt] = -1.0
    return selected


def knn(coords, queries, k):
    """Indices of the k nearest coords rows per query row."""
    coords = _coords_array(coords)
    queries = _coords_array(queries)
    if k > coords.shape[0]:
        raise ContractError(f"asked for {k} neighbors among {coords.shape[0]} points")
    d2 = square_distances(queries, coords)
    if k == coords.shape[0]:
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    # argpartition gives an unordered prefix; order it by (distance, index).
    rows = np.arange(queries.shape[0])[:, None]
    order = np.lexsort((part, d2[rows, part]), axis=1)
    return part[rows, order]


def downsample(coords, features, d, k, pointnet, start=0):
    """Reduce cardinality L -> floor(L/d), doubling the channel width.

    Centers come from fps; each center pools its k nearest parent points:
    per-neighbor input is concat(neighbor features, neighbor coord - center
    coord), mapped by the shared `pointnet` (H+3 -> 2H), then channel-wise
    max over the k neighbors.  Returns (child coords, child features (m, 2H),
    SampleMap).
    """
    coords = _coords_array(coords)
    l, h = features.shape
    if l != coords.shape[0]:
        raise ContractError(f"{l} feature rows for {coords.shape[0]} points")
    m = l // d
    if m < 1:
        raise ContractError(f"downsample rate {d} leaves no points from L={l}")
    if k > l:
        raise ContractError(f"asked for {k} neighbors among {l} points")
    selected = fps(coords, m, start=start)
    centers = coords[selected]
    neighbors = knn(coords, centers, k)
    rel = coords[neighbors] - centers[:, None, :]

    flat = neighbors.reshape(-1)
    neighbor_feats = T.index_rows(features, flat)
    rel_t = tensor(rel.reshape(-1, 3).astype(features.dtype))
    per_point = T.concat([neighbor_feats, rel_t], axis=1)
    mapped = pointnet(per_point)
    pooled = T.reduce_max(T.reshape(mapped, (m, k, mapped.shape[-1])), axis=1)
    return centers, pooled, SampleMap(selected=selected, neighbors=neighbors, d=d, k=k)


def three_nn_weights(coords_parent, coords_child):
    """Up-to-3-NN inverse-squared-distance weights per parent point.

    Returns (idx (L, t), w (L, t)) with t = min(3, child count); weights are
    non-negative and sum to 1 per row.
    """
    coords_parent = _coords_array(coords_parent)
    coords_child = _coords_array(coords_child)
    if coords_child.shape[0] == 0:
        raise ContractError("cannot interpolate from an empty child set")
    t = min(3, coords_child.shape[0])
    idx = knn(coords_child, coords_parent, t)
    rows = np.arange(coords_parent.shape[0])[:, None]
    d2 = square_distances(coords_parent, coords_child)[rows, idx]
    recip = 1.0 / (d2 + INTERP_EPS)
    w = recip / recip.sum(axis=1, keepdims=True)
    return idx, w


def upsample(coords_child, feats_child, coords_parent, feats_parent_skip,
             align, skip_mlp):
    """Recover parent cardinality: interpolation plus a skip path.

    align maps child features 2H -> H; each parent point mixes its (up to)
    three nearest child points with inverse-distance weights; skip_mlp maps
    the parent-resolution features H -> H and is added.
    """
    idx, w = three_nn_weights(coords_parent, coords_child)
    aligned = align(feats_child)
    mixed = None
    for i in range(idx.shape[1]):
        wi = tensor(w[:, i:i + 1].astype(aligned.dtype))
        term = T.mul(T.index_rows(aligned, idx[:, i]), wi)
        mixed = term if mixed is None else T.add(mixed, term)
    return T.add(skip_mlp(feats_parent_skip), mixed)
