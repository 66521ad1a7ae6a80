"""Point set serialization: per-axis causal sorting, sorting prompts,
position embeddings, merging, and a Hilbert-curve baseline.

A point cloud has no native order, so each block first expands it into one
sorted sequence per requested axis, processes the sequences, then merges
them back so row i again describes point i.  Sorting is a stable key sort on
(axis coordinate, full coordinate tuple, original index): deterministic, and
independent of input order except for exactly duplicated points.

Axis names are Z, Y, X; the merge concatenates channels in that fixed order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DomainError
from .layers import MLP
from .tensor import Tensor, tensor

AXES = ("Z", "Y", "X")

_AXIS_COLUMN = {"X": 0, "Y": 1, "Z": 2}


def _as_coords(cloud):
    coords = np.asarray(getattr(cloud, "coords", cloud), dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ContractError(f"coordinates must be (L, 3), got {coords.shape}")
    return coords


def inverse_permutation(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0], dtype=perm.dtype)
    return inv


def axis_sort_permutation(coords, axis):
    """Stable sort order along one axis.

    Key priority: the axis coordinate, then the full (x, y, z) tuple, then
    the original index, so only exact duplicate points fall back to input
    order.
    """
    if axis not in _AXIS_COLUMN:
        raise ConfigError(f"unknown axis {axis!r}, expected one of {AXES}")
    coords = _as_coords(coords)
    idx = np.arange(coords.shape[0])
    keys = (idx, coords[:, 2], coords[:, 1], coords[:, 0], coords[:, _AXIS_COLUMN[axis]])
    return np.lexsort(keys).astype(np.int64)


class PositionEncoder:
    """Two-layer perceptron from raw coordinates (L, 3) to embeddings (L, D)."""

    def __init__(self, store, name, d):
        self.mlp = MLP(store, name, [3, d, d], activation="silu", final="none")
        self.d = d
        self.dtype = store.dtype

    def __call__(self, coords):
        if not isinstance(coords, Tensor):
            coords = tensor(np.asarray(coords, dtype=self.dtype))
        return self.mlp(coords)


@dataclass
class SerializedSet:
    """One cloud expanded along a set of axes.

    perms[A][j] is the original index of the j-th point in axis A's order;
    inv_perms[A] restores original order.  Prompts are the learned leading
    tokens for each axis (zero constants when none are supplied).
    """

    coords: np.ndarray
    features: Tensor
    axes: tuple
    perms: dict = field(default_factory=dict)
    inv_perms: dict = field(default_factory=dict)
    prompts: dict = field(default_factory=dict)
    prompt_positions: dict = field(default_factory=dict)

    def sequence(self, axis, encoder, prompt=True):
        """Sorted sequence for one axis: (L+1, D) with the prompt row first,
        or (L, D) when the prompt is ablated.  encoder=None skips position
        embeddings."""
        perm = self.perms[axis]
        sorted_features = T.gather_rows(self.features, perm)
        if prompt:
            return attach_prompt_and_positions(
                sorted_features,
                self.prompts[axis],
                self.prompt_positions[axis],
                encoder,
                self.coords[perm],
            )
        if encoder is None:
            return sorted_features
        return T.add(sorted_features, encoder(self.coords[perm]))


def expand(cloud, features, axes, prompts=None, prompt_positions=None):
    """Sort one cloud along each requested axis.

    cloud: anything with .coords or a raw (L, 3) array; features: (L, D)
    tensor aligned with the rows of cloud.
    """
    axes = tuple(axes)
    if not axes:
        raise ConfigError("expand requires at least one axis")
    bad = [a for a in axes if a not in _AXIS_COLUMN]
    if bad:
        raise ConfigError(f"unknown axes {bad}, expected subset of {AXES}")
    if len(set(axes)) != len(axes):
        raise ConfigError(f"repeated axes in {axes}")
    coords = _as_coords(cloud)
    if features.shape[0] != coords.shape[0]:
        raise ContractError(
            f"{features.shape[0]} feature rows for {coords.shape[0]} points"
        )
    d = features.shape[1]
    zero = tensor(np.zeros(d, dtype=features.dtype))
    out = SerializedSet(coords=coords, features=features, axes=axes)
    for axis in axes:
        perm = axis_sort_permutation(coords, axis)
        out.perms[axis] = perm
        out.inv_perms[axis] = inverse_permutation(perm)
        out.prompts[axis] = prompts[axis] if prompts else zero
        out.prompt_positions[axis] = prompt_positions[axis] if prompt_positions else zero
    return out


def attach_prompt_and_positions(sorted_features, prompt, prompt_pos, encoder, sorted_coords):
    """Prepend the prompt row and add position embeddings.

    Row 0 = prompt + prompt_pos; row j (j >= 1) = sorted_features[j-1] +
    encoder(sorted_coords[j-1]).  encoder=None leaves the body untouched
    (position embeddings ablated).  Works for zero points (prompt row only).
    """
    d = sorted_features.shape[-1]
    head = T.reshape(T.add(prompt, prompt_pos), (1, d))
    if sorted_features.shape[0] == 0:
        return head
    body = sorted_features
    if encoder is not None:
        body = T.add(body, encoder(sorted_coords))
    return T.concat([head, body], axis=0)


def merge(processed, inv_perms, gamma, prompt=True):
    """Undo serialization and fuse the per-axis sequences.

    processed: axis -> (L+1, D) sequence whose row 0 is the prompt, or
    (L, D) when prompt=False.  Drops the prompt row if present, restores
    original point order per axis, concatenates channels in fixed (Z, Y, X)
    order, and applies the reduction gamma ((k*D) -> D for k axes).
    """
    order = [a for a in AXES if a in processed]
    if not order:
        raise ConfigError("merge requires at least one axis")
    lengths = {a: processed[a].shape[0] for a in order}
    if len(set(lengths.values())) != 1:
        raise ContractError(f"axis sequences disagree in length: {lengths}")
    restored = []
    for axis in order:
        seq = processed[axis]
        body = T.slice_axis(seq, 0, 1, seq.shape[0]) if prompt else seq
        restored.append(T.gather_rows(body, inv_perms[axis]))
    stacked = restored[0] if len(restored) == 1 else T.concat(restored, axis=1)
    return gamma(stacked)


# ---------------------------------------------------------------------------
# Hilbert-curve baseline


def _axes_to_transpose(x, bits):
    """Skilling's in-place conversion of grid coords to transposed Hilbert form."""
    n = x.shape[1]
    q = 1 << (bits - 1)
    while q > 1:
        p = q - 1
        for i in range(n):
            upper = (x[:, i] & q) != 0
            lower = ~upper
            x[upper, 0] ^= p
            t = (x[lower, 0] ^ x[lower, i]) & p
            x[lower, 0] ^= t
            x[lower, i] ^= t
        q >>= 1
    for i in range(1, n):
        x[:, i] ^= x[:, i - 1]
    t = np.zeros(x.shape[0], dtype=x.dtype)
    q = 1 << (bits - 1)
    while q > 1:
        mask = (x[:, n - 1] & q) != 0
        t[mask] ^= q - 1
        q >>= 1
    for i in range(n):
        x[:, i] ^= t
    return x


def hilbert_cell_index(cells, bits):
    """Hilbert curve index of integer grid cells (L, 3), each in [0, 2**bits)."""
    x = _axes_to_transpose(cells.astype(np.int64).copy(), bits)
    idx = np.zeros(x.shape[0], dtype=np.int64)
    for k in range(bits - 1, -1, -1):
        for i in range(x.shape[1]):
            idx = (idx << 1) | ((x[:, i] >> k) & 1)
    return idx


def hilbert_order(extent, grid_size):
    """Curve order covering a bounding box of the given extent."""
    if extent <= grid_size:
        return 1
    return int(min(max(np.ceil(np.log2(extent / grid_size)), 1), 16))


def hilbert_serialize(cloud, grid_size, variant="hilbert"):
    """Space-filling-curve ordering of a cloud on a regular grid.

    Returns a permutation of 0..L-1; ties within one grid cell keep input
    order.  variant="trans_hilbert" maps the axis-rolled coordinates
    (y, z, x), giving a second curve orientation.
    """
    if grid_size <= 0:
        raise DomainError(f"grid size must be positive, got {grid_size}")
    if variant not in ("hilbert", "trans_hilbert"):
        raise ConfigError(f"unknown serialization variant {variant!r}")
    coords = _as_coords(cloud)
    lo = coords.min(axis=0)
    extent = float((coords.max(axis=0) - lo).max())
    bits = hilbert_order(extent, grid_size)
    cells = np.floor((coords - lo) / grid_size).astype(np.int64)
    cells = np.clip(cells, 0, (1 << bits) - 1)
    if (cells == cells[0]).all():
        warnings.warn(
            f"grid size {grid_size} puts all {coords.shape[0]} points in one "
            "cell; order falls back to input order",
            stacklevel=2,
        )
    if variant == "trans_hilbert":
        cells = cells[:, [1, 2, 0]]
    idx = hilbert_cell_index(cells, bits)
    return np.argsort(idx, kind="stable").astype(np.int64)
