"""Encoder-decoder point network.

An embedding MLP lifts (coords, features) to H channels; encoder stages
alternate orientation blocks with downsampling layers that halve the point
count budget and double the channel width; the recognition head mean-pools
the bottleneck, while segmentation mirrors the encoder with upsampling plus
skip connections and a per-point head.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import tensor
from .errors import ConfigError, ContractError, DomainError, ShapeError
from .layers import Linear, MLP, ParamStore
from .blocks import BlockConfig, HexaOrientationBlock
from .sampling import downsample, upsample
from .serialization import AXES
from .ssm import gs6_param_count

TASKS = ("recognition", "segmentation")


@dataclass
class StageConfig:
    """One encoder stage: block count and the shared scan shape knobs.

    d and k configure the downsampling layer that follows the stage; they
    are inert on the last stage (nothing follows it).
    """

    blocks: int
    width: int
    n: int
    g: int
    d: int
    k: int

    def __post_init__(self):
        for name in ("blocks", "width", "n", "g", "d", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"stage {name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))

    def to_dict(self):
        return {"blocks": self.blocks, "width": self.width, "n": self.n,
                "g": self.g, "d": self.d, "k": self.k}


@dataclass
class NetworkConfig:
    """Full architecture description; JSON-roundtrippable."""

    stages: tuple
    task: str
    num_classes: int
    h: int
    in_features: int = 0
    axes: tuple = AXES
    structure: str = "chained"
    expansion: int = 2
    method: str = "parallel"
    mode: str = "euler"
    residual: bool = True
    forward_skip: bool = False
    prompt: bool = True
    posemb: bool = True

    def __post_init__(self):
        self.stages = tuple(
            st if isinstance(st, StageConfig) else StageConfig(**st)
            for st in self.stages
        )
        if not self.stages:
            raise ConfigError("network needs at least one stage")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be at least 1")
        if self.in_features < 0:
            raise ConfigError("in_features must be non-negative")
        if self.h != self.stages[0].width:
            raise ConfigError(
                f"embedding width H={self.h} must equal the first stage "
                f"width {self.stages[0].width}"
            )
        for i in range(len(self.stages) - 1):
            w, nxt = self.stages[i].width, self.stages[i + 1].width
            if nxt != 2 * w:
                raise ConfigError(
                    f"stage {i + 1} width {nxt} must be double stage {i} width {w}"
                )
        self.axes = tuple(self.axes)
        for st in self.stages:
            # fail at parse time, not at first forward
            self.block_config(st)

    def block_config(self, stage):
        return BlockConfig(d=stage.width, n=stage.n, g=stage.g, axes=self.axes,
                           structure=self.structure, residual=self.residual,
                           forward_skip=self.forward_skip, expansion=self.expansion,
                           method=self.method, mode=self.mode,
                           prompt=self.prompt, posemb=self.posemb)

    def to_dict(self):
        return {
            "stages": [st.to_dict() for st in self.stages],
            "task": self.task,
            "num_classes": self.num_classes,
            "h": self.h,
            "in_features": self.in_features,
            "axes": list(self.axes),
            "structure": self.structure,
            "expansion": self.expansion,
            "method": self.method,
            "mode": self.mode,
            "residual": self.residual,
            "forward_skip": self.forward_skip,
            "prompt": self.prompt,
            "posemb": self.posemb,
        }

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        missing = {"stages", "task", "num_classes", "h"} - set(doc)
        if missing:
            raise ConfigError(f"config missing keys {sorted(missing)}")
        return cls(**doc)


def save_config(config, path):
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=2)
        f.write("\n")


def load_config(path):
    with open(path) as f:
        return NetworkConfig.from_dict(json.load(f))


def toy_config(task, num_classes, in_features=0, axes=AXES, **overrides):
    """Desk-scale default: two stages, H=32 doubling to 64."""
    stages = (
        StageConfig(blocks=1, width=32, n=8, g=2, d=4, k=8),
        StageConfig(blocks=1, width=64, n=8, g=2, d=4, k=8),
    )
    return NetworkConfig(stages=stages, task=task, num_classes=num_classes,
                         h=32, in_features=in_features, axes=axes, **overrides)


@dataclass
class PointCloud:
    """coords (L, 3) with optional per-point features (L, G) and labels.

    labels is either a single class id or a per-point integer array.
    """

    coords: np.ndarray
    features: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ShapeError(f"coords must be (L, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise ShapeError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.coords)):
            raise DomainError("coords must be finite")
        if self.features is None:
            self.features = np.zeros((self.coords.shape[0], 0))
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.coords.shape[0]:
            raise ShapeError(
                f"features must be (L, G) with L={self.coords.shape[0]}, "
                f"got {self.features.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels)

    @property
    def num_points(self):
        return self.coords.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]


def unit_sphere(coords):
    """Center the cloud and scale the farthest point onto the unit sphere."""
    coords = np.asarray(coords, dtype=np.float64)
    centered = coords - coords.mean(axis=0, keepdims=True)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0.0:
        return centered
    return centered / radius


def _lex_min_index(coords):
    # permutation-independent sampling seed: lexicographically smallest point
    return int(np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))[0])


class PointNetwork:
    """Parameters plus forward passes for one NetworkConfig."""

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(seed, dtype=dtype)
        store = self.store
        h = config.h
        self.embedding = MLP(store, "embed", (3 + config.in_features, h, h))
        self.encoder_blocks = []
        self.down_pointnets = []
        stages = config.stages
        for i, st in enumerate(stages):
            cfg = config.block_config(st)
            self.encoder_blocks.append([
                HexaOrientationBlock(store, f"enc{i}.block{j}", cfg)
                for j in range(st.blocks)
            ])
            if i < len(stages) - 1:
                self.down_pointnets.append(
                    Linear(store, f"down{i}.pointnet", st.width + 3,
                           2 * st.width, activation="silu")
                )
        if config.task == "recognition":
            w = stages[-1].width
            self.head = MLP(store, "head", (w, w, config.num_classes))
            self.up_aligns = self.up_skips = self.decoder_blocks = []
        else:
            self.up_aligns = []
            self.up_skips = []
            self.decoder_blocks = []
            for i in range(len(stages) - 1):
                w = stages[i].width
                cfg = config.block_config(stages[i])
                self.up_aligns.append(
                    Linear(store, f"up{i}.align", 2 * w, w, activation="silu"))
                self.up_skips.append(
                    Linear(store, f"up{i}.skip", w, w, activation="silu"))
                self.decoder_blocks.append([
                    HexaOrientationBlock(store, f"dec{i}.block{j}", cfg)
                    for j in range(stages[i].blocks)
                ])
            w0 = stages[0].width
            self.head = MLP(store, "head", (w0, w0, config.num_classes))

    def embed(self, cloud):
        """(L, 3+G) -> (L, H) via the embedding MLP."""
        if cloud.num_features != self.config.in_features:
            raise ContractError(
                f"cloud has {cloud.num_features} feature channels, "
                f"network expects {self.config.in_features}"
            )
        x = np.concatenate([cloud.coords, cloud.features], axis=1)
        return self.embedding(tensor(x.astype(self.store.dtype)))

    def _encode(self, cloud):
        """Run all encoder stages; returns per-stage (coords, feats) skips.

        skips[-1] is the bottleneck output; skips[i] holds stage i output at
        its own resolution, rows aligned with the stage input order.
        """
        coords = cloud.coords
        feats = self.embed(cloud)
        skips = []
        stages = self.config.stages
        for i, st in enumerate(stages):
            for block in self.encoder_blocks[i]:
                feats = block(coords, feats)
            skips.append((coords, feats))
            if i < len(stages) - 1:
                coords, feats, _ = downsample(
                    coords, feats, st.d, st.k, self.down_pointnets[i],
                    start=_lex_min_index(coords),
                )
        return skips

    def forward_recognition(self, cloud):
        """Class logits (num_classes,) for one cloud."""
        if self.config.task != "recognition":
            raise ContractError(f"network task is {self.config.task!r}")
        _, feats = self._encode(cloud)[-1]
        pooled = T.reduce_mean(feats, axis=0, keepdims=True)
        logits = self.head(pooled)
        return T.reshape(logits, (self.config.num_classes,))

    def forward_segmentation(self, cloud):
        """Per-point logits (L, num_classes), row i labeling input point i."""
        if self.config.task != "segmentation":
            raise ContractError(f"network task is {self.config.task!r}")
        skips = self._encode(cloud)
        coords, feats = skips[-1]
        for i in range(len(self.config.stages) - 2, -1, -1):
            parent_coords, parent_feats = skips[i]
            feats = upsample(coords, feats, parent_coords, parent_feats,
                             self.up_aligns[i], self.up_skips[i])
            coords = parent_coords
            for block in self.decoder_blocks[i]:
                feats = block(coords, feats)
        return self.head(feats)

    def forward(self, cloud):
        if self.config.task == "recognition":
            return self.forward_recognition(cloud)
        return self.forward_segmentation(cloud)


def linear_flops(tokens, fan_in, fan_out, bias=True):
    """Matmul convention: 2*M*K*N' multiply-adds, plus M*N' for a bias add."""
    f = 2 * tokens * fan_in * fan_out
    if bias:
        f += tokens * fan_out
    return f


def _scan_flops(tokens, e, n):
    # discretize + recur + readout, folded into one documented constant
    return 10 * tokens * e * n


def _block_params(width, n, g, expansion, num_keys, prompt=True, posemb=True):
    e = width * expansion
    rho = (3 * width + width) + (width * width + width) if posemb else 0
    per_dir = width + width * 2 * e + e * width + gs6_param_count(e, n, g)["total"]
    prompts = num_keys * 2 * width if prompt else 0
    gamma = num_keys * width * width + width
    return rho + prompts + 2 * num_keys * per_dir + gamma


def _block_flops(tokens, width, n, g, expansion, num_keys, prompt=True,
                 posemb=True):
    e = width * expansion
    dg = e // g
    lp = tokens + 1 if prompt else tokens  # leading prompt token per sequence
    rho = (linear_flops(tokens, 3, width) + linear_flops(tokens, width, width)
           if posemb else 0)
    per_dir = (
        linear_flops(lp, width, 2 * e, bias=False)
        + linear_flops(lp, e, n, bias=False) * 2
        + linear_flops(lp, e, dg, bias=False)
        + _scan_flops(lp, e, n)
        + linear_flops(lp, e, width, bias=False)
    )
    gamma = linear_flops(tokens, num_keys * width, width)
    return num_keys * (rho + 2 * per_dir) + gamma


def count_params_flops(config, length=256):
    """Analytic parameter and forward-flop counts for `length` input points.

    Matmuls cost 2*M*K*N'; the selective scan costs a documented constant
    times L*E*N; index selection, sorting, and elementwise gates are not
    counted.
    """
    stages = config.stages
    keys = max(len(config.axes), 1)
    h = config.h
    params = (3 + config.in_features) * h + h + h * h + h
    flops = linear_flops(length, 3 + config.in_features, h) + linear_flops(length, h, h)
    tokens = [length]
    for st in stages[:-1]:
        tokens.append(tokens[-1] // st.d)
    for i, st in enumerate(stages):
        per_block = _block_params(st.width, st.n, st.g, config.expansion, keys,
                                  config.prompt, config.posemb)
        params += st.blocks * per_block
        flops += st.blocks * _block_flops(tokens[i], st.width, st.n, st.g,
                                          config.expansion, keys,
                                          config.prompt, config.posemb)
        if i < len(stages) - 1:
            params += (st.width + 3) * 2 * st.width + 2 * st.width
            flops += linear_flops(tokens[i + 1] * st.k, st.width + 3, 2 * st.width)
    if config.task == "recognition":
        w = stages[-1].width
        params += w * w + w + w * config.num_classes + config.num_classes
        flops += linear_flops(1, w, w) + linear_flops(1, w, config.num_classes)
    else:
        for i in range(len(stages) - 1):
            w = stages[i].width
            params += 2 * w * w + w + w * w + w
            params += stages[i].blocks * _block_params(
                w, stages[i].n, stages[i].g, config.expansion, keys,
                config.prompt, config.posemb)
            flops += linear_flops(tokens[i + 1], 2 * w, w)
            flops += linear_flops(tokens[i], w, w)
            flops += 6 * tokens[i] * w  # 3-neighbor interpolation mix
            flops += stages[i].blocks * _block_flops(
                tokens[i], w, stages[i].n, stages[i].g, config.expansion, keys,
                config.prompt, config.posemb)
        w0 = stages[0].width
        params += w0 * w0 + w0 + w0 * config.num_classes + config.num_classes
        flops += linear_flops(length, w0, w0)
        flops += linear_flops(length, w0, config.num_classes)
    return {"params": int(params), "flops_per_forward": int(flops)}


def save_checkpoint(store, path):
    """Write parameters as one flat binary blob plus a JSON manifest."""
    path = str(path)
    entries = []
    with open(path, "wb") as f:
        for name, p in store.params.items():
            entries.append({"name": name, "shape": list(p.shape)})
            f.write(np.ascontiguousarray(p.data).tobytes())
    manifest = {
        "precision": store.dtype.name,
        "tensors": entries,
    }
    with open(path + ".json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_checkpoint(store, path):
    """Fill `store` in place from a checkpoint written by save_checkpoint."""
    path = str(path)
    with open(path + ".json") as f:
        manifest = json.load(f)
    dtype = np.dtype(manifest["precision"])
    if dtype != store.dtype:
        raise ContractError(
            f"checkpoint precision {dtype.name} does not match store "
            f"{store.dtype.name}"
        )
    names = [e["name"] for e in manifest["tensors"]]
    if set(names) != set(store.params):
        missing = sorted(set(store.params) - set(names))
        extra = sorted(set(names) - set(store.params))
        raise ContractError(
            f"checkpoint does not match store: missing {missing}, extra {extra}"
        )
    with open(path, "rb") as f:
        blob = f.read()
    expected = sum(
        int(np.prod(e["shape"])) for e in manifest["tensors"]) * dtype.itemsize
    if len(blob) != expected:
        raise ContractError(
            f"checkpoint holds {len(blob)} bytes, manifest implies {expected}"
        )
    offset = 0
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += count * dtype.itemsize
        p = store.params[e["name"]]
        if p.shape != shape:
            raise ContractError(
                f"parameter {e['name']} has shape {p.shape}, checkpoint "
                f"holds {shape}"
            )
        p.data = arr.reshape(shape).copy()
