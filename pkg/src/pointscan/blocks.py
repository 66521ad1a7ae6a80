"""Sequence blocks: the gated scan block, its two bidirectional wirings, and
the multi-orientation block that serializes a cloud along several axes,
runs a bidirectional block per axis, and merges the results back per point.

Bidirectional wirings (selected by BlockConfig.structure):
  chained:  the backward pass consumes the forward pass's output, so the
            first token's output can depend on the last token's input.
  parallel: forward and backward passes both read the raw sequence and their
            outputs are averaged; ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .layers import Linear, ParamStore
from .serialization import AXES, PositionEncoder, attach_prompt_and_positions, expand, merge
from .ssm import GS6Params, gs6_forward
from .tensor import Tensor


@dataclass
class MambaBlockParams:
    """One gated scan block: pre-norm, D -> 2E split projection, grouped
    scan over the E-wide value path, silu gate, E -> D output projection."""

    norm_weight: Tensor
    w_in: Tensor
    w_out: Tensor
    gs6: GS6Params

    @property
    def d(self):
        return self.w_in.shape[0]

    @property
    def e(self):
        return self.w_in.shape[1] // 2

    def named_tensors(self, prefix=""):
        out = {
            f"{prefix}norm_weight": self.norm_weight,
            f"{prefix}w_in": self.w_in,
            f"{prefix}w_out": self.w_out,
        }
        for k, v in self.gs6.named_tensors().items():
            out[f"{prefix}gs6.{k}"] = v
        return out


@dataclass
class BlockConfig:
    """Shape and wiring of one orientation block.

    axes: subset of (Z, Y, X); empty means no sorting (single sequence in
    input order), the serialization-free ablation level.
    """

    d: int
    n: int
    g: int
    axes: tuple = ("Z", "Y", "X")
    structure: str = "chained"
    residual: bool = True
    forward_skip: bool = False
    expansion: int = 2
    method: str = "parallel"
    mode: str = "euler"
    prompt: bool = True
    posemb: bool = True

    def __post_init__(self):
        self.axes = tuple(self.axes)
        if self.structure not in ("chained", "parallel"):
            raise ConfigError(f"unknown block structure {self.structure!r}")
        bad = [a for a in self.axes if a not in AXES]
        if bad:
            raise ConfigError(f"unknown axes {bad}")
        e = self.d * self.expansion
        if e % self.g != 0:
            raise ConfigError(
                f"scan width E={e} not divisible by grouping rate g={self.g}"
            )


def make_gs6(store, name, d, n, g):
    """GS6 parameters registered under dotted names in the store."""
    if d % g != 0:
        raise ConfigError(f"width D={d} not divisible by grouping rate g={g}")
    dg = d // g
    ramp = np.broadcast_to(np.log(np.arange(1, n + 1, dtype=np.float64)), (dg, n))

    def bias_sampler(rng):
        return np.log(np.expm1(np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), dg))))

    bound = 1.0 / np.sqrt(d)
    return GS6Params(
        log_neg_a=store.constant(f"{name}.log_neg_a", ramp.copy()),
        delta_bias=store.draw(f"{name}.delta_bias", bias_sampler),
        w_b=store.uniform(f"{name}.w_b", (d, n), bound),
        w_c=store.uniform(f"{name}.w_c", (d, n), bound),
        w_delta=store.uniform(f"{name}.w_delta", (d, dg), bound),
        g=g,
    )


def make_mamba_params(store, name, d, n, g, expansion=2):
    e = d * expansion
    return MambaBlockParams(
        norm_weight=store.constant(f"{name}.norm.weight", np.ones(d)),
        w_in=store.uniform(f"{name}.in_proj.w", (d, 2 * e), 1.0 / np.sqrt(d)),
        w_out=store.uniform(f"{name}.out_proj.w", (e, d), 1.0 / np.sqrt(e)),
        gs6=make_gs6(store, f"{name}.gs6", e, n, g),
    )


def mamba_unidirectional(seq, params, method="parallel", mode="euler", residual=True):
    """Gated scan block over one sequence (L', D) -> (L', D)."""
    if seq.ndim != 2 or seq.shape[1] != params.d:
        raise ContractError(f"sequence {seq.shape} does not match width {params.d}")
    length, d = seq.shape
    e = params.e
    z = T.rms_norm(seq, params.norm_weight) @ params.w_in
    value = T.slice_axis(z, 1, 0, e)
    gate = T.slice_axis(z, 1, e, 2 * e)
    scanned = gs6_forward(T.reshape(value, (1, length, e)), params.gs6,
                          method=method, mode=mode)
    y = T.mul(T.reshape(scanned, (length, e)), T.silu(gate))
    out = y @ params.w_out
    return T.add(seq, out) if residual else out


def chained_bidirectional(seq, fwd_params, bwd_params, residual=True,
                          forward_skip=False, method="parallel", mode="euler"):
    """Forward block, flip, backward block, flip back.

    The backward pass reads the forward pass's outputs, so information can
    travel from the last input token to the first output token.
    """
    y_f = mamba_unidirectional(seq, fwd_params, method=method, mode=mode)
    y = T.flip(mamba_unidirectional(T.flip(y_f, 0), bwd_params,
                                    method=method, mode=mode), 0)
    if forward_skip:
        y = T.add(y, y_f)
    if residual:
        y = T.add(y, seq)
    return y


def parallel_bidirectional(seq, fwd_params, bwd_params, residual=True,
                           method="parallel", mode="euler"):
    """Average of a forward block and a flipped backward block on raw input."""
    y_f = mamba_unidirectional(seq, fwd_params, method=method, mode=mode)
    y_b = T.flip(mamba_unidirectional(T.flip(seq, 0), bwd_params,
                                      method=method, mode=mode), 0)
    y = T.add(y_f, y_b) * 0.5
    if residual:
        y = T.add(y, seq)
    return y


class HexaOrientationBlock:
    """Serialize along each configured axis, run one bidirectional block per
    axis, merge back so output row i describes input point i.

    With axes=() the features are processed as a single sequence in input
    order (still with a leading prompt token); this is the no-serialization
    ablation level and is not point-order invariant.
    """

    def __init__(self, store, name, config, encoder=None, gamma_activation="silu"):
        self.config = config
        d = config.d
        if config.posemb:
            self.encoder = encoder or PositionEncoder(store, f"{name}.rho", d)
        else:
            self.encoder = None
        keys = config.axes if config.axes else ("I",)
        self.keys = keys
        self.prompts = {}
        self.prompt_positions = {}
        self.fwd = {}
        self.bwd = {}
        for a in keys:
            if config.prompt:
                self.prompts[a] = store.uniform(f"{name}.prompt.{a}", (d,), 0.02)
                self.prompt_positions[a] = store.uniform(
                    f"{name}.prompt_pos.{a}", (d,), 0.02)
            self.fwd[a] = make_mamba_params(store, f"{name}.{a}.fwd", d, config.n,
                                            config.g, config.expansion)
            self.bwd[a] = make_mamba_params(store, f"{name}.{a}.bwd", d, config.n,
                                            config.g, config.expansion)
        self.gamma = Linear(store, f"{name}.gamma", len(keys) * d, d,
                            activation=gamma_activation)

    def __call__(self, cloud, features):
        cfg = self.config
        if cfg.axes:
            s = expand(cloud, features, cfg.axes, self.prompts, self.prompt_positions)
            sequences = {a: s.sequence(a, self.encoder, prompt=cfg.prompt)
                         for a in cfg.axes}
            inv_perms = s.inv_perms
        else:
            coords = np.asarray(getattr(cloud, "coords", cloud), dtype=np.float64)
            if cfg.prompt:
                seq = attach_prompt_and_positions(
                    features, self.prompts["I"], self.prompt_positions["I"],
                    self.encoder, coords,
                )
            elif self.encoder is not None:
                seq = T.add(features, self.encoder(coords))
            else:
                seq = features
            sequences = {"I": seq}
            inv_perms = {"I": np.arange(features.shape[0], dtype=np.int64)}
        processed = {}
        for a, seq in sequences.items():
            if cfg.structure == "chained":
                processed[a] = chained_bidirectional(
                    seq, self.fwd[a], self.bwd[a], residual=cfg.residual,
                    forward_skip=cfg.forward_skip, method=cfg.method, mode=cfg.mode,
                )
            else:
                processed[a] = parallel_bidirectional(
                    seq, self.fwd[a], self.bwd[a], residual=cfg.residual,
                    method=cfg.method, mode=cfg.mode,
                )
        if cfg.axes:
            return merge(processed, inv_perms, self.gamma, prompt=cfg.prompt)
        out = processed["I"]
        if cfg.prompt:
            out = T.slice_axis(out, 0, 1, out.shape[0])
        return self.gamma(out)
