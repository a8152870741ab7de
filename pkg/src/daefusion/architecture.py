"""Hierarchical encoder-decoder segmentation model.

The encoder embeds overlapping 7x7 patches at stride 4, runs
``blocks_per_stage`` dual attention blocks at each of three widths with a
patch-merge between stages, and hands the grid/16 bottleneck to a
mirrored decoder. Decoder stages above the lowest fuse the parallel
encoder output through skip cross attention before their blocks; a final
4x patch expand and a per-token linear produce per-pixel class logits.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .attention import SccaParams, init_scca_params, scca
from .blocks import (BlockParams, DualStrategy, LayerNormParams, TokenMap,
                     dual_block_variant, init_block_params,
                     init_layer_norm_params)
from .numerics import ShapeError, Tensor, rng, trunc_normal
from .numerics import ops


class ConfigError(ValueError):
    """A configuration value violates its contract."""


@dataclass
class ModelConfig:
    image_size: int = 32
    in_channels: int = 1
    num_classes: int = 2
    embed_dims: Tuple[int, int, int] = (32, 64, 128)
    blocks_per_stage: int = 2
    strategy: DualStrategy = DualStrategy.SEQUENTIAL
    skip_connections: int = 2
    expansion_ratio: int = 4
    scca_use_eq2_order: bool = False
    seed: int = 0

    def validate(self):
        problems = []
        if self.image_size < 16 or self.image_size % 16:
            problems.append(f"image_size must be a positive multiple of 16 "
                            f"(embed /4, two merges /2 each), got {self.image_size}")
        if self.in_channels < 1:
            problems.append(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        dims = tuple(self.embed_dims)
        if len(dims) != 3:
            problems.append(f"embed_dims needs 3 stages, got {dims}")
        else:
            d0 = dims[0]
            if d0 < 4 or d0 % 4:
                problems.append(f"embed_dims[0] must be a multiple of 4, got {d0}")
            if dims[1] != 2 * dims[0] or dims[2] != 2 * dims[1]:
                problems.append(f"embed_dims must double per stage, got {dims}")
        if self.blocks_per_stage < 1:
            problems.append("blocks_per_stage must be >= 1, "
                            f"got {self.blocks_per_stage}")
        if self.skip_connections not in (0, 1, 2):
            problems.append(f"skip_connections must be 0, 1 or 2, "
                            f"got {self.skip_connections}")
        if self.expansion_ratio < 1:
            problems.append(f"expansion_ratio must be >= 1, "
                            f"got {self.expansion_ratio}")
        try:
            DualStrategy(self.strategy)
        except ValueError:
            problems.append(f"unknown strategy {self.strategy!r}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


class ParamStore:
    """Ordered name -> Tensor mapping of every learnable tensor."""

    def __init__(self):
        self._params = {}

    def register(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name}")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name} must require grad")
        self._params[name] = tensor
        return tensor

    def register_group(self, prefix, group):
        for tname, t in group.tensors():
            self.register(f"{prefix}.{tname}", t)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def total_count(self):
        return sum(t.size for t in self._params.values())

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def breakdown(self):
        """Scalar counts grouped by the first dotted name component."""
        groups = {}
        for name, t in self._params.items():
            key = name.split(".", 1)[0]
            groups[key] = groups.get(key, 0) + t.size
        return groups


# ---------------------------------------------------------------------------
# patch-level resampling layers
# ---------------------------------------------------------------------------

EMBED_WINDOW, EMBED_STRIDE, EMBED_PAD = 7, 4, 3


@dataclass
class PatchEmbedParams:
    w: Tensor
    b: Tensor
    norm: LayerNormParams

    def tensors(self):
        return ([("w", self.w), ("b", self.b)]
                + [(f"norm.{n}", t) for n, t in self.norm.tensors()])


def init_patch_embed_params(gen, in_channels, d, std=0.02):
    width = EMBED_WINDOW * EMBED_WINDOW * in_channels
    return PatchEmbedParams(
        w=Tensor(trunc_normal(gen, (width, d), std), requires_grad=True),
        b=Tensor(np.zeros(d), requires_grad=True),
        norm=init_layer_norm_params(d),
    )


def patch_embed(image, params):
    """Overlapping 7x7/stride-4 linear embedding + layer norm.

    (H, W, C) -> TokenMap of H/4 * W/4 tokens.
    """
    h, w, _ = image.shape
    if h % EMBED_STRIDE or w % EMBED_STRIDE:
        raise ShapeError(f"image {h}x{w} not divisible by stride {EMBED_STRIDE}")
    cols = ops.unfold(image, EMBED_WINDOW, EMBED_STRIDE, EMBED_PAD)
    tokens = ops.linear(cols, params.w, params.b)
    tokens = ops.layer_norm(tokens, params.norm.gamma, params.norm.beta)
    return TokenMap(tokens, (h // EMBED_STRIDE, w // EMBED_STRIDE))


@dataclass
class PatchMergeParams:
    w: Tensor
    b: Tensor

    def tensors(self):
        return [("w", self.w), ("b", self.b)]


def init_patch_merge_params(gen, d, std=0.02):
    return PatchMergeParams(
        w=Tensor(trunc_normal(gen, (4 * d, 2 * d), std), requires_grad=True),
        b=Tensor(np.zeros(2 * d), requires_grad=True),
    )


def patch_merge(x, params):
    """2x2 neighborhoods concatenated to 4d, linearly reduced to 2d."""
    d = x.width
    if params.w.shape != (4 * d, 2 * d):
        raise ShapeError(f"merge weight {params.w.shape} for width {d}")
    gathered = ops.space_to_depth(x.tokens, x.grid)
    reduced = ops.linear(gathered, params.w, params.b)
    return TokenMap(reduced, (x.grid[0] // 2, x.grid[1] // 2))


@dataclass
class PatchExpandParams:
    w: Tensor
    b: Tensor

    def tensors(self):
        return [("w", self.w), ("b", self.b)]


def init_patch_expand_params(gen, d, factor, std=0.02):
    out = factor * factor * (d // factor)
    return PatchExpandParams(
        w=Tensor(trunc_normal(gen, (d, out), std), requires_grad=True),
        b=Tensor(np.zeros(out), requires_grad=True),
    )


def patch_expand(x, params, factor):
    """Project to factor^2 * (d/factor) channels and spread onto a finer grid.

    Grid multiplies by ``factor``; channel width becomes d / factor.
    """
    d = x.width
    if d % factor:
        raise ShapeError(f"width {d} not divisible by expand factor {factor}")
    out = factor * factor * (d // factor)
    if params.w.shape != (d, out):
        raise ShapeError(f"expand weight {params.w.shape} for width {d}, "
                         f"factor {factor}")
    projected = ops.linear(x.tokens, params.w, params.b)
    spread = ops.depth_to_space(projected, x.grid, factor)
    return TokenMap(spread, (x.grid[0] * factor, x.grid[1] * factor))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

@dataclass
class DecoderStageParams:
    blocks: List[BlockParams]
    scca: Optional[SccaParams] = None
    fuse_w: Optional[Tensor] = None
    fuse_b: Optional[Tensor] = None


@dataclass
class ModelParams:
    embed: PatchEmbedParams
    enc_stages: List[List[BlockParams]]
    merges: List[PatchMergeParams]
    dec_stages: List[DecoderStageParams]
    expands: List[PatchExpandParams]
    head_expand: PatchExpandParams
    head_w: Tensor
    head_b: Tensor
    field_order: List[str] = field(default_factory=list)


def build_params(config):
    """Seeded construction of every parameter, registered in a ParamStore.

    Each module group draws from its own named substream of the seed, so
    config toggles that add or remove a module (skip count, strategy)
    leave every other module's initial values untouched. Ablation cells
    then differ only in architecture, not in init luck.
    """
    config.validate()

    def gen_for(name):
        return rng(config.seed, key=name)

    dims = tuple(config.embed_dims)
    store = ParamStore()

    embed = init_patch_embed_params(gen_for("embed"), config.in_channels,
                                    dims[0])
    store.register_group("embed", embed)

    enc_stages, merges = [], []
    for si, d in enumerate(dims):
        if si > 0:
            merge = init_patch_merge_params(gen_for(f"merge{si - 1}"),
                                            dims[si - 1])
            store.register_group(f"merge{si - 1}", merge)
            merges.append(merge)
        stage = []
        for bi in range(config.blocks_per_stage):
            blk = init_block_params(gen_for(f"enc{si}.blk{bi}"), d,
                                    config.strategy, config.expansion_ratio)
            store.register_group(f"enc{si}.blk{bi}", blk)
            stage.append(blk)
        enc_stages.append(stage)

    dec_stages, expands = [], []
    for di in range(3):
        d = dims[2 - di]
        stage = DecoderStageParams(blocks=[])
        if di > 0:
            expand = init_patch_expand_params(gen_for(f"expand{di - 1}"),
                                              dims[3 - di], 2)
            store.register_group(f"expand{di - 1}", expand)
            expands.append(expand)
            # skip sites count from the top decoder stage downwards
            if di >= 3 - config.skip_connections:
                stage.scca = init_scca_params(gen_for(f"dec{di}.scca"), d, d)
                store.register_group(f"dec{di}.scca", stage.scca)
                fuse_gen = gen_for(f"dec{di}.fuse")
                stage.fuse_w = store.register(
                    f"dec{di}.fuse.w",
                    Tensor(trunc_normal(fuse_gen, (2 * d, d)),
                           requires_grad=True))
                stage.fuse_b = store.register(
                    f"dec{di}.fuse.b", Tensor(np.zeros(d), requires_grad=True))
        for bi in range(config.blocks_per_stage):
            blk = init_block_params(gen_for(f"dec{di}.blk{bi}"), d,
                                    config.strategy, config.expansion_ratio)
            store.register_group(f"dec{di}.blk{bi}", blk)
            stage.blocks.append(blk)
        dec_stages.append(stage)

    head_expand = init_patch_expand_params(gen_for("head.expand"), dims[0], 4)
    store.register_group("head.expand", head_expand)
    head_gen = gen_for("head")
    head_w = store.register(
        "head.w", Tensor(trunc_normal(head_gen,
                                      (dims[0] // 4, config.num_classes)),
                         requires_grad=True))
    head_b = store.register(
        "head.b", Tensor(np.zeros(config.num_classes), requires_grad=True))

    params = ModelParams(embed=embed, enc_stages=enc_stages, merges=merges,
                         dec_stages=dec_stages, expands=expands,
                         head_expand=head_expand, head_w=head_w, head_b=head_b)
    return store, params


def _expect_width(x, d, where):
    if x.width != d:
        raise ShapeError(f"{where}: width {x.width}, expected {d}")


def model_forward(image, config, params):
    """(H, W, C) image -> (H, W, num_classes) logits."""
    h, w, c = (image.shape if image.ndim == 3 else (0, 0, 0))
    if (h, w, c) != (config.image_size, config.image_size, config.in_channels):
        raise ShapeError(f"image shape {image.shape}, config wants "
                         f"({config.image_size}, {config.image_size}, "
                         f"{config.in_channels})")
    dims = tuple(config.embed_dims)

    x = patch_embed(image, params.embed)
    skips = []
    for si in range(3):
        if si > 0:
            x = patch_merge(x, params.merges[si - 1])
        _expect_width(x, dims[si], f"encoder stage {si}")
        for blk in params.enc_stages[si]:
            x = dual_block_variant(x, blk)
        if si < 2:
            skips.append(x)

    for di in range(3):
        stage = params.dec_stages[di]
        if di > 0:
            x = patch_expand(x, params.expands[di - 1], 2)
            _expect_width(x, dims[2 - di], f"decoder stage {di}")
            if stage.scca is not None:
                skip = skips[2 - di]
                if skip.grid != x.grid:
                    raise ShapeError(f"skip grid {skip.grid} != decoder grid "
                                     f"{x.grid} at stage {di}")
                fused = scca(x.tokens, skip.tokens, stage.scca,
                             config.scca_use_eq2_order)
                x = TokenMap(ops.linear(fused, stage.fuse_w, stage.fuse_b),
                             x.grid)
        for blk in stage.blocks:
            x = dual_block_variant(x, blk)

    x = patch_expand(x, params.head_expand, 4)
    logits = ops.linear(x.tokens, params.head_w, params.head_b)
    return ops.reshape(logits, (config.image_size, config.image_size,
                                config.num_classes))


class Model:
    """Config + parameters + forward, the unit the trainer and CLI use."""

    def __init__(self, config):
        self.config = config
        self.store, self.params = build_params(config)

    def forward(self, image):
        return model_forward(image, self.config, self.params)

    def load_state(self, state):
        """Copy checkpoint arrays into the parameters, validating shapes."""
        missing = [n for n in self.store.names() if n not in state]
        extra = [n for n in state if n not in self.store]
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing {missing[:3]}, "
                              f"unexpected {extra[:3]}")
        for name, tensor in self.store.items():
            arr = state[name]
            if tuple(arr.shape) != tensor.shape:
                raise ConfigError(f"checkpoint {name}: shape {arr.shape} != "
                                  f"{tensor.shape}")
            tensor.data[...] = arr


def param_count(config):
    """Exact number of learnable scalars for a config."""
    store, _ = build_params(config)
    return store.total_count()


# ---------------------------------------------------------------------------
# checkpoints: manifest + little-endian float64 blob, bit-exact round trip
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DFCHKPT1"


def save_checkpoint(path, store):
    manifest = []
    offset = 0
    for name, t in store.items():
        manifest.append({"name": name, "shape": list(t.shape),
                         "offset": offset})
        offset += t.size
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, t in store.items():
            fh.write(t.data.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """name -> float64 array, in manifest order."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(hlen).decode("utf-8"))
        blob = np.frombuffer(fh.read(), dtype="<f8")
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        state[entry["name"]] = blob[start:start + size].reshape(shape).copy()
    return state
