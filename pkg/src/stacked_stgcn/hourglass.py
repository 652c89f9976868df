"""Encoder-decoder hourglass over STGCN layers, and stacking of blocks.

Each encoder level runs an STGCN layer and then a strided temporal
convolution; adjacency matrices are subsampled per level to match. The
decoder mirrors with transposed convolutions, adding same-level encoder
outputs when skip connections are on. Temporal extents that do not divide
by the stride are zero-padded before the strided convolution and cropped
after upsampling, so a block always returns the temporal extent it was fed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tn
from .errors import DimensionError
from .graph import AdjacencyPair
from .layers import StgcnLayerParams, assemble_rows, normalize_adjacency, stgcn_layer
from .tensor import Tensor


@dataclass(frozen=True)
class HourglassConfig:
    levels: int = 1
    stride: int = 2
    stack_depth: int = 1
    skip: bool = True
    decoder_stgcn: bool = False


@dataclass(frozen=True)
class LevelAdjacency:
    """Normalized adjacency for one resolution level."""

    ns: Tensor
    nt: Tensor
    num_steps: int
    num_tracks: int


def subsample_adjacency(adj: AdjacencyPair, stride: int) -> AdjacencyPair:
    """Keep every stride-th timestep block of both adjacency matrices.

    Surviving timesteps are 0, s, 2s, ...; surviving pairs stay connected
    iff they were connected in the input, so temporal edges must have
    spanned the gap for coarse-level connectivity to exist.
    """
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    if stride == 1:
        return adj
    N, T = adj.num_tracks, adj.num_steps
    keep_t = np.arange(0, T, stride)
    rows = (keep_t[:, None] * N + np.arange(N)[None, :]).reshape(-1)
    sel = np.ix_(rows, rows)
    return AdjacencyPair(
        a_s=adj.a_s[sel].copy(),
        a_t=adj.a_t[sel].copy(),
        num_tracks=N,
        num_steps=len(keep_t),
    )


def build_level_adjacency(
    adj: AdjacencyPair, levels: int, stride: int
) -> List[LevelAdjacency]:
    """Normalized adjacency per level, level 0 being the input resolution."""
    out = []
    cur = adj
    for _ in range(levels + 1):
        out.append(
            LevelAdjacency(
                ns=Tensor(normalize_adjacency(cur.a_s)),
                nt=Tensor(normalize_adjacency(cur.a_t)),
                num_steps=cur.num_steps,
                num_tracks=cur.num_tracks,
            )
        )
        cur = subsample_adjacency(cur, stride)
    return out


def _node_rows(n: int, num_tracks: int, num_steps: int) -> np.ndarray:
    return np.arange(num_steps) * num_tracks + n


def temporal_conv_flat(
    h: Tensor, kernel: Tensor, stride: int, num_tracks: int, num_steps: int
) -> Tensor:
    """Strided valid convolution along time for every node of a flat layout.

    Input is zero-padded at the end to a multiple of the stride so the
    output has ceil(T/stride) steps, matching adjacency subsampling.
    """
    k = kernel.shape[0]
    t_pad = -(-num_steps // stride) * stride
    d = h.shape[1]
    t_out = -(-num_steps // stride)
    pieces = []
    for n in range(num_tracks):
        x = tn.gather_rows(h, _node_rows(n, num_tracks, num_steps))
        if t_pad > num_steps:
            x = tn.concat([x, Tensor(np.zeros((t_pad - num_steps, d)))], axis=0)
        y = tn.conv1d_temporal(x, kernel, stride)
        pieces.append((_node_rows(n, num_tracks, t_out), y))
    return assemble_rows(pieces, num_tracks * t_out)


def temporal_deconv_flat(
    h: Tensor,
    kernel: Tensor,
    stride: int,
    num_tracks: int,
    num_steps: int,
    target_steps: int,
) -> Tensor:
    """Transposed convolution along time per node, cropped to target_steps."""
    pieces = []
    for n in range(num_tracks):
        x = tn.gather_rows(h, _node_rows(n, num_tracks, num_steps))
        y = tn.deconv1d_temporal(x, kernel, stride)
        if y.shape[0] < target_steps:
            raise DimensionError(
                f"deconv produced {y.shape[0]} steps, need {target_steps}"
            )
        if y.shape[0] > target_steps:
            y = tn.slice_axis(y, 0, 0, target_steps)
        pieces.append((_node_rows(n, num_tracks, target_steps), y))
    return assemble_rows(pieces, num_tracks * target_steps)


@dataclass
class EncoderLevelParams:
    stgcn: StgcnLayerParams
    conv_kernel: Tensor


@dataclass
class DecoderLevelParams:
    deconv_kernel: Tensor
    stgcn: Optional[StgcnLayerParams] = None


@dataclass
class HourglassBlockParams:
    encoder: List[EncoderLevelParams]
    bottleneck: StgcnLayerParams
    decoder: List[DecoderLevelParams]  # index l mirrors encoder level l


def hourglass_forward(
    h: Tensor,
    levels: Sequence[LevelAdjacency],
    params: HourglassBlockParams,
    stride: int,
    skip: bool = True,
    first_layer=None,
) -> Tensor:
    """One hourglass block; output temporal extent equals the input extent.

    ``first_layer``, when given, replaces the first STGCN layer of the block
    (used for the heterogeneous input layer); it is called with the level-0
    adjacency in place of the stock layer.
    """
    depth = len(params.encoder)
    if len(levels) < depth + 1:
        raise DimensionError("not enough adjacency levels for this block")
    num_tracks = levels[0].num_tracks

    skips: List[Tensor] = []
    x = h
    for l in range(depth):
        lv = levels[l]
        if l == 0 and first_layer is not None:
            e = first_layer(x, lv.ns, lv.nt)
        else:
            e = stgcn_layer(x, lv.ns, lv.nt, params.encoder[l].stgcn)
        skips.append(e)
        x = temporal_conv_flat(
            e, params.encoder[l].conv_kernel, stride, num_tracks, lv.num_steps
        )

    lv = levels[depth]
    if depth == 0 and first_layer is not None:
        x = first_layer(x, lv.ns, lv.nt)
    else:
        x = stgcn_layer(x, lv.ns, lv.nt, params.bottleneck)

    for l in reversed(range(depth)):
        x = temporal_deconv_flat(
            x,
            params.decoder[l].deconv_kernel,
            stride,
            num_tracks,
            levels[l + 1].num_steps,
            levels[l].num_steps,
        )
        if skip:
            x = tn.add(x, skips[l])
        if params.decoder[l].stgcn is not None:
            x = stgcn_layer(x, levels[l].ns, levels[l].nt, params.decoder[l].stgcn)
    return x


def stack_forward(
    h: Tensor,
    levels: Sequence[LevelAdjacency],
    blocks: Sequence[HourglassBlockParams],
    stride: int,
    skip: bool = True,
    first_layer=None,
) -> Tensor:
    """Sequential composition of hourglass blocks at shared adjacency levels."""
    x = h
    for b, block in enumerate(blocks):
        x = hourglass_forward(
            x, levels, block, stride, skip=skip,
            first_layer=first_layer if b == 0 else None,
        )
    return x


def head_forward(
    h: Tensor, pool: np.ndarray, w: Tensor, b: Optional[Tensor] = None
) -> Tensor:
    """Spatial mean-pool per timestep, then an affine map to class scores."""
    scores = tn.matmul(tn.matmul(Tensor(pool), h), w)
    if b is not None:
        scores = tn.add(scores, b)
    return scores
