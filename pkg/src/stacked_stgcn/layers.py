"""Adjacency normalization and the generalized spatio-temporal GCN layer.

The layer factors into a spatial graph convolution inside each timestep
(one weight matrix per feature cluster, so clusters may carry features of
different lengths) followed by a temporal graph convolution across
timesteps, with ReLU applied only after the temporal step. The degenerate
form with fixed grid-like temporal connections collapses both weight
matrices into a single spatial convolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError, DimensionError, ValidationError
from .graph import StgSequence, flat_index
from .tensor import DTYPE, Tensor


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Self-loop augmented symmetric normalization D^-1/2 (I+A) D^-1/2.

    Isolated nodes get degree 1 from the self loop, so no division by zero.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("adjacency must be square")
    if np.any(a < 0):
        raise ValidationError("adjacency entries must be nonnegative")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency must be symmetric")
    a_hat = a.astype(np.float64) + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return (d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]).astype(DTYPE)


@dataclass
class StgcnLayerParams:
    """Weights of one STGCN layer.

    ``w_s`` maps cluster id to that cluster's spatial weight matrix
    (d_cluster x d_model); ``cluster_rows`` maps cluster id to the flat
    node-time rows it owns. ``w_t`` is the temporal weight matrix
    (d_model x d_out). ``bias`` is optional and off by default.
    """

    w_s: Dict[int, Tensor]
    w_t: Tensor
    cluster_rows: Dict[int, np.ndarray]
    bias: Optional[Tensor] = None


def cluster_row_index(seq: StgSequence) -> Dict[int, np.ndarray]:
    """Flat node-time row indices per cluster, for a given sequence."""
    N, T = seq.num_tracks, seq.num_steps
    rows: Dict[int, List[int]] = {}
    for n, tr in enumerate(seq.tracks):
        rows.setdefault(tr.cluster_id, []).extend(
            flat_index(n, t, N) for t in range(T)
        )
    return {c: np.asarray(v, dtype=np.intp) for c, v in rows.items()}


def assemble_rows(pieces: Sequence[Tuple[np.ndarray, Tensor]], total_rows: int) -> Tensor:
    """Scatter row blocks back into flat node-time order.

    ``pieces`` pairs each block of rows with the flat indices those rows
    belong to; together the indices must cover 0..total_rows-1 exactly once.
    """
    if len(pieces) == 1 and np.array_equal(pieces[0][0], np.arange(total_rows)):
        return pieces[0][1]
    stacked = tn.concat([p[1] for p in pieces], axis=0)
    order = np.concatenate([p[0] for p in pieces])
    if sorted(order.tolist()) != list(range(total_rows)):
        raise DimensionError("row pieces must partition the node-time index set")
    inverse = np.empty(total_rows, dtype=np.intp)
    inverse[order] = np.arange(total_rows)
    return tn.gather_rows(stacked, inverse)


def spatial_project(
    inputs: Sequence[Tuple[np.ndarray, Tensor, Tensor]], total_rows: int
) -> Tensor:
    """Per-cluster projection H W_s, reassembled into flat node-time order.

    Each entry is (flat row indices, feature rows, weight matrix); clusters
    may have different input widths but share the output width.
    """
    pieces = [(idx, tn.matmul(rows, w)) for idx, rows, w in inputs]
    return assemble_rows(pieces, total_rows)


def _project_uniform(h: Tensor, params: StgcnLayerParams) -> Tensor:
    total = h.shape[0]
    if len(params.w_s) == 1:
        (w,) = params.w_s.values()
        return tn.matmul(h, w)
    inputs = [
        (idx, tn.gather_rows(h, idx), params.w_s[c])
        for c, idx in params.cluster_rows.items()
    ]
    return spatial_project(inputs, total)


def stgcn_layer(h: Tensor, ns: Tensor, nt: Tensor, params: StgcnLayerParams) -> Tensor:
    """Generalized STGCN: temporal GCN over the spatial GCN's output.

    ``ns`` and ``nt`` are the normalized spatial and temporal adjacency
    (both N_t x N_t, spatial block-diagonal over time). Activation is ReLU
    after the temporal step only.
    """
    if h.shape[0] != nt.shape[0] or h.shape[0] != ns.shape[0]:
        raise DimensionError(
            f"row count {h.shape[0]} does not match adjacency {nt.shape[0]}"
        )
    h_s = tn.matmul(ns, _project_uniform(h, params))
    out = tn.matmul(nt, tn.matmul(h_s, params.w_t))
    if params.bias is not None:
        out = tn.add(out, params.bias)
    return tn.relu(out)


def stgcn_layer_grid(h: Tensor, ns: Tensor, params: StgcnLayerParams) -> Tensor:
    """Degenerate form with fixed grid temporal connections: no temporal mixing."""
    if h.shape[0] != ns.shape[0]:
        raise DimensionError(
            f"row count {h.shape[0]} does not match adjacency {ns.shape[0]}"
        )
    h_s = tn.matmul(ns, _project_uniform(h, params))
    out = tn.matmul(h_s, params.w_t)
    if params.bias is not None:
        out = tn.add(out, params.bias)
    return tn.relu(out)


def harmonize_projection(seq: StgSequence, kernels: Dict[str, Tensor]) -> Tensor:
    """Map every node's features to a common width via per-type projections.

    Each node type owns one 1x1 convolution kernel (a plain matmul on the
    feature vector). Absent nodes keep zero rows.
    """
    N, T = seq.num_tracks, seq.num_steps
    by_type: Dict[str, List[int]] = {}
    for n, tr in enumerate(seq.tracks):
        by_type.setdefault(tr.node_type, []).append(n)
    pieces = []
    for node_type, track_ids in by_type.items():
        if node_type not in kernels:
            raise ConfigurationError(f"no projection kernel for node type {node_type!r}")
        kernel = kernels[node_type]
        feats = np.concatenate([seq.tracks[n].features for n in track_ids], axis=0)
        if feats.shape[1] != kernel.shape[0]:
            raise ConfigurationError(
                f"kernel for {node_type!r} expects width {kernel.shape[0]}, "
                f"got {feats.shape[1]}"
            )
        idx = np.asarray(
            [flat_index(n, t, N) for n in track_ids for t in range(T)], dtype=np.intp
        )
        pieces.append((idx, tn.matmul(Tensor(feats), kernel)))
    return assemble_rows(pieces, N * T)


def centering_matrix(presence: np.ndarray, num_tracks: int) -> np.ndarray:
    """Linear map that subtracts the per-timestep mean over present nodes.

    ``presence`` is the flat (N_t,) mask in timestep-major order. Absent
    rows map to zero.
    """
    nt = presence.shape[0]
    T = nt // num_tracks
    mat = np.zeros((nt, nt), dtype=DTYPE)
    for t in range(T):
        block = slice(t * num_tracks, (t + 1) * num_tracks)
        idx = np.flatnonzero(presence[block]) + t * num_tracks
        if idx.size == 0:
            continue
        mat[np.ix_(idx, idx)] = -1.0 / idx.size
        mat[idx, idx] += 1.0
    return mat


def subtract_mean(h: Tensor, presence: np.ndarray, num_tracks: int) -> Tensor:
    """Per timestep and channel, subtract the mean over present nodes."""
    return tn.matmul(Tensor(centering_matrix(presence, num_tracks)), h)


def flat_presence(seq: StgSequence) -> np.ndarray:
    """Presence mask flattened in timestep-major node-time order."""
    N, T = seq.num_tracks, seq.num_steps
    mask = np.zeros(N * T, dtype=bool)
    for n, tr in enumerate(seq.tracks):
        for t in range(T):
            mask[flat_index(n, t, N)] = tr.presence[t]
    return mask


def pooling_matrix(presence: np.ndarray, num_tracks: int) -> np.ndarray:
    """(T x N_t) mean-pool over present nodes per timestep; zero when none."""
    nt = presence.shape[0]
    T = nt // num_tracks
    mat = np.zeros((T, nt), dtype=DTYPE)
    for t in range(T):
        idx = np.flatnonzero(presence[t * num_tracks : (t + 1) * num_tracks])
        if idx.size == 0:
            continue
        mat[t, idx + t * num_tracks] = 1.0 / idx.size
    return mat
