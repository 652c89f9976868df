"""Synthetic graph-sequence generation for desk-scale verification.

Each generated sequence carries class-conditional Gaussian node features:
every (class, track) pair has a fixed mean vector shared across the dataset,
and each timestep's features are that mean plus isotropic noise. Labels
change at random segment boundaries, so the per-timestep label is recoverable
from the features by a nearest-mean classifier, which serves as the Bayes
oracle in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .graph import FeatureCluster, NodeTrack, StgSequence
from .tensor import DTYPE

_CLUSTER_TYPES = ("actor", "object", "scene", "action", "other")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 5
    cluster_feature_lens: Tuple[int, ...] = (8, 12)
    tracks_per_cluster: int = 1
    t_range: Tuple[int, int] = (30, 80)
    segment_len_range: Tuple[int, int] = (6, 15)
    noise: float = 0.3
    mean_scale: float = 1.0
    spatial_eps: float = 0.1
    temporal_span: int = 3
    temporal_weight: float = 1.0
    mode: str = "single"

    @property
    def num_tracks(self) -> int:
        return len(self.cluster_feature_lens) * self.tracks_per_cluster

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "cluster_feature_lens": list(self.cluster_feature_lens),
            "tracks_per_cluster": self.tracks_per_cluster,
            "t_range": list(self.t_range),
            "segment_len_range": list(self.segment_len_range),
            "noise": self.noise,
            "mean_scale": self.mean_scale,
            "spatial_eps": self.spatial_eps,
            "temporal_span": self.temporal_span,
            "temporal_weight": self.temporal_weight,
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthConfig":
        return SynthConfig(
            num_classes=d.get("num_classes", 5),
            cluster_feature_lens=tuple(d.get("cluster_feature_lens", (8, 12))),
            tracks_per_cluster=d.get("tracks_per_cluster", 1),
            t_range=tuple(d.get("t_range", (30, 80))),
            segment_len_range=tuple(d.get("segment_len_range", (6, 15))),
            noise=d.get("noise", 0.3),
            mean_scale=d.get("mean_scale", 1.0),
            spatial_eps=d.get("spatial_eps", 0.1),
            temporal_span=d.get("temporal_span", 3),
            temporal_weight=d.get("temporal_weight", 1.0),
            mode=d.get("mode", "single"),
        )


def _validate_config(cfg: SynthConfig) -> None:
    if cfg.num_classes < 2:
        raise ValidationError("need at least 2 classes")
    if len(cfg.cluster_feature_lens) < 1:
        raise ValidationError("need at least 1 feature cluster")
    if cfg.tracks_per_cluster < 1:
        raise ValidationError("need at least 1 track per cluster")
    if cfg.t_range[0] < 1 or cfg.t_range[1] < cfg.t_range[0]:
        raise ValidationError("bad t_range")
    if cfg.segment_len_range[0] < 1 or cfg.segment_len_range[1] < cfg.segment_len_range[0]:
        raise ValidationError("bad segment_len_range")
    if cfg.noise < 0 or cfg.spatial_eps < 0 or cfg.temporal_span < 1:
        raise ValidationError("degenerate synthesis parameters")


def make_class_means(cfg: SynthConfig, rng: np.random.Generator) -> List[List[np.ndarray]]:
    """Per-class, per-track mean vectors; shared across a dataset."""
    _validate_config(cfg)
    means = []
    for _ in range(cfg.num_classes):
        row = []
        for ci, flen in enumerate(cfg.cluster_feature_lens):
            for _ in range(cfg.tracks_per_cluster):
                row.append(
                    (cfg.mean_scale * rng.standard_normal(flen)).astype(DTYPE)
                )
        means.append(row)
    return means


def _segment_labels(T: int, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(T, dtype=np.int64)
    t = 0
    prev = -1
    while t < T:
        length = int(rng.integers(cfg.segment_len_range[0], cfg.segment_len_range[1] + 1))
        cls = int(rng.integers(cfg.num_classes))
        while cls == prev and cfg.num_classes > 1:
            cls = int(rng.integers(cfg.num_classes))
        labels[t : t + length] = cls
        prev = cls
        t += length
    return labels


def synth_generate(
    cfg: SynthConfig,
    seed: int,
    means: Optional[List[List[np.ndarray]]] = None,
) -> Tuple[StgSequence, dict]:
    """Generate one labeled sequence; deterministic given seed and means.

    Returns the sequence and the generative parameters used (for oracle
    checks). When ``means`` is None, fresh means are drawn from the same rng.
    """
    _validate_config(cfg)
    rng = np.random.default_rng(seed)
    if means is None:
        means = make_class_means(cfg, rng)
    T = int(rng.integers(cfg.t_range[0], cfg.t_range[1] + 1))
    N = cfg.num_tracks
    C = cfg.num_classes

    if cfg.mode == "single":
        labels = _segment_labels(T, cfg, rng)
        active = np.zeros((T, C), dtype=bool)
        active[np.arange(T), labels] = True
    else:
        active = np.zeros((T, C), dtype=bool)
        for c in range(C):
            t = 0
            on = bool(rng.random() < 0.3)
            while t < T:
                length = int(
                    rng.integers(cfg.segment_len_range[0], cfg.segment_len_range[1] + 1)
                )
                active[t : t + length, c] = on
                on = not on
                t += length
        labels = active.astype(DTYPE)

    clusters = tuple(
        FeatureCluster(ci, flen) for ci, flen in enumerate(cfg.cluster_feature_lens)
    )
    tracks = []
    n = 0
    for ci, flen in enumerate(cfg.cluster_feature_lens):
        node_type = _CLUSTER_TYPES[ci % len(_CLUSTER_TYPES)]
        for k in range(cfg.tracks_per_cluster):
            base = np.zeros((T, flen), dtype=np.float64)
            for c in range(C):
                base[active[:, c]] += means[c][n]
            feats = base + cfg.noise * rng.standard_normal((T, flen))
            tracks.append(
                NodeTrack(
                    track_id=f"c{ci}n{k}",
                    node_type=node_type,
                    cluster_id=ci,
                    features=feats.astype(DTYPE),
                    presence=np.ones(T, dtype=bool),
                )
            )
            n += 1

    spatial = tuple(
        tuple(
            (i, j, cfg.spatial_eps)
            for i in range(N)
            for j in range(i + 1, N)
        )
        for _ in range(T)
    )
    temporal = tuple(
        (n, t, n, t + d, cfg.temporal_weight)
        for n in range(N)
        for t in range(T)
        for d in range(1, cfg.temporal_span + 1)
        if t + d < T
    )
    seq = StgSequence(
        num_steps=T,
        num_classes=C,
        mode=cfg.mode,
        clusters=clusters,
        tracks=tuple(tracks),
        spatial_edges=spatial,
        temporal_edges=temporal,
        labels=labels,
        label_mask=np.ones(T, dtype=bool),
    )
    oracle = {
        "config": cfg.to_dict(),
        "means": [[m.tolist() for m in row] for row in means],
    }
    return seq, oracle


def generate_dataset(
    cfg: SynthConfig, seed: int, count: int
) -> Tuple[List[StgSequence], dict]:
    """Generate ``count`` sequences sharing one set of class means."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(count + 1)
    means = make_class_means(cfg, np.random.default_rng(children[0]))
    seqs = []
    oracle = None
    for i in range(count):
        child_seed = int(children[i + 1].generate_state(1)[0])
        seq, oracle = synth_generate(cfg, child_seed, means=means)
        seqs.append(seq)
    return seqs, oracle


def bayes_predict(seq: StgSequence, means: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Nearest-mean classification per timestep using the true generative means."""
    T = seq.num_steps
    C = len(means)
    cost = np.zeros((T, C), dtype=np.float64)
    for n, tr in enumerate(seq.tracks):
        for c in range(C):
            diff = tr.features.astype(np.float64) - np.asarray(means[c][n], dtype=np.float64)
            cost[:, c] += np.where(tr.presence, (diff ** 2).sum(axis=1), 0.0)
    return cost.argmin(axis=1)


def sample_drop_schedule(
    seq: StgSequence,
    rate: float,
    rng: np.random.Generator,
    burst: int = 2,
) -> List[Tuple[int, int]]:
    """Random (track, timestep) drops covering ~``rate`` of all cells.

    Drops are sampled in short per-track bursts of ``burst`` consecutive
    timesteps, mimicking missed detections and occlusions that persist for a
    few frames.
    """
    if not 0 <= rate <= 1:
        raise ValidationError("drop rate must be in [0, 1]")
    N, T = seq.num_tracks, seq.num_steps
    target = int(round(rate * N * T))
    seen = set()
    schedule: List[Tuple[int, int]] = []
    while len(seen) < target:
        n = int(rng.integers(N))
        s = int(rng.integers(T))
        for t in range(s, min(s + burst, T)):
            if (n, t) not in seen:
                seen.add((n, t))
                schedule.append((n, t))
                if len(seen) >= target:
                    break
    return schedule
