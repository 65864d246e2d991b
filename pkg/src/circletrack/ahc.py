"""Agglomerative hierarchical clustering of speaker-pure segments.

Cluster affinity interpolates an embedding cosine with one location term:
the negative symmetric KL divergence between SSL centroids, or the
per-observation log-likelihood ratio of tracking two clusters as one
moving speaker versus two.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .meeting import Segment
from .ssl import FLOOR_EPS, BinLayout
from .tracker import EventStream, KalmanParams, stream_log_likelihoods

log = logging.getLogger(__name__)

LOCATION_KINDS = ("none", "kl", "track")


@dataclass(frozen=True)
class AffinityConfig:
    weight_speaker: float = 1.0
    weight_location: float = 0.0
    location_kind: str = "none"
    stop_threshold: float = 0.0
    params: KalmanParams = KalmanParams()
    feature: str = "ssl"  # observation feature for tracking: "ssl" | "doa"

    def __post_init__(self):
        if self.location_kind not in LOCATION_KINDS:
            raise ValueError(f"location_kind must be one of {LOCATION_KINDS}")
        if self.weight_speaker < 0 or self.weight_location < 0:
            raise ValueError("weights must be nonnegative")
        if self.weight_speaker + self.weight_location <= 0:
            raise ValueError("at least one weight must be positive")
        if self.feature not in ("ssl", "doa"):
            raise ValueError("feature must be 'ssl' or 'doa'")

    @property
    def uses_location(self) -> bool:
        return self.location_kind != "none" and self.weight_location > 0


@dataclass
class Cluster:
    id: str
    members: list
    embedding_sum: np.ndarray
    ssl_sum: Optional[np.ndarray]
    ssl_count: int
    stream: EventStream
    t_start: int
    t_end: int
    log_likelihood: Optional[float] = None

    @property
    def embedding_centroid(self) -> np.ndarray:
        return self.embedding_sum / np.linalg.norm(self.embedding_sum)

    @property
    def ssl_centroid(self) -> Optional[np.ndarray]:
        if self.ssl_sum is None or self.ssl_count == 0:
            return None
        s = np.maximum(self.ssl_sum / self.ssl_count, FLOOR_EPS)
        return s / s.sum()

    @property
    def observed_frame_count(self) -> int:
        return len(self.stream)

    @classmethod
    def from_segment(cls, seg: Segment, layout: BinLayout, feature: str = "ssl") -> "Cluster":
        ssl = seg.ssl_frames()
        return cls(
            id=seg.id,
            members=[seg.id],
            embedding_sum=seg.embedding.copy(),
            ssl_sum=ssl.sum(axis=0) if len(ssl) else None,
            ssl_count=len(ssl),
            stream=seg.stream(layout, feature),
            t_start=seg.start_frame,
            t_end=seg.end_frame,
        )

    @classmethod
    def merged(cls, a: "Cluster", b: "Cluster") -> "Cluster":
        if a.ssl_sum is None:
            ssl_sum = None if b.ssl_sum is None else b.ssl_sum.copy()
        else:
            ssl_sum = a.ssl_sum + (0.0 if b.ssl_sum is None else b.ssl_sum)
        return cls(
            id=a.id,
            members=a.members + b.members,
            embedding_sum=a.embedding_sum + b.embedding_sum,
            ssl_sum=ssl_sum,
            ssl_count=a.ssl_count + b.ssl_count,
            stream=EventStream.merge(a.stream, b.stream),
            t_start=min(a.t_start, b.t_start),
            t_end=max(a.t_end, b.t_end),
        )


class LocationUnavailable(ValueError):
    """A cluster has no SSL frames, so the KL affinity is undefined."""


def speaker_affinity(a: Cluster, b: Cluster) -> float:
    return float(a.embedding_centroid @ b.embedding_centroid)


def _sym_kl(p: np.ndarray, q: np.ndarray) -> float:
    lp, lq = np.log(p), np.log(q)
    return float(0.5 * ((p * (lp - lq)).sum() + (q * (lq - lp)).sum()))


def kl_affinity(a: Cluster, b: Cluster) -> float:
    """Negative symmetric KL divergence between SSL centroids (<= 0)."""
    sa, sb = a.ssl_centroid, b.ssl_centroid
    if sa is None or sb is None:
        raise LocationUnavailable(f"cluster {a.id if sa is None else b.id} has no SSL frames")
    return -_sym_kl(sa, sb)


def _cluster_ll(c: Cluster, params: KalmanParams) -> float:
    if c.log_likelihood is None:
        c.log_likelihood = float(stream_log_likelihoods([c.stream], params)[0])
    return c.log_likelihood


def track_affinity(a: Cluster, b: Cluster, params: KalmanParams) -> float:
    """Per-observation log-likelihood ratio of one shared track vs two."""
    na, nb = a.observed_frame_count, b.observed_frame_count
    if na == 0 or nb == 0:
        return 0.0
    merged = float(stream_log_likelihoods([EventStream.merge(a.stream, b.stream)], params)[0])
    return (merged - _cluster_ll(a, params) - _cluster_ll(b, params)) / (na + nb)


def combined_affinity(a: Cluster, b: Cluster, config: AffinityConfig) -> float:
    value = config.weight_speaker * speaker_affinity(a, b)
    if config.uses_location:
        if config.location_kind == "kl":
            value += config.weight_location * kl_affinity(a, b)
        else:
            value += config.weight_location * track_affinity(a, b, config.params)
    return value


def _track_row(c: Cluster, others: Sequence[Cluster], params: KalmanParams) -> np.ndarray:
    """track_affinity(c, o) for every o, with the merged streams batched."""
    out = np.zeros(len(others))
    idx = [k for k, o in enumerate(others) if o.observed_frame_count and c.observed_frame_count]
    if not idx:
        return out
    merged = stream_log_likelihoods([EventStream.merge(c.stream, others[k].stream) for k in idx], params)
    base = _cluster_ll(c, params)
    for m, k in zip(merged, idx):
        o = others[k]
        out[k] = (m - base - _cluster_ll(o, params)) / (c.observed_frame_count + o.observed_frame_count)
    return out


def _kl_row(c: Cluster, others: Sequence[Cluster]) -> np.ndarray:
    # clusters without SSL frames contribute no location evidence
    out = np.zeros(len(others))
    sc = c.ssl_centroid
    if sc is None:
        return out
    for k, o in enumerate(others):
        so = o.ssl_centroid
        if so is not None:
            out[k] = -_sym_kl(sc, so)
    return out


def _affinity_row(c: Cluster, others: Sequence[Cluster], config: AffinityConfig) -> np.ndarray:
    if not others:
        return np.zeros(0)
    E = np.array([o.embedding_centroid for o in others])
    row = config.weight_speaker * (E @ c.embedding_centroid)
    if config.uses_location:
        if config.location_kind == "kl":
            row = row + config.weight_location * _kl_row(c, others)
        else:
            row = row + config.weight_location * _track_row(c, others, config.params)
    return row


def _initial_matrix(clusters: Sequence[Cluster], config: AffinityConfig) -> np.ndarray:
    n = len(clusters)
    E = np.array([c.embedding_centroid for c in clusters])
    A = config.weight_speaker * (E @ E.T)
    if config.uses_location:
        L = np.zeros((n, n))
        if config.location_kind == "kl":
            has = [i for i, c in enumerate(clusters) if c.ssl_centroid is not None]
            if has:
                P = np.array([clusters[i].ssl_centroid for i in has])
                logP = np.log(P)
                neg_ent = (P * logP).sum(axis=1)
                kl = neg_ent[:, None] - P @ logP.T  # KL(p_i || p_j)
                L[np.ix_(has, has)] = -0.5 * (kl + kl.T)
        else:
            iu, ju = np.triu_indices(n, 1)
            pairs = [(i, j) for i, j in zip(iu, ju) if clusters[i].observed_frame_count and clusters[j].observed_frame_count]
            if pairs:
                for c in clusters:
                    c.log_likelihood = None
                singles = stream_log_likelihoods([c.stream for c in clusters], config.params)
                for c, ll in zip(clusters, singles):
                    c.log_likelihood = float(ll)
                merged = stream_log_likelihoods(
                    [EventStream.merge(clusters[i].stream, clusters[j].stream) for i, j in pairs], config.params
                )
                for (i, j), m in zip(pairs, merged):
                    ci, cj = clusters[i], clusters[j]
                    v = (m - ci.log_likelihood - cj.log_likelihood) / (ci.observed_frame_count + cj.observed_frame_count)
                    L[i, j] = L[j, i] = v
        A = A + config.weight_location * L
    return A


@dataclass
class ClusteringResult:
    segment_ids: list
    labels: dict  # segment id -> contiguous integer label
    merges: list  # (step, id_a, id_b, affinity)
    n_clusters: int
    _start_frames: dict = field(default_factory=dict, repr=False)

    def labels_at(self, threshold: float) -> dict:
        """Labels had clustering stopped at ``threshold``; valid for any
        threshold not below the one this result was produced with."""
        parent = {sid: sid for sid in self.segment_ids}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for _step, a, b, aff in self.merges:
            if aff < threshold:
                break
            parent[find(b)] = find(a)
        groups = {}
        for sid in self.segment_ids:
            groups.setdefault(find(sid), []).append(sid)
        return _label_groups(list(groups.values()), self._start_frames, self.segment_ids)


def _label_groups(groups, start_frames, order) -> dict:
    pos = {sid: k for k, sid in enumerate(order)}
    keyed = sorted(groups, key=lambda g: min((start_frames[s], pos[s]) for s in g))
    return {sid: lab for lab, g in enumerate(keyed) for sid in g}


def cluster(segments: Sequence[Segment], config: AffinityConfig, layout: Optional[BinLayout] = None) -> ClusteringResult:
    """Greedy AHC: merge the highest-affinity pair until the best remaining
    affinity drops below config.stop_threshold or one cluster is left.

    Slots are assigned in segment-id order and a merged cluster keeps the
    lower slot, so argmax ties resolve to the lexicographically smallest
    pair of cluster ids (a cluster's id being its smallest member id).
    """
    if not segments:
        raise ValueError("no segments to cluster")
    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        raise ValueError("segment ids must be unique")
    layout = layout or _infer_layout(segments)
    by_id = sorted(segments, key=lambda s: s.id)
    clusters = [Cluster.from_segment(s, layout, config.feature) for s in by_id]
    n = len(clusters)
    A = _initial_matrix(clusters, config)
    A[np.tril_indices(n)] = -np.inf
    active = np.ones(n, dtype=bool)
    merges = []
    step = 0
    while active.sum() > 1:
        flat = int(np.argmax(A))
        i, j = divmod(flat, n)
        best = A[i, j]
        if not best >= config.stop_threshold:
            break
        step += 1
        merges.append((step, clusters[i].id, clusters[j].id, float(best)))
        clusters[i] = Cluster.merged(clusters[i], clusters[j])
        if config.uses_location and config.location_kind == "track":
            _cluster_ll(clusters[i], config.params)
        active[j] = False
        A[j, :] = -np.inf
        A[:, j] = -np.inf
        others = [k for k in range(n) if active[k] and k != i]
        row = _affinity_row(clusters[i], [clusters[k] for k in others], config)
        for k, v in zip(others, row):
            if k < i:
                A[k, i] = v
            else:
                A[i, k] = v
        log.debug("merge %d: %s + %s (%.4f)", step, merges[-1][1], merges[-1][2], best)

    groups = [clusters[k].members for k in range(n) if active[k]]
    starts = {s.id: s.start_frame for s in segments}
    order = [s.id for s in segments]
    labels = _label_groups(groups, starts, order)
    return ClusteringResult(order, labels, merges, len(groups), starts)


def _infer_layout(segments) -> BinLayout:
    for s in segments:
        for f in s.frames:
            if f.ssl is not None:
                return BinLayout(len(f.ssl))
    return BinLayout(360)
