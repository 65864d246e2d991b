"""Frame-level diarization scoring under an optimal cluster-to-speaker map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .meeting import GroundTruth


def hungarian_assign(cost) -> np.ndarray:
    """Minimum-cost matching of rows (clusters) to columns (speakers).

    Returns, per row, the matched column or -1 when the row is unmatched
    (more rows than columns).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    out = np.full(cost.shape[0], -1, dtype=int)
    out[rows] = cols
    return out


@dataclass
class EvalReport:
    frame_error_rate: float
    cluster_count_delta: int
    category_error: dict  # "stationary" / "moving" -> error over that speaker class's frames
    assignment: dict  # cluster label -> speaker id (or None)
    n_frames: int
    category_frames: dict = field(default_factory=dict)

    def as_rows(self):
        rows = [("average", self.frame_error_rate, self.n_frames)]
        for cat in ("stationary", "moving"):
            if cat in self.category_error:
                rows.append((cat, self.category_error[cat], self.category_frames[cat]))
        return rows


def score(clustering: dict, truth: GroundTruth) -> EvalReport:
    """Score a segment -> label map against ground truth.

    Every observed (frame, channel) pair of a segment counts once.
    """
    missing = set(truth.segment_speaker) - set(clustering)
    extra = set(clustering) - set(truth.segment_speaker)
    if missing or extra:
        raise ValueError(
            f"clustering/truth segment mismatch: {len(missing)} missing, {len(extra)} unknown"
        )
    labels = sorted(set(clustering.values()), key=str)
    speakers = sorted(truth.speaker_moving)
    li = {lab: k for k, lab in enumerate(labels)}
    si = {s: k for k, s in enumerate(speakers)}
    M = np.zeros((len(labels), len(speakers)))
    for sid, spk in truth.segment_speaker.items():
        M[li[clustering[sid]], si[spk]] += truth.segment_info[sid][3]

    assign = hungarian_assign(-M)
    total = M.sum()
    correct = sum(M[r, c] for r, c in enumerate(assign) if c >= 0)
    err = float((total - correct) / total) if total > 0 else 0.0

    cat_err, cat_frames = {}, {}
    for cat, flag in (("stationary", False), ("moving", True)):
        cols = [si[s] for s in speakers if truth.speaker_moving[s] == flag]
        if not cols:
            continue
        n = M[:, cols].sum()
        ok = sum(M[r, c] for r, c in enumerate(assign) if c in cols)
        cat_frames[cat] = int(n)
        cat_err[cat] = float((n - ok) / n) if n > 0 else 0.0

    mapping = {lab: (speakers[assign[k]] if assign[k] >= 0 else None) for lab, k in li.items()}
    active_speakers = int(np.count_nonzero(M.sum(axis=0)))
    return EvalReport(err, len(labels) - active_speakers, cat_err, mapping, int(total), cat_frames)
