"""Segments, ground truth and their on-disk formats.

Segments file: JSON lines, one segment per line::

    {"id": ..., "channel": 0, "start_s": 1.2, "end_s": 3.6,
     "embedding": [...], "frames": [{"t_index": 3, "ssl": [...]},
                                     {"t_index": 4, "doa": 0.52},
                                     {"t_index": 5}]}

Frame indices are global, at FRAME_SEC resolution.  A frame without
``ssl``/``doa`` (or with ``null``) carries no observation.

Ground-truth file: one JSON object with the speakers (movement flag and
trajectory) and, per segment, its true speaker and observed frame count.

Diarization output: ``SPEAKER <meeting> <channel> <start_s> <dur_s> <label>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ssl import BinLayout, ssl_to_doa, validate_ssl
from .tracker import EventStream

FRAME_SEC = 0.4


@dataclass
class Frame:
    t_index: int
    doa: Optional[float] = None
    ssl: Optional[np.ndarray] = None

    @property
    def observed(self) -> bool:
        return self.doa is not None or self.ssl is not None


@dataclass
class Segment:
    id: str
    channel: int
    start_frame: int
    end_frame: int
    embedding: np.ndarray
    frames: list = field(default_factory=list)

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError(f"segment {self.id}: end_frame must exceed start_frame")
        self.embedding = np.asarray(self.embedding, dtype=float)
        norm = np.linalg.norm(self.embedding)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"segment {self.id}: embedding norm {norm:.6g} is not 1")

    @property
    def start_s(self) -> float:
        return self.start_frame * FRAME_SEC

    @property
    def end_s(self) -> float:
        return self.end_frame * FRAME_SEC

    @property
    def observed_frame_count(self) -> int:
        return sum(1 for f in self.frames if f.observed)

    def ssl_frames(self) -> np.ndarray:
        rows = [f.ssl for f in self.frames if f.ssl is not None]
        return np.array(rows) if rows else np.zeros((0, 0))

    def stream(self, layout: BinLayout, feature: str = "ssl") -> EventStream:
        """Measurements of this segment as a filter event stream.

        feature "ssl": SSL frames contribute their (mean, resultant); DOA
        frames count as resultant 1.  feature "doa": SSL frames are reduced
        to their mode.
        """
        from .ssl import ssl_resultant

        frames, angles, res = [], [], []
        for f in self.frames:
            if f.ssl is not None:
                if feature == "doa":
                    angle, r = float(ssl_to_doa(f.ssl, layout)), 1.0
                else:
                    r, angle = ssl_resultant(f.ssl, layout)
                    r, angle = float(r), float(angle)
            elif f.doa is not None:
                angle, r = float(f.doa), 1.0
            else:
                continue
            frames.append(f.t_index)
            angles.append(angle)
            res.append(r)
        return EventStream(np.array(frames, dtype=np.int64), np.array(angles), np.array(res))


def segment_to_json(seg: Segment, precision: int = 6) -> dict:
    frames = []
    for f in seg.frames:
        d = {"t_index": int(f.t_index)}
        if f.ssl is not None:
            d["ssl"] = [round(float(v), precision + 4) for v in f.ssl]
        elif f.doa is not None:
            d["doa"] = round(float(f.doa), precision + 4)
        frames.append(d)
    return {
        "id": seg.id,
        "channel": int(seg.channel),
        "start_s": round(seg.start_s, 3),
        "end_s": round(seg.end_s, 3),
        "embedding": [round(float(v), precision + 4) for v in seg.embedding],
        "frames": frames,
    }


def segment_from_json(d: dict, layout: Optional[BinLayout] = None) -> Segment:
    try:
        start = int(round(float(d["start_s"]) / FRAME_SEC))
        end = int(round(float(d["end_s"]) / FRAME_SEC))
        emb = np.asarray(d["embedding"], dtype=float)
        frames = []
        for fr in d.get("frames", []):
            ssl = fr.get("ssl")
            doa = fr.get("doa")
            if ssl is not None:
                ssl = np.asarray(ssl, dtype=float)
                if layout is not None:
                    ssl = validate_ssl(ssl, layout)
            frames.append(Frame(int(fr["t_index"]), None if doa is None else float(doa), ssl))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed segment record: {exc}") from exc
    norm = np.linalg.norm(emb)
    if norm == 0:
        raise ValueError(f"segment {d.get('id')}: zero embedding")
    # tolerate rounding in stored embeddings
    return Segment(str(d["id"]), int(d["channel"]), start, end, emb / norm, frames)


def write_segments(path, segments) -> None:
    with open(path, "w") as fh:
        for seg in segments:
            fh.write(json.dumps(segment_to_json(seg), separators=(",", ":")) + "\n")


def read_segments(path, layout: Optional[BinLayout] = None) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            out.append(segment_from_json(rec, layout))
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate segment ids")
    return out


@dataclass
class GroundTruth:
    meeting: str
    segment_speaker: dict  # segment id -> speaker id
    speaker_moving: dict  # speaker id -> bool
    trajectories: dict = field(default_factory=dict)  # speaker id -> array over frames
    segment_info: dict = field(default_factory=dict)  # segment id -> (channel, start_s, end_s, observed)

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_moving)

    @property
    def is_moving_meeting(self) -> bool:
        return any(self.speaker_moving.values())


def write_truth(path, truth: GroundTruth) -> None:
    doc = {
        "meeting": truth.meeting,
        "speakers": [
            {
                "id": spk,
                "moving": bool(truth.speaker_moving[spk]),
                "trajectory": [round(float(a), 6) for a in truth.trajectories.get(spk, [])],
            }
            for spk in sorted(truth.speaker_moving)
        ],
        "segments": [
            {
                "id": sid,
                "speaker": truth.segment_speaker[sid],
                "channel": truth.segment_info[sid][0],
                "start_s": truth.segment_info[sid][1],
                "end_s": truth.segment_info[sid][2],
                "observed_frames": truth.segment_info[sid][3],
            }
            for sid in truth.segment_speaker
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_truth(path) -> GroundTruth:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        speakers = {s["id"]: bool(s["moving"]) for s in doc["speakers"]}
        traj = {s["id"]: np.asarray(s.get("trajectory", []), dtype=float) for s in doc["speakers"]}
        seg_spk = {s["id"]: s["speaker"] for s in doc["segments"]}
        info = {
            s["id"]: (int(s["channel"]), float(s["start_s"]), float(s["end_s"]), int(s["observed_frames"]))
            for s in doc["segments"]
        }
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed truth file: {exc}") from exc
    return GroundTruth(str(doc.get("meeting", Path(path).stem)), seg_spk, speakers, traj, info)


def format_rttm(meeting: str, segments, labels: dict) -> str:
    """RTTM-style lines in segment order (channel, start, id)."""
    lines = []
    for seg in sorted(segments, key=lambda s: (s.start_frame, s.channel, s.id)):
        dur = seg.end_s - seg.start_s
        lines.append(f"SPEAKER {meeting} {seg.channel} {seg.start_s:.2f} {dur:.2f} spk{labels[seg.id]:02d}")
    return "\n".join(lines) + "\n"


def parse_rttm(text: str) -> list:
    """Parse RTTM-style lines into (meeting, channel, start_s, dur_s, label)."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] != "SPEAKER" or len(parts) < 6:
            raise ValueError(f"line {lineno}: not an RTTM SPEAKER line")
        try:
            rows.append((parts[1], int(parts[2]), float(parts[3]), float(parts[4]), parts[5]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return rows


def rttm_to_clustering(rows, truth: GroundTruth) -> dict:
    """Map RTTM rows back to segment ids through (channel, start time)."""
    key_to_id = {}
    for sid, (ch, start, _end, _obs) in truth.segment_info.items():
        key_to_id[(ch, round(start, 2))] = sid
    clustering = {}
    for _meeting, ch, start, _dur, label in rows:
        key = (ch, round(start, 2))
        if key not in key_to_id:
            raise ValueError(f"RTTM row at channel {ch}, {start:.2f}s matches no segment")
        clustering[key_to_id[key]] = label
    return clustering
