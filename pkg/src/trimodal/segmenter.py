"""Segment-wise alignment: split aligned clips at punctuation and pause
boundaries, then recombine segments into randomized training samples.

Text positions carry no timing of their own, so a character index i maps to
time (i / len(text)) * duration. The synthetic corpus is constructed so this
proportional map is exact; externally ingested clips get an approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, EmptyClipError, InsufficientPoolError
from .rotgeom import PoseSequence
from .tokens import VocabLayout, encode_text, motion_grid_to_ids, serialize_response
from .tokens import DEFAULT_ALPHABET, ResponseStructure

# Coincident punctuation + pause cues closer than this merge into one boundary.
MERGE_WINDOW = 0.05
_EPS = 1e-9


class SpeechToken(NamedTuple):
    id: int
    t: float


@dataclass
class AlignedClip:
    """Word-aligned (text, speech tokens, motion) triple."""

    clip_id: str
    text: str
    speech: list[SpeechToken]
    motion: PoseSequence
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise EmptyClipError(f"clip {self.clip_id} has zero duration")
        times = [t for _, t in self.speech]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"clip {self.clip_id}: speech timestamps must be non-decreasing")
        if times and (times[0] < 0 or times[-1] > self.duration):
            raise ValueError(f"clip {self.clip_id}: timestamps outside [0, duration]")
        expected = round(self.duration * self.motion.fps)
        if self.motion.frames != expected:
            raise ValueError(
                f"clip {self.clip_id}: {self.motion.frames} frames but "
                f"duration*fps rounds to {expected}")


@dataclass
class Segment:
    """One time slice of a clip, with per-modality index spans."""

    clip: AlignedClip
    start: float
    end: float
    text_span: tuple[int, int]
    speech_span: tuple[int, int]
    frame_span: tuple[int, int]

    @property
    def frames(self) -> int:
        return self.frame_span[1] - self.frame_span[0]

    def text(self) -> str:
        a, b = self.text_span
        return self.clip.text[a:b]

    def speech_local(self) -> list[SpeechToken]:
        a, b = self.speech_span
        return [SpeechToken(tok.id, tok.t - self.start) for tok in self.clip.speech[a:b]]

    def motion_frames(self) -> np.ndarray:
        a, b = self.frame_span
        return self.clip.motion.data[a:b]


class _Boundary(NamedTuple):
    time: float
    char: int


def _frame_index(t: float, fps: float) -> int:
    return int(math.floor(t * fps + _EPS))


def segment_clip(clip: AlignedClip, pause_threshold: float = 0.4,
                 punctuation: str = ".,!?") -> list[Segment]:
    """Split at every punctuation character and every inter-token gap >=
    pause_threshold. Segments cover [0, duration] without overlap."""
    if pause_threshold <= 0:
        raise ConfigError(f"pause_threshold must be positive, got {pause_threshold}")
    if not clip.text:
        raise EmptyClipError(f"clip {clip.clip_id} has no text")
    length = len(clip.text)
    dur = clip.duration

    candidates = []
    for i, ch in enumerate(clip.text):
        if ch in punctuation:
            candidates.append(_Boundary((i + 1) * dur / length, i + 1))
    times = np.array([t for _, t in clip.speech])
    for a, b in zip(times, times[1:]):
        if b - a >= pause_threshold:
            mid = (a + b) / 2.0
            candidates.append(_Boundary(mid, round(mid * length / dur)))
    candidates.sort()

    boundaries: list[_Boundary] = []
    last = 0.0
    for cand in candidates:
        if cand.time - last < MERGE_WINDOW or cand.time > dur - MERGE_WINDOW:
            continue
        boundaries.append(cand)
        last = cand.time

    anchors = [_Boundary(0.0, 0), *boundaries, _Boundary(dur, length)]
    frames = clip.motion.frames
    segments: list[Segment] = []
    prev_char = 0
    for (t0, c0), (t1, c1) in zip(anchors, anchors[1:]):
        c0 = max(min(c0, length), prev_char)
        c1 = max(min(c1, length), c0)
        prev_char = c1
        s0 = int(np.searchsorted(times, t0, side="left"))
        s1 = int(np.searchsorted(times, t1, side="left"))
        f0 = _frame_index(t0, clip.motion.fps)
        f1 = frames if t1 >= dur else _frame_index(t1, clip.motion.fps)
        seg = Segment(clip, t0, t1, (c0, c1), (s0, s1), (f0, min(f1, frames)))
        if seg.text_span[0] == seg.text_span[1] and s0 == s1 and seg.frames == 0 and segments:
            # Zero-content sliver: merge into its predecessor.
            prev = segments[-1]
            segments[-1] = Segment(clip, prev.start, t1, (prev.text_span[0], c1),
                                   (prev.speech_span[0], s1), (prev.frame_span[0], seg.frame_span[1]))
        else:
            segments.append(seg)
    return segments


def whole_clip_segment(clip: AlignedClip) -> Segment:
    """The no-segmentation view of a clip (wo-seg ablation)."""
    return Segment(clip, 0.0, clip.duration, (0, len(clip.text)),
                   (0, len(clip.speech)), (0, clip.motion.frames))


@dataclass
class SegmentedSample:
    """Materialized concatenation of segments, possibly from several clips."""

    segments: list[Segment]
    text: str
    speech: list[SpeechToken]
    motion: PoseSequence
    duration: float

    @property
    def source_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(s.clip.clip_id for s in self.segments))


def materialize(segments: Sequence[Segment]) -> SegmentedSample:
    if not segments:
        raise InsufficientPoolError("cannot materialize an empty segment list")
    fps = segments[0].clip.motion.fps
    joints = segments[0].clip.motion.joints
    for s in segments:
        if s.clip.motion.fps != fps or s.clip.motion.joints != joints:
            raise ConfigError("segments mix incompatible fps or joint counts")

    text_parts: list[str] = []
    speech: list[SpeechToken] = []
    frames: list[np.ndarray] = []
    offset = 0.0
    for s in segments:
        text_parts.append(s.text())
        speech.extend(SpeechToken(tok.id, tok.t + offset) for tok in s.speech_local())
        frames.append(s.motion_frames())
        offset += s.end - s.start
    data = np.concatenate(frames, axis=0)
    motion = PoseSequence(data, fps)
    return SegmentedSample(list(segments), "".join(text_parts), speech, motion, offset)


def recombine(pool: Sequence[Segment], k: int, rng_seed: int) -> SegmentedSample:
    """Draw k segments without replacement under a seeded generator."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > len(pool):
        raise InsufficientPoolError(f"asked for {k} segments from a pool of {len(pool)}")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(pool), size=k, replace=False)
    return materialize([pool[i] for i in idx])


@dataclass
class BudgetReport:
    text_tokens: int
    speech_tokens: int
    motion_tokens: int
    total: int
    max_total: int
    over_budget: bool


def budget_check(sample: SegmentedSample, layout: VocabLayout, codec_config,
                 max_total: int = 2048, alphabet: str = DEFAULT_ALPHABET) -> BudgetReport:
    """Token counts of the sample's maximal serialized form.

    Total = BOS + user prompt wrapper + the full response skeleton with all
    three bodies present, computed through the serializer so delimiter
    bookkeeping has a single source of truth. Every stage-1 task template
    serializes to at most this length.
    """
    text_ids = encode_text(sample.text, layout, alphabet)
    n_speech = len(sample.speech)
    steps = math.ceil(sample.motion.frames / codec_config.downsample_ratio)
    n_motion = steps * codec_config.num_residual_layers

    grid = np.zeros((steps, layout.motion_layers), dtype=np.int64)
    slo = layout.speech_range[0]
    stream = serialize_response(
        ResponseStructure(
            reply_text=text_ids,
            speech_tokens=[slo] * n_speech,
            motion_tokens=motion_grid_to_ids(grid, layout),
        ),
        layout,
    )
    total = 1 + 2 + len(stream)
    return BudgetReport(len(text_ids), n_speech, n_motion, total, max_total,
                        total > max_total)
