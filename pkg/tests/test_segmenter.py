"""Segmentation and recombination tests, including a hand-worked boundary table."""

import numpy as np
import pytest

from trimodal.errors import ConfigError, EmptyClipError, InsufficientPoolError
from trimodal.rotgeom import PoseSequence
from trimodal.segmenter import (
    AlignedClip,
    SpeechToken,
    budget_check,
    materialize,
    recombine,
    segment_clip,
    whole_clip_segment,
)
from trimodal.synthdata import SynthConfig, gen_corpus
from trimodal.tokens import build_vocab, encode_text


def make_clip(text, token_times, duration, fps=2.0, joints=2):
    frames = round(duration * fps)
    rng = np.random.default_rng(len(text))
    data = np.zeros((frames, joints, 6), dtype=np.float32)
    data[:, :, 0] = 1.0
    data[:, :, 4] = 1.0
    data[:, :, 1] = rng.normal(0, 0.01, size=(frames, joints))
    motion = PoseSequence(data, fps)
    speech = [SpeechToken(i % 7, t) for i, t in enumerate(token_times)]
    return AlignedClip("test", text, speech, motion, duration)


class TestSegmentClip:
    def test_single_punctuation_boundary(self):
        # "hi. go": boundary after '.' at char 3 -> two segments.
        clip = make_clip("hi. go", [0.2, 0.5, 1.7, 2.0], 3.0)
        segs = segment_clip(clip, pause_threshold=5.0, punctuation=".")
        assert len(segs) == 2
        assert segs[0].text() == "hi."
        assert segs[1].text() == " go"
        assert segs[0].end == pytest.approx(1.5)

    def test_single_pause_boundary(self):
        # No punctuation; one 0.6 s gap with threshold 0.5 splits at its middle.
        clip = make_clip("ab cd", [0.4, 0.8, 1.4, 1.8], 2.5)
        segs = segment_clip(clip, pause_threshold=0.5, punctuation="!")
        assert len(segs) == 2
        assert segs[0].end == pytest.approx(1.1)
        assert segs[0].speech_span == (0, 2)
        assert segs[1].speech_span == (2, 4)

    def test_hand_worked_boundary_table(self):
        # "ab. cd, ef. gh" at 0.5 s/char, 2 fps: punctuation boundaries at
        # t=1.5 (c3), 3.5 (c7), 5.5 (c11). Token gaps 3.2->3.88 (mid 3.54,
        # merges into the 3.5 punctuation cue) and 4.4->5.0 (mid 4.7, c9).
        # Expected: 4 boundaries -> 5 segments with these frozen spans.
        times = [0.2, 0.6, 1.0, 1.4, 1.8, 2.2, 2.6, 3.0, 3.2, 3.88,
                 4.2, 4.4, 5.0, 5.4, 5.8, 6.2, 6.6]
        clip = make_clip("ab. cd, ef. gh", times, 7.0)
        segs = segment_clip(clip, pause_threshold=0.5, punctuation=".,")
        assert len(segs) == 5
        assert [s.text() for s in segs] == ["ab.", " cd,", " e", "f.", " gh"]
        assert [s.text_span for s in segs] == [(0, 3), (3, 7), (7, 9), (9, 11), (11, 14)]
        assert [s.speech_span for s in segs] == [(0, 4), (4, 9), (9, 12), (12, 14), (14, 17)]
        assert [s.frame_span for s in segs] == [(0, 3), (3, 7), (7, 9), (9, 11), (11, 14)]
        assert [s.start for s in segs] == pytest.approx([0.0, 1.5, 3.5, 4.7, 5.5])

    def test_coverage_and_disjointness(self):
        cfg = SynthConfig(num_clips=8, seed=31, speech_rate=10.0)
        for clip in gen_corpus(cfg):
            segs = segment_clip(clip)
            assert segs[0].start == 0.0
            assert segs[-1].end == clip.duration
            for a, b in zip(segs, segs[1:]):
                assert a.end == b.start
            assert sum(s.frames for s in segs) == clip.motion.frames
            assert sum(len(s.speech_local()) for s in segs) == len(clip.speech)
            assert "".join(s.text() for s in segs) == clip.text

    def test_empty_clip_rejected(self):
        with pytest.raises(EmptyClipError):
            AlignedClip("x", "", [], PoseSequence(np.zeros((1, 1, 6)) + [1, 0, 0, 0, 1, 0], 2.0), 0.0)
        clip = make_clip("ab", [], 1.0)
        object.__setattr__(clip, "text", "")
        with pytest.raises(EmptyClipError):
            segment_clip(clip)

    def test_bad_threshold(self):
        clip = make_clip("ab", [], 1.0)
        with pytest.raises(ConfigError):
            segment_clip(clip, pause_threshold=0.0)


class TestRecombine:
    def pool(self):
        cfg = SynthConfig(num_clips=6, seed=77, speech_rate=10.0)
        segs = []
        for clip in gen_corpus(cfg):
            segs.extend(segment_clip(clip))
        return segs

    def test_k1_is_identity(self):
        pool = self.pool()
        sample = recombine(pool, 1, rng_seed=4)
        seg = sample.segments[0]
        assert sample.text == seg.text()
        assert np.array_equal(sample.motion.data, seg.motion_frames())
        assert sample.speech == seg.speech_local()

    def test_same_seed_identical(self):
        pool = self.pool()
        a = recombine(pool, 3, rng_seed=11)
        b = recombine(pool, 3, rng_seed=11)
        assert a.text == b.text
        assert a.speech == b.speech
        assert np.array_equal(a.motion.data, b.motion.data)

    def test_frame_count_conserved_over_100_draws(self):
        pool = self.pool()
        for seed in range(100):
            sample = recombine(pool, 4, rng_seed=seed)
            assert sample.motion.frames == sum(s.frames for s in sample.segments)
            assert len(sample.speech) == sum(len(s.speech_local()) for s in sample.segments)

    def test_alignment_ratio_preserved(self):
        pool = self.pool()
        sample = recombine(pool, 5, rng_seed=3)
        offset_frames = 0
        for seg in sample.segments:
            region = sample.motion.data[offset_frames: offset_frames + seg.frames]
            assert np.array_equal(region, seg.motion_frames())
            offset_frames += seg.frames

    def test_pool_too_small(self):
        pool = self.pool()[:2]
        with pytest.raises(InsufficientPoolError):
            recombine(pool, 3, rng_seed=0)

    def test_whole_clip_segment_covers_everything(self):
        cfg = SynthConfig(num_clips=2, seed=13, speech_rate=10.0)
        clip = gen_corpus(cfg)[0]
        sample = materialize([whole_clip_segment(clip)])
        assert sample.text == clip.text
        assert np.array_equal(sample.motion.data, clip.motion.data)


class TestBudgetCheck:
    class _CodecCfg:
        downsample_ratio = 4
        num_residual_layers = 4

    LAYOUT = build_vocab(31, 64, 8, 4)

    def test_counts_match_serializer(self):
        cfg = SynthConfig(num_clips=2, seed=19, speech_rate=10.0)
        pool = []
        for clip in gen_corpus(cfg):
            pool.extend(segment_clip(clip))
        sample = recombine(pool, 3, rng_seed=1)
        report = budget_check(sample, self.LAYOUT, self._CodecCfg())
        n_text = len(encode_text(sample.text, self.LAYOUT))
        n_motion = int(np.ceil(sample.motion.frames / 4)) * 4
        assert report.text_tokens == n_text
        assert report.speech_tokens == len(sample.speech)
        assert report.motion_tokens == n_motion
        # BOS + user wrapper (2) + response skeleton (8) + the three bodies.
        assert report.total == 11 + n_text + len(sample.speech) + n_motion
        assert not report.over_budget

    def test_over_budget_flag(self):
        cfg = SynthConfig(num_clips=2, seed=23, speech_rate=10.0)
        pool = []
        for clip in gen_corpus(cfg):
            pool.extend(segment_clip(clip))
        sample = recombine(pool, 2, rng_seed=5)
        report = budget_check(sample, self.LAYOUT, self._CodecCfg(), max_total=10)
        assert report.over_budget
