"""Deterministic synthetic corpus: pseudo-word sentences with aligned speech
tokens and sinusoidal joint motion.

Every character of a clip's text occupies exactly seconds_per_char of the
timeline; silence (spaces, punctuation, pauses) renders the rest pose and
emits no speech tokens. That makes the proportional char->time map used by
the segmenter exact, so ground-truth segment boundaries are known.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import CorruptCorpusError
from .rotgeom import PoseSequence, axis_angle_to_matrix, matrix_to_6d
from .segmenter import AlignedClip, SpeechToken

REST_6D = np.array([1, 0, 0, 0, 1, 0], dtype=np.float32)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    num_clips: int = 64
    fps: float = 20.0
    joints: int = 8
    num_words: int = 12
    seconds_per_char: float = 0.2
    speech_rate: float = 25.0          # discrete speech tokens per second
    speech_vocab_size: int = 64
    words_per_clip: tuple[int, int] = (2, 5)
    punctuation_prob: float = 0.35
    pause_prob: float = 0.3
    pause_chars: tuple[int, int] = (2, 4)
    max_amplitude: float = 1.1
    seed: int = 0

    def __post_init__(self):
        tpc = self.seconds_per_char * self.speech_rate
        fpc = self.seconds_per_char * self.fps
        if abs(tpc - round(tpc)) > 1e-9 or round(tpc) < 1:
            raise ValueError("seconds_per_char * speech_rate must be a positive integer")
        if abs(fpc - round(fpc)) > 1e-9 or round(fpc) < 1:
            raise ValueError("seconds_per_char * fps must be a positive integer")

    @property
    def tokens_per_char(self) -> int:
        return round(self.seconds_per_char * self.speech_rate)

    @property
    def frames_per_char(self) -> int:
        return round(self.seconds_per_char * self.fps)


@dataclass
class WordSpec:
    """One pseudo-word with its motion primitive and speech template."""

    word: str
    speech_template: list[int]
    amplitude: np.ndarray    # (J,)
    frequency: np.ndarray    # (J,) Hz, below fps/2
    phase: np.ndarray        # (J,)
    axis: np.ndarray         # (J, 3) unit vectors

    @property
    def duration_chars(self) -> int:
        return len(self.word)


def make_words(cfg: SynthConfig) -> dict[str, WordSpec]:
    """Deterministic word inventory: each word owns exactly one primitive and
    one speech template."""
    rng = np.random.default_rng([cfg.seed, 101])
    words: dict[str, WordSpec] = {}
    while len(words) < cfg.num_words:
        syllables = rng.integers(1, 3)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables + 1)
        )
        if word in words:
            continue
        template = rng.integers(0, cfg.speech_vocab_size,
                                size=len(word) * cfg.tokens_per_char).tolist()
        axis = rng.normal(size=(cfg.joints, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        words[word] = WordSpec(
            word=word,
            speech_template=template,
            amplitude=rng.uniform(0.25, cfg.max_amplitude, size=cfg.joints),
            frequency=rng.uniform(0.3, min(2.5, 0.4 * cfg.fps), size=cfg.joints),
            phase=rng.uniform(0.0, 2 * np.pi, size=cfg.joints),
            axis=axis,
        )
    return words


def render_word_motion(spec: WordSpec, cfg: SynthConfig) -> np.ndarray:
    """Frames (n, J, 6) for one word; a sin envelope pins both ends to rest."""
    n = spec.duration_chars * cfg.frames_per_char
    t = np.arange(n) / cfg.fps
    dur = spec.duration_chars * cfg.seconds_per_char
    envelope = np.sin(np.pi * t / dur)
    theta = spec.amplitude[None, :] * np.sin(
        2 * np.pi * spec.frequency[None, :] * t[:, None] + spec.phase[None, :]
    ) * envelope[:, None]
    rotvec = theta[:, :, None] * spec.axis[None, :, :]
    return matrix_to_6d(axis_angle_to_matrix(rotvec)).astype(np.float32)


def _rest_frames(n: int, joints: int) -> np.ndarray:
    return np.broadcast_to(REST_6D, (n, joints, 6)).copy()


def gen_clip(cfg: SynthConfig, clip_index: int,
             words: dict[str, WordSpec] | None = None) -> AlignedClip:
    """Deterministic per (cfg.seed, clip_index)."""
    words = words if words is not None else make_words(cfg)
    rng = np.random.default_rng([cfg.seed, 211, clip_index])
    names = list(words)
    n_words = int(rng.integers(cfg.words_per_clip[0], cfg.words_per_clip[1] + 1))
    chosen = [names[i] for i in rng.integers(0, len(names), size=n_words)]

    pieces: list[tuple[str, WordSpec | None]] = []
    for w_idx, name in enumerate(chosen):
        pieces.append((name, words[name]))
        last = w_idx == n_words - 1
        if rng.random() < cfg.punctuation_prob or last:
            pieces.append(("." if rng.random() < 0.6 else ",", None))
        if not last:
            n_spaces = 1
            if rng.random() < cfg.pause_prob:
                n_spaces += int(rng.integers(cfg.pause_chars[0], cfg.pause_chars[1] + 1))
            pieces.append((" " * n_spaces, None))

    text_parts: list[str] = []
    speech: list[SpeechToken] = []
    frames: list[np.ndarray] = []
    char_pos = 0
    for chunk, spec in pieces:
        start = char_pos * cfg.seconds_per_char
        if spec is None:
            frames.append(_rest_frames(len(chunk) * cfg.frames_per_char, cfg.joints))
        else:
            frames.append(render_word_motion(spec, cfg))
            for k, tok in enumerate(spec.speech_template):
                speech.append(SpeechToken(tok, start + k / cfg.speech_rate))
        text_parts.append(chunk)
        char_pos += len(chunk)

    text = "".join(text_parts)
    motion = PoseSequence(np.concatenate(frames, axis=0), cfg.fps)
    return AlignedClip(
        clip_id=f"clip_{clip_index:04d}",
        text=text,
        speech=speech,
        motion=motion,
        duration=len(text) * cfg.seconds_per_char,
    )


def gen_corpus(cfg: SynthConfig, workers: int = 1) -> list[AlignedClip]:
    words = make_words(cfg)
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            return pool.starmap(gen_clip, [(cfg, i, words) for i in range(cfg.num_clips)])
    return [gen_clip(cfg, i, words) for i in range(cfg.num_clips)]


# ---------------------------------------------------------------------------
# corpus files: manifest.json + motion/*.f32 + speech/*.json


@dataclass
class ManifestRecord:
    id: str
    text: str
    speech_token_file: str
    motion_file: str
    fps: float
    duration: float
    motion_shape: tuple[int, int, int]
    timestamps: list[float]


@dataclass
class CorpusManifest:
    seed: int
    config: dict
    records: list[ManifestRecord] = field(default_factory=list)


def export_corpus(clips: list[AlignedClip], out_dir: str | Path,
                  cfg: SynthConfig | None = None) -> CorpusManifest:
    out = Path(out_dir)
    (out / "motion").mkdir(parents=True, exist_ok=True)
    (out / "speech").mkdir(parents=True, exist_ok=True)
    records = []
    for clip in clips:
        motion_rel = f"motion/{clip.clip_id}.f32"
        speech_rel = f"speech/{clip.clip_id}.json"
        data = np.ascontiguousarray(clip.motion.data, dtype="<f4")
        (out / motion_rel).write_bytes(data.tobytes())
        with open(out / speech_rel, "w") as fh:
            json.dump([{"id": int(tok.id), "t": float(tok.t)} for tok in clip.speech], fh)
        records.append(ManifestRecord(
            id=clip.clip_id,
            text=clip.text,
            speech_token_file=speech_rel,
            motion_file=motion_rel,
            fps=clip.motion.fps,
            duration=clip.duration,
            motion_shape=tuple(clip.motion.data.shape),
            timestamps=[float(tok.t) for tok in clip.speech],
        ))
    manifest = CorpusManifest(seed=cfg.seed if cfg else 0,
                              config=asdict(cfg) if cfg else {}, records=records)
    with open(out / "manifest.json", "w") as fh:
        json.dump({
            "seed": manifest.seed,
            "config": manifest.config,
            "records": [asdict(r) for r in manifest.records],
        }, fh, indent=1, sort_keys=True)
    return manifest


def import_corpus(corpus_dir: str | Path) -> tuple[CorpusManifest, list[AlignedClip]]:
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CorruptCorpusError(f"no manifest.json under {root}")
    try:
        raw = json.loads(manifest_path.read_text())
        records = [ManifestRecord(**{**r, "motion_shape": tuple(r["motion_shape"])})
                   for r in raw["records"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CorruptCorpusError(f"malformed manifest: {exc}") from exc

    manifest = CorpusManifest(seed=raw.get("seed", 0), config=raw.get("config", {}),
                              records=records)
    clips = []
    for rec in records:
        motion_path = root / rec.motion_file
        speech_path = root / rec.speech_token_file
        if not motion_path.exists() or not speech_path.exists():
            raise CorruptCorpusError(f"{rec.id}: referenced file missing")
        blob = motion_path.read_bytes()
        expected = int(np.prod(rec.motion_shape)) * 4
        if len(blob) != expected:
            raise CorruptCorpusError(
                f"{rec.id}: motion file holds {len(blob)} bytes, manifest says {expected}")
        data = np.frombuffer(blob, dtype="<f4").reshape(rec.motion_shape)
        tokens = json.loads(speech_path.read_text())
        speech = [SpeechToken(int(tok["id"]), float(tok["t"])) for tok in tokens]
        if [t.t for t in speech] != rec.timestamps:
            raise CorruptCorpusError(f"{rec.id}: speech timestamps disagree with manifest")
        clips.append(AlignedClip(rec.id, rec.text, speech,
                                 PoseSequence(data.copy(), rec.fps), rec.duration))
    return manifest, clips


# ---------------------------------------------------------------------------
# instruction and rehearsal records


@dataclass
class InstructRecord:
    question: str
    cot: str
    answer: str
    speech: list[SpeechToken]
    motion: PoseSequence
    word: str


_QUESTION_FORMS = (
    "please show {w}.",
    "can you do {w}?",
    "what does {w} look like?",
    "show me the {w} move.",
)

_COT_FORM = "the prompt asks for {w}. plan, perform the {w} gesture."
_ANSWER_FORMS = ("here is {w}.", "this is {w}.", "doing {w} now.")


def gen_instruct_records(cfg: SynthConfig, num_records: int,
                         seed_offset: int = 0) -> list[InstructRecord]:
    """Question/plan/answer triplets whose speech and motion come from the
    named word's primitive. Deterministic per (cfg.seed, seed_offset)."""
    words = make_words(cfg)
    names = list(words)
    rng = np.random.default_rng([cfg.seed, 307, seed_offset])
    out = []
    for _ in range(num_records):
        name = names[int(rng.integers(len(names)))]
        spec = words[name]
        speech = [SpeechToken(tok, k / cfg.speech_rate)
                  for k, tok in enumerate(spec.speech_template)]
        motion = PoseSequence(render_word_motion(spec, cfg), cfg.fps)
        out.append(InstructRecord(
            question=_QUESTION_FORMS[int(rng.integers(len(_QUESTION_FORMS)))].format(w=name),
            cot=_COT_FORM.format(w=name),
            answer=_ANSWER_FORMS[int(rng.integers(len(_ANSWER_FORMS)))].format(w=name),
            speech=speech,
            motion=motion,
            word=name,
        ))
    return out


@dataclass
class TextRecord:
    question: str
    answer: str


_REHEARSAL_FORMS = (
    ("what kind of word is {w}?", "{w} is a gesture word."),
    ("spell the move {w}.", "the move is spelled {s}."),
    ("name a word unlike {w}.", "{v} is another word."),
    ("is {w} a word here?", "yes, {w} is in the lexicon."),
)


def gen_rehearsal_records(cfg: SynthConfig, num_records: int,
                          seed_offset: int = 0) -> list[TextRecord]:
    """Pure-text QA pairs over the pseudo-word lexicon."""
    names = list(make_words(cfg))
    rng = np.random.default_rng([cfg.seed, 401, seed_offset])
    out = []
    for _ in range(num_records):
        w = names[int(rng.integers(len(names)))]
        v = names[int(rng.integers(len(names)))]
        q, a = _REHEARSAL_FORMS[int(rng.integers(len(_REHEARSAL_FORMS)))]
        out.append(TextRecord(q.format(w=w), a.format(w=w, v=v, s=" ".join(w))))
    return out
