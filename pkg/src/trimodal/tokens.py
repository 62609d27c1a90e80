"""Unified token vocabulary over text, speech, motion, and special ids.

The layout packs contiguous id blocks from 0: text, speech, one block per
motion residual layer, then the special ids. Response streams follow a
fixed section grammar (think -> text -> speech -> motion by default, or the
speech-first ablation order) documented as EBNF in docs/formats.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    GrammarViolation,
    InvalidIdError,
    SectionKindError,
)

# BOS anchors position 0 of every packed model input; the remaining 13 are
# the grammar's delimiters plus PAD.
SPECIAL_NAMES = (
    "PAD",
    "BOS",
    "RESPONSE_OPEN",
    "RESPONSE_CLOSE",
    "THINK_OPEN",
    "THINK_CLOSE",
    "SPEECH_OPEN",
    "SPEECH_CLOSE",
    "MOTION_OPEN",
    "MOTION_CLOSE",
    "USER_TEXT_OPEN",
    "USER_TEXT_CLOSE",
    "USER_SPEECH_OPEN",
    "USER_SPEECH_CLOSE",
)

# Character-level text tokenization happens over this declared alphabet.
DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz .,!?"


class TokenKind(Enum):
    TEXT = "text"
    SPEECH = "speech"
    MOTION = "motion"
    SPECIAL = "special"


class TokenInfo(NamedTuple):
    kind: TokenKind
    motion_layer: int | None


class SectionOrder(Enum):
    TEXT_FIRST = "text_first"        # think, text, speech, motion
    SPEECH_FIRST = "speech_first"    # speech, motion, text; no think section


@dataclass(frozen=True)
class VocabLayout:
    """Half-open id intervals for each token family plus named special ids."""

    text_range: tuple[int, int]
    speech_range: tuple[int, int]
    motion_ranges: tuple[tuple[int, int], ...]
    special_range: tuple[int, int]
    specials: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ranges = [self.text_range, self.speech_range, *self.motion_ranges, self.special_range]
        for lo, hi in ranges:
            if not (0 <= lo < hi):
                raise ConfigError(f"empty or negative id range ({lo}, {hi})")
        ordered = sorted(ranges)
        if ordered[0][0] != 0:
            raise ConfigError("vocabulary must start at id 0")
        for (alo, ahi), (blo, bhi) in zip(ordered, ordered[1:]):
            if blo < ahi:
                raise ConfigError(f"id ranges overlap: ({alo},{ahi}) and ({blo},{bhi})")
            if blo > ahi:
                raise ConfigError(f"id ranges leave a gap between {ahi} and {blo}")
        if set(self.specials) != set(SPECIAL_NAMES):
            raise ConfigError(f"specials must name exactly {SPECIAL_NAMES}")
        ids = list(self.specials.values())
        if len(set(ids)) != len(ids):
            raise ConfigError("special ids must be distinct")
        lo, hi = self.special_range
        if any(not lo <= i < hi for i in ids):
            raise ConfigError("every named special id must lie in special_range")

    @property
    def size(self) -> int:
        return max(hi for _, hi in [self.text_range, self.speech_range,
                                    *self.motion_ranges, self.special_range])

    @property
    def motion_layers(self) -> int:
        return len(self.motion_ranges)

    @property
    def motion_codebook_size(self) -> int:
        lo, hi = self.motion_ranges[0]
        return hi - lo

    def __getattr__(self, name: str) -> int:
        # layout.pad, layout.think_open, ... resolve to special ids.
        upper = name.upper()
        specials = object.__getattribute__(self, "specials")
        if upper in specials:
            return specials[upper]
        raise AttributeError(name)

    def classify(self, token_id: int) -> TokenInfo:
        if not 0 <= token_id < self.size:
            raise InvalidIdError(f"id {token_id} outside vocabulary of size {self.size}")
        lo, hi = self.text_range
        if lo <= token_id < hi:
            return TokenInfo(TokenKind.TEXT, None)
        lo, hi = self.speech_range
        if lo <= token_id < hi:
            return TokenInfo(TokenKind.SPEECH, None)
        for layer, (lo, hi) in enumerate(self.motion_ranges):
            if lo <= token_id < hi:
                return TokenInfo(TokenKind.MOTION, layer)
        return TokenInfo(TokenKind.SPECIAL, None)


def build_vocab(text_size: int, speech_size: int, motion_codebook_size: int,
                motion_layers: int) -> VocabLayout:
    """Canonical layout: text | speech | motion layer blocks | specials."""
    for name, value in [("text_size", text_size), ("speech_size", speech_size),
                        ("motion_codebook_size", motion_codebook_size),
                        ("motion_layers", motion_layers)]:
        if value < 1:
            raise ConfigError(f"{name} must be >= 1, got {value}")
    text = (0, text_size)
    speech = (text_size, text_size + speech_size)
    base = speech[1]
    motion = tuple(
        (base + layer * motion_codebook_size, base + (layer + 1) * motion_codebook_size)
        for layer in range(motion_layers)
    )
    spec_lo = motion[-1][1]
    special = (spec_lo, spec_lo + len(SPECIAL_NAMES))
    names = {name: spec_lo + i for i, name in enumerate(SPECIAL_NAMES)}
    return VocabLayout(text, speech, motion, special, names)


def classify(token_id: int, layout: VocabLayout) -> TokenInfo:
    return layout.classify(token_id)


# ---------------------------------------------------------------------------
# text / speech / motion id conversions


def encode_text(text: str, layout: VocabLayout, alphabet: str = DEFAULT_ALPHABET) -> list[int]:
    """Character-level ids. Characters outside the alphabet are dropped."""
    lo, hi = layout.text_range
    if len(alphabet) > hi - lo:
        raise ConfigError(f"alphabet of {len(alphabet)} chars exceeds text range {hi - lo}")
    index = {ch: i for i, ch in enumerate(alphabet)}
    return [lo + index[ch] for ch in text.lower() if ch in index]


def decode_text(ids: Iterable[int], layout: VocabLayout,
                alphabet: str = DEFAULT_ALPHABET) -> str:
    lo, _ = layout.text_range
    chars = []
    for i in ids:
        if layout.classify(i).kind is not TokenKind.TEXT:
            raise InvalidIdError(f"id {i} is not a text token")
        chars.append(alphabet[i - lo])
    return "".join(chars)


def speech_to_ids(raw: Sequence[int], layout: VocabLayout) -> list[int]:
    lo, hi = layout.speech_range
    out = []
    for r in raw:
        if not 0 <= r < hi - lo:
            raise InvalidIdError(f"raw speech id {r} outside [0, {hi - lo})")
        out.append(lo + r)
    return out


def ids_to_speech(ids: Sequence[int], layout: VocabLayout) -> list[int]:
    lo, _ = layout.speech_range
    out = []
    for i in ids:
        if layout.classify(i).kind is not TokenKind.SPEECH:
            raise InvalidIdError(f"id {i} is not a speech token")
        out.append(i - lo)
    return out


def motion_grid_to_ids(indices: np.ndarray, layout: VocabLayout) -> list[int]:
    """Flatten a (timesteps, layers) code grid layer-major per timestep."""
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != layout.motion_layers:
        raise InvalidIdError(
            f"grid must have shape (T', {layout.motion_layers}), got {indices.shape}")
    k = layout.motion_codebook_size
    if indices.size and (indices.min() < 0 or indices.max() >= k):
        raise InvalidIdError(f"grid code outside [0, {k})")
    bases = np.array([lo for lo, _ in layout.motion_ranges])
    return (indices + bases[None, :]).reshape(-1).tolist()


def ids_to_motion_grid(ids: Sequence[int], layout: VocabLayout) -> np.ndarray:
    layers = layout.motion_layers
    if len(ids) % layers != 0:
        raise InvalidIdError(f"motion id count {len(ids)} not a multiple of {layers} layers")
    out = np.empty((len(ids) // layers, layers), dtype=np.int64)
    for pos, i in enumerate(ids):
        info = layout.classify(i)
        layer = pos % layers
        if info.kind is not TokenKind.MOTION or info.motion_layer != layer:
            raise InvalidIdError(f"id {i} at position {pos} is not a layer-{layer} motion token")
        out[pos // layers, layer] = i - layout.motion_ranges[layer][0]
    return out


# ---------------------------------------------------------------------------
# response structure codec


@dataclass
class ResponseStructure:
    """Token ids per section of one structured response."""

    think_text: list[int] = field(default_factory=list)
    reply_text: list[int] = field(default_factory=list)
    speech_tokens: list[int] = field(default_factory=list)
    motion_tokens: list[int] = field(default_factory=list)


def _check_section(ids: Sequence[int], kind: TokenKind, layout: VocabLayout,
                   section: str) -> None:
    for i in ids:
        try:
            info = layout.classify(i)
        except InvalidIdError as exc:
            raise SectionKindError(f"{section} section: {exc}") from exc
        if info.kind is not kind:
            raise SectionKindError(
                f"{section} section holds {kind.value} tokens, got {info.kind.value} id {i}")


def _check_motion_section(ids: Sequence[int], layout: VocabLayout) -> None:
    layers = layout.motion_layers
    if len(ids) % layers != 0:
        raise SectionKindError(
            f"motion section length {len(ids)} is not a multiple of {layers} layers")
    for pos, i in enumerate(ids):
        try:
            info = layout.classify(i)
        except InvalidIdError as exc:
            raise SectionKindError(f"motion section: {exc}") from exc
        if info.kind is not TokenKind.MOTION or info.motion_layer != pos % layers:
            raise SectionKindError(
                f"motion section position {pos} needs a layer-{pos % layers} token, got id {i}")


def serialize_response(r: ResponseStructure, layout: VocabLayout,
                       order: SectionOrder = SectionOrder.TEXT_FIRST) -> list[int]:
    """Emit the delimited stream for one response.

    Text-first order: RESPONSE_OPEN, think section, bare reply text, speech
    section, motion section, RESPONSE_CLOSE. The speech-first ablation
    order drops the think section and emits text last.
    """
    _check_section(r.think_text, TokenKind.TEXT, layout, "think")
    _check_section(r.reply_text, TokenKind.TEXT, layout, "reply")
    _check_section(r.speech_tokens, TokenKind.SPEECH, layout, "speech")
    _check_motion_section(r.motion_tokens, layout)

    speech = [layout.speech_open, *r.speech_tokens, layout.speech_close]
    motion = [layout.motion_open, *r.motion_tokens, layout.motion_close]
    if order is SectionOrder.TEXT_FIRST:
        think = [layout.think_open, *r.think_text, layout.think_close]
        body = [*think, *r.reply_text, *speech, *motion]
    else:
        if r.think_text:
            raise SectionKindError("speech-first order has no think section")
        body = [*speech, *motion, *r.reply_text]
    return [layout.response_open, *body, layout.response_close]


def _expect(stream: Sequence[int], pos: int, wanted_id: int, description: str) -> int:
    if pos >= len(stream):
        raise GrammarViolation(pos, (description,), None)
    if stream[pos] != wanted_id:
        raise GrammarViolation(pos, (description,), stream[pos])
    return pos + 1


class _Scanner:
    """Sequential parser for response streams.

    Written independently of the decoding automaton so the two can be
    cross-checked exhaustively.
    """

    def __init__(self, stream: Sequence[int], layout: VocabLayout):
        self.stream = stream
        self.layout = layout
        self.pos = 0

    def _kind(self, i: int) -> TokenInfo | None:
        try:
            return self.layout.classify(int(i))
        except (InvalidIdError, TypeError, ValueError):
            return None

    def _take_while(self, kind: TokenKind, stop_ids: dict[int, str],
                    expected: tuple[str, ...]) -> tuple[list[int], int | None]:
        """Collect tokens of `kind` until one of stop_ids; returns (body, stop)."""
        body: list[int] = []
        while True:
            if self.pos >= len(self.stream):
                return body, None
            tok = self.stream[self.pos]
            if tok in stop_ids:
                self.pos += 1
                return body, tok
            info = self._kind(tok)
            if info is None or info.kind is not kind:
                raise GrammarViolation(self.pos, expected, tok)
            body.append(int(tok))
            self.pos += 1

    def _take_one(self, wanted: int, description: str) -> None:
        if self.pos >= len(self.stream):
            raise GrammarViolation(self.pos, (description,), None)
        if self.stream[self.pos] != wanted:
            raise GrammarViolation(self.pos, (description,), self.stream[self.pos])
        self.pos += 1

    def _take_motion(self) -> list[int]:
        lay = self.layout
        body: list[int] = []
        phase = 0
        while True:
            if self.pos >= len(self.stream):
                raise GrammarViolation(self.pos, self._motion_expected(phase), None)
            tok = self.stream[self.pos]
            if tok == lay.motion_close:
                if phase != 0:
                    raise GrammarViolation(self.pos, self._motion_expected(phase), tok)
                self.pos += 1
                return body
            info = self._kind(tok)
            if info is None or info.kind is not TokenKind.MOTION or info.motion_layer != phase:
                raise GrammarViolation(self.pos, self._motion_expected(phase), tok)
            body.append(int(tok))
            phase = (phase + 1) % lay.motion_layers
            self.pos += 1

    def _motion_expected(self, phase: int) -> tuple[str, ...]:
        if phase == 0:
            return (f"motion layer-{phase} token", "MOTION_CLOSE")
        return (f"motion layer-{phase} token",)

    def parse(self, order: SectionOrder) -> ResponseStructure:
        lay = self.layout
        r = ResponseStructure()
        self._take_one(lay.response_open, "RESPONSE_OPEN")
        if order is SectionOrder.TEXT_FIRST:
            self._take_one(lay.think_open, "THINK_OPEN")
            body, stop = self._take_while(
                TokenKind.TEXT, {lay.think_close: "THINK_CLOSE"},
                ("text token", "THINK_CLOSE"))
            if stop is None:
                raise GrammarViolation(self.pos, ("text token", "THINK_CLOSE"), None)
            r.think_text = body
            body, stop = self._take_while(
                TokenKind.TEXT, {lay.speech_open: "SPEECH_OPEN"},
                ("text token", "SPEECH_OPEN"))
            if stop is None:
                raise GrammarViolation(self.pos, ("text token", "SPEECH_OPEN"), None)
            r.reply_text = body
            r.speech_tokens = self._finish_speech()
            self._take_one(lay.motion_open, "MOTION_OPEN")
            r.motion_tokens = self._take_motion()
            self._take_one(lay.response_close, "RESPONSE_CLOSE")
        else:
            self._take_one(lay.speech_open, "SPEECH_OPEN")
            r.speech_tokens = self._finish_speech()
            self._take_one(lay.motion_open, "MOTION_OPEN")
            r.motion_tokens = self._take_motion()
            body, stop = self._take_while(
                TokenKind.TEXT, {lay.response_close: "RESPONSE_CLOSE"},
                ("text token", "RESPONSE_CLOSE"))
            if stop is None:
                raise GrammarViolation(self.pos, ("text token", "RESPONSE_CLOSE"), None)
            r.reply_text = body
        if self.pos != len(self.stream):
            raise GrammarViolation(self.pos, ("end of stream",), self.stream[self.pos])
        return r

    def _finish_speech(self) -> list[int]:
        lay = self.layout
        body, stop = self._take_while(
            TokenKind.SPEECH, {lay.speech_close: "SPEECH_CLOSE"},
            ("speech token", "SPEECH_CLOSE"))
        if stop is None:
            raise GrammarViolation(self.pos, ("speech token", "SPEECH_CLOSE"), None)
        return body


def parse_response(stream: Sequence[int], layout: VocabLayout,
                   order: SectionOrder = SectionOrder.TEXT_FIRST) -> ResponseStructure:
    """Total parser: returns sections or raises a positioned GrammarViolation.

    The scanner consumed the SPEECH_OPEN of the speech-first order before the
    think branch, so the first token after RESPONSE_OPEN fully determines the
    expected shape.
    """
    scanner = _Scanner(stream, layout)
    return scanner.parse(order)


def is_valid_prefix(stream: Sequence[int], layout: VocabLayout,
                    order: SectionOrder = SectionOrder.TEXT_FIRST) -> bool:
    """True when `stream` is a prefix of some grammar-conformant stream."""
    scanner = _Scanner(stream, layout)
    try:
        scanner.parse(order)
        return True
    except GrammarViolation as v:
        # Violations reported at end-of-stream mean "incomplete", i.e. the
        # consumed prefix itself was fine.
        return v.position >= len(stream) and v.found is None
