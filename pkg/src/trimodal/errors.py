"""Exception types shared across the pipeline.

Plain precondition violations (non-finite inputs, bad argument shapes that
are caller bugs) raise ValueError; everything with pipeline-level meaning
gets a class here so the CLI can map it to a documented exit code.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all library-specific errors."""


class ConfigError(PipelineError):
    """Invalid or internally inconsistent configuration."""


class DegenerateSixDError(PipelineError):
    """6D rotation input with (near-)zero or parallel columns."""


class ShapeMismatchError(PipelineError):
    """Operands whose shapes / frame counts / fps must agree but do not."""


class SequenceTooShortError(PipelineError):
    """Motion sequence shorter than the codec's downsampling ratio."""


class InvalidTokenError(PipelineError):
    """Motion token index outside the codebook range."""


class TrainingDivergedError(PipelineError):
    """Loss became non-finite. Carries the step at which it happened."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class SectionKindError(PipelineError):
    """A response section contains a token of the wrong kind."""


class GrammarViolation(PipelineError):
    """Token stream does not conform to the response grammar.

    Carries the first offending position and a description of what was
    expected there.
    """

    def __init__(self, position: int, expected: tuple[str, ...], found: object = None):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(
            f"grammar violation at position {position}: "
            f"expected one of {expected}, found {found!r}"
        )


class InvalidIdError(PipelineError):
    """Token id outside the vocabulary."""


class EmptyClipError(PipelineError):
    """Clip with zero duration or no content."""


class InsufficientPoolError(PipelineError):
    """Asked to draw more segments than the pool holds."""


class ModalityMissingError(PipelineError):
    """Sample lacks a modality the requested task template needs."""


class InvalidRecordError(PipelineError):
    """Instruction record missing required fields (cot / answer)."""


class InsufficientDataError(PipelineError):
    """Too few rows / motions for the requested statistic."""


class JudgeUnavailableError(PipelineError):
    """Judge adapter failed; evaluation continues without its columns."""


class ContextOverflowError(PipelineError):
    """Input longer than the model's context window."""


class GenerationTruncatedError(PipelineError):
    """Context filled up before the grammar reached its final state.

    Carries the partial token stream produced so far.
    """

    def __init__(self, partial: list[int], message: str = ""):
        self.partial = partial
        super().__init__(message or f"generation truncated after {len(partial)} tokens")


class CheckpointFormatError(PipelineError):
    """Checkpoint directory missing, malformed, or inconsistent."""


class CorruptCorpusError(PipelineError):
    """Corpus file absent or inconsistent with its manifest record."""


class NumericalError(PipelineError):
    """A numerically impossible intermediate (e.g. strongly non-PSD matrix)."""
