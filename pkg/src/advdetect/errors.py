"""Exception types raised across the pipeline.

Kept in one flat module because several of them (LengthMismatch,
ShapeMismatch, TooShort) are shared between stages.
"""


class PipelineError(Exception):
    """Base class for every error this package raises on purpose."""


# --- audio I/O ---

class NotWav(PipelineError):
    """File is not a RIFF/WAVE container (or is truncated)."""


class UnsupportedEncoding(PipelineError):
    """WAV encoding is not 16-bit integer PCM."""


class UnsupportedChannels(PipelineError):
    """WAV has more than one channel."""


class UnsupportedRate(PipelineError):
    """WAV sample rate is not 16 kHz; resampling is out of scope."""


class IoError(PipelineError):
    """Underlying OS error while writing audio."""


class EmptyInput(PipelineError):
    """Operation requires a nonempty sample sequence."""


# --- dsp / features ---

class BadCoeffCount(PipelineError):
    """Requested DCT coefficient count outside [1, input length]."""


class BadSpec(PipelineError):
    """Filter bank specification violates its invariants."""


class ShapeMismatch(PipelineError):
    """Array shape incompatible with the operation's contract."""


# --- vad / noise ---

class TooShort(PipelineError):
    """Signal shorter than the minimum the operation can process."""


class GeometryMismatch(PipelineError):
    """Speech mask frame geometry does not match the signal."""


class ParseError(PipelineError):
    """Malformed mask / manifest file."""


class NoSpeech(PipelineError):
    """Speech mask marks no frame as speech."""


class SilentSpeech(PipelineError):
    """Speech part has zero RMS; SNR scaling undefined."""


class LengthMismatch(PipelineError):
    """Two sequences that must align have different lengths."""


# --- dataset / model / eval ---

class DuplicateId(PipelineError):
    """Source ids passed to the splitter are not unique."""


class MissingCache(PipelineError):
    """A referenced feature cache file does not exist."""


class EmptySet(PipelineError):
    """Training requires nonempty train and validation sets."""


class SingleClass(PipelineError):
    """ROCAUC needs both a positive and a negative example."""
