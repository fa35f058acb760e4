"""Exception hierarchy shared by the pipeline stages."""


class PipelineError(Exception):
    """Base class; ``stage`` is filled in by the experiment runner."""

    stage: str | None = None


class MalformedHeader(PipelineError):
    pass


class UnsupportedEncoding(PipelineError):
    pass


class TruncatedData(PipelineError):
    pass


class IoFailure(PipelineError):
    pass


class DegenerateBank(PipelineError):
    pass


class UnknownSubdirectory(PipelineError):
    pass


class EmptyCorpus(PipelineError):
    pass


class InsufficientEntries(PipelineError):
    pass


class TooSmall(PipelineError):
    pass


class ShapeMismatch(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class ClassAbsent(PipelineError):
    pass


class ConfigError(PipelineError):
    pass
