"""Exception types raised across the package."""


class HoiError(Exception):
    """Base class for all package errors."""


class ShapeError(HoiError, ValueError):
    pass


class DegenerateRotationError(HoiError, ValueError):
    pass


class ConfigError(HoiError, ValueError):
    pass


class SequenceParseError(HoiError, ValueError):
    """Malformed sequence or checkpoint file."""

    def __init__(self, message, path=None, field=None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if field is not None:
            parts.append(f"field '{field}'")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.field = field


class VersionError(SequenceParseError):
    pass


class TrainingError(HoiError, RuntimeError):
    pass


class GenerationError(HoiError, RuntimeError):
    pass


class NotApplicableError(HoiError, ValueError):
    pass


class StepError(HoiError, RuntimeError):
    """Failure inside the sampling loop, tagged with the diffusion step."""

    def __init__(self, step, cause):
        super().__init__(f"diffusion step t={step}: {cause!r}")
        self.step = step
        self.cause = cause


class CandidateError(HoiError, RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"candidate {index}: {cause!r}")
        self.index = index
        self.cause = cause


class RolloutError(HoiError, RuntimeError):
    """Sampler failed mid-rollout; `partial` holds the frames produced so far."""

    def __init__(self, round_index, partial, cause):
        super().__init__(f"rollout round {round_index}: {cause!r}")
        self.round_index = round_index
        self.partial = partial
        self.cause = cause
