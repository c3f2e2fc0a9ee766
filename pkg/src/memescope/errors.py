class ValidationError(ValueError):
    """Input violates a documented precondition."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated, or inconsistent with its config."""


class DatasetError(ValidationError):
    """A dataset file or record failed validation."""
