class StrokelessError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class CheckpointError(StrokelessError):
    """Checkpoint directory is missing, incomplete, or inconsistent."""


class TrainingDivergedError(StrokelessError):
    """A loss went non-finite; carries the step index and loss breakdown."""

    def __init__(self, step, breakdown=None, detail=""):
        self.step = step
        self.breakdown = breakdown
        msg = f"training diverged at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DatasetBuildError(StrokelessError):
    """Raw pair directory cannot be assembled into a dataset."""
