"""
Exceptions raised by the simulator.

The command-line entry point maps them to exit codes:
ConfigError -> 2, MissingArtifactError / CheckpointError -> 3.
"""

from typing import Optional


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimulatorError, ValueError):
    """Invalid configuration value, key or section."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class MissingArtifactError(SimulatorError, FileNotFoundError):
    """A required artifact (checkpoint, episode log) does not exist."""


class CheckpointError(SimulatorError, ValueError):
    """A checkpoint is truncated, has a wrong version or wrong layer dimensions."""


class NumericalError(SimulatorError, ArithmeticError):
    """A non-finite value appeared in the simulation or in training."""

    def __init__(self, message: str, tick: Optional[int] = None):
        self.tick = tick
        if tick is not None:
            message = f"{message} (tick {tick})"
        super().__init__(message)


class TrainingDiverged(NumericalError):
    """Training produced a non-finite loss; carries the last good checkpoint."""

    def __init__(self, message: str, episode: int, checkpoint: Optional[bytes] = None):
        self.episode = episode
        self.checkpoint = checkpoint
        super().__init__(f"{message} (episode {episode})")
