"""
Exception hierarchy for the StS laboratory.
Invalid argument values raise plain ValueError; everything below signals a
failure of a stage, a training run or a stored artifact.
"""

from typing import Optional


class StsError(Exception):
    """Base class for laboratory failures"""


class DivergenceError(StsError):
    """Training produced a non-finite or persistently exploding loss"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class ProvenanceError(StsError):
    """Seeds, probes or checkpoints were produced under incompatible settings"""


class CheckpointError(StsError):
    """A checkpoint container could not be written, read or verified"""


class StageError(StsError):
    """
    A pipeline stage failed. The original exception is chained as __cause__.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
