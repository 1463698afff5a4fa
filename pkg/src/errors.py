"""
@file errors.py
@brief Exception hierarchy shared by every jferc module
@details Lower layers raise these instead of returning error codes; the CLI in
main.py maps them to exit codes.
"""


class JfercError(Exception):
    """Base class for all errors raised by the package."""


class ContractViolation(JfercError, ValueError):
    """A shape or precondition of an operation was not met."""


class SignalTooShortError(ContractViolation):
    """Waveform shorter than a single analysis frame."""


class ConfigError(JfercError, ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(JfercError, ValueError):
    """A file (checkpoint, embedding container, WAV, manifest) is malformed."""


class NonFiniteError(JfercError, FloatingPointError):
    """
    @brief NaN or Inf produced at an op boundary
    @details ``op`` names the operation whose output (or input) was not finite.
    """

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        message = f"non-finite values produced by '{op}'"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TrainingDivergedError(JfercError):
    """Training produced a non-finite loss; carries the batch id and dump location."""

    def __init__(self, batch_id: str, dump_path: str, cause: Exception):
        self.batch_id = batch_id
        self.dump_path = dump_path
        super().__init__(f"non-finite loss in batch {batch_id}: {cause}; tensors dumped to {dump_path}")


class HarnessAssertionError(JfercError, AssertionError):
    """An internal acceptance assertion (gradcheck, firewall, reproducibility) failed."""
