"""
Exception hierarchy for the toolkit.

Each error carries the process exit code the CLI reports for it:
0 ok, 2 input error, 3 empty result, 4 numerical failure.
"""

from typing import Optional


EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_EMPTY_RESULT = 3
EXIT_NUMERICAL_FAILURE = 4


class QMLError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigurationError(QMLError, ValueError):
    """Invalid configuration values or impossible requests"""
    exit_code = EXIT_INPUT_ERROR


class ValidationError(QMLError, ValueError):
    """Inputs that violate an operation's preconditions"""
    exit_code = EXIT_INPUT_ERROR


class QubitIndexError(QMLError, IndexError):
    """Qubit index outside the register"""
    exit_code = EXIT_INPUT_ERROR


class CircuitParseError(ValidationError):
    """Malformed circuit, device or calibration document"""

    def __init__(self, message: str, line: Optional[int] = None, section: Optional[str] = None,
                 source: Optional[str] = None):
        self.line = line
        self.section = section
        self.source = source
        where = []
        if source:
            where.append(source)
        if line is not None:
            where.append(f"line {line}")
        if section:
            where.append(f"section [{section}]")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class DatasetLoadError(QMLError):
    """Dataset file could not be parsed or failed header validation"""
    exit_code = EXIT_INPUT_ERROR


class CalibrationError(QMLError, ValueError):
    """Readout calibration unusable for mitigation"""
    exit_code = EXIT_NUMERICAL_FAILURE


class MitigationConvergenceError(QMLError):
    """Iterative readout solver ran out of iterations"""
    exit_code = EXIT_NUMERICAL_FAILURE

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"Mitigation did not converge after {iterations} iterations "
                         f"(residual 1-norm {residual:.3e})")


class TrainingDivergedError(QMLError):
    """Loss became NaN or infinite during training"""
    exit_code = EXIT_NUMERICAL_FAILURE

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")


class UndefinedMetricError(QMLError, ValueError):
    """Metric is undefined for the given inputs (e.g. AUC with one class)"""
    exit_code = EXIT_NUMERICAL_FAILURE


class NoSurvivorError(QMLError):
    """Every search candidate fell below the CNR threshold"""
    exit_code = EXIT_EMPTY_RESULT
