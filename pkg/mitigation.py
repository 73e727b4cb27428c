"""
Matrix-free readout error mitigation.

The tensor-product confusion matrix is restricted to the bitstrings actually
observed, its columns renormalized over that subspace, and the resulting
system solved by diagonally preconditioned stationary iteration. Entries are
generated on demand from the per-qubit 2x2 matrices; above ``DENSE_CUTOFF``
observed bitstrings the restricted matrix is only ever touched in row blocks.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator

from circuit_model import check_confusion_matrix
from errors import (
    CalibrationError,
    CircuitParseError,
    ConfigurationError,
    MitigationConvergenceError,
    UndefinedMetricError,
    ValidationError,
)
from statevector import CountsDistribution

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 1000
DENSE_CUTOFF = 2048
BLOCK_ROWS = 512
DEGENERATE_TOTAL = 1e-9


@dataclass
class ReadoutCalibration:
    """Per-qubit A[observed][true]; entry k belongs to measured position k"""
    matrices: List[np.ndarray]

    def __post_init__(self):
        self.matrices = [np.asarray(m, dtype=np.float64) for m in self.matrices]
        if not self.matrices:
            raise CalibrationError("Calibration needs at least one qubit")
        for k, matrix in enumerate(self.matrices):
            try:
                check_confusion_matrix(matrix, f"calibration matrix {k}")
            except ConfigurationError as e:
                raise CalibrationError(str(e))

    @property
    def n_qubits(self) -> int:
        return len(self.matrices)

    @classmethod
    def identity(cls, n_qubits: int) -> "ReadoutCalibration":
        """Perfect readout on ``n_qubits`` qubits"""
        return cls([np.eye(2) for _ in range(n_qubits)])

    def subset(self, positions: Sequence[int]) -> "ReadoutCalibration":
        """Calibration restricted to the given measured positions"""
        return ReadoutCalibration([self.matrices[p].copy() for p in positions])

    def to_text(self) -> str:
        """Render one ``a00 a01 a10 a11`` row per qubit"""
        lines = ["# a00 a01 a10 a11 per measured qubit, a[observed][true]"]
        for matrix in self.matrices:
            lines.append(" ".join(repr(float(v)) for v in matrix.reshape(-1)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<calibration>") -> "ReadoutCalibration":
        """Parse the format written by ``to_text``"""
        matrices = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CircuitParseError(f"expected 4 numbers, got {line!r}", lineno, source=source)
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise CircuitParseError(f"non-numeric entry in {line!r}", lineno, source=source)
            if not all(math.isfinite(v) for v in values):
                raise CircuitParseError(f"non-finite entry in {line!r}", lineno, source=source)
            matrices.append(np.array(values).reshape(2, 2))
        return cls(matrices)

    def save(self, path: str) -> None:
        """Write the calibration text to ``path``"""
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path: str) -> "ReadoutCalibration":
        """Read a calibration file"""
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read(), source=path)


@dataclass
class QuasiDistribution:
    n_measured: int
    entries: Dict[str, float] = field(default_factory=dict)
    raw_total: float = 1.0
    iterations: int = 0
    residual: float = 0.0

    def total_weight(self) -> float:
        return float(sum(self.entries.values()))

    def probabilities(self) -> Dict[str, float]:
        return dict(self.entries)

    def to_dict(self) -> Dict:
        return {
            "n_measured": self.n_measured,
            "raw_total": self.raw_total,
            "iterations": self.iterations,
            "residual": self.residual,
            "entries": {k: self.entries[k] for k in sorted(self.entries)},
        }


class RestrictedConfusion:
    """
    Confusion matrix restricted to observed bitstrings, columns renormalized.

    ``A[s, t] = prod_k A_k[s_k][t_k] / colsum[t]`` for s, t in the subspace.
    """

    def __init__(self, keys: Sequence[str], calibration: ReadoutCalibration):
        m = calibration.n_qubits
        # column k holds bit k, i.e. character m-1-k of the key
        self.bits = np.array([[int(key[m - 1 - k]) for k in range(m)] for key in keys], dtype=np.int64)
        self.matrices = np.stack(calibration.matrices)
        self.size = len(keys)
        self._dense: Optional[np.ndarray] = None
        raw_diagonal = np.prod(self.matrices[np.arange(m), self.bits, self.bits], axis=1)
        self.column_sums = self._column_sums()
        if np.any(self.column_sums <= 0):
            raise CalibrationError("Restricted confusion matrix has an empty column")
        self.diagonal = raw_diagonal / self.column_sums
        if np.any(self.diagonal <= 0):
            raise CalibrationError("Restricted confusion matrix has a zero diagonal entry")

    def block(self, rows: slice) -> np.ndarray:
        """Un-normalized entries for a block of rows against every column"""
        row_bits = self.bits[rows]
        out = np.ones((row_bits.shape[0], self.size))
        for k in range(self.matrices.shape[0]):
            out *= self.matrices[k][row_bits[:, k][:, None], self.bits[:, k][None, :]]
        return out

    def _column_sums(self) -> np.ndarray:
        sums = np.zeros(self.size)
        for start in range(0, self.size, BLOCK_ROWS):
            sums += self.block(slice(start, start + BLOCK_ROWS)).sum(axis=0)
        return sums

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Restricted confusion matrix times ``x``"""
        scaled = np.ravel(x) / self.column_sums
        if self.size <= DENSE_CUTOFF:
            if self._dense is None:
                self._dense = self.block(slice(0, self.size))
            return self._dense @ scaled
        out = np.empty(self.size)
        for start in range(0, self.size, BLOCK_ROWS):
            rows = slice(start, start + BLOCK_ROWS)
            out[rows] = self.block(rows) @ scaled
        return out

    def as_operator(self) -> LinearOperator:
        """The restricted matrix as a scipy ``LinearOperator``"""
        return LinearOperator((self.size, self.size), matvec=self.matvec, dtype=np.float64)


def _normalized_vector(raw: Union[CountsDistribution, Dict[str, float]]):
    if isinstance(raw, CountsDistribution):
        probabilities = raw.probabilities()
        n_measured = raw.n_measured
    else:
        probabilities = dict(raw)
        n_measured = len(next(iter(probabilities))) if probabilities else 0
    keys = sorted(probabilities)
    return n_measured, keys, np.array([probabilities[k] for k in keys], dtype=np.float64)


def mitigate(raw: CountsDistribution, cal: ReadoutCalibration, tol: float = DEFAULT_TOLERANCE,
             max_iter: int = DEFAULT_MAX_ITERATIONS) -> QuasiDistribution:
    """Quasi-probabilities x solving A|_S x = p over the observed bitstrings S"""
    n_measured, keys, p = _normalized_vector(raw)
    if not keys:
        raise ValidationError("Cannot mitigate an empty distribution")
    if cal.n_qubits != n_measured:
        raise ValidationError(f"Calibration covers {cal.n_qubits} qubits, distribution has {n_measured}")
    if tol <= 0 or max_iter < 1:
        raise ConfigurationError(f"tol must be > 0 and max_iter >= 1, got {tol}, {max_iter}")

    confusion = RestrictedConfusion(keys, cal)
    operator = confusion.as_operator()
    x = np.zeros_like(p)
    residual = p.copy()
    residual_norm = float(np.abs(residual).sum())
    for iteration in range(1, max_iter + 1):
        x = x + residual / confusion.diagonal
        residual = p - operator.matvec(x)
        residual_norm = float(np.abs(residual).sum())
        if residual_norm < tol:
            logger.debug(f"Mitigation converged in {iteration} iteration(s) over {len(keys)} bitstrings")
            return QuasiDistribution(n_measured=n_measured, entries=dict(zip(keys, x.tolist())),
                                     raw_total=float(p.sum()), iterations=iteration, residual=residual_norm)
    raise MitigationConvergenceError(residual_norm, max_iter)


def expectations_from_quasi(q, n_measured: int) -> np.ndarray:
    """<Z> per measured position: P(bit=0) - P(bit=1), weights taken signed"""
    entries = q.entries
    total = float(sum(entries.values()))
    if abs(total) <= DEGENERATE_TOTAL:
        raise UndefinedMetricError("Distribution has (near) zero total weight")
    expectations = np.zeros(n_measured)
    for key, weight in entries.items():
        if len(key) != n_measured:
            raise ValidationError(f"Bitstring {key!r} does not have {n_measured} bits")
        for k in range(n_measured):
            expectations[k] += weight if key[n_measured - 1 - k] == "0" else -weight
    return expectations / total
