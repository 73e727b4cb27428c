"""
Dense statevector simulation.

Amplitudes are little-endian: qubit 0 is the least significant bit of the
basis-state index, and rendered bitstrings put the first measured qubit in the
rightmost character. The single-state API (``init_state``, ``apply_gate``,
``expectation_z``, ``exact_probabilities``, ``sample_counts``) is pure; the
batch kernels below it operate on ``(batch, 2**n)`` arrays and are shared by
the trainer, the circuit search and the noise engine.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, QubitIndexError, ValidationError

logger = logging.getLogger(__name__)

MAX_QUBITS = 12
NORM_TOLERANCE = 1e-10
# marginal entries at or below this are treated as unobservable
PROBABILITY_FLOOR = 1e-14


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    S = "S"
    X = "X"
    Y = "Y"
    Z = "Z"
    CNOT = "CNOT"


ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})


@dataclass(frozen=True)
class GateOp:
    """One gate of a circuit stream; CNOT qubits are (control, target)"""
    kind: GateKind
    qubits: Tuple[int, ...]
    angle: Optional[float] = None

    def __post_init__(self):
        try:
            kind = GateKind(self.kind)
        except ValueError:
            raise ValidationError(f"Unknown gate kind: {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))

        arity = 2 if kind is GateKind.CNOT else 1
        if len(self.qubits) != arity:
            raise ValidationError(f"{kind.value} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValidationError(f"{kind.value} qubits must be distinct, got {self.qubits}")
        if any(q < 0 for q in self.qubits):
            raise QubitIndexError(f"Negative qubit index in {self.qubits}")

        if kind in ROTATION_KINDS:
            if self.angle is None or not math.isfinite(self.angle):
                raise ValidationError(f"{kind.value} requires a finite angle, got {self.angle}")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise ValidationError(f"{kind.value} takes no angle")

    @property
    def is_rotation(self) -> bool:
        return self.kind in ROTATION_KINDS


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValidationError(
                f"State of {self.n_qubits} qubits needs {1 << self.n_qubits} amplitudes, "
                f"got shape {self.amplitudes.shape}")

    def norm(self) -> float:
        """Squared norm of the amplitudes"""
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def probabilities(self) -> np.ndarray:
        """Born-rule probabilities over all basis states"""
        return np.abs(self.amplitudes) ** 2


@dataclass
class CountsDistribution:
    """Bitstring -> weight. ``total_shots == 0`` marks analytic probabilities."""
    n_measured: int
    entries: Dict[str, float] = field(default_factory=dict)
    total_shots: int = 0

    def __post_init__(self):
        for key in self.entries:
            if len(key) != self.n_measured or set(key) - {"0", "1"}:
                raise ValidationError(
                    f"Bitstring {key!r} does not match n_measured={self.n_measured}")

    @property
    def is_counts(self) -> bool:
        return self.total_shots > 0

    def total_weight(self) -> float:
        return float(sum(self.entries.values()))

    def probabilities(self) -> Dict[str, float]:
        """Entries scaled to probabilities (counts divided by shots)"""
        if self.is_counts:
            return {k: v / self.total_shots for k, v in self.entries.items()}
        return dict(self.entries)

    def to_dict(self) -> Dict:
        return {
            "n_measured": self.n_measured,
            "total_shots": self.total_shots,
            "entries": {k: self.entries[k] for k in sorted(self.entries)},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CountsDistribution":
        """Rebuild a distribution from its JSON form"""
        try:
            return cls(n_measured=int(data["n_measured"]),
                       entries={str(k): float(v) for k, v in data["entries"].items()},
                       total_shots=int(data.get("total_shots", 0)))
        except (KeyError, TypeError, AttributeError) as e:
            raise ValidationError(f"Malformed counts document: {e}")


_SQRT_HALF = 1.0 / math.sqrt(2.0)
FIXED_MATRICES = {
    GateKind.H: np.array([[_SQRT_HALF, _SQRT_HALF], [_SQRT_HALF, -_SQRT_HALF]], dtype=np.complex128),
    GateKind.S: np.array([[1, 0], [0, 1j]], dtype=np.complex128),
    GateKind.X: np.array([[0, 1], [1, 0]], dtype=np.complex128),
    GateKind.Y: np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    GateKind.Z: np.array([[1, 0], [0, -1]], dtype=np.complex128),
}

# Pauli generators G with R(theta) = exp(-i theta G / 2)
GENERATORS = {
    GateKind.RX: FIXED_MATRICES[GateKind.X],
    GateKind.RY: FIXED_MATRICES[GateKind.Y],
    GateKind.RZ: FIXED_MATRICES[GateKind.Z],
}


def rotation_matrices(kind: GateKind, angles: Union[float, np.ndarray]) -> np.ndarray:
    """Rotation unitaries; a scalar angle gives (2, 2), an array gives (len, 2, 2)"""
    theta = np.asarray(angles, dtype=np.float64)
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    out = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    if kind is GateKind.RX:
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif kind is GateKind.RY:
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif kind is GateKind.RZ:
        out[..., 0, 0] = np.exp(-0.5j * theta)
        out[..., 1, 1] = np.exp(0.5j * theta)
    else:
        raise ValidationError(f"{kind} is not a rotation")
    return out


def gate_matrix(gate: GateOp) -> np.ndarray:
    """2x2 unitary of a single-qubit gate"""
    if gate.is_rotation:
        return rotation_matrices(gate.kind, gate.angle)
    if gate.kind is GateKind.CNOT:
        raise ValidationError("CNOT has no single-qubit matrix")
    return FIXED_MATRICES[gate.kind]


def zero_batch(n_qubits: int, batch: int) -> np.ndarray:
    """A batch of |0...0> states, one per row"""
    psi = np.zeros((batch, 1 << n_qubits), dtype=np.complex128)
    psi[:, 0] = 1.0
    return psi


def apply_single_qubit(psi: np.ndarray, matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix, or one (2, 2) matrix per row, to ``qubit``"""
    batch = psi.shape[0]
    view = psi.reshape(batch, 1 << (n_qubits - 1 - qubit), 2, 1 << qubit)
    if matrix.ndim == 2:
        out = np.einsum("ij,bajc->baic", matrix, view)
    else:
        out = np.einsum("bij,bajc->baic", matrix, view)
    return out.reshape(batch, -1)


@lru_cache(maxsize=512)
def _cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    perm = idx.copy()
    active = ((idx >> control) & 1) == 1
    perm[active] = idx[active] ^ (1 << target)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=64)
def _flip_permutation(n_qubits: int, qubit: int) -> np.ndarray:
    perm = np.arange(1 << n_qubits) ^ (1 << qubit)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=64)
def z_signs(n_qubits: int, qubit: int) -> np.ndarray:
    """+1 where ``qubit`` is 0, -1 where it is 1, over all basis states"""
    signs = 1.0 - 2.0 * ((np.arange(1 << n_qubits) >> qubit) & 1)
    signs.setflags(write=False)
    return signs


def apply_cnot(psi: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    """Apply CNOT to every row by permuting basis indices"""
    return psi[:, _cnot_permutation(n_qubits, control, target)]


def apply_pauli(psi: np.ndarray, pauli: str, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply X, Y or Z to every row"""
    if pauli == "X":
        return psi[:, _flip_permutation(n_qubits, qubit)]
    if pauli == "Z":
        return psi * z_signs(n_qubits, qubit)
    if pauli == "Y":
        # Y = i X Z
        return 1j * (psi * z_signs(n_qubits, qubit))[:, _flip_permutation(n_qubits, qubit)]
    raise ValidationError(f"Unknown Pauli {pauli!r}")


def apply_gate_batch(psi: np.ndarray, gate: GateOp, n_qubits: int) -> np.ndarray:
    """Apply one gate to every row of a state batch"""
    if gate.kind is GateKind.CNOT:
        return apply_cnot(psi, gate.qubits[0], gate.qubits[1], n_qubits)
    return apply_single_qubit(psi, gate_matrix(gate), gate.qubits[0], n_qubits)


def z_expectations(probs: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """(batch, len(qubits)) array of P(q=0) - P(q=1) from (batch, 2**n) probabilities"""
    if len(qubits) == 0:
        return np.zeros((probs.shape[0], 0))
    signs = np.stack([z_signs(n_qubits, q) for q in qubits], axis=1)
    return probs @ signs


def marginal_probabilities(probs: np.ndarray, measured: Sequence[int], n_qubits: int) -> np.ndarray:
    """
    Marginalize (batch, 2**n) probabilities onto ``measured``.

    Returns (batch, 2**m) where column v has bit k of v equal to the outcome of
    ``measured[k]``.
    """
    batch = probs.shape[0]
    tensor = probs.reshape((batch,) + (2,) * n_qubits)
    # axis 1 + (n - 1 - q) holds qubit q
    keep = [1 + n_qubits - 1 - q for q in reversed(measured)]
    drop = tuple(a for a in range(1, n_qubits + 1) if a not in keep)
    reduced = tensor.sum(axis=drop) if drop else tensor
    remaining = sorted(keep)
    order = [0] + [1 + remaining.index(a) for a in keep]
    return reduced.transpose(order).reshape(batch, -1)


def bitstring(value: int, width: int) -> str:
    """Format an integer as a fixed-width bitstring"""
    return format(value, f"0{width}b") if width else ""


def _check_qubits(qubits: Iterable[int], n_qubits: int) -> None:
    for q in qubits:
        if q < 0 or q >= n_qubits:
            raise QubitIndexError(f"Qubit {q} out of range for {n_qubits}-qubit register")


def _check_measured(measured: Sequence[int], n_qubits: int) -> List[int]:
    measured = [int(q) for q in measured]
    if len(set(measured)) != len(measured):
        raise ValidationError(f"Measured qubits must be distinct, got {measured}")
    _check_qubits(measured, n_qubits)
    return measured


def init_state(n_qubits: int) -> StateVector:
    """|0...0> on ``n_qubits`` qubits (1..12)"""
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")
    amplitudes = np.zeros(1 << n_qubits, dtype=np.complex128)
    amplitudes[0] = 1.0
    return StateVector(int(n_qubits), amplitudes)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Apply one gate to a state, checking qubit indices"""
    _check_qubits(gate.qubits, state.n_qubits)
    psi = apply_gate_batch(state.amplitudes[np.newaxis, :], gate, state.n_qubits)
    return StateVector(state.n_qubits, psi[0])


def run_circuit(n_qubits: int, gates: Iterable[GateOp], state: Optional[StateVector] = None) -> StateVector:
    """Apply ``gates`` in order to ``state`` (default |0...0>)"""
    current = state if state is not None else init_state(n_qubits)
    psi = current.amplitudes[np.newaxis, :]
    for gate in gates:
        _check_qubits(gate.qubits, n_qubits)
        psi = apply_gate_batch(psi, gate, n_qubits)
    return StateVector(n_qubits, psi[0])


def expectation_z(state: StateVector, qubit: int) -> float:
    """Analytic <Z> of one qubit"""
    _check_qubits([qubit], state.n_qubits)
    probs = state.probabilities()[np.newaxis, :]
    return float(z_expectations(probs, [qubit], state.n_qubits)[0, 0])


def exact_probabilities(state: StateVector, measured: Sequence[int]) -> CountsDistribution:
    """Analytic marginal over ``measured``; zero-probability outcomes are omitted"""
    measured = _check_measured(measured, state.n_qubits)
    marginal = marginal_probabilities(state.probabilities()[np.newaxis, :], measured, state.n_qubits)[0]
    m = len(measured)
    entries = {bitstring(v, m): float(p) for v, p in enumerate(marginal) if p > PROBABILITY_FLOOR}
    return CountsDistribution(n_measured=m, entries=entries, total_shots=0)


def sample_counts(state: StateVector, measured: Sequence[int], shots: int, seed: int) -> CountsDistribution:
    """Multinomial draw of ``shots`` outcomes; deterministic for a fixed seed"""
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    measured = _check_measured(measured, state.n_qubits)
    marginal = marginal_probabilities(state.probabilities()[np.newaxis, :], measured, state.n_qubits)[0]
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, marginal / marginal.sum())
    m = len(measured)
    entries = {bitstring(v, m): int(c) for v, c in enumerate(counts) if c > 0}
    return CountsDistribution(n_measured=m, entries=entries, total_shots=int(shots))
