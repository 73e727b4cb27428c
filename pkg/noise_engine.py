"""
Monte-Carlo trajectory sampling of noisy circuits.

Noise channels per trajectory:
  * coherent over-rotation: every RX/RY/RZ angle shifted by epsilon
  * depolarizing: after each gate, each involved qubit gets a uniformly random
    X/Y/Z with probability p_dep_1q (1-qubit gates) or p_dep_2q (CNOT)
  * idle dephasing: per layer, each qubit not touched by the layer gets Z with
    probability p_idle
  * readout: each measured bit flipped according to its confusion matrix

Dynamical decoupling and gate twirling are modeled as transforms of these
rates (``effective_noise``). Shots are simulated in chunks of whole
statevectors; chunk ``c`` draws from ``derive_seed(seed, c)``.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from circuit_model import DeviceDescription, check_confusion_matrix
from errors import ConfigurationError, QubitIndexError, ValidationError
from seeding import derive_seed, make_rng
from statevector import (
    CountsDistribution,
    GateKind,
    GateOp,
    MAX_QUBITS,
    apply_gate_batch,
    apply_pauli,
    bitstring,
    marginal_probabilities,
    run_circuit,
    sample_counts,
    zero_batch,
)

logger = logging.getLogger(__name__)

DEFAULT_KAPPA_DD = 0.25
# amplitudes per trajectory chunk; chunk size depends only on the qubit count
CHUNK_AMPLITUDES = 1 << 18
MIN_CALIBRATION_SHOTS = 1000
PAULIS = ("X", "Y", "Z")


@dataclass
class NoiseModel:
    n_qubits: int
    p_dep_1q: float = 0.0
    p_dep_2q: float = 0.0
    p_idle: float = 0.0
    epsilon_coherent: float = 0.0
    readout_confusion: List[np.ndarray] = field(default_factory=list)
    dd_enabled: bool = False
    twirling_enabled: bool = False
    kappa_dd: float = DEFAULT_KAPPA_DD

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigurationError(f"Noise model n_qubits must be in 1..{MAX_QUBITS}, got {self.n_qubits}")
        for name in ("p_dep_1q", "p_dep_2q", "p_idle", "kappa_dd"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if not math.isfinite(self.epsilon_coherent):
            raise ConfigurationError("epsilon_coherent must be finite")
        if not self.readout_confusion:
            self.readout_confusion = [np.eye(2) for _ in range(self.n_qubits)]
        self.readout_confusion = [np.asarray(m, dtype=np.float64) for m in self.readout_confusion]
        if len(self.readout_confusion) != self.n_qubits:
            raise ConfigurationError(
                f"{len(self.readout_confusion)} readout matrices for {self.n_qubits} qubits")
        for q, matrix in enumerate(self.readout_confusion):
            check_confusion_matrix(matrix, f"readout matrix of qubit {q}")

    @classmethod
    def ideal(cls, n_qubits: int) -> "NoiseModel":
        """Noise-free model on ``n_qubits`` qubits"""
        return cls(n_qubits=n_qubits)

    @classmethod
    def from_device(cls, device: DeviceDescription, layout: Optional[Sequence[int]] = None,
                    kappa_dd: float = DEFAULT_KAPPA_DD) -> "NoiseModel":
        """Noise of the physical qubits ``layout`` (default: all device qubits, in order)"""
        layout = list(range(device.n_qubits)) if layout is None else list(layout)
        for q in layout:
            if not 0 <= q < device.n_qubits:
                raise QubitIndexError(f"Physical qubit {q} not on {device.n_qubits}-qubit device")
        return cls(
            n_qubits=len(layout),
            p_dep_1q=device.p_dep_1q,
            p_dep_2q=device.p_dep_2q,
            p_idle=device.p_idle,
            epsilon_coherent=device.epsilon_coherent,
            readout_confusion=[device.readout_confusion[q].copy() for q in layout],
            kappa_dd=kappa_dd,
        )

    def with_flags(self, dd: bool = False, twirling: bool = False) -> "NoiseModel":
        """Copy with DD and twirling switched on or off"""
        return replace(self, dd_enabled=dd, twirling_enabled=twirling)

    @property
    def has_gate_noise(self) -> bool:
        """True when trajectories differ from shot to shot before readout"""
        return self.p_dep_1q > 0 or self.p_dep_2q > 0 or self.p_idle > 0

    @property
    def has_readout_noise(self) -> bool:
        """True when any readout matrix differs from the identity"""
        return any(not np.array_equal(m, np.eye(2)) for m in self.readout_confusion)


def effective_noise(noise: NoiseModel) -> NoiseModel:
    """
    Fold error suppression into the rates.

    DD scales idle dephasing by ``kappa_dd``; twirling turns the coherent
    over-rotation into stochastic noise, adding sin^2(epsilon/2) to p_dep_1q.
    Both flags are cleared on the result, so applying it twice is harmless.
    """
    if not noise.dd_enabled and not noise.twirling_enabled:
        return noise
    p_idle = noise.p_idle * noise.kappa_dd if noise.dd_enabled else noise.p_idle
    p_dep_1q = noise.p_dep_1q
    epsilon = noise.epsilon_coherent
    if noise.twirling_enabled:
        p_dep_1q = min(1.0, p_dep_1q + math.sin(epsilon / 2.0) ** 2)
        epsilon = 0.0
    return replace(noise, p_idle=p_idle, p_dep_1q=p_dep_1q, epsilon_coherent=epsilon,
                   dd_enabled=False, twirling_enabled=False)


def schedule_layers(gates: Sequence[GateOp]) -> List[List[GateOp]]:
    """Greedy packing in stream order: a layer closes when the next gate shares a qubit with it"""
    layers: List[List[GateOp]] = []
    current: List[GateOp] = []
    busy = set()
    for gate in gates:
        if busy.intersection(gate.qubits):
            layers.append(current)
            current, busy = [], set()
        current.append(gate)
        busy.update(gate.qubits)
    if current:
        layers.append(current)
    return layers


def _over_rotate(gate: GateOp, epsilon: float) -> GateOp:
    if epsilon and gate.is_rotation:
        return GateOp(gate.kind, gate.qubits, gate.angle + epsilon)
    return gate


def _random_pauli(psi: np.ndarray, qubit: int, p: float, rng: np.random.Generator, n_qubits: int) -> np.ndarray:
    hit = rng.random(psi.shape[0]) < p
    which = rng.integers(0, 3, size=psi.shape[0])
    for index, pauli in enumerate(PAULIS):
        rows = hit & (which == index)
        if rows.any():
            psi[rows] = apply_pauli(psi[rows], pauli, qubit, n_qubits)
    return psi


def _random_z(psi: np.ndarray, qubit: int, p: float, rng: np.random.Generator, n_qubits: int) -> np.ndarray:
    rows = rng.random(psi.shape[0]) < p
    if rows.any():
        psi[rows] = apply_pauli(psi[rows], "Z", qubit, n_qubits)
    return psi


def _apply_readout(values: np.ndarray, measured: Sequence[int], noise: NoiseModel,
                   rng: np.random.Generator) -> np.ndarray:
    """Flip bit k of each outcome per the confusion matrix of ``measured[k]``"""
    values = values.copy()
    for k, q in enumerate(measured):
        matrix = noise.readout_confusion[q]
        bit = (values >> k) & 1
        flip_probability = np.where(bit == 0, matrix[1, 0], matrix[0, 1])
        flips = rng.random(values.shape[0]) < flip_probability
        values ^= flips.astype(values.dtype) << k
    return values


def _measured_values(indices: np.ndarray, measured: Sequence[int]) -> np.ndarray:
    values = np.zeros_like(indices)
    for k, q in enumerate(measured):
        values |= ((indices >> q) & 1) << k
    return values


def _trajectory_chunk(layers: List[List[GateOp]], noise: NoiseModel, measured: Sequence[int], shots: int,
                      rng: np.random.Generator) -> np.ndarray:
    n = noise.n_qubits
    psi = zero_batch(n, shots)
    for layer in layers:
        busy = set()
        for gate in layer:
            psi = apply_gate_batch(psi, _over_rotate(gate, noise.epsilon_coherent), n)
            p = noise.p_dep_2q if gate.kind is GateKind.CNOT else noise.p_dep_1q
            if p > 0:
                for q in gate.qubits:
                    psi = _random_pauli(psi, q, p, rng, n)
            busy.update(gate.qubits)
        if noise.p_idle > 0:
            for q in range(n):
                if q not in busy:
                    psi = _random_z(psi, q, noise.p_idle, rng, n)

    probs = np.abs(psi) ** 2
    cumulative = np.cumsum(probs, axis=1)
    draws = rng.random((shots, 1)) * cumulative[:, -1:]
    indices = np.minimum((cumulative < draws).sum(axis=1), probs.shape[1] - 1)
    return _measured_values(indices, measured)


def _to_counts(values: np.ndarray, n_measured: int, shots: int) -> CountsDistribution:
    counts = np.bincount(values, minlength=1 << n_measured)
    entries = {bitstring(v, n_measured): int(c) for v, c in enumerate(counts) if c > 0}
    return CountsDistribution(n_measured=n_measured, entries=entries, total_shots=int(shots))


def noisy_sample(gates: Sequence[GateOp], measured: Sequence[int], shots: int, noise: NoiseModel,
                 seed: int) -> CountsDistribution:
    """Sample ``shots`` noisy outcomes of ``gates`` on the qubits ``measured``"""
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    noise = effective_noise(noise)
    n = noise.n_qubits
    measured = [int(q) for q in measured]
    if len(set(measured)) != len(measured):
        raise ValidationError(f"Measured qubits must be distinct, got {measured}")
    for q in measured + [q for gate in gates for q in gate.qubits]:
        if not 0 <= q < n:
            raise QubitIndexError(f"Qubit {q} out of range for {n}-qubit noise model")
    m = len(measured)

    if not noise.has_gate_noise:
        state = run_circuit(n, [_over_rotate(g, noise.epsilon_coherent) for g in gates])
        if not noise.has_readout_noise:
            return sample_counts(state, measured, shots, seed)
        marginal = marginal_probabilities(state.probabilities()[np.newaxis, :], measured, n)[0]
        rng = np.random.default_rng(seed)
        values = rng.choice(1 << m, size=shots, p=marginal / marginal.sum())
        return _to_counts(_apply_readout(values, measured, noise, rng), m, shots)

    layers = schedule_layers(gates)
    chunk = max(1, CHUNK_AMPLITUDES >> n)
    counts = np.zeros(1 << m, dtype=np.int64)
    for index, start in enumerate(range(0, shots, chunk)):
        size = min(chunk, shots - start)
        rng = make_rng(seed, index)
        values = _trajectory_chunk(layers, noise, measured, size, rng)
        values = _apply_readout(values, measured, noise, rng)
        counts += np.bincount(values, minlength=1 << m)
    logger.debug(f"noisy_sample: {len(gates)} gates, {shots} shots in {index + 1} chunk(s)")
    entries = {bitstring(v, m): int(c) for v, c in enumerate(counts) if c > 0}
    return CountsDistribution(n_measured=m, entries=entries, total_shots=int(shots))


def calibrate_readout(noise: NoiseModel, shots: int, seed: int) -> List[np.ndarray]:
    """
    Empirical per-qubit confusion matrices from |0...0> and |1...1> preparations.

    Column 0 is estimated from the all-zeros run, column 1 from the all-ones
    run; preparation gates see the model's gate noise.
    """
    if shots < MIN_CALIBRATION_SHOTS:
        raise ValidationError(f"Calibration needs at least {MIN_CALIBRATION_SHOTS} shots, got {shots}")
    n = noise.n_qubits
    qubits = list(range(n))
    zeros = noisy_sample([], qubits, shots, noise, derive_seed(seed, 0))
    ones = noisy_sample([GateOp(GateKind.X, (q,)) for q in qubits], qubits, shots, noise, derive_seed(seed, 1))

    matrices = []
    for q in qubits:
        position = n - 1 - q
        p1_given_0 = sum(c for key, c in zeros.entries.items() if key[position] == "1") / shots
        p0_given_1 = sum(c for key, c in ones.entries.items() if key[position] == "0") / shots
        matrices.append(np.array([[1.0 - p1_given_0, p0_given_1],
                                  [p1_given_0, 1.0 - p0_given_1]]))
    logger.debug(f"Calibrated readout of {n} qubits with {shots} shots per preparation")
    return matrices
