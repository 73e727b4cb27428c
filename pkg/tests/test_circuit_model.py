#!/usr/bin/env python3
"""
Tests for circuit templates, binding, persistence and device files
"""

import math

import numpy as np
import pytest

from circuit_model import (
    CLIFFORD_ANGLES,
    CircuitTemplate,
    DEFAULT_DEVICE_PATH,
    FeatureVector,
    ParameterVector,
    bind,
    circuit_stats,
    clifford_replica,
    default_measured_qubits,
    deserialize_circuit,
    format_device,
    linear_chain_device,
    load_circuit,
    load_device,
    measured_qubit_count,
    parse_device,
    save_circuit,
    serialize_circuit,
    simulate_batch,
    validate_against_device,
)
from errors import CircuitParseError, ConfigurationError, ValidationError
from statevector import GateKind, run_circuit


def big_template(n_embed=49, n_params=120, seed=0):
    rng = np.random.default_rng(seed)
    axes = ("RX", "RY", "RZ")
    embedding = tuple((j % 4, axes[rng.integers(0, 3)]) for j in range(n_embed))
    variational = tuple((int(rng.integers(0, 4)), axes[rng.integers(0, 3)]) for _ in range(n_params))
    positions = sorted(rng.choice(n_params + 5, size=5, replace=False).tolist())
    entanglers = tuple((p, i % 3, i % 3 + 1) for i, p in enumerate(positions))
    return CircuitTemplate(4, embedding, variational, entanglers, (3,))


class TestMeasurementRule:
    """Test the class-count to measured-qubit rule"""

    @pytest.mark.parametrize("n_classes,expected", [(2, 1), (4, 2), (3, 3), (8, 8)])
    def test_count(self, n_classes, expected):
        """2 classes use 1 qubit, 4 use 2, otherwise one per class"""
        assert measured_qubit_count(n_classes) == expected

    def test_last_qubits(self):
        """Measured qubits are the last k logical qubits"""
        assert default_measured_qubits(4, 4) == (2, 3)

    def test_too_many_classes(self):
        """More measured qubits than the circuit has is a configuration error"""
        with pytest.raises(ConfigurationError):
            default_measured_qubits(4, 5)


class TestTemplate:
    """Test template validation and stream layout"""

    def test_program_interleaving(self, small_template):
        """CNOTs sit at their recorded stream positions after the embedding"""
        kinds = [op.kind for op in small_template.program]
        assert kinds[:4] == [GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.RY]
        assert kinds[4 + 2] is GateKind.CNOT
        assert kinds[4 + 5] is GateKind.CNOT
        assert len(kinds) == small_template.gate_count == 12

    def test_duplicate_position(self):
        """Two entanglers cannot share a stream position"""
        with pytest.raises(ValidationError):
            CircuitTemplate(2, ((0, "RX"),), ((0, "RY"),), ((0, 0, 1), (0, 1, 0)), (1,))

    def test_bad_axis(self):
        """Only RX, RY and RZ are valid slot axes"""
        with pytest.raises(ValidationError):
            CircuitTemplate(2, ((0, "H"),), (), (), (1,))

    def test_feature_range(self):
        """Features outside [0, pi] are rejected"""
        FeatureVector([0.0, math.pi])
        with pytest.raises(ValidationError):
            FeatureVector([-0.01])
        with pytest.raises(ValidationError):
            FeatureVector([math.pi + 1e-6])

    def test_parameters_finite(self):
        """Parameters must be finite"""
        with pytest.raises(ValidationError):
            ParameterVector([0.1, float("nan")])


class TestBind:
    """Test binding features and parameters into gate streams"""

    def test_single_slot(self):
        """One RY slot bound to pi gives RY(pi) on q0"""
        template = CircuitTemplate(1, ((0, "RY"),), (), (), (0,))
        gates = bind(template, [math.pi], [])
        assert len(gates) == 1
        assert gates[0].kind is GateKind.RY and gates[0].qubits == (0,) and gates[0].angle == pytest.approx(math.pi)

    def test_stream_length(self):
        """A 49-feature template binds 49 embedding rotations"""
        template = big_template()
        gates = bind(template, np.full(49, 0.5), np.zeros(120))
        assert len(gates) == 49 + 120 + 5
        assert all(g.angle == 0.5 for g in gates[:49])

    def test_zero_params_match_embedding(self, small_template, rng):
        """Zero parameters leave the embedding-only distribution unchanged"""
        features = rng.uniform(0, math.pi, size=4)
        embed_only = CircuitTemplate(3, small_template.embedding_slots, (), (), (2,))
        rotations_only = CircuitTemplate(3, small_template.embedding_slots, small_template.variational_slots, (), (2,))
        reference = run_circuit(3, bind(embed_only, features, []))
        zeroed = run_circuit(3, bind(rotations_only, features, np.zeros(6)))
        assert np.allclose(zeroed.probabilities(), reference.probabilities(), atol=1e-12)

    def test_length_mismatch(self, small_template):
        """Wrong feature or parameter counts are validation errors"""
        with pytest.raises(ValidationError):
            bind(small_template, np.zeros(3), np.zeros(6))
        with pytest.raises(ValidationError):
            bind(small_template, np.zeros(4), np.zeros(5))

    def test_batch_matches_single(self, small_template, rng):
        """simulate_batch rows equal the single-sample simulations"""
        features = rng.uniform(0, math.pi, size=(5, 4))
        params = rng.uniform(0, 2 * math.pi, size=6)
        batch = simulate_batch(small_template, features, params)
        for row, f in zip(batch, features):
            single = run_circuit(3, bind(small_template, f, params))
            assert np.allclose(np.abs(row) ** 2, single.probabilities(), atol=1e-12)


class TestCliffordReplica:
    """Test Clifford snapping"""

    def test_deterministic(self, small_template):
        """Same seed gives identical streams"""
        assert clifford_replica(small_template, 5) == clifford_replica(small_template, 5)

    def test_angles(self, small_template):
        """Every rotation angle is a multiple of pi/2"""
        for gate in clifford_replica(small_template, 11):
            if gate.is_rotation:
                assert gate.angle in CLIFFORD_ANGLES

    def test_uniform_angles(self):
        """Over 32 replicas of 100 rotations each angle appears with frequency 0.25 +- 0.05"""
        template = big_template(n_embed=20, n_params=80)
        angles = [g.angle for seed in range(32) for g in clifford_replica(template, seed) if g.is_rotation]
        for value in CLIFFORD_ANGLES:
            assert abs(angles.count(value) / len(angles) - 0.25) < 0.05

    def test_stabilizer_probabilities(self, small_template):
        """Replica probabilities are multiples of 2^-n"""
        for seed in range(10):
            state = run_circuit(3, clifford_replica(small_template, seed))
            probs = state.probabilities() * 8
            assert np.allclose(probs, np.round(probs), atol=1e-9)


class TestDeviceValidation:
    """Test connectivity checks"""

    def test_non_edge(self):
        """Entangler (0, 2) on a 0-1-2 chain is a violation"""
        template = CircuitTemplate(3, (), ((0, "RX"),), ((1, 0, 2),), (2,))
        report = validate_against_device(template, linear_chain_device(3))
        assert not report
        assert report.violations[0]["kind"] == "entangler"

    def test_reversed_edge(self):
        """Edges are unordered"""
        template = CircuitTemplate(2, (), (), ((0, 1, 0),), (1,))
        assert validate_against_device(template, linear_chain_device(2))

    def test_no_entanglers(self):
        """An entangler-free template is always legal"""
        template = CircuitTemplate(3, ((0, "RY"),), (), (), (2,))
        assert validate_against_device(template, linear_chain_device(3))

    def test_layout_outside_device(self):
        """A physical qubit beyond the device is a violation"""
        template = CircuitTemplate(2, (), (), (), (1,), layout=(0, 5))
        report = validate_against_device(template, linear_chain_device(3))
        assert report.violations[0]["kind"] == "qubit"


class TestSerialization:
    """Test the circuit document format"""

    def test_round_trip(self):
        """A 4-qubit, 49-embed, 120-param template survives serialization"""
        template = big_template()
        params = ParameterVector(np.linspace(-3, 3, 120))
        doc = deserialize_circuit(serialize_circuit(template, params, {"n_classes": 2}))
        assert doc.template == template
        assert np.array_equal(doc.params.values, params.values)
        assert doc.meta == {"n_classes": "2"}

    def test_file_round_trip(self, small_template, tmp_path):
        """save_circuit / load_circuit keep the template"""
        path = tmp_path / "c.qc"
        save_circuit(str(path), small_template)
        doc = load_circuit(str(path))
        assert doc.template == small_template
        assert doc.params is None

    def test_meta_value_with_hash(self, small_template):
        """Values containing '#' are kept whole; only full lines are comments"""
        meta = {"dataset": "runs/set#2.qds", "note": "run #7"}
        text = serialize_circuit(small_template, meta=meta)
        text = text.replace("[DEVICE]", "# device block\n  # indented comment\n[DEVICE]")
        doc = deserialize_circuit(text)
        assert doc.meta == meta
        assert doc.template == small_template

    def test_fingerprint_stable(self, small_template):
        """Equal templates have equal fingerprints"""
        again = deserialize_circuit(serialize_circuit(small_template)).template
        assert again.fingerprint() == small_template.fingerprint()

    def test_truncated(self, small_template):
        """A truncated document names the missing section"""
        text = serialize_circuit(small_template)
        truncated = text.split("[MEASURE]")[0]
        with pytest.raises(CircuitParseError) as exc:
            deserialize_circuit(truncated)
        assert exc.value.section == "MEASURE"

    def test_nan_angle(self, small_template):
        """A NaN parameter is a parse error"""
        text = serialize_circuit(small_template, np.zeros(6)).replace("0.0\n", "NaN\n", 1)
        with pytest.raises(CircuitParseError):
            deserialize_circuit(text)

    def test_missing_header(self, small_template):
        """The format tag is required"""
        with pytest.raises(CircuitParseError):
            deserialize_circuit(serialize_circuit(small_template).replace("QCIRCUIT v1\n", ""))

    def test_stats(self, small_template):
        """Stats count gates and ASAP depth"""
        stats = circuit_stats(small_template)
        assert stats.gate_count == 12
        assert stats.n_entanglers == 2
        assert 1 <= stats.depth <= 12


class TestDeviceFiles:
    """Test the device description format"""

    def test_bundled_device(self):
        """The bundled heavy-hex fragment has 16 qubits and noise figures"""
        device = load_device(DEFAULT_DEVICE_PATH)
        assert device.n_qubits == 16
        assert device.p_dep_2q > device.p_dep_1q > 0

    def test_round_trip(self):
        """format_device / parse_device keep the description"""
        device = linear_chain_device(4, readout_flip=0.02, p_dep_1q=0.001, p_idle=0.002)
        again = parse_device(format_device(device))
        assert again.coupling_edges == device.coupling_edges
        assert again.p_idle == device.p_idle
        for a, b in zip(again.readout_confusion, device.readout_confusion):
            assert np.array_equal(a, b)

    def test_non_stochastic_readout(self):
        """Readout columns must sum to 1"""
        text = "[QUBITS]\n1\n[EDGES]\n[READOUT]\n0 0.9 0.1 0.2 0.8\n[GATE_ERRORS]\n"
        with pytest.raises(CircuitParseError):
            parse_device(text)

    def test_self_loop(self):
        """Edges may not be self-loops"""
        text = "[QUBITS]\n2\n[EDGES]\n1 1\n[READOUT]\n[GATE_ERRORS]\n"
        with pytest.raises(CircuitParseError):
            parse_device(text)


if __name__ == "__main__":
    pytest.main([__file__])
