#!/usr/bin/env python3
"""
Tests for trajectory noise simulation and readout calibration
"""

import math

import numpy as np
import pytest

from circuit_model import linear_chain_device
from errors import ConfigurationError, QubitIndexError, ValidationError
from noise_engine import NoiseModel, calibrate_readout, effective_noise, noisy_sample, schedule_layers
from statevector import GateKind, GateOp, exact_probabilities, run_circuit, sample_counts

READOUT_09_08 = np.array([[0.9, 0.2], [0.1, 0.8]])


def flip_matrix(f0, f1):
    return np.array([[1 - f0, f1], [f0, 1 - f1]])


def random_rotations(rng, n, n_gates):
    gates = []
    for _ in range(n_gates):
        if n > 1 and rng.random() < 0.3:
            c, t = rng.choice(n, size=2, replace=False)
            gates.append(GateOp(GateKind.CNOT, (int(c), int(t))))
        else:
            kind = (GateKind.RX, GateKind.RY, GateKind.RZ)[rng.integers(0, 3)]
            gates.append(GateOp(kind, (int(rng.integers(0, n)),), float(rng.uniform(0, 2 * math.pi))))
    return gates


def tvd_to_exact(state, counts):
    exact = exact_probabilities(state, list(range(state.n_qubits))).entries
    sampled = counts.probabilities()
    keys = set(exact) | set(sampled)
    return 0.5 * sum(abs(exact.get(k, 0.0) - sampled.get(k, 0.0)) for k in keys)


class TestNoiseModel:
    """Test noise model construction"""

    def test_probability_range(self):
        """Rates outside [0, 1] are configuration errors"""
        with pytest.raises(ConfigurationError):
            NoiseModel(n_qubits=2, p_dep_1q=1.5)

    def test_from_device_layout(self):
        """Readout matrices follow the physical layout"""
        device = linear_chain_device(4, readout_flip=0.0, p_dep_2q=0.01)
        device.readout_confusion[2] = flip_matrix(0.03, 0.04)
        noise = NoiseModel.from_device(device, layout=(2, 3))
        assert noise.n_qubits == 2
        assert np.array_equal(noise.readout_confusion[0], flip_matrix(0.03, 0.04))
        assert noise.p_dep_2q == 0.01

    def test_from_device_bad_layout(self):
        """Layouts must stay on the device"""
        with pytest.raises(QubitIndexError):
            NoiseModel.from_device(linear_chain_device(2), layout=(0, 4))


class TestEffectiveNoise:
    """Test the DD and twirling rate transforms"""

    def test_flags_off(self):
        """No flags means no change"""
        noise = NoiseModel(n_qubits=1, p_idle=0.04, epsilon_coherent=0.1)
        assert effective_noise(noise) is noise

    def test_dd_scales_idle(self):
        """p_idle 0.04 with DD becomes 0.01"""
        noise = NoiseModel(n_qubits=1, p_idle=0.04).with_flags(dd=True)
        assert effective_noise(noise).p_idle == pytest.approx(0.01)

    def test_twirl_without_coherent_error(self):
        """With epsilon 0 twirling leaves p_dep_1q alone"""
        noise = NoiseModel(n_qubits=1, p_dep_1q=0.002).with_flags(twirling=True)
        assert effective_noise(noise).p_dep_1q == pytest.approx(0.002)

    def test_twirl_converts_coherent_error(self):
        """Twirling zeroes epsilon and adds sin^2(epsilon/2) to p_dep_1q"""
        noise = NoiseModel(n_qubits=1, p_dep_1q=0.001, epsilon_coherent=0.1).with_flags(twirling=True)
        out = effective_noise(noise)
        assert out.epsilon_coherent == 0.0
        assert out.p_dep_1q == pytest.approx(0.001 + math.sin(0.05) ** 2)

    def test_idempotent(self):
        """Applying the transform twice equals applying it once"""
        noise = NoiseModel(n_qubits=2, p_idle=0.04, epsilon_coherent=0.1).with_flags(dd=True, twirling=True)
        once = effective_noise(noise)
        twice = effective_noise(once)
        assert twice.p_idle == once.p_idle and twice.p_dep_1q == once.p_dep_1q


class TestScheduleLayers:
    """Test greedy layer packing"""

    def test_disjoint_gates_share_layer(self):
        """Gates on disjoint qubits pack together until a conflict"""
        gates = [GateOp(GateKind.H, (0,)), GateOp(GateKind.H, (1,)), GateOp(GateKind.CNOT, (0, 1)),
                 GateOp(GateKind.X, (2,))]
        layers = schedule_layers(gates)
        assert [len(layer) for layer in layers] == [2, 2]


class TestNoisySample:
    """Test Monte-Carlo trajectories"""

    def test_zero_noise_matches_sampling(self, rng):
        """All-zero rates reproduce sample_counts bit for bit"""
        gates = random_rotations(rng, 3, 25)
        state = run_circuit(3, gates)
        for seed in range(5):
            ideal = noisy_sample(gates, [0, 2], 4000, NoiseModel.ideal(3), seed)
            assert ideal.entries == sample_counts(state, [0, 2], 4000, seed).entries

    def test_readout_flip_rate(self):
        """X then readout [[0.9,0.2],[0.1,0.8]] reads '1' 80% of the time"""
        noise = NoiseModel(n_qubits=1, readout_confusion=[READOUT_09_08])
        counts = noisy_sample([GateOp(GateKind.X, (0,))], [0], 100_000, noise, 3)
        assert counts.entries["1"] / 100_000 == pytest.approx(0.8, abs=0.01)

    def test_full_depolarizing(self):
        """p_dep_1q = 1 after H gives an even split"""
        noise = NoiseModel(n_qubits=1, p_dep_1q=1.0)
        counts = noisy_sample([GateOp(GateKind.H, (0,))], [0], 100_000, noise, 5)
        assert counts.entries["0"] / 100_000 == pytest.approx(0.5, abs=0.01)

    def test_deterministic(self, rng):
        """Same seed, same noisy counts"""
        gates = random_rotations(rng, 3, 15)
        noise = NoiseModel(n_qubits=3, p_dep_1q=0.01, p_dep_2q=0.05, p_idle=0.01)
        assert noisy_sample(gates, [0, 1, 2], 3000, noise, 17).entries == \
            noisy_sample(gates, [0, 1, 2], 3000, noise, 17).entries

    def test_counts_total(self, rng):
        """Counts across chunks add up to the shot count"""
        gates = random_rotations(rng, 4, 10)
        noise = NoiseModel(n_qubits=4, p_dep_1q=0.01)
        counts = noisy_sample(gates, [3, 1], 40_000, noise, 2)
        assert sum(counts.entries.values()) == 40_000

    def test_measured_out_of_range(self):
        """Measuring past the register is an index error"""
        with pytest.raises(QubitIndexError):
            noisy_sample([], [2], 10, NoiseModel.ideal(2), 0)

    def test_zero_shots(self):
        """shots must be positive"""
        with pytest.raises(ValidationError):
            noisy_sample([], [0], 0, NoiseModel.ideal(1), 0)

    @pytest.mark.parametrize("theta", [math.pi / 4, 3 * math.pi / 4])
    def test_twirling_keeps_dominant_outcome(self, theta):
        """Twirled RY(theta) with epsilon 0.05 keeps the ideal argmax"""
        gates = [GateOp(GateKind.RY, (0,), theta)]
        ideal = exact_probabilities(run_circuit(1, gates), [0]).entries
        noise = NoiseModel(n_qubits=1, epsilon_coherent=0.05).with_flags(twirling=True)
        counts = noisy_sample(gates, [0], 100_000, noise, 9)
        assert max(counts.entries, key=counts.entries.get) == max(ideal, key=ideal.get)

    @pytest.mark.slow
    def test_depolarizing_monotone(self, rng):
        """Mean TVD to the exact distribution grows with p_dep_1q"""
        gates = random_rotations(rng, 4, 20)
        state = run_circuit(4, gates)
        means = []
        for p in (0.0, 0.002, 0.01, 0.05):
            noise = NoiseModel(n_qubits=4, p_dep_1q=p)
            means.append(np.mean([tvd_to_exact(state, noisy_sample(gates, [0, 1, 2, 3], 100_000, noise, s))
                                  for s in range(20)]))
        assert all(a <= b for a, b in zip(means, means[1:]))

    @pytest.mark.slow
    def test_dd_reduces_idle_error(self, rng):
        """Idle-only noise: DD never increases the mean TVD"""
        gates = random_rotations(rng, 4, 20)
        state = run_circuit(4, gates)
        plain = NoiseModel(n_qubits=4, p_idle=0.02)
        with_dd = plain.with_flags(dd=True)
        tvd_plain = np.mean([tvd_to_exact(state, noisy_sample(gates, [0, 1, 2, 3], 20_000, plain, s))
                             for s in range(20)])
        tvd_dd = np.mean([tvd_to_exact(state, noisy_sample(gates, [0, 1, 2, 3], 20_000, with_dd, s))
                          for s in range(20)])
        assert tvd_dd <= tvd_plain


class TestCalibrateReadout:
    """Test empirical readout calibration"""

    def test_identity_readout(self):
        """Noise-free readout calibrates to the identity"""
        for matrix in calibrate_readout(NoiseModel.ideal(2), 32000, 1):
            assert np.allclose(matrix, np.eye(2), atol=0.01)

    def test_recovers_flip_rates(self):
        """Per-qubit flip rates (0.02, 0.05) come back within 0.01"""
        noise = NoiseModel(n_qubits=2, readout_confusion=[flip_matrix(0.02, 0.05), flip_matrix(0.05, 0.02)])
        matrices = calibrate_readout(noise, 32000, 4)
        assert matrices[0][1, 0] == pytest.approx(0.02, abs=0.01)
        assert matrices[0][0, 1] == pytest.approx(0.05, abs=0.01)
        assert matrices[1][1, 0] == pytest.approx(0.05, abs=0.01)
        assert matrices[1][0, 1] == pytest.approx(0.02, abs=0.01)

    def test_columns_stochastic(self):
        """Empirical matrices have columns summing to 1"""
        noise = NoiseModel(n_qubits=1, readout_confusion=[READOUT_09_08])
        matrix = calibrate_readout(noise, 5000, 0)[0]
        assert np.allclose(matrix.sum(axis=0), 1.0)

    def test_deterministic(self):
        """Same seed, same matrices"""
        noise = NoiseModel(n_qubits=2, readout_confusion=[flip_matrix(0.02, 0.05)] * 2)
        first = calibrate_readout(noise, 2000, 8)
        second = calibrate_readout(noise, 2000, 8)
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_too_few_shots(self):
        """Fewer than 1000 shots is a validation error"""
        with pytest.raises(ValidationError):
            calibrate_readout(NoiseModel.ideal(1), 999, 0)


if __name__ == "__main__":
    pytest.main([__file__])
