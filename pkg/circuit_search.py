"""
Device-aware candidate generation and ranking.

Candidates are random connectivity-legal templates on the best-read-out
connected subgraph of the device. Each is scored by

  cnr      mean 1 - TVD between analytic and noisy outcome distributions of
           Clifford-snapped replicas (all qubits measured)
  repcap   1 - |R_C - R_ref|_F^2 / (2 n_c d_c^2), R_C the mean state-fidelity
           matrix of d_c samples per class over random parameter draws

and ranked by f_score = cnr^alpha * repcap among candidates whose cnr clears
the threshold.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from circuit_model import (
    ROTATION_AXES,
    CircuitTemplate,
    DeviceDescription,
    circuit_stats,
    clifford_replica,
    default_measured_qubits,
    simulate_batch,
)
from data_pipeline import PreparedDataset, stratified_indices
from errors import ConfigurationError, ValidationError
from noise_engine import NoiseModel, noisy_sample
from seeding import derive_seed, make_rng
from statevector import CountsDistribution, exact_probabilities, run_circuit

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-6


@dataclass
class SearchConfig:
    n_candidates: int = 250
    m_replicas: int = 32
    replica_shots: int = 10000
    cnr_threshold: float = 0.7
    alpha_cnr: float = 0.5
    d_c: int = 16
    repcap_param_draws: int = 8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("n_candidates", "m_replicas", "replica_shots", "d_c", "repcap_param_draws", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.cnr_threshold <= 1.0:
            raise ConfigurationError(f"cnr_threshold must lie in [0, 1], got {self.cnr_threshold}")
        if not math.isfinite(self.alpha_cnr) or self.alpha_cnr < 0:
            raise ConfigurationError(f"alpha_cnr must be a finite value >= 0, got {self.alpha_cnr}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ScoredCircuit:
    index: int
    template: CircuitTemplate
    cnr: float
    repcap: Optional[float] = None
    f_score: Optional[float] = None
    passed_threshold: bool = False

    def to_row(self) -> Dict:
        """One report row for this candidate"""
        stats = circuit_stats(self.template)
        return {
            "index": self.index,
            "n_params": stats.n_params,
            "gates": stats.gate_count,
            "depth": stats.depth,
            "cnr": self.cnr,
            "repcap": self.repcap,
            "f_score": self.f_score,
            "excluded": not self.passed_threshold,
        }


@dataclass
class SearchResult:
    ledger: List[ScoredCircuit]
    ranking: List[ScoredCircuit] = field(default_factory=list)

    @property
    def best(self) -> Optional[ScoredCircuit]:
        """Top-ranked survivor, or None"""
        return self.ranking[0] if self.ranking else None

    @property
    def no_survivor(self) -> bool:
        return not self.ranking

    def to_dict(self) -> Dict:
        return {
            "n_candidates": len(self.ledger),
            "n_survivors": len(self.ranking),
            "best_index": None if self.best is None else self.best.index,
            "ranking": [c.index for c in self.ranking],
            "candidates": [c.to_row() for c in self.ledger],
        }


def _is_connected(device: DeviceDescription, qubits: Sequence[int]) -> bool:
    members = set(qubits)
    seen = {qubits[0]}
    frontier = [qubits[0]]
    while frontier:
        q = frontier.pop()
        for neighbor in device.neighbors(q):
            if neighbor in members and neighbor not in seen:
                seen.add(neighbor)
                frontier.append(neighbor)
    return seen == members


def select_subgraph(device: DeviceDescription, n_qubits: int) -> Tuple[int, ...]:
    """Connected physical qubit set with the lowest mean readout error, ties by lowest sorted tuple"""
    if not 1 <= n_qubits <= device.n_qubits:
        raise ConfigurationError(f"Cannot place {n_qubits} qubits on the {device.n_qubits}-qubit device {device.name}")
    best = None
    for subset in itertools.combinations(range(device.n_qubits), n_qubits):
        if not _is_connected(device, subset):
            continue
        key = (float(np.mean([device.readout_error(q) for q in subset])), subset)
        if best is None or key < best:
            best = key
    if best is None:
        raise ConfigurationError(f"No connected {n_qubits}-qubit subgraph on device {device.name}")
    logger.debug(f"Selected physical qubits {best[1]} (mean readout error {best[0]:.4g})")
    return best[1]


def _logical_edges(device: DeviceDescription, layout: Sequence[int]) -> List[Tuple[int, int]]:
    n = len(layout)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if device.has_edge(layout[i], layout[j])]


def generate_candidates(config: SearchConfig, device: DeviceDescription, n_qubits: int, n_embed: int,
                        n_params: int, n_classes: int = 2) -> List[CircuitTemplate]:
    """Draw ``n_candidates`` random connectivity-legal templates for the device"""
    if n_qubits > device.n_qubits:
        raise ConfigurationError(f"{n_qubits} qubits requested on the {device.n_qubits}-qubit device {device.name}")
    if n_embed < 0 or n_params < 0:
        raise ConfigurationError("n_embed and n_params must be non-negative")
    layout = select_subgraph(device, n_qubits)
    edges = _logical_edges(device, layout)
    measured = default_measured_qubits(n_qubits, n_classes)
    rng = make_rng(config.seed, "candidates", n_qubits, n_embed, n_params)

    passes, remainder = divmod(n_embed, n_qubits)
    candidates = []
    for _ in range(config.n_candidates):
        embed_qubits = [j % n_qubits for j in range(passes * n_qubits)]
        embed_qubits += rng.choice(n_qubits, size=remainder, replace=False).tolist()
        embed_axes = rng.integers(0, len(ROTATION_AXES), size=n_embed)
        embedding = tuple((q, ROTATION_AXES[a]) for q, a in zip(embed_qubits, embed_axes))

        var_qubits = rng.integers(0, n_qubits, size=n_params)
        var_axes = rng.integers(0, len(ROTATION_AXES), size=n_params)
        variational = tuple((int(q), ROTATION_AXES[a]) for q, a in zip(var_qubits, var_axes))

        n_entanglers = int(rng.integers(n_qubits - 1, 2 * n_qubits + 1)) if edges else 0
        stream = n_params + n_entanglers
        positions = rng.choice(stream, size=n_entanglers, replace=False) if n_entanglers else []
        entanglers = []
        for position in positions:
            a, b = edges[int(rng.integers(0, len(edges)))]
            if rng.integers(0, 2):
                a, b = b, a
            entanglers.append((int(position), a, b))

        candidates.append(CircuitTemplate(n_qubits, embedding, variational, tuple(entanglers), measured, layout))
    logger.info(f"Generated {len(candidates)} candidates: {n_qubits} qubits, {n_embed} features, "
                f"{n_params} parameters on physical qubits {list(layout)}")
    return candidates


Distribution = Union[CountsDistribution, Mapping[str, float]]


def _as_probabilities(dist: Distribution, what: str) -> Dict[str, float]:
    probabilities = dist.probabilities() if isinstance(dist, CountsDistribution) else dict(dist)
    total = sum(probabilities.values())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise ValidationError(f"{what} is not normalized (sums to {total})")
    return probabilities


def tvd(p: Distribution, q: Distribution) -> float:
    """Half the L1 distance; keys missing on one side count as 0"""
    p = _as_probabilities(p, "first distribution")
    q = _as_probabilities(q, "second distribution")
    return 0.5 * sum(abs(p.get(key, 0.0) - q.get(key, 0.0)) for key in set(p) | set(q))


def candidate_seed(config: SearchConfig, template: CircuitTemplate) -> int:
    """Seed for one candidate, derived from its fingerprint so order does not matter"""
    return derive_seed(config.seed, template.fingerprint())


def cnr(template: CircuitTemplate, noise: NoiseModel, config: SearchConfig, seed: Optional[int] = None) -> float:
    """Mean 1 - TVD between exact and noisy outcomes over Clifford replicas of a template"""
    base = candidate_seed(config, template) if seed is None else seed
    qubits = list(range(template.n_qubits))
    fidelities = []
    for i in range(config.m_replicas):
        gates = clifford_replica(template, derive_seed(base, "replica", i))
        ideal = exact_probabilities(run_circuit(template.n_qubits, gates), qubits)
        noisy = noisy_sample(gates, qubits, config.replica_shots, noise, derive_seed(base, "shots", i))
        fidelities.append(1.0 - tvd(ideal, noisy))
    return float(np.mean(fidelities))


def repcap_from_similarity(similarity: np.ndarray, labels: np.ndarray, n_classes: int, d_c: int) -> float:
    """1 - |R_C - R_ref|_F^2 / (2 n_c d_c^2); may be negative"""
    labels = np.asarray(labels)
    reference = (labels[:, np.newaxis] == labels[np.newaxis, :]).astype(np.float64)
    distance = float(np.sum((np.asarray(similarity) - reference) ** 2))
    return 1.0 - distance / (2.0 * n_classes * d_c ** 2)


def repcap(template: CircuitTemplate, dataset: PreparedDataset, config: SearchConfig,
           seed: Optional[int] = None) -> float:
    """Representation capacity of a template on a class-balanced data sample"""
    base = candidate_seed(config, template) if seed is None else seed
    chosen = stratified_indices(dataset.labels, config.d_c, dataset.n_classes, derive_seed(config.seed, "repcap"))
    features = dataset.features[chosen]
    similarity = np.zeros((len(chosen), len(chosen)))
    for t in range(config.repcap_param_draws):
        params = make_rng(base, "repcap-params", t).uniform(0.0, 2.0 * math.pi, size=template.n_params)
        psi = simulate_batch(template, features, params)
        similarity += np.abs(psi.conj() @ psi.T) ** 2
    similarity /= config.repcap_param_draws
    return repcap_from_similarity(similarity, dataset.labels[chosen], dataset.n_classes, config.d_c)


def _score_one(args) -> ScoredCircuit:
    index, template, noise, dataset, config = args
    base = candidate_seed(config, template)
    value = cnr(template, noise, config, seed=base)
    scored = ScoredCircuit(index=index, template=template, cnr=value,
                           passed_threshold=value >= config.cnr_threshold)
    if scored.passed_threshold:
        scored.repcap = repcap(template, dataset, config, seed=base)
        scored.f_score = value ** config.alpha_cnr * scored.repcap
    logger.debug(f"Candidate {index}: cnr={value:.4f} repcap={scored.repcap} f_score={scored.f_score}")
    return scored


def score_and_select(candidates: Sequence[CircuitTemplate], noise: NoiseModel, dataset: PreparedDataset,
                     config: SearchConfig) -> SearchResult:
    """Full ledger in candidate order plus survivors ranked by f_score, gate count, index"""
    if not candidates:
        raise ValidationError("No candidates to score")
    for template in candidates:
        if template.n_qubits != noise.n_qubits:
            raise ConfigurationError(f"Candidate has {template.n_qubits} qubits, noise model {noise.n_qubits}")
    for c in range(dataset.n_classes):
        available = int(np.sum(dataset.labels == c))
        if available < config.d_c:
            raise ValidationError(f"Class {c} has {available} samples, RepCap needs d_c={config.d_c}")

    jobs = [(i, t, noise, dataset, config) for i, t in enumerate(candidates)]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            ledger = list(pool.map(_score_one, jobs))
    else:
        ledger = [_score_one(job) for job in jobs]

    ranking = sorted((c for c in ledger if c.passed_threshold),
                     key=lambda c: (-c.f_score, c.template.gate_count, c.index))
    if ranking:
        best = ranking[0]
        logger.info(f"{len(ranking)}/{len(ledger)} candidates passed cnr >= {config.cnr_threshold}; "
                    f"best #{best.index} f_score={best.f_score:.4f}")
    else:
        logger.warning(f"No candidate reached cnr >= {config.cnr_threshold}")
    return SearchResult(ledger=ledger, ranking=ranking)


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_report(result: SearchResult, header: Sequence[str] = ()) -> str:
    """Fixed-width ledger of every candidate, ending with the best-candidate line"""
    columns = ["index", "n_params", "gates", "depth", "cnr", "repcap", "f_score", "excluded"]
    rows = [[_cell(row[c]) for c in columns] for row in (c.to_row() for c in result.ledger)]
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(columns)]
    lines = [f"# {line}" for line in header]
    lines.append("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)
    if result.best is not None:
        lines.append(f"best: #{result.best.index} f_score={result.best.f_score:.6f}")
    else:
        lines.append("best: no survivor")
    return "\n".join(lines) + "\n"
