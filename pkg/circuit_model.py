"""
Circuit templates, device descriptions and their text documents.

A template has three parts: angle-encoding rotations (one per feature), a
variational ansatz of trainable rotations interleaved with CNOT entanglers at
recorded stream positions, and the list of measured qubits. Qubit indices in a
template are logical; ``layout`` maps them onto physical device qubits.
"""

import hashlib
import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import CircuitParseError, ConfigurationError, ValidationError
from statevector import (
    GateKind,
    GateOp,
    MAX_QUBITS,
    apply_cnot,
    apply_single_qubit,
    rotation_matrices,
    zero_batch,
)

logger = logging.getLogger(__name__)

CIRCUIT_FORMAT_TAG = "QCIRCUIT v1"
ROTATION_AXES = ("RX", "RY", "RZ")
CLIFFORD_ANGLES = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
STOCHASTIC_TOLERANCE = 1e-9

DEFAULT_DEVICE_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "devices", "heavy_hex_16.txt")

Edge = FrozenSet[int]


def measured_qubit_count(n_classes: int) -> int:
    """1 qubit for 2 classes, 2 for 4 classes, otherwise one per class"""
    if n_classes < 2:
        raise ConfigurationError(f"Need at least 2 classes, got {n_classes}")
    if n_classes == 2:
        return 1
    if n_classes == 4:
        return 2
    return n_classes


def default_measured_qubits(n_qubits: int, n_classes: int) -> Tuple[int, ...]:
    """The last k logical qubits, k from ``measured_qubit_count``"""
    k = measured_qubit_count(n_classes)
    if k > n_qubits:
        raise ConfigurationError(f"{n_classes} classes need {k} measured qubits but the circuit has {n_qubits}")
    return tuple(range(n_qubits - k, n_qubits))


@dataclass
class DeviceDescription:
    n_qubits: int
    coupling_edges: FrozenSet[Edge]
    readout_confusion: List[np.ndarray]
    p_dep_1q: float = 0.0
    p_dep_2q: float = 0.0
    p_idle: float = 0.0
    epsilon_coherent: float = 0.0
    name: str = "device"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ConfigurationError(f"Device needs at least one qubit, got {self.n_qubits}")
        edges = set()
        for edge in self.coupling_edges:
            pair = tuple(int(q) for q in edge)
            if len(set(pair)) != 2:
                raise ConfigurationError(f"Coupling edge {pair} is a self-loop or malformed")
            if any(q < 0 or q >= self.n_qubits for q in pair):
                raise ConfigurationError(f"Coupling edge {pair} outside {self.n_qubits}-qubit device")
            edges.add(frozenset(pair))
        self.coupling_edges = frozenset(edges)

        self.readout_confusion = [np.asarray(m, dtype=np.float64) for m in self.readout_confusion]
        if len(self.readout_confusion) != self.n_qubits:
            raise ConfigurationError(
                f"Device has {self.n_qubits} qubits but {len(self.readout_confusion)} readout matrices")
        for q, matrix in enumerate(self.readout_confusion):
            check_confusion_matrix(matrix, f"readout matrix of qubit {q}")
        for name in ("p_dep_1q", "p_dep_2q", "p_idle"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be a probability, got {value}")

    def has_edge(self, a: int, b: int) -> bool:
        """True if the two physical qubits are coupled"""
        return frozenset((a, b)) in self.coupling_edges

    def neighbors(self, qubit: int) -> List[int]:
        """Physical qubits coupled to ``qubit``"""
        return sorted(q for edge in self.coupling_edges if qubit in edge for q in edge if q != qubit)

    def readout_error(self, qubit: int) -> float:
        """Mean of the two flip probabilities of ``qubit``"""
        matrix = self.readout_confusion[qubit]
        return float(matrix[1, 0] + matrix[0, 1]) / 2.0


def check_confusion_matrix(matrix: np.ndarray, what: str) -> None:
    """2x2, non-negative, columns (true states) summing to 1"""
    if matrix.shape != (2, 2):
        raise ConfigurationError(f"{what} must be 2x2, got shape {matrix.shape}")
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise ConfigurationError(f"{what} has negative or non-finite entries")
    if np.any(np.abs(matrix.sum(axis=0) - 1.0) > STOCHASTIC_TOLERANCE):
        raise ConfigurationError(f"{what} columns must sum to 1, got {matrix.sum(axis=0)}")


def linear_chain_device(n_qubits: int, readout_flip: float = 0.0, **rates) -> DeviceDescription:
    """Device with edges i - i+1 and symmetric readout flips"""
    flip = np.array([[1 - readout_flip, readout_flip], [readout_flip, 1 - readout_flip]])
    return DeviceDescription(
        n_qubits=n_qubits,
        coupling_edges=frozenset(frozenset((i, i + 1)) for i in range(n_qubits - 1)),
        readout_confusion=[flip.copy() for _ in range(n_qubits)],
        name=f"line-{n_qubits}",
        **rates,
    )


class ProgramOp(NamedTuple):
    """One gate slot: angle comes from ``feature`` or ``param`` index, or neither (CNOT)"""
    kind: GateKind
    qubits: Tuple[int, ...]
    feature: Optional[int] = None
    param: Optional[int] = None


@dataclass(frozen=True)
class CircuitTemplate:
    n_qubits: int
    embedding_slots: Tuple[Tuple[int, str], ...]
    variational_slots: Tuple[Tuple[int, str], ...]
    entanglers: Tuple[Tuple[int, int, int], ...]
    measured_qubits: Tuple[int, ...]
    layout: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        n = self.n_qubits
        if not 1 <= n <= MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n}")

        embedding = tuple(_check_slot(slot, n, "embedding") for slot in self.embedding_slots)
        variational = tuple(_check_slot(slot, n, "variational") for slot in self.variational_slots)
        entanglers = tuple(tuple(int(v) for v in e) for e in self.entanglers)
        measured = tuple(int(q) for q in self.measured_qubits)
        layout = tuple(range(n)) if self.layout is None else tuple(int(q) for q in self.layout)

        stream_length = len(variational) + len(entanglers)
        positions = set()
        for position, control, target in entanglers:
            if not 0 <= position < stream_length:
                raise ValidationError(f"Entangler position {position} outside ansatz stream of {stream_length}")
            if position in positions:
                raise ValidationError(f"Duplicate entangler position {position}")
            positions.add(position)
            if control == target or not (0 <= control < n and 0 <= target < n):
                raise ValidationError(f"Invalid entangler qubits ({control}, {target}) for {n} qubits")
        if len(set(measured)) != len(measured) or any(not 0 <= q < n for q in measured):
            raise ValidationError(f"Measured qubits must be distinct and < {n}, got {measured}")
        if len(layout) != n or len(set(layout)) != n or any(q < 0 for q in layout):
            raise ValidationError(f"Layout must map {n} logical qubits to distinct physical qubits, got {layout}")

        object.__setattr__(self, "embedding_slots", embedding)
        object.__setattr__(self, "variational_slots", variational)
        object.__setattr__(self, "entanglers", tuple(sorted(entanglers)))
        object.__setattr__(self, "measured_qubits", measured)
        object.__setattr__(self, "layout", layout)

    @property
    def n_embed(self) -> int:
        return len(self.embedding_slots)

    @property
    def n_params(self) -> int:
        return len(self.variational_slots)

    @property
    def gate_count(self) -> int:
        return self.n_embed + self.n_params + len(self.entanglers)

    @cached_property
    def program(self) -> Tuple[ProgramOp, ...]:
        """Gate slots in stream order: embedding, then ansatz interleaved by position"""
        ops = [ProgramOp(GateKind(axis), (q,), feature=j) for j, (q, axis) in enumerate(self.embedding_slots)]
        by_position = {pos: (c, t) for pos, c, t in self.entanglers}
        next_param = 0
        for position in range(self.n_params + len(self.entanglers)):
            if position in by_position:
                ops.append(ProgramOp(GateKind.CNOT, by_position[position]))
            else:
                q, axis = self.variational_slots[next_param]
                ops.append(ProgramOp(GateKind(axis), (q,), param=next_param))
                next_param += 1
        return tuple(ops)

    def fingerprint(self) -> str:
        """SHA-256 of the serialized template"""
        return hashlib.sha256(serialize_circuit(self).encode("utf-8")).hexdigest()


def _check_slot(slot, n_qubits: int, what: str) -> Tuple[int, str]:
    qubit, axis = int(slot[0]), str(slot[1]).upper()
    if axis not in ROTATION_AXES:
        raise ValidationError(f"{what} slot axis must be one of {ROTATION_AXES}, got {axis!r}")
    if not 0 <= qubit < n_qubits:
        raise ValidationError(f"{what} slot qubit {qubit} outside {n_qubits}-qubit circuit")
    return qubit, axis


@dataclass
class ParameterVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("Parameter values must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if np.any(self.values < 0.0) or np.any(self.values > math.pi) or not np.all(np.isfinite(self.values)):
            raise ValidationError("Feature values must lie within [0, pi]")

    def __len__(self) -> int:
        return len(self.values)


def _values(vector) -> np.ndarray:
    return vector.values if hasattr(vector, "values") else np.asarray(vector, dtype=np.float64).reshape(-1)


def _assemble(template: CircuitTemplate, embed_angles: Sequence[float], var_angles: Sequence[float]) -> List[GateOp]:
    gates = []
    for op in template.program:
        if op.feature is not None:
            gates.append(GateOp(op.kind, op.qubits, float(embed_angles[op.feature])))
        elif op.param is not None:
            gates.append(GateOp(op.kind, op.qubits, float(var_angles[op.param])))
        else:
            gates.append(GateOp(op.kind, op.qubits))
    return gates


def bind(template: CircuitTemplate, features, params) -> List[GateOp]:
    """Concrete gate stream for one sample"""
    feature_values = _values(features)
    param_values = _values(params)
    if len(feature_values) != template.n_embed:
        raise ValidationError(f"Template embeds {template.n_embed} features, got {len(feature_values)}")
    if len(param_values) != template.n_params:
        raise ValidationError(f"Template has {template.n_params} parameters, got {len(param_values)}")
    return _assemble(template, feature_values, param_values)


def clifford_replica(template: CircuitTemplate, seed: int) -> List[GateOp]:
    """Every rotation snapped to a uniformly drawn multiple of pi/2"""
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(CLIFFORD_ANGLES), size=template.n_embed + template.n_params)
    angles = [CLIFFORD_ANGLES[i] for i in picks]
    return _assemble(template, angles[:template.n_embed], angles[template.n_embed:])


def simulate_batch(template: CircuitTemplate, features: np.ndarray, params) -> np.ndarray:
    """Final states (batch, 2**n) for a batch of feature rows sharing ``params``"""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    param_values = _values(params)
    if features.shape[1] != template.n_embed:
        raise ValidationError(f"Template embeds {template.n_embed} features, got {features.shape[1]}")
    if len(param_values) != template.n_params:
        raise ValidationError(f"Template has {template.n_params} parameters, got {len(param_values)}")

    n = template.n_qubits
    psi = zero_batch(n, features.shape[0])
    for op in template.program:
        if op.kind is GateKind.CNOT:
            psi = apply_cnot(psi, op.qubits[0], op.qubits[1], n)
        elif op.feature is not None:
            psi = apply_single_qubit(psi, rotation_matrices(op.kind, features[:, op.feature]), op.qubits[0], n)
        else:
            psi = apply_single_qubit(psi, rotation_matrices(op.kind, param_values[op.param]), op.qubits[0], n)
    return psi


@dataclass
class DeviceValidationReport:
    ok: bool
    violations: List[Dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_against_device(template: CircuitTemplate, device: DeviceDescription) -> DeviceValidationReport:
    """List layout and coupling violations of a template on a device"""
    violations = []
    for logical, physical in enumerate(template.layout):
        if physical >= device.n_qubits:
            violations.append({"kind": "qubit", "logical": logical, "physical": physical,
                               "reason": f"physical qubit {physical} >= device size {device.n_qubits}"})
    for position, control, target in template.entanglers:
        pc, pt = template.layout[control], template.layout[target]
        if not device.has_edge(pc, pt):
            violations.append({"kind": "entangler", "position": position, "control": control, "target": target,
                               "physical": [pc, pt], "reason": f"({pc}, {pt}) is not a coupling edge"})
    return DeviceValidationReport(ok=not violations, violations=violations)


@dataclass
class CircuitStats:
    n_qubits: int
    n_embed: int
    n_params: int
    n_entanglers: int
    gate_count: int
    depth: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def circuit_depth(n_qubits: int, qubit_sets: Iterable[Sequence[int]]) -> int:
    """ASAP layer count"""
    frontier = [0] * n_qubits
    for qubits in qubit_sets:
        layer = max(frontier[q] for q in qubits) + 1
        for q in qubits:
            frontier[q] = layer
    return max(frontier) if frontier else 0


def circuit_stats(template: CircuitTemplate) -> CircuitStats:
    """Gate count, depth and slot counts of a template"""
    return CircuitStats(
        n_qubits=template.n_qubits,
        n_embed=template.n_embed,
        n_params=template.n_params,
        n_entanglers=len(template.entanglers),
        gate_count=template.gate_count,
        depth=circuit_depth(template.n_qubits, (op.qubits for op in template.program)),
    )


def read_sections(text: str, source: str = "<document>",
                  header: Optional[str] = None) -> "OrderedDict[str, List[Tuple[int, str]]]":
    """Split a ``[SECTION]`` document into (line number, content) lists; lines starting with ``#`` are comments"""
    sections: "OrderedDict[str, List[Tuple[int, str]]]" = OrderedDict()
    current = None
    seen_header = header is None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header:
            if line != header:
                raise CircuitParseError(f"expected format header {header!r}, got {line!r}", lineno, source=source)
            seen_header = True
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().upper()
            if current in sections:
                raise CircuitParseError("duplicate section", lineno, current, source)
            sections[current] = []
            continue
        if current is None:
            raise CircuitParseError(f"content outside any section: {line!r}", lineno, source=source)
        sections[current].append((lineno, line))
    if not seen_header:
        raise CircuitParseError(f"missing format header {header!r}", source=source)
    return sections


def _require(sections, name: str, source: str) -> List[Tuple[int, str]]:
    if name not in sections:
        raise CircuitParseError(f"missing section [{name}]", section=name, source=source)
    return sections[name]


def _key_values(rows: List[Tuple[int, str]], section: str, source: str) -> Dict[str, Tuple[int, str]]:
    values = {}
    for lineno, line in rows:
        if "=" not in line:
            raise CircuitParseError(f"expected 'key = value', got {line!r}", lineno, section, source)
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = (lineno, value)
    return values


def _parse_int(token: str, lineno: int, section: str, source: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise CircuitParseError(f"expected an integer, got {token!r}", lineno, section, source)


def _parse_float(token: str, lineno: int, section: str, source: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise CircuitParseError(f"expected a number, got {token!r}", lineno, section, source)
    if not math.isfinite(value):
        raise CircuitParseError(f"non-finite value {token!r}", lineno, section, source)
    return value


def _parse_slots(rows, section: str, source: str) -> List[Tuple[int, str]]:
    slots = []
    for lineno, line in rows:
        parts = line.split()
        if len(parts) != 2 or parts[1].upper() not in ROTATION_AXES:
            raise CircuitParseError(f"expected '<qubit> <RX|RY|RZ>', got {line!r}", lineno, section, source)
        slots.append((_parse_int(parts[0], lineno, section, source), parts[1].upper()))
    return slots


@dataclass
class CircuitDocument:
    template: CircuitTemplate
    params: Optional[ParameterVector] = None
    meta: Dict[str, str] = field(default_factory=dict)


def serialize_circuit(template: CircuitTemplate, params=None, meta: Optional[Dict[str, object]] = None) -> str:
    """Render a template, optional parameters and metadata as a QCIRCUIT document"""
    lines = [CIRCUIT_FORMAT_TAG]
    if meta:
        lines.append("[META]")
        lines.extend(f"{key} = {value}" for key, value in meta.items())
    lines.append("[DEVICE]")
    lines.append(f"n_qubits = {template.n_qubits}")
    lines.append("layout = " + " ".join(str(q) for q in template.layout))
    lines.append("[EMBED]")
    lines.extend(f"{q} {axis}" for q, axis in template.embedding_slots)
    lines.append("[VAR]")
    lines.extend(f"{q} {axis}" for q, axis in template.variational_slots)
    lines.append("[ENTANGLE]")
    lines.extend(f"{pos} {c} {t}" for pos, c, t in template.entanglers)
    lines.append("[MEASURE]")
    lines.extend(str(q) for q in template.measured_qubits)
    if params is not None:
        lines.append("[PARAMS]")
        lines.extend(repr(float(v)) for v in _values(params))
    return "\n".join(lines) + "\n"


def deserialize_circuit(text: str, source: str = "<circuit>") -> CircuitDocument:
    """Parse a QCIRCUIT document into template, parameters and metadata"""
    sections = read_sections(text, source, header=CIRCUIT_FORMAT_TAG)

    meta = {key: value for key, (_, value) in _key_values(sections.get("META", []), "META", source).items()}

    device = _key_values(_require(sections, "DEVICE", source), "DEVICE", source)
    if "n_qubits" not in device:
        raise CircuitParseError("missing field 'n_qubits'", section="DEVICE", source=source)
    lineno, value = device["n_qubits"]
    n_qubits = _parse_int(value, lineno, "DEVICE", source)
    layout = None
    if "layout" in device:
        lineno, value = device["layout"]
        layout = tuple(_parse_int(tok, lineno, "DEVICE", source) for tok in value.split())

    embedding = _parse_slots(_require(sections, "EMBED", source), "EMBED", source)
    variational = _parse_slots(_require(sections, "VAR", source), "VAR", source)

    entanglers = []
    for lineno, line in _require(sections, "ENTANGLE", source):
        parts = line.split()
        if len(parts) != 3:
            raise CircuitParseError(f"expected '<position> <control> <target>', got {line!r}", lineno, "ENTANGLE", source)
        entanglers.append(tuple(_parse_int(p, lineno, "ENTANGLE", source) for p in parts))

    measured = [_parse_int(line, lineno, "MEASURE", source) for lineno, line in _require(sections, "MEASURE", source)]

    params = None
    if "PARAMS" in sections:
        params = ParameterVector([_parse_float(line, lineno, "PARAMS", source) for lineno, line in sections["PARAMS"]])

    try:
        template = CircuitTemplate(n_qubits, tuple(embedding), tuple(variational), tuple(entanglers),
                                   tuple(measured), layout)
    except (ValidationError, ConfigurationError) as e:
        raise CircuitParseError(str(e), source=source)
    if params is not None and len(params) != template.n_params:
        raise CircuitParseError(f"{len(params)} parameters for a template with {template.n_params}",
                                section="PARAMS", source=source)
    return CircuitDocument(template=template, params=params, meta=meta)


def save_circuit(path: str, template: CircuitTemplate, params=None, meta: Optional[Dict[str, object]] = None) -> None:
    """Write a circuit document to ``path``"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_circuit(template, params, meta))
    logger.info(f"Wrote circuit document {path}")


def load_circuit(path: str) -> CircuitDocument:
    """Read a circuit document from ``path``"""
    with open(path, "r", encoding="utf-8") as f:
        return deserialize_circuit(f.read(), source=path)


def parse_device(text: str, source: str = "<device>") -> DeviceDescription:
    """Parse a device description document"""
    sections = read_sections(text, source)

    qubit_rows = _require(sections, "QUBITS", source)
    if len(qubit_rows) != 1:
        raise CircuitParseError("expected a single qubit count", section="QUBITS", source=source)
    lineno, line = qubit_rows[0]
    n_qubits = _parse_int(line, lineno, "QUBITS", source)

    edges = []
    for lineno, line in _require(sections, "EDGES", source):
        parts = line.split()
        if len(parts) != 2:
            raise CircuitParseError(f"expected '<a> <b>', got {line!r}", lineno, "EDGES", source)
        edges.append(frozenset(_parse_int(p, lineno, "EDGES", source) for p in parts))

    readout = [np.eye(2) for _ in range(n_qubits)]
    for lineno, line in _require(sections, "READOUT", source):
        parts = line.split()
        if len(parts) != 5:
            raise CircuitParseError(f"expected '<qubit> a00 a01 a10 a11', got {line!r}", lineno, "READOUT", source)
        qubit = _parse_int(parts[0], lineno, "READOUT", source)
        if not 0 <= qubit < n_qubits:
            raise CircuitParseError(f"qubit {qubit} outside device", lineno, "READOUT", source)
        values = [_parse_float(p, lineno, "READOUT", source) for p in parts[1:]]
        readout[qubit] = np.array(values).reshape(2, 2)

    rates = {}
    for key, (lineno, value) in _key_values(_require(sections, "GATE_ERRORS", source), "GATE_ERRORS", source).items():
        if key not in ("p_dep_1q", "p_dep_2q", "p_idle", "epsilon_coherent"):
            raise CircuitParseError(f"unknown gate error field {key!r}", lineno, "GATE_ERRORS", source)
        rates[key] = _parse_float(value, lineno, "GATE_ERRORS", source)

    name = os.path.splitext(os.path.basename(source))[0] if not source.startswith("<") else "device"
    try:
        return DeviceDescription(n_qubits=n_qubits, coupling_edges=frozenset(edges),
                                 readout_confusion=readout, name=name, **rates)
    except ConfigurationError as e:
        raise CircuitParseError(str(e), source=source)


def format_device(device: DeviceDescription) -> str:
    """Render a device description in the format ``parse_device`` reads"""
    lines = ["[QUBITS]", str(device.n_qubits), "[EDGES]"]
    lines.extend(f"{a} {b}" for a, b in sorted(tuple(sorted(e)) for e in device.coupling_edges))
    lines.append("[READOUT]")
    for q, m in enumerate(device.readout_confusion):
        lines.append(f"{q} " + " ".join(repr(float(v)) for v in m.reshape(-1)))
    lines.append("[GATE_ERRORS]")
    for key in ("p_dep_1q", "p_dep_2q", "p_idle", "epsilon_coherent"):
        lines.append(f"{key} = {float(getattr(device, key))!r}")
    return "\n".join(lines) + "\n"


def load_device(path: str = DEFAULT_DEVICE_PATH) -> DeviceDescription:
    """Load a device file (the bundled heavy-hex device by default)"""
    with open(path, "r", encoding="utf-8") as f:
        return parse_device(f.read(), source=path)
