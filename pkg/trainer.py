"""
Classical training of circuit parameters.

Training is noiseless: expectations come straight from the statevector.
Gradients use adjoint differentiation by default; the parameter-shift rule is
kept as an independent check and selectable through ``TrainConfig``.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from circuit_model import CircuitTemplate, ParameterVector, measured_qubit_count, simulate_batch
from data_pipeline import SPLIT_TRAIN, SPLIT_VALIDATION, PreparedDataset, holdout_indices
from errors import ConfigurationError, TrainingDivergedError, UndefinedMetricError, ValidationError
from metrics import accuracy, auc
from seeding import derive_seed, make_rng
from statevector import (
    GENERATORS,
    GateKind,
    apply_cnot,
    apply_single_qubit,
    rotation_matrices,
    z_expectations,
    z_signs,
)

logger = logging.getLogger(__name__)

UNDECIDED = -1
VALIDATION_FRACTION = 0.1


class LossKind(str, Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross-entropy"


class GradientMode(str, Enum):
    ADJOINT = "adjoint"
    PARAMETER_SHIFT = "parameter-shift"


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 128
    loss_kind: Optional[LossKind] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    gradient_mode: GradientMode = GradientMode.ADJOINT

    def __post_init__(self):
        if self.loss_kind is not None:
            self.loss_kind = LossKind(self.loss_kind)
        self.gradient_mode = GradientMode(self.gradient_mode)
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is allowed so a run can be replayed without moving the parameters
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError(f"learning_rate must be a finite value >= 0, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigurationError("Adam betas must lie in [0, 1) and eps must be positive")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["loss_kind"] = self.loss_kind.value if self.loss_kind else None
        data["gradient_mode"] = self.gradient_mode.value
        return data


@dataclass
class MeasurementPlan:
    """
    How measured expectations become class decisions.

    2 classes: one qubit, class c targets <Z> = 1 - 2c.
    4 classes: two qubits, class bits (b1, b0) target (1 - 2 b1, 1 - 2 b0),
    b1 on the first measured qubit.
    Otherwise one qubit per class, scored by argmax.
    """
    n_classes: int
    measured_qubits: Tuple[int, ...]

    def __post_init__(self):
        self.measured_qubits = tuple(int(q) for q in self.measured_qubits)
        expected = measured_qubit_count(self.n_classes)
        if len(self.measured_qubits) != expected:
            raise ConfigurationError(
                f"{self.n_classes} classes need {expected} measured qubit(s), got {len(self.measured_qubits)}")

    @classmethod
    def for_template(cls, template: CircuitTemplate, n_classes: int) -> "MeasurementPlan":
        """Uses the last k measured qubits of the template"""
        k = measured_qubit_count(n_classes)
        if len(template.measured_qubits) < k:
            raise ConfigurationError(
                f"{n_classes} classes need {k} measured qubit(s), template measures {len(template.measured_qubits)}")
        return cls(n_classes, template.measured_qubits[-k:])

    @property
    def default_loss(self) -> LossKind:
        """MSE for two or four classes, cross-entropy otherwise"""
        return LossKind.MSE if self.n_classes in (2, 4) else LossKind.CROSS_ENTROPY

    @property
    def score_map(self) -> np.ndarray:
        """(k, n_classes) matrix W with class scores = expectations @ W"""
        if self.n_classes == 2:
            return np.array([[1.0, -1.0]])
        if self.n_classes == 4:
            return self.corners.T
        return np.eye(self.n_classes)

    @property
    def corners(self) -> np.ndarray:
        """Target <Z> pairs for the four classes"""
        classes = np.arange(4)
        return np.stack([1.0 - 2.0 * (classes >> 1), 1.0 - 2.0 * (classes & 1)], axis=1)

    def targets(self, labels) -> np.ndarray:
        """Target expectations for each label"""
        labels = self._check_labels(labels)
        if self.n_classes == 2:
            return (1.0 - 2.0 * labels)[:, np.newaxis]
        if self.n_classes == 4:
            return self.corners[labels]
        return 2.0 * np.eye(self.n_classes)[labels] - 1.0

    def class_scores(self, expectations) -> np.ndarray:
        """Per-class scores from measured expectations"""
        rows = np.atleast_2d(np.asarray(expectations, dtype=np.float64))
        return rows @ self.score_map

    def predict_classes(self, expectations) -> np.ndarray:
        """Class per row; binary <Z> of exactly 0 is undecided"""
        rows = np.atleast_2d(np.asarray(expectations, dtype=np.float64))
        if self.n_classes == 2:
            values = rows[:, 0]
            return np.where(values > 0, 0, np.where(values < 0, 1, UNDECIDED))
        # argmax takes the lowest index on ties
        return np.argmax(self.class_scores(rows), axis=1)

    def _check_labels(self, labels) -> np.ndarray:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if np.any(labels < 0) or np.any(labels >= self.n_classes):
            raise ValidationError(f"Labels must lie in [0, {self.n_classes}), got {labels.tolist()}")
        return labels

    def to_dict(self) -> Dict:
        return {"n_classes": self.n_classes, "measured_qubits": list(self.measured_qubits),
                "default_loss": self.default_loss.value}


def predict_class(expectations, plan: MeasurementPlan) -> int:
    """Class index for one expectation vector; -1 when a binary <Z> is exactly 0"""
    return int(plan.predict_classes(np.asarray(expectations, dtype=np.float64).reshape(1, -1))[0])


def forward(template: CircuitTemplate, params, features, measured: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Analytic <Z> of each measured qubit.

    A single feature vector gives shape (k,); a (batch, n_embed) array gives
    (batch, k).
    """
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    measured = template.measured_qubits if measured is None else tuple(measured)
    psi = simulate_batch(template, features.reshape(1, -1) if single else features, params)
    values = z_expectations(np.abs(psi) ** 2, measured, template.n_qubits)
    return values[0] if single else values


def batch_loss(expectations: np.ndarray, labels, plan: MeasurementPlan,
               kind: LossKind) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and their derivatives with respect to the expectations"""
    rows = np.atleast_2d(expectations)
    labels = plan._check_labels(labels)
    kind = LossKind(kind)
    if kind is LossKind.MSE:
        diff = rows - plan.targets(labels)
        return np.mean(diff ** 2, axis=1), 2.0 * diff / rows.shape[1]
    scores = plan.class_scores(rows)
    losses = -log_softmax(scores, axis=1)[np.arange(len(labels)), labels]
    d_scores = softmax(scores, axis=1)
    d_scores[np.arange(len(labels)), labels] -= 1.0
    return losses, d_scores @ plan.score_map.T


def loss(expectations, label: int, plan: MeasurementPlan, kind: Optional[LossKind] = None) -> float:
    """Loss of one sample"""
    kind = plan.default_loss if kind is None else kind
    values, _ = batch_loss(np.asarray(expectations, dtype=np.float64).reshape(1, -1), [label], plan, kind)
    return float(values[0])


def _slot_angles(template: CircuitTemplate, op, features: np.ndarray, params: np.ndarray):
    if op.feature is not None:
        return features[:, op.feature]
    return params[op.param]


def _adjoint_gradient(template: CircuitTemplate, params: np.ndarray, features: np.ndarray,
                      weights: np.ndarray, measured: Sequence[int]) -> np.ndarray:
    n = template.n_qubits
    psi = simulate_batch(template, features, params)
    signs = np.stack([z_signs(n, q) for q in measured], axis=1)
    # observable sum_k w_k Z_k is diagonal, so its action is a row-wise scaling
    lam = (weights @ signs.T) * psi
    grad = np.zeros(len(params))
    for op in reversed(template.program):
        if op.kind is GateKind.CNOT:
            psi = apply_cnot(psi, op.qubits[0], op.qubits[1], n)
            lam = apply_cnot(lam, op.qubits[0], op.qubits[1], n)
            continue
        qubit = op.qubits[0]
        if op.param is not None:
            mu = apply_single_qubit(psi, GENERATORS[op.kind], qubit, n)
            grad[op.param] += 2.0 * np.real(np.sum(np.conj(lam) * (-0.5j) * mu))
        inverse = rotation_matrices(op.kind, -_slot_angles(template, op, features, params))
        psi = apply_single_qubit(psi, inverse, qubit, n)
        lam = apply_single_qubit(lam, inverse, qubit, n)
    return grad


def _parameter_shift_gradient(template: CircuitTemplate, params: np.ndarray, features: np.ndarray,
                              weights: np.ndarray, measured: Sequence[int]) -> np.ndarray:
    grad = np.zeros(len(params))
    shift = math.pi / 2.0
    for k in range(len(params)):
        plus, minus = params.copy(), params.copy()
        plus[k] += shift
        minus[k] -= shift
        d_expectations = 0.5 * (forward(template, plus, features, measured) -
                                forward(template, minus, features, measured))
        grad[k] = float(np.sum(weights * d_expectations))
    return grad


def observable_gradient(template: CircuitTemplate, params, features, weights,
                        mode: GradientMode = GradientMode.ADJOINT,
                        measured: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Gradient of sum_{b,k} weights[b, k] * <Z_{measured[k]}>(sample b).

    With weights = dL/d<Z> this is the chain rule through any loss.
    """
    params = np.asarray(getattr(params, "values", params), dtype=np.float64).reshape(-1)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    measured = template.measured_qubits if measured is None else tuple(measured)
    weights = np.asarray(weights, dtype=np.float64).reshape(features.shape[0], len(measured))
    if GradientMode(mode) is GradientMode.ADJOINT:
        return _adjoint_gradient(template, params, features, weights, measured)
    return _parameter_shift_gradient(template, params, features, weights, measured)


def loss_and_gradient(template: CircuitTemplate, params, features, labels, plan: MeasurementPlan,
                      config: TrainConfig) -> Tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient"""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] == 0:
        raise ValidationError("Gradient of an empty batch")
    kind = config.loss_kind or plan.default_loss
    expectations = forward(template, params, features, plan.measured_qubits)
    losses, d_expectations = batch_loss(expectations, labels, plan, kind)
    weights = d_expectations / features.shape[0]
    grad = observable_gradient(template, params, features, weights, config.gradient_mode, plan.measured_qubits)
    return float(losses.mean()), grad


def gradient(template: CircuitTemplate, params, batch: Tuple[np.ndarray, np.ndarray], plan: MeasurementPlan,
             config: TrainConfig) -> np.ndarray:
    """Loss gradient over one batch"""
    features, labels = batch
    return loss_and_gradient(template, params, features, labels, plan, config)[1]


class Adam:
    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        """In-place update of ``params``"""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grads * grads)

        params -= (self.lr / bc1) * self.m / (np.sqrt(self.v / bc2) + self.epsilon)

    def state_dict(self) -> Dict:
        """Moment estimates and step count as JSON-safe values"""
        return {"t": self.t,
                "m": None if self.m is None else self.m.tolist(),
                "v": None if self.v is None else self.v.tolist()}

    def load_state_dict(self, state: Dict) -> None:
        """Restore the state written by ``state_dict``"""
        self.t = int(state.get("t", 0))
        self.m = None if state.get("m") is None else np.array(state["m"], dtype=np.float64)
        self.v = None if state.get("v") is None else np.array(state["v"], dtype=np.float64)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    val_auc: Optional[float]

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped"""
    epoch: int
    params: np.ndarray
    optimizer: Dict
    best_params: np.ndarray
    best_epoch: int
    best_key: Tuple[float, float]
    history: List[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "epoch": self.epoch,
            "params": self.params.tolist(),
            "optimizer": self.optimizer,
            "best_params": self.best_params.tolist(),
            "best_epoch": self.best_epoch,
            "best_key": list(self.best_key),
        }

    @classmethod
    def from_dict(cls, data: Dict, history: Sequence[Dict] = ()) -> "TrainState":
        """Rebuild a resumable state from a history document"""
        try:
            return cls(
                epoch=int(data["epoch"]),
                params=np.array(data["params"], dtype=np.float64),
                optimizer=dict(data["optimizer"]),
                best_params=np.array(data["best_params"], dtype=np.float64),
                best_epoch=int(data["best_epoch"]),
                best_key=tuple(float(v) for v in data["best_key"]),
                history=[EpochRecord(**record) for record in history],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Malformed training state: {e}")


@dataclass
class TrainResult:
    params: ParameterVector
    final_params: ParameterVector
    history: List[EpochRecord]
    best_epoch: int
    state: TrainState
    loss_kind: LossKind


def split_for_training(dataset: PreparedDataset, seed: int) -> Tuple[PreparedDataset, PreparedDataset]:
    """Train split plus validation: tagged samples if any, else a seeded hold-out from train"""
    train_set = dataset.split(SPLIT_TRAIN)
    validation = dataset.split(SPLIT_VALIDATION)
    if validation.n_samples:
        return train_set, validation
    kept, held_out = holdout_indices(train_set.n_samples, VALIDATION_FRACTION, derive_seed(seed, "validation"))
    return train_set.subset(kept), train_set.subset(held_out)


def initial_params(template: CircuitTemplate, seed: int) -> np.ndarray:
    """Uniform draws in [0, 2π) from the seed"""
    return make_rng(seed, "init").uniform(0.0, 2.0 * math.pi, size=template.n_params)


def _validation_metrics(template: CircuitTemplate, params: np.ndarray, validation: PreparedDataset,
                        plan: MeasurementPlan, epoch: int) -> Tuple[float, Optional[float]]:
    if validation.n_samples == 0:
        return float("nan"), None
    expectations = forward(template, params, validation.features, plan.measured_qubits)
    acc = accuracy(expectations, validation.labels, plan)
    try:
        auc_value = auc(expectations, validation.labels, plan)
    except UndefinedMetricError as e:
        logger.warning(f"Epoch {epoch}: validation AUC undefined ({e})")
        auc_value = None
    return acc, auc_value


def train(template: CircuitTemplate, dataset: PreparedDataset, plan: MeasurementPlan, config: TrainConfig,
          resume: Optional[TrainState] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """
    Adam over seeded mini-batches; keeps the parameters with the best
    validation AUC (validation ACC breaks ties, earlier epochs win).
    """
    if dataset.n_classes != plan.n_classes:
        raise ConfigurationError(f"Dataset has {dataset.n_classes} classes, plan expects {plan.n_classes}")
    if dataset.n_features != template.n_embed:
        raise ConfigurationError(f"Dataset has {dataset.n_features} features, template embeds {template.n_embed}")
    train_set, validation = split_for_training(dataset, config.seed)
    if train_set.n_samples == 0:
        raise ValidationError("No training samples")
    kind = config.loss_kind or plan.default_loss
    logger.info(f"Training {template.n_params} parameters on {train_set.n_samples} samples "
                f"({validation.n_samples} validation), loss={kind.value}, gradients={config.gradient_mode.value}")

    optimizer = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    if resume is not None:
        params = resume.params.copy()
        optimizer.load_state_dict(resume.optimizer)
        best_params, best_epoch, best_key = resume.best_params.copy(), resume.best_epoch, resume.best_key
        history = list(resume.history)
        start = resume.epoch
        logger.info(f"Resuming after epoch {start}")
    else:
        params = initial_params(template, config.seed)
        best_params, best_epoch, best_key = params.copy(), 0, (-math.inf, -math.inf)
        history = []
        start = 0

    n_train = train_set.n_samples
    for epoch in range(start + 1, config.epochs + 1):
        order = make_rng(config.seed, "epoch", epoch).permutation(n_train)
        total = 0.0
        for batch_index, begin in enumerate(range(0, n_train, config.batch_size)):
            idx = order[begin:begin + config.batch_size]
            batch_loss_value, grad = loss_and_gradient(template, params, train_set.features[idx],
                                                       train_set.labels[idx], plan, config)
            if not math.isfinite(batch_loss_value) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(epoch, batch_index, batch_loss_value)
            optimizer.step(params, grad)
            total += batch_loss_value * len(idx)

        val_acc, val_auc = _validation_metrics(template, params, validation, plan, epoch)
        record = EpochRecord(epoch=epoch, train_loss=total / n_train, val_acc=val_acc, val_auc=val_auc)
        history.append(record)
        key = (-math.inf if val_auc is None else val_auc, -math.inf if math.isnan(val_acc) else val_acc)
        if key > best_key:
            best_key, best_epoch, best_params = key, epoch, params.copy()
        logger.info(f"Epoch {epoch}/{config.epochs}: loss={record.train_loss:.6f} "
                    f"val_acc={val_acc:.4f} val_auc={'n/a' if val_auc is None else f'{val_auc:.4f}'}")
        if on_epoch is not None:
            on_epoch(record)

    if best_epoch == 0:
        best_params = params.copy()
    state = TrainState(epoch=max(start, config.epochs), params=params.copy(), optimizer=optimizer.state_dict(),
                       best_params=best_params.copy(), best_epoch=best_epoch, best_key=best_key, history=history)
    return TrainResult(params=ParameterVector(best_params), final_params=ParameterVector(params), history=history,
                       best_epoch=best_epoch, state=state, loss_kind=kind)


def history_document(result: TrainResult, config: TrainConfig, meta: Dict[str, object]) -> Dict:
    """JSON document of a training run"""
    return {
        "meta": {k: meta[k] for k in sorted(meta)},
        "config": config.to_dict(),
        "loss_kind": result.loss_kind.value,
        "best_epoch": result.best_epoch,
        "history": [record.to_dict() for record in result.history],
        "state": result.state.to_dict(),
    }


def write_history(path: str, result: TrainResult, config: TrainConfig, meta: Dict[str, object]) -> None:
    """Write the training history JSON"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(history_document(result, config, meta), f, indent=2, allow_nan=True)
        f.write("\n")
    logger.info(f"Wrote training history {path}")


def read_train_state(path: str) -> TrainState:
    """Read the resumable state from a history file"""
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: not a training history document: {e}")
    if "state" not in document:
        raise ValidationError(f"{path}: training history has no resumable state")
    return TrainState.from_dict(document["state"], document.get("history", []))
