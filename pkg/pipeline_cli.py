#!/usr/bin/env python3
"""
Command-line driver for the classifier pipeline.

Stages: synth -> preprocess -> search -> train -> infer / ablate -> report,
plus calibrate, mitigate and serve. Every artifact carries the tool version,
the master seed and the SHA-256 of its inputs; nothing time-dependent is
written, so reruns with the same inputs are byte-identical.

Exit codes: 0 ok, 2 input error, 3 empty result, 4 numerical failure.
"""

import argparse
import glob
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from circuit_model import (
    DEFAULT_DEVICE_PATH,
    bind,
    circuit_stats,
    load_circuit,
    load_device,
    save_circuit,
    validate_against_device,
)
from circuit_search import format_report, generate_candidates, score_and_select
from data_pipeline import (
    SPLIT_TEST,
    SPLIT_TRAIN,
    PreparedDataset,
    load,
    load_prepared,
    prepare,
    save_prepared,
    save_qds,
    synth_dataset,
    truncate,
)
from errors import (
    EXIT_INPUT_ERROR,
    EXIT_OK,
    ConfigurationError,
    NoSurvivorError,
    QMLError,
    ValidationError,
)
from metrics import EvaluationReport, evaluate
from mitigation import ReadoutCalibration, expectations_from_quasi, mitigate
from noise_engine import NoiseModel, calibrate_readout, noisy_sample
from run_config import (
    ABLATION_ROWS,
    MitigationFlags,
    RunConfig,
    apply_overrides,
    artifact_meta,
    load_run_config,
    require_files,
    resolve_output_dir,
)
from seeding import derive_seed
from statevector import CountsDistribution
from trainer import MeasurementPlan, read_train_state, train, write_history

logger = logging.getLogger(__name__)


def _path(config: RunConfig, name: str) -> str:
    return os.path.join(config.output_dir, name)


def _ensure_output_dir(config: RunConfig) -> None:
    os.makedirs(config.output_dir, exist_ok=True)


def _write_json(path: str, document) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    logger.info(f"Wrote {path}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info(f"Wrote {path}")


def cmd_synth(config: RunConfig, kind: str, n_per_class: int, test_per_class: int, side: int,
              output: Optional[str] = None) -> str:
    """Write a synthetic raw dataset"""
    _ensure_output_dir(config)
    output = output or _path(config, f"{kind}.qds")
    raw = synth_dataset(kind, n_per_class, side, config.seed, test_per_class=test_per_class)
    save_qds(raw, output)
    print(f"Wrote {raw.n_samples} synthetic '{kind}' samples ({side}x{side}, {raw.n_classes} classes) to {output}")
    return output


def cmd_preprocess(config: RunConfig, raw_path: str, out_side: int, output: Optional[str] = None,
                   n_classes: Optional[int] = None) -> str:
    """Pool and normalize a raw dataset into a prepared file"""
    require_files(raw_path)
    _ensure_output_dir(config)
    output = output or _path(config, "prepared.qdf")
    raw = load(raw_path, config.dataset_format, n_classes=n_classes)
    prepared = prepare(raw, out_side)
    save_prepared(prepared, output, artifact_meta(config.seed, {"raw": raw_path}, out_side=out_side))
    print(f"Prepared {prepared.n_samples} samples: {prepared.n_features} features each -> {output}")
    return output


def cmd_search(config: RunConfig, data_path: str, device_path: str) -> Dict:
    """Score candidates on the device and write the report and best circuit"""
    require_files(data_path, device_path)
    _ensure_output_dir(config)
    dataset = load_prepared(data_path)
    device = load_device(device_path)
    search_config = config.search

    candidates = []
    for n_params in config.n_params:
        candidates.extend(generate_candidates(search_config, device, config.n_qubits, dataset.n_features,
                                              n_params, dataset.n_classes))
    noise = NoiseModel.from_device(device, candidates[0].layout, kappa_dd=config.mitigation.kappa_dd)
    result = score_and_select(candidates, noise, dataset.split(SPLIT_TRAIN), search_config)

    meta = artifact_meta(config.seed, {"data": data_path, "device": device_path},
                         n_qubits=config.n_qubits, n_params=",".join(str(n) for n in config.n_params))
    header = [f"{key}: {value}" for key, value in meta.items()]
    report = {"meta": meta, "config": search_config.to_dict(), **result.to_dict()}
    _write_text(_path(config, "search_report.txt"), format_report(result, header))
    _write_json(_path(config, "search_report.json"), report)

    if result.no_survivor:
        raise NoSurvivorError(f"no survivor: all {len(candidates)} candidates fell below "
                              f"cnr threshold {search_config.cnr_threshold}")
    best = result.best
    circuit_meta = dict(meta)
    circuit_meta.update(candidate=best.index, cnr=best.cnr, repcap=best.repcap, f_score=best.f_score,
                        n_classes=dataset.n_classes, **{f"stats_{k}": v for k, v in circuit_stats(best.template).to_dict().items()})
    save_circuit(_path(config, "best_circuit.qc"), best.template, meta=circuit_meta)
    print(f"Scored {len(candidates)} candidates, {len(result.ranking)} passed; "
          f"best #{best.index} f_score={best.f_score:.4f}")
    return report


def cmd_train(config: RunConfig, circuit_path: str, data_path: str, resume_path: Optional[str] = None) -> Dict:
    """Train a circuit and write the checkpoint and history"""
    require_files(circuit_path, data_path, resume_path)
    _ensure_output_dir(config)
    document = load_circuit(circuit_path)
    dataset = load_prepared(data_path)
    plan = MeasurementPlan.for_template(document.template, dataset.n_classes)
    resume = read_train_state(resume_path) if resume_path else None

    result = train(document.template, dataset, plan, config.train, resume=resume)

    meta = artifact_meta(config.seed, {"circuit": circuit_path, "data": data_path},
                         n_classes=dataset.n_classes,
                         measured=" ".join(str(q) for q in plan.measured_qubits),
                         best_epoch=result.best_epoch, loss=result.loss_kind.value)
    save_circuit(_path(config, "checkpoint.qc"), document.template, result.params, meta=meta)
    write_history(_path(config, "history.json"), result, config.train, meta)
    last = result.history[-1] if result.history else None
    print(f"Trained {config.train.epochs} epochs (lr={config.train.learning_rate}, "
          f"batch={config.train.batch_size}); best epoch {result.best_epoch}"
          + (f", final loss {last.train_loss:.6f}" if last else ""))
    return {"best_epoch": result.best_epoch, "history": [r.to_dict() for r in result.history]}


def _load_checkpoint(checkpoint_path: str, dataset: PreparedDataset):
    document = load_circuit(checkpoint_path)
    if document.params is None:
        raise ValidationError(f"{checkpoint_path}: checkpoint has no [PARAMS] section")
    n_classes = int(document.meta.get("n_classes", dataset.n_classes))
    if n_classes != dataset.n_classes:
        raise ConfigurationError(f"Checkpoint trained for {n_classes} classes, data has {dataset.n_classes}")
    return document, MeasurementPlan.for_template(document.template, n_classes)


def _test_split(dataset: PreparedDataset, config: RunConfig) -> PreparedDataset:
    test = dataset.split(SPLIT_TEST)
    if test.n_samples == 0:
        raise ValidationError("Dataset has no test samples")
    return truncate(test, config.max_test, derive_seed(config.seed, "max-test"))


def noisy_expectations(template, params, features: np.ndarray, plan: MeasurementPlan, noise: NoiseModel,
                       flags: MitigationFlags, calibration: Optional[ReadoutCalibration], config: RunConfig) -> np.ndarray:
    """Per-sample <Z> from sampled counts, mitigated when ``flags.m3``; sample i uses its own derived seed"""
    noise = noise.with_flags(dd=flags.dd, twirling=flags.twirl)
    settings = config.mitigation
    k = len(plan.measured_qubits)

    def one(i: int) -> np.ndarray:
        """Expectations for sample ``i``"""
        gates = bind(template, features[i], params)
        counts = noisy_sample(gates, plan.measured_qubits, settings.shots, noise, derive_seed(config.seed, "infer", i))
        if flags.m3:
            return expectations_from_quasi(mitigate(counts, calibration, settings.tol, settings.max_iter), k)
        return expectations_from_quasi(counts, k)

    indices = range(len(features))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(one, indices))
    else:
        rows = [one(i) for i in indices]
    return np.array(rows).reshape(len(features), k)


def _readout_calibration(noise: NoiseModel, plan: MeasurementPlan, config: RunConfig) -> ReadoutCalibration:
    matrices = calibrate_readout(noise, config.mitigation.calibration_shots, derive_seed(config.seed, "calibration"))
    return ReadoutCalibration([matrices[q] for q in plan.measured_qubits])


def _inference_setup(config: RunConfig, checkpoint_path: str, data_path: str, device_path: str):
    require_files(checkpoint_path, data_path, device_path)
    dataset = load_prepared(data_path)
    document, plan = _load_checkpoint(checkpoint_path, dataset)
    device = load_device(device_path)
    report = validate_against_device(document.template, device)
    if not report.ok:
        raise ConfigurationError(f"Checkpoint does not fit device {device.name}: {report.violations[0]['reason']}")
    noise = NoiseModel.from_device(device, document.template.layout, kappa_dd=config.mitigation.kappa_dd)
    return _test_split(dataset, config), document, plan, noise


def _evaluate_flags(config: RunConfig, test: PreparedDataset, document, plan, noise, flags: MitigationFlags,
                    calibration: Optional[ReadoutCalibration], fingerprint: Dict) -> EvaluationReport:
    expectations = noisy_expectations(document.template, document.params, test.features, plan, noise, flags,
                                      calibration, config)
    fingerprint = dict(fingerprint, mitigation=flags.label, dd=flags.dd, twirl=flags.twirl, m3=flags.m3)
    report = evaluate(expectations, test.labels, plan, fingerprint, average=config.auc_average)
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    logger.info(f"[{flags.label}] ACC={report.acc:.4f} AUC={auc_text} on {report.n_samples} samples")
    return report


def cmd_infer(config: RunConfig, checkpoint_path: str, data_path: str, device_path: str) -> EvaluationReport:
    """Noisy inference on the test split under the configured mitigation"""
    _ensure_output_dir(config)
    test, document, plan, noise = _inference_setup(config, checkpoint_path, data_path, device_path)
    flags = config.mitigation.parsed_flags
    calibration = _readout_calibration(noise, plan, config) if flags.m3 else None
    fingerprint = artifact_meta(config.seed, {"circuit": checkpoint_path, "data": data_path, "device": device_path},
                                shots=config.mitigation.shots, max_test=config.max_test)
    report = _evaluate_flags(config, test, document, plan, noise, flags, calibration, fingerprint)
    _write_text(_path(config, f"infer_{flags.tag}.json"), report.to_text())
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"[{flags.label}] ACC={report.acc:.4f} AUC={auc_text} ({report.n_samples} samples, "
          f"{config.mitigation.shots} shots)")
    return report


def format_ablation(rows: Sequence[Tuple[str, EvaluationReport]], header: Sequence[str]) -> str:
    """Text table of the ablation rows"""
    lines = [f"# {line}" for line in header]
    lines.append(f"{'configuration':<14}  {'ACC':>7}  {'AUC':>7}")
    for label, report in rows:
        auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
        lines.append(f"{label:<14}  {report.acc:>7.4f}  {auc_text:>7}")
    return "\n".join(lines) + "\n"


def cmd_ablate(config: RunConfig, checkpoint_path: str, data_path: str, device_path: str) -> List[Dict]:
    """Run inference once per mitigation configuration on the same seed"""
    _ensure_output_dir(config)
    test, document, plan, noise = _inference_setup(config, checkpoint_path, data_path, device_path)
    calibration = _readout_calibration(noise, plan, config)
    meta = artifact_meta(config.seed, {"circuit": checkpoint_path, "data": data_path, "device": device_path},
                         shots=config.mitigation.shots, max_test=config.max_test)
    rows = []
    for flags in ABLATION_ROWS:
        rows.append((flags.label, _evaluate_flags(config, test, document, plan, noise, flags,
                                                  calibration if flags.m3 else None, meta)))

    header = [f"{key}: {value}" for key, value in meta.items()]
    table = format_ablation(rows, header)
    _write_text(_path(config, "ablation.txt"), table)
    document_rows = [{"configuration": label, **report.to_dict()} for label, report in rows]
    _write_json(_path(config, "ablation.json"), {"meta": meta, "rows": document_rows})
    print(table, end="")
    return document_rows


def cmd_calibrate(config: RunConfig, device_path: str, qubits: Optional[List[int]], shots: int,
                  output: Optional[str] = None) -> ReadoutCalibration:
    """Measure per-qubit readout confusion on the device and save it"""
    require_files(device_path)
    _ensure_output_dir(config)
    device = load_device(device_path)
    noise = NoiseModel.from_device(device, qubits, kappa_dd=config.mitigation.kappa_dd)
    calibration = ReadoutCalibration(calibrate_readout(noise, shots, derive_seed(config.seed, "calibration")))
    output = output or _path(config, "calibration.txt")
    meta = artifact_meta(config.seed, {"device": device_path}, shots=shots,
                         qubits=" ".join(str(q) for q in (qubits or range(device.n_qubits))))
    _write_text(output, "".join(f"# {key}: {value}\n" for key, value in meta.items()) + calibration.to_text())
    print(f"Calibrated {calibration.n_qubits} qubit(s) with {shots} shots -> {output}")
    return calibration


def cmd_mitigate(config: RunConfig, counts_path: str, calibration_path: str, output: Optional[str] = None) -> Dict:
    """Apply M3 to a counts file with a saved calibration"""
    require_files(counts_path, calibration_path)
    _ensure_output_dir(config)
    with open(counts_path, "r", encoding="utf-8") as f:
        try:
            raw = CountsDistribution.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{counts_path}: invalid JSON: {e}")
    calibration = ReadoutCalibration.load(calibration_path)
    quasi = mitigate(raw, calibration, config.mitigation.tol, config.mitigation.max_iter)
    document = {
        "meta": artifact_meta(config.seed, {"counts": counts_path, "calibration": calibration_path}),
        "quasi": quasi.to_dict(),
        "expectations": expectations_from_quasi(quasi, quasi.n_measured).tolist(),
    }
    _write_json(output or _path(config, "quasi.json"), document)
    print(f"Mitigated {len(quasi.entries)} bitstrings in {quasi.iterations} iteration(s), residual {quasi.residual:.3g}")
    return document


def cmd_report(config: RunConfig) -> Dict:
    """Summary of whatever artifacts exist in the output directory"""
    summary: Dict[str, object] = {"output_dir": config.output_dir}
    lines = [f"Run summary for {config.output_dir}", ""]

    search_path = _path(config, "search_report.json")
    if os.path.isfile(search_path):
        with open(search_path, "r", encoding="utf-8") as f:
            search = json.load(f)
        best = next((row for row in search["candidates"] if row["index"] == search["best_index"]), None)
        summary["search"] = {"n_candidates": search["n_candidates"], "n_survivors": search["n_survivors"], "best": best}
        lines.append(f"search: {search['n_survivors']}/{search['n_candidates']} survivors")
        if best:
            lines.append(f"  best #{best['index']}: {best['n_params']} params, {best['gates']} gates, depth "
                         f"{best['depth']}, cnr={best['cnr']:.4f}, repcap={best['repcap']:.4f}, f_score={best['f_score']:.4f}")

    history_path = _path(config, "history.json")
    if os.path.isfile(history_path):
        with open(history_path, "r", encoding="utf-8") as f:
            history = json.load(f)
        records = history["history"]
        best_record = next((r for r in records if r["epoch"] == history["best_epoch"]), None)
        summary["train"] = {"epochs": len(records), "best_epoch": history["best_epoch"], "best": best_record}
        lines.append(f"train: {len(records)} epochs, best epoch {history['best_epoch']}")
        if best_record:
            lines.append(f"  loss={best_record['train_loss']:.6f} val_acc={best_record['val_acc']:.4f} "
                         f"val_auc={best_record['val_auc']}")

    inference = {}
    for path in sorted(glob.glob(_path(config, "infer_*.json"))):
        with open(path, "r", encoding="utf-8") as f:
            report = EvaluationReport.from_dict(json.load(f))
        tag = os.path.basename(path)[len("infer_"):-len(".json")]
        inference[tag] = {"acc": report.acc, "auc": report.auc, "n_samples": report.n_samples}
        lines.append(f"infer [{tag}]: ACC={report.acc:.4f} AUC={report.auc} on {report.n_samples} samples")
    if inference:
        summary["infer"] = inference

    ablation_path = _path(config, "ablation.json")
    if os.path.isfile(ablation_path):
        with open(ablation_path, "r", encoding="utf-8") as f:
            ablation = json.load(f)
        summary["ablation"] = [{"configuration": r["configuration"], "acc": r["acc"], "auc": r["auc"]}
                               for r in ablation["rows"]]
        lines.append("ablation:")
        lines.extend(f"  {r['configuration']:<14} ACC={r['acc']:.4f} AUC={r['auc']}" for r in ablation["rows"])

    if len(lines) == 2:
        raise ValidationError(f"No pipeline artifacts found in {config.output_dir}")
    _write_json(_path(config, "report.json"), summary)
    print("\n".join(lines))
    return summary


def cmd_serve(config: RunConfig, checkpoint_path: str, host: str, port: int, n_classes: Optional[int]) -> None:
    """Serve a checkpoint over HTTP"""
    from model_server import create_app

    require_files(checkpoint_path)
    app = create_app(checkpoint_path, n_classes=n_classes)
    print(f"Serving {checkpoint_path} on http://{host}:{port}")
    print("  GET  /health   - Health check")
    print("  GET  /circuit  - Circuit statistics and measurement plan")
    print("  POST /predict  - Noiseless prediction for {\"features\": [...]}")
    app.run(host=host, port=port)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per stage"""
    parser = argparse.ArgumentParser(
        prog="pipeline_cli.py",
        description="Variational quantum classifier pipeline: preprocessing, device-aware circuit search, "
                    "training and noisy inference with error suppression and mitigation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  python pipeline_cli.py synth --kind two-blob --n-per-class 100 --test-per-class 50
  python pipeline_cli.py preprocess --input runs/two-blob.qds --out-side 7
  python pipeline_cli.py search --data runs/prepared.qdf --n-candidates 50
  python pipeline_cli.py train --circuit runs/best_circuit.qc --data runs/prepared.qdf --epochs 50
  python pipeline_cli.py infer --checkpoint runs/checkpoint.qc --data runs/prepared.qdf --mitigation all
  python pipeline_cli.py ablate --checkpoint runs/checkpoint.qc --data runs/prepared.qdf --max-test 1000
  python pipeline_cli.py report
        ''')
    parser.add_argument("--config", help="JSON run configuration (flags override its fields)")
    parser.add_argument("--seed", type=int, help="Master seed (default: 0)")
    parser.add_argument("--output-dir", help="Artifact directory (default: $QML_OUTPUT_DIR or ./runs)")
    parser.add_argument("--workers", type=int, help="Parallel workers for scoring and inference (default: 1)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Write a synthetic QDS dataset")
    p.add_argument("--kind", default="two-blob", choices=["two-blob", "four-corner", "ring"])
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--side", type=int, default=28)
    p.add_argument("--output")

    p = sub.add_parser("preprocess", help="Average-pool and normalize a raw dataset")
    p.add_argument("--input", required=True, help="QDS or CSV file")
    p.add_argument("--format", dest="dataset_format", choices=["qds", "csv"])
    p.add_argument("--n-classes", type=int, help="Class count for CSV input (default: max label + 1)")
    p.add_argument("--out-side", type=int, help="Pooled side length: 7 -> 49 features, 8 -> 64 (default: 7)")
    p.add_argument("--output")

    p = sub.add_parser("search", help="Generate and rank candidate circuits")
    p.add_argument("--data", required=True, help="Prepared feature file")
    p.add_argument("--device", default=DEFAULT_DEVICE_PATH)
    p.add_argument("--n-qubits", type=int, help="Circuit width (default: 4)")
    p.add_argument("--n-params", type=_int_list, help="Parameter counts to pool, e.g. 60,80,100,120 (default: 60)")
    p.add_argument("--n-candidates", type=int, help="Candidates per parameter count (default: 250)")
    p.add_argument("--replicas", type=int, help="Clifford replicas per candidate (default: 32)")
    p.add_argument("--replica-shots", type=int, help="Shots per replica (default: 10000)")
    p.add_argument("--threshold", type=float, help="CNR threshold (default: 0.7)")
    p.add_argument("--alpha", type=float, help="CNR exponent in the F-score (default: 0.5)")
    p.add_argument("--d-c", type=int, help="Samples per class for RepCap (default: 16)")
    p.add_argument("--draws", type=int, help="Parameter draws for RepCap (default: 8)")

    p = sub.add_parser("train", help="Train a circuit's parameters")
    p.add_argument("--circuit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, help="(default: 200)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default: 0.01)")
    p.add_argument("--batch-size", type=int, help="(default: 128)")
    p.add_argument("--loss", choices=["mse", "cross-entropy"], help="(default: mse for 2/4 classes, else cross-entropy)")
    p.add_argument("--gradient", choices=["adjoint", "parameter-shift"], help="(default: adjoint)")
    p.add_argument("--resume", help="history.json of an earlier run to continue from")

    for name, help_text in (("infer", "Noisy inference on the test split"),
                            ("ablate", "Four-row suppression/mitigation ablation")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--device", default=DEFAULT_DEVICE_PATH)
        if name == "infer":
            p.add_argument("--mitigation", help="none, all, or a +-joined subset of dd, twirl, m3 (default: none)")
        p.add_argument("--shots", type=int, help="Shots per sample (default: 32000)")
        p.add_argument("--calibration-shots", type=int, help="Shots per calibration preparation (default: 32000)")
        p.add_argument("--max-test", type=int, help="Seeded subset of at most N test samples")
        p.add_argument("--tol", type=float, help="Mitigation solver tolerance (default: 1e-6)")
        p.add_argument("--max-iter", type=int, help="Mitigation solver iteration budget (default: 1000)")
        p.add_argument("--kappa-dd", type=float, help="Idle-noise factor under DD (default: 0.25)")
        p.add_argument("--auc-average", choices=["macro", "weighted"], help="Multi-class AUC averaging")

    p = sub.add_parser("calibrate", help="Estimate per-qubit readout confusion matrices")
    p.add_argument("--device", default=DEFAULT_DEVICE_PATH)
    p.add_argument("--qubits", type=_int_list, help="Physical qubits, in measured order (default: all)")
    p.add_argument("--shots", type=int, default=32000)
    p.add_argument("--output")

    p = sub.add_parser("mitigate", help="Mitigate a counts file with a calibration file")
    p.add_argument("--counts", required=True, help="Counts JSON ({n_measured, total_shots, entries})")
    p.add_argument("--calibration", required=True)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--output")

    sub.add_parser("report", help="Summarize the artifacts of an output directory")

    p = sub.add_parser("serve", help="Local HTTP API over a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1", help="Host to bind to (default: 127.0.0.1 - localhost only)")
    p.add_argument("--port", type=int, default=5000)
    p.add_argument("--n-classes", type=int, help="Class count if the checkpoint does not record it")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Load the config file and apply command-line overrides"""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides = {
        "seed": get("seed"),
        "workers": get("workers"),
        "dataset_format": get("dataset_format"),
        "out_side": get("out_side"),
        "n_qubits": get("n_qubits"),
        "n_params": get("n_params"),
        "max_test": get("max_test"),
        "auc_average": get("auc_average"),
        "search.n_candidates": get("n_candidates"),
        "search.m_replicas": get("replicas"),
        "search.replica_shots": get("replica_shots"),
        "search.cnr_threshold": get("threshold"),
        "search.alpha_cnr": get("alpha"),
        "search.d_c": get("d_c"),
        "search.repcap_param_draws": get("draws"),
        "train.epochs": get("epochs"),
        "train.learning_rate": get("lr"),
        "train.batch_size": get("batch_size"),
        "train.loss_kind": get("loss"),
        "train.gradient_mode": get("gradient"),
        "mitigation.flags": get("mitigation"),
        "mitigation.shots": get("shots") if args.command in ("infer", "ablate") else None,
        "mitigation.calibration_shots": get("calibration_shots"),
        "mitigation.tol": get("tol"),
        "mitigation.max_iter": get("max_iter"),
        "mitigation.kappa_dd": get("kappa_dd"),
    }
    config = apply_overrides(load_run_config(args.config), overrides)
    config = resolve_output_dir(config, args.output_dir)
    return apply_overrides(config, {"stage": args.command}).with_seed()


def dispatch(args: argparse.Namespace, config: RunConfig):
    """Run the selected stage"""
    command = args.command
    if command == "synth":
        return cmd_synth(config, args.kind, args.n_per_class, args.test_per_class, args.side, args.output)
    if command == "preprocess":
        return cmd_preprocess(config, args.input, config.out_side, args.output, args.n_classes)
    if command == "search":
        return cmd_search(config, args.data, args.device)
    if command == "train":
        return cmd_train(config, args.circuit, args.data, args.resume)
    if command == "infer":
        return cmd_infer(config, args.checkpoint, args.data, args.device)
    if command == "ablate":
        return cmd_ablate(config, args.checkpoint, args.data, args.device)
    if command == "calibrate":
        return cmd_calibrate(config, args.device, args.qubits, args.shots, args.output)
    if command == "mitigate":
        return cmd_mitigate(config, args.counts, args.calibration, args.output)
    if command == "report":
        return cmd_report(config)
    if command == "serve":
        return cmd_serve(config, args.checkpoint, args.host, args.port, args.n_classes)
    raise ConfigurationError(f"Unknown command {command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        config = config_from_args(args)
        dispatch(args, config)
    except QMLError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except FileNotFoundError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_INPUT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
