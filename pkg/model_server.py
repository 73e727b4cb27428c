#!/usr/bin/env python3
"""
Local HTTP API over one trained checkpoint.

Predictions are noiseless expectations from the statevector; nothing here
queues jobs or runs pipeline stages remotely.
"""

import logging
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlparse

import numpy as np
from flask import Flask, jsonify, request
from flask_cors import CORS

from circuit_model import CircuitDocument, FeatureVector, circuit_stats, load_circuit
from errors import QMLError, ValidationError
from trainer import MeasurementPlan, forward

logger = logging.getLogger(__name__)

ALLOWED_SCHEMES = {"http", "https"}
ALLOWED_HOSTS = {"localhost", "127.0.0.1"}


@dataclass
class LoadedModel:
    path: str
    document: CircuitDocument
    plan: MeasurementPlan

    @classmethod
    def load(cls, path: str, n_classes: Optional[int] = None) -> "LoadedModel":
        """Load a checkpoint and build its measurement plan"""
        document = load_circuit(path)
        if document.params is None:
            raise ValidationError(f"{path}: checkpoint has no [PARAMS] section")
        if n_classes is None:
            if "n_classes" not in document.meta:
                raise ValidationError(f"{path}: class count not recorded; pass n_classes")
            n_classes = int(document.meta["n_classes"])
        return cls(path, document, MeasurementPlan.for_template(document.template, n_classes))

    def predict(self, rows: np.ndarray) -> dict:
        """Noiseless expectations, scores and classes for feature rows"""
        expectations = forward(self.document.template, self.document.params, rows, self.plan.measured_qubits)
        return {
            "expectations": expectations.tolist(),
            "class_scores": self.plan.class_scores(expectations).tolist(),
            "predicted_class": self.plan.predict_classes(expectations).tolist(),
        }


def validate_origin(origin):
    """Only localhost origins (or none) may call the API"""
    if not origin:
        return True
    parsed = urlparse(origin)
    try:
        parsed.port
    except ValueError:
        # malformed port
        return False
    return parsed.scheme in ALLOWED_SCHEMES and parsed.hostname in ALLOWED_HOSTS


def _feature_rows(data, n_embed: int) -> np.ndarray:
    if not isinstance(data, dict) or "features" not in data:
        raise ValidationError("Request body must be a JSON object with a 'features' field")
    try:
        rows = np.asarray(data["features"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError("'features' must be a list of numbers or a list of such lists")
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.ndim != 2 or rows.shape[1] != n_embed:
        raise ValidationError(f"Each feature vector must have {n_embed} values")
    for row in rows:
        FeatureVector(row)
    return rows


def create_app(checkpoint_path: str, n_classes: Optional[int] = None) -> Flask:
    """Create and configure the Flask app around a loaded checkpoint"""
    model = LoadedModel.load(checkpoint_path, n_classes)
    app = Flask(__name__)
    CORS(app, origins=[r"^https?://(localhost|127\.0\.0\.1)(:\d+)?$"])
    app.config["MODEL"] = model

    @app.before_request
    def check_origin():
        """Reject requests from non-local origins"""
        if not validate_origin(request.headers.get("Origin")):
            return jsonify({"success": False, "error": "Invalid Origin header"}), 403
        return None

    @app.route('/health', methods=['GET'])
    def health():
        """Health check endpoint"""
        return jsonify({"status": "healthy", "checkpoint": model.path})

    @app.route('/circuit', methods=['GET'])
    def circuit():
        """Circuit statistics, measurement plan and fingerprint"""
        template = model.document.template
        return jsonify({
            "stats": circuit_stats(template).to_dict(),
            "plan": model.plan.to_dict(),
            "layout": list(template.layout),
            "fingerprint": template.fingerprint(),
            "meta": model.document.meta,
        })

    @app.route('/predict', methods=['POST'])
    def predict():
        """
        Noiseless prediction.
        Expected JSON body: {"features": [f0, f1, ...]} or {"features": [[...], [...]]}
        """
        try:
            rows = _feature_rows(request.get_json(silent=True), model.document.template.n_embed)
            result = model.predict(rows)
        except QMLError as e:
            logger.warning(f"Rejected prediction request: {e}")
            return jsonify({"success": False, "error": str(e)}), 400
        logger.info(f"Predicted {len(rows)} sample(s)")
        return jsonify({"success": True, **result})

    return app


def main():
    """Main entry point"""
    import argparse
    import sys

    parser = argparse.ArgumentParser(
        description='Local HTTP API for a trained classifier checkpoint',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  python model_server.py runs/checkpoint.qc
  python model_server.py --port 8080 runs/checkpoint.qc
        '''
    )
    parser.add_argument('checkpoint', help='Checkpoint circuit document with a [PARAMS] section')
    parser.add_argument('--host', default='127.0.0.1',
                        help='Host to bind to (default: 127.0.0.1 - localhost only)')
    parser.add_argument('--port', type=int, default=5000, help='Port to bind to (default: 5000)')
    parser.add_argument('--n-classes', type=int, help='Class count if the checkpoint does not record it')
    parser.add_argument('--debug', action='store_true', help='Enable Flask debug mode')
    args = parser.parse_args()

    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO)
    try:
        app = create_app(args.checkpoint, args.n_classes)
    except (QMLError, FileNotFoundError) as e:
        print(f"\nError: {e}")
        sys.exit(getattr(e, "exit_code", 2))

    print("\n" + "=" * 60)
    print("       Classifier checkpoint API")
    print("=" * 60)
    print("\nEndpoints:")
    print("  GET  /health  - Health check")
    print("  GET  /circuit - Circuit statistics and measurement plan")
    print("  POST /predict - Noiseless prediction")
    print("\nExample request:")
    print(f"  POST http://{args.host}:{args.port}/predict")
    print('  Body: {"features": [0.1, 0.2, ...]}')
    print("=" * 60 + "\n")
    app.run(host=args.host, port=args.port, debug=args.debug)


if __name__ == '__main__':
    main()
