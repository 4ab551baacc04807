"""HTTP interface over one loaded checkpoint.

Stateless request model: every endpoint is a pure function of the loaded
checkpoint plus the request body, and responses are canonical JSON produced
by the same serializers as the library and CLI, so the service adds no
numerics of its own. Every response echoes the checkpoint content hash.

Endpoints:
    GET  /health                 -> 200, empty body
    GET  /model/meta             -> schema, feature domains, hash
    POST /predict                -> probabilities + attention scores
    POST /explain/shap           -> ShapReport document
    POST /explain/counterfactual -> Counterfactual document
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import data as dio
from . import explain as ex
from .autodiff import Tensor
from .checkpoint import checkpoint_hash
from .docio import canonical_dumps
from .errors import (
    AlreadyInTargetClassError,
    ComplexityError,
    ContractError,
    SchemaError,
    SleepLensError,
)
from .models import classifier_predict, frozen_parameters

DEFAULT_SHAP_SAMPLES = 2000
DEFAULT_SHAP_SEED = 0


class ApiSession:
    """Immutable model context shared by all requests."""

    def __init__(self, checkpoint, background, request_timeout=30.0):
        self.checkpoint = checkpoint
        self.background = list(background)
        self.request_timeout = request_timeout
        self.model_hash = checkpoint_hash(checkpoint)
        self.request_count = 0
        self._lock = threading.Lock()

    def count_request(self):
        with self._lock:
            self.request_count += 1


# ---------------------------------------------------------------------------
# document builders (shared with the CLI so bytes match everywhere)


def _prepare_instance(session, doc):
    instance = dio.sequence_from_doc(doc)
    problems = dio.validate_instance(instance)
    if problems:
        field, message = problems[0]
        raise OutOfRangeError(field, message)
    prepared, _ = dio.preprocess([instance], session.checkpoint.normalization_stats)
    return prepared[0]


class OutOfRangeError(SchemaError):
    def __init__(self, field, message):
        super().__init__(message)
        self.field = field


def predict_document(session, instance_doc):
    instance = _prepare_instance(session, instance_doc)
    ckpt = session.checkpoint
    enc = dio.encode_array(instance, ckpt.normalization_stats)
    with frozen_parameters(ckpt):
        probs, internals = classifier_predict(ckpt, Tensor(enc))
    p = probs.data
    doc = {
        "model_hash": session.model_hash,
        "probs": {label: float(p[i]) for i, label in enumerate(dio.LABELS)},
        "predicted_class": int(p.argmax()),
        "predicted_label": dio.LABELS[int(p.argmax())],
    }
    if "attention_scores" in internals:
        doc["attention_scores"] = internals["attention_scores"].data.tolist()
    else:
        doc["attention_scores"] = None
    return doc


def shap_document(session, body):
    method = body.get("method", "kernel")
    if method not in ("exact", "kernel"):
        raise ContractError(f"invalid method {method!r}; expected 'exact' or 'kernel'")
    instance = _prepare_instance(session, body.get("instance"))
    target = body.get("target_class")
    if target is None:
        pred = predict_document(session, body.get("instance"))
        target = pred["predicted_class"]
    target = int(target)
    if not 0 <= target < len(dio.LABELS):
        raise ContractError(f"target_class {target} out of range")
    per_timestep = bool(body.get("per_timestep", False))
    seed = int(body.get("seed", DEFAULT_SHAP_SEED))
    n_samples = int(body.get("n_samples", DEFAULT_SHAP_SAMPLES))
    ckpt = session.checkpoint
    if per_timestep:
        report = ex.shap_timestep_summary(
            ckpt, instance, session.background, target,
            n_samples=n_samples, seed=seed, method=method,
        )
    elif method == "exact":
        report = ex.shap_exact(ckpt, instance, session.background, target)
    else:
        report = ex.shap_kernel(
            ckpt, instance, session.background, target, n_samples=n_samples, seed=seed
        )
    doc = report.to_doc()
    doc["model_hash"] = session.model_hash
    return doc


def counterfactual_document(session, body):
    instance = _prepare_instance(session, body.get("instance"))
    if "target_class" not in body:
        raise SchemaError("field 'target_class' is required")
    target = int(body["target_class"])
    cfg_doc = body.get("config") or {}
    mutable = body.get("mutable_features")
    config = ex.CounterfactualConfig(
        mutable_features=mutable,
        lambda_init=float(cfg_doc.get("lambda_init", 0.1)),
        lambda_growth=float(cfg_doc.get("lambda_growth", 2.0)),
        lambda_every=int(cfg_doc.get("lambda_every", 50)),
        lambda_cap=float(cfg_doc.get("lambda_cap", 100.0)),
        max_iters=int(cfg_doc.get("max_iters", 2000)),
        learning_rate=float(cfg_doc.get("learning_rate", 0.05)),
        edit_last_only=bool(cfg_doc.get("edit_last_only", False)),
        deadline_seconds=session.request_timeout,
    )
    result = ex.counterfactual_search(session.checkpoint, instance, target, config)
    doc = result.to_doc()
    doc["model_hash"] = session.model_hash
    return doc


def meta_document(session):
    ckpt = session.checkpoint
    stats = ckpt.normalization_stats
    features = []
    for spec in dio.SCHEMA:
        entry = {
            "name": spec.name,
            "csv_column": spec.column,
            "kind": spec.kind,
            "mutable": spec.mutable,
            "model_input": spec.model_input,
        }
        if spec.kind == "categorical":
            entry["vocab"] = list(stats.categorical[spec.name]["vocab"])
        else:
            entry["domain"] = list(spec.domain)
        features.append(entry)
    return {
        "arch": ckpt.arch,
        "schema_version": ckpt.schema_version,
        "seed": ckpt.seed,
        "hash": session.model_hash,
        "labels": list(dio.LABELS),
        "features": features,
        "immutable_features": sorted(dio.IMMUTABLE_FEATURES),
        "encoded_width": ckpt.input_width,
        "hyperparameters": dict(ckpt.hyper),
        "background_size": len(session.background),
    }


# ---------------------------------------------------------------------------
# HTTP plumbing


def _error_payload(status, message, field=None):
    doc = {"error": message}
    if field is not None:
        doc["field"] = field
    return status, doc


def handle_request(session, method, path, body_bytes):
    """Pure request dispatcher; returns (status, bytes, content_type)."""
    session.count_request()
    try:
        if method == "GET" and path == "/health":
            return 200, b"", "text/plain"
        if method == "GET" and path == "/model/meta":
            return 200, canonical_dumps(meta_document(session)).encode(), "application/json"
        if method == "POST" and path in ("/predict", "/explain/shap", "/explain/counterfactual"):
            try:
                body = json.loads(body_bytes or b"{}")
            except json.JSONDecodeError as exc:
                status, doc = _error_payload(400, f"invalid JSON body: {exc}")
                return status, canonical_dumps(doc).encode(), "application/json"
            try:
                if path == "/predict":
                    doc = predict_document(session, body.get("instance", body))
                elif path == "/explain/shap":
                    doc = shap_document(session, body)
                else:
                    doc = counterfactual_document(session, body)
                return 200, canonical_dumps(doc).encode(), "application/json"
            except OutOfRangeError as exc:
                status, doc = _error_payload(422, str(exc), exc.field)
            except AlreadyInTargetClassError as exc:
                status, doc = _error_payload(409, str(exc))
            except ComplexityError as exc:
                status, doc = _error_payload(413, str(exc))
            except SchemaError as exc:
                field = getattr(exc, "field", None)
                status, doc = _error_payload(400, str(exc), field)
            except (ContractError, SleepLensError) as exc:
                status, doc = _error_payload(400, str(exc))
            return status, canonical_dumps(doc).encode(), "application/json"
        status, doc = _error_payload(404, f"no such endpoint: {method} {path}")
        return status, canonical_dumps(doc).encode(), "application/json"
    except Exception as exc:  # unexpected: keep the server alive
        status, doc = _error_payload(500, f"internal error: {exc}")
        return status, canonical_dumps(doc).encode(), "application/json"


class _Handler(BaseHTTPRequestHandler):
    session = None
    static_root = None

    def _respond(self, status, payload, content_type):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def _serve_static(self, path):
        import mimetypes
        import os

        rel = "index.html" if path in ("/", "/ui", "/ui/") else path.removeprefix("/ui/").lstrip("/")
        full = os.path.normpath(os.path.join(self.static_root, rel))
        if not full.startswith(os.path.abspath(self.static_root)) or not os.path.isfile(full):
            self._respond(404, b"not found", "text/plain")
            return
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            self._respond(200, fh.read(), ctype)

    def do_GET(self):
        if self.static_root and (self.path in ("/", "/ui") or self.path.startswith("/ui/")):
            self._serve_static(self.path)
            return
        status, payload, ctype = handle_request(self.session, "GET", self.path, b"")
        self._respond(status, payload, ctype)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length) if length else b""
        status, payload, ctype = handle_request(self.session, "POST", self.path, body)
        self._respond(status, payload, ctype)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def log_message(self, fmt, *args):  # quiet by default; stderr stays clean
        pass


def make_server(session, host="127.0.0.1", port=0, static_root=None):
    import os

    if static_root is not None:
        static_root = os.path.abspath(static_root)
    handler = type("BoundHandler", (_Handler,), {"session": session, "static_root": static_root})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(checkpoint, background, host="127.0.0.1", port=8000,
                  request_timeout=30.0, static_root=None):
    session = ApiSession(checkpoint, background, request_timeout)
    server = make_server(session, host, port, static_root)
    try:
        server.serve_forever()
    finally:
        server.server_close()
