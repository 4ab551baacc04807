"""Run the HTTP service in-process and exercise every endpoint.

The service adds no numerics: each response is the canonical serialization
of the same library call, so bodies are byte-stable for identical requests.
"""

import json
import threading
import urllib.request

from sleeplens import data as dio
from sleeplens import training as tr
from sleeplens.service import ApiSession, make_server

cohort = dio.synth_generate(150, 7, seed=21)
split = tr.prepare_split(cohort, 128, 22, seed=21)
checkpoint, _ = tr.train(split, tr.TrainConfig(arch="lstm", seed=21, epochs=120))

session = ApiSession(checkpoint, background=split.train[:20], request_timeout=30.0)
server = make_server(session, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print("serving on", base, "| model", session.model_hash[:12], "\n")


def call(method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            raw = resp.read()
            return resp.status, json.loads(raw) if raw else None
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


status, _ = call("GET", "/health")
print("GET /health ->", status)

status, meta = call("GET", "/model/meta")
print(f"GET /model/meta -> {status}: arch={meta['arch']}, "
      f"{len(meta['features'])} features, immutable={meta['immutable_features']}")

def predicted_label(doc):
    return call("POST", "/predict", {"instance": doc})[1]["predicted_label"]


instance = dio.sequence_to_doc(next(
    s for s in split.test + split.train
    if s.label != dio.NO_DISORDER and predicted_label(dio.sequence_to_doc(s)) != dio.NO_DISORDER
))
status, pred = call("POST", "/predict", {"instance": instance})
print(f"POST /predict -> {status}: {pred['predicted_label']} "
      f"p={max(pred['probs'].values()):.2f}")

status, shap = call("POST", "/explain/shap",
                    {"instance": instance, "method": "kernel", "n_samples": 256, "seed": 1})
top = max(zip(shap["attributions"][0], shap["feature_names"]), key=lambda t: abs(t[0]))
print(f"POST /explain/shap -> {status}: strongest feature {top[1]} ({top[0]:+.3f}), "
      f"residual {shap['efficiency_residual']:.1e}")

status, cf = call("POST", "/explain/counterfactual",
                  {"instance": instance, "target_class": 0,
                   "mutable_features": ["stress_level", "quality_of_sleep"]})
changes = ", ".join(f"{c['feature']} {c['old']}->{c['new']}" for c in cf["changed_features"])
print(f"POST /explain/counterfactual -> {status}: converged={cf['converged']} ({changes})")

# out-of-domain values are rejected with a field-level message
bad = json.loads(json.dumps(instance))
bad["timesteps"][0]["stress_level"] = 12
status, err = call("POST", "/predict", {"instance": bad})
print(f"POST /predict (stress=12) -> {status}: {err['error']}")

server.shutdown()
server.server_close()
