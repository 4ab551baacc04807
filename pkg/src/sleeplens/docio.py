"""Canonical plain-text document serialization.

All files and HTTP bodies the package emits go through ``canonical_dumps``
so identical inputs always produce identical bytes: fixed key order (as
constructed), floats via shortest round-trip repr, UTF-8, trailing newline.
"""

from __future__ import annotations

import json

import numpy as np


def _plainify(obj):
    if isinstance(obj, dict):
        return {str(k): _plainify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plainify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plainify(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_dumps(doc):
    """Deterministic JSON text for a document built with ordered keys."""
    return json.dumps(_plainify(doc), indent=2, ensure_ascii=False) + "\n"


def canonical_dump(doc, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_dumps(doc))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def loads(text):
    return json.loads(text)
