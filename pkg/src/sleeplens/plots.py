"""Plot-data emitters: tabular files first, plus small static SVG renderings.

Every byte written here is deterministic for identical inputs: fixed float
formatting, no timestamps, stable ordering.
"""

from __future__ import annotations

import numpy as np

from . import data as dio
from .models import predict_proba

_SVG_W, _SVG_H = 640, 480
_MARGIN = 56


def _fmt(x):
    return f"{float(x):.3f}".rstrip("0").rstrip(".")


def _svg_header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
    ]


def _axes(x_label, y_label):
    x0, y0 = _MARGIN, _SVG_H - _MARGIN
    x1, y1 = _SVG_W - _MARGIN, _MARGIN
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{_SVG_H - 16}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="16" y="{(y0 + y1) / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {(y0 + y1) / 2})">{y_label}</text>',
    ]


def _scale(value, lo, hi, out_lo, out_hi):
    if hi <= lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (value - lo) * (out_hi - out_lo) / (hi - lo)


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# prediction scatter (quality x stress, dot size = heart rate, color = class)


def prediction_scatter_rows(checkpoint, data):
    """One record per patient: rule features, collapsed prediction, true label."""
    if not data:
        raise ValueError("no data to plot")
    rows = []
    for seq in data:
        enc = dio.encode_array(seq, checkpoint.normalization_stats)
        probs = predict_proba(checkpoint, enc[None])[0]
        pred = int(probs.argmax())
        rows.append(
            {
                "subject_id": seq.subject_id,
                "quality_of_sleep": float(np.mean([fv.quality_of_sleep for fv in seq.timesteps])),
                "stress_level": float(np.mean([fv.stress_level for fv in seq.timesteps])),
                "heart_rate": float(seq.timesteps[-1].heart_rate),
                "predicted_disorder": int(pred != 0),
                "predicted_label": dio.LABELS[pred],
                "true_label": seq.label if seq.label is not None else "",
            }
        )
    return rows


SCATTER_COLUMNS = [
    "subject_id", "quality_of_sleep", "stress_level", "heart_rate",
    "predicted_disorder", "predicted_label", "true_label",
]


def write_prediction_scatter(checkpoint, data, path, svg_path=None):
    rows = prediction_scatter_rows(checkpoint, data)
    lines = ["\t".join(SCATTER_COLUMNS)]
    for r in rows:
        lines.append("\t".join(
            _fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in SCATTER_COLUMNS
        ))
    _write(path, "\n".join(lines) + "\n")
    if svg_path:
        _write(svg_path, render_scatter_svg(rows))
    return rows


def render_scatter_svg(rows):
    parts = _svg_header("Predictions by sleep quality, stress, and heart rate")
    parts += _axes("quality of sleep", "stress level")
    q = [r["quality_of_sleep"] for r in rows]
    s = [r["stress_level"] for r in rows]
    h = [r["heart_rate"] for r in rows]
    q_lo, q_hi = min(q) - 0.5, max(q) + 0.5
    s_lo, s_hi = min(s) - 0.5, max(s) + 0.5
    h_lo, h_hi = min(h), max(h)
    for r in rows:
        cx = _scale(r["quality_of_sleep"], q_lo, q_hi, _MARGIN, _SVG_W - _MARGIN)
        cy = _scale(r["stress_level"], s_lo, s_hi, _SVG_H - _MARGIN, _MARGIN)
        radius = _scale(r["heart_rate"], h_lo, h_hi, 3.0, 9.0)
        color = "#d62728" if r["predicted_disorder"] else "#1f77b4"
        parts.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(radius)}" fill="{color}" '
            f'fill-opacity="0.6"><title>{r["subject_id"]}</title></circle>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# attribution matrix (timesteps x features)


def write_shap_matrix(report, path, svg_path=None):
    lines = ["\t".join(["timestep"] + list(report.feature_names))]
    for label, row in zip(report.timestep_labels, report.matrix):
        lines.append("\t".join([str(label)] + [repr(float(v)) for v in row]))
    _write(path, "\n".join(lines) + "\n")
    if svg_path:
        _write(svg_path, render_attribution_bars_svg(report))


def render_attribution_bars_svg(report):
    """Signed horizontal bars of per-feature attribution, sorted by |value|."""
    totals = report.matrix.sum(axis=0)
    order = np.argsort(-np.abs(totals))
    parts = _svg_header(f"Feature attribution toward {dio.LABELS[report.target_class]}")
    biggest = max(1e-12, float(np.abs(totals).max()))
    mid_x = _SVG_W / 2
    bar_h = min(22.0, (_SVG_H - 2 * _MARGIN) / max(1, len(totals)))
    for i, idx in enumerate(order):
        value = float(totals[idx])
        width = abs(value) / biggest * (_SVG_W / 2 - _MARGIN - 8)
        y = _MARGIN + i * bar_h
        x = mid_x if value >= 0 else mid_x - width
        color = "#d62728" if value >= 0 else "#1f77b4"
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(width)}" '
            f'height="{_fmt(bar_h - 4)}" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_fmt(mid_x - width - 6) if value < 0 else _fmt(mid_x + width + 6)}" '
            f'y="{_fmt(y + bar_h / 2)}" font-family="sans-serif" font-size="11" '
            f'text-anchor="{"end" if value < 0 else "start"}" dominant-baseline="middle">'
            f'{report.feature_names[idx]} ({_fmt(value)})</text>'
        )
    parts.append(f'<line x1="{mid_x}" y1="{_MARGIN - 8}" x2="{mid_x}" '
                 f'y2="{_SVG_H - _MARGIN + 8}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# attention trace strip


def write_attention_trace(trace, path, svg_path=None):
    lines = ["timestep\tscore"]
    for label, score in zip(trace.timestep_labels, trace.scores):
        lines.append(f"{label}\t{repr(float(score))}")
    _write(path, "\n".join(lines) + "\n")
    if svg_path:
        _write(svg_path, render_attention_svg(trace))


def render_attention_svg(trace):
    parts = _svg_header("Attention weight per timestep")
    parts += _axes("timestep", "attention weight")
    n = len(trace.scores)
    top = max(1e-12, float(np.max(trace.scores)))
    span = _SVG_W - 2 * _MARGIN
    bar_w = span / max(1, n) * 0.8
    for i, score in enumerate(trace.scores):
        x = _MARGIN + span * (i + 0.1) / max(1, n)
        height = float(score) / top * (_SVG_H - 2 * _MARGIN)
        y = _SVG_H - _MARGIN - height
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w)}" '
            f'height="{_fmt(height)}" fill="#2ca02c"/>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{_SVG_H - _MARGIN + 16}" '
            f'font-family="sans-serif" font-size="11" text-anchor="middle">{i}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
