"""Test-set evaluation and report/plot exports.

Reports follow the familiar comparison layout: one row per emulator, one
column per test storm plus the aggregate mean. Plots are written as
self-contained SVG with byte-stable output, so regenerating an unchanged
evaluation produces identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .model import ModelParams, forward_sequence
from .storm_data import StormRecord
from .training import PreprocessBundle


def rmse(pred, truth) -> float:
    """Root-mean-square difference over all elements."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"rmse: prediction {p.shape} vs truth {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def predict_record(params: ModelParams, bundle: PreprocessBundle,
                   record: StormRecord) -> np.ndarray:
    """Network surge prediction [T, n_sp] in raw units for one storm."""
    x = bundle.transform_inputs(record.inputs)[None]
    pred_norm = forward_sequence(x, params).data[0]
    return bundle.invert_labels(pred_norm)


@dataclass
class EvalReport:
    """Per-test-storm RMSE for each emulator plus aggregate means."""

    storm_ids: list[int]
    per_storm: dict[str, list[float]] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)

    def add(self, emulator: str, values: list[float]):
        if len(values) != len(self.storm_ids):
            raise ContractError(
                f"{len(values)} RMSE values for {len(self.storm_ids)} test storms"
            )
        self.per_storm[emulator] = [float(v) for v in values]

    def mean(self, emulator: str) -> float:
        return float(np.mean(self.per_storm[emulator]))

    def to_table(self) -> str:
        header = [""] + [f"Test {i + 1}" for i in range(len(self.storm_ids))] + ["Mean"]
        rows = [header]
        for name, values in self.per_storm.items():
            rows.append([name] + [f"{v:.3e}" for v in values] + [f"{self.mean(name):.3e}"])
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w") as f:
            cols = ",".join(f"test_{i + 1}" for i in range(len(self.storm_ids)))
            f.write(f"emulator,{cols},mean\n")
            for name, values in self.per_storm.items():
                vals = ",".join(repr(v) for v in values)
                f.write(f"{name},{vals},{self.mean(name)!r}\n")
        self.artifacts.append(str(path))


def layer_sp_indices(grid_h: int, grid_w: int, column: int = 0) -> dict[str, int]:
    """Save points in the front, middle and back coastal layers at one
    alongshore column."""
    if not (0 <= column < grid_w):
        raise ContractError(f"column {column} outside grid width {grid_w}")
    return {
        "front": 0 * grid_w + column,
        "middle": (grid_h // 2) * grid_w + column,
        "back": (grid_h - 1) * grid_w + column,
    }


# ---------------------------------------------------------------------------
# SVG plotting (dependency-free, byte-stable)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 480, 360
_MARGIN = 50


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(values) - lo) / span * (out_hi - out_lo)


def _svg_doc(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">\n'
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _axes(x_label: str, y_label: str, lo_x, hi_x, lo_y, hi_y) -> list[str]:
    left, right = _MARGIN, _SVG_W - _MARGIN
    top, bottom = _MARGIN // 2, _SVG_H - _MARGIN
    body = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) // 2}" y="{_SVG_H - 10}" font-size="12" '
        f'text-anchor="middle">{x_label}</text>',
        f'<text x="14" y="{(top + bottom) // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + bottom) // 2})">{y_label}</text>',
        f'<text x="{left}" y="{bottom + 14}" font-size="10" text-anchor="middle">'
        f'{lo_x:.3g}</text>',
        f'<text x="{right}" y="{bottom + 14}" font-size="10" text-anchor="middle">'
        f'{hi_x:.3g}</text>',
        f'<text x="{left - 4}" y="{bottom}" font-size="10" text-anchor="end">{lo_y:.3g}</text>',
        f'<text x="{left - 4}" y="{top + 8}" font-size="10" text-anchor="end">{hi_y:.3g}</text>',
    ]
    return body


def export_scatter(pred, truth, path_base) -> list[str]:
    """CSV of (truth, prediction) pairs plus an SVG scatter with the y=x line.

    Returns the two file paths.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"export_scatter: prediction {p.shape} vs truth {t.shape}")

    csv_path = f"{path_base}.csv"
    with open(csv_path, "w") as f:
        f.write("truth,prediction\n")
        for tv, pv in zip(t, p):
            f.write(f"{tv!r},{pv!r}\n")

    lo = float(min(t.min(), p.min()))
    hi = float(max(t.max(), p.max()))
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad
    left, right = _MARGIN, _SVG_W - _MARGIN
    top, bottom = _MARGIN // 2, _SVG_H - _MARGIN
    xs = _scale(t, lo, hi, left, right)
    ys = _scale(p, lo, hi, bottom, top)

    body = _axes("true surge (m)", "predicted surge (m)", lo, hi, lo, hi)
    body.append(
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{top}" '
        f'stroke="black" stroke-dasharray="4 3"/>'
    )
    for x, y in zip(xs, ys):
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="steelblue" '
                    f'fill-opacity="0.5"/>')
    svg_path = f"{path_base}.svg"
    with open(svg_path, "w") as f:
        f.write(_svg_doc(body))
    return [csv_path, svg_path]


_SERIES_COLORS = {"truth": "black", "crnn": "#1f77b4", "gp": "#d62728"}


def export_timeseries(pred, truth, sp_index: int, path_base, gp_pred=None) -> list[str]:
    """CSV and SVG of one save point's surge history: truth, network
    prediction and (optionally) the GP prediction."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"export_timeseries: prediction {p.shape} vs truth {t.shape}")
    if not (0 <= sp_index < t.shape[1]):
        raise ContractError(f"save point {sp_index} outside 0..{t.shape[1] - 1}")
    series = {"truth": t[:, sp_index], "crnn": p[:, sp_index]}
    if gp_pred is not None:
        g = np.asarray(gp_pred, dtype=np.float64)
        if g.shape != t.shape:
            raise ShapeError(f"export_timeseries: gp prediction {g.shape} vs truth {t.shape}")
        series["gp"] = g[:, sp_index]

    n_steps = t.shape[0]
    csv_path = f"{path_base}.csv"
    with open(csv_path, "w") as f:
        cols = ["step", "truth", "crnn_pred"] + (["gp_pred"] if gp_pred is not None else [])
        f.write(",".join(cols) + "\n")
        for step in range(n_steps):
            row = [str(step)] + [repr(float(series[k][step])) for k in series]
            f.write(",".join(row) + "\n")

    lo = float(min(v.min() for v in series.values()))
    hi = float(max(v.max() for v in series.values()))
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad
    left, right = _MARGIN, _SVG_W - _MARGIN
    top, bottom = _MARGIN // 2, _SVG_H - _MARGIN
    steps = np.arange(n_steps)

    body = _axes("step", "surge (m)", 0, n_steps - 1, lo, hi)
    for i, (name, values) in enumerate(series.items()):
        xs = _scale(steps, 0, max(n_steps - 1, 1), left, right)
        ys = _scale(values, lo, hi, bottom, top)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        color = _SERIES_COLORS[name]
        body.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                    f'stroke-width="1.5"/>')
        body.append(f'<text x="{right - 70}" y="{top + 14 + 14 * i}" font-size="11" '
                    f'fill="{color}">{name}</text>')
    svg_path = f"{path_base}.svg"
    with open(svg_path, "w") as f:
        f.write(_svg_doc(body))
    return [csv_path, svg_path]


def evaluate_emulators(crnn_preds: list[np.ndarray], gp_preds: list[np.ndarray] | None,
                       test_records: list[StormRecord], grid_h: int, grid_w: int,
                       out_dir=None, sp_column: int | None = None) -> EvalReport:
    """Assemble the comparison report and (optionally) the plot exports."""
    report = EvalReport(storm_ids=list(range(len(test_records))))
    report.add("CRNN", [rmse(p, r.labels) for p, r in zip(crnn_preds, test_records)])
    if gp_preds is not None:
        report.add("GP", [rmse(p, r.labels) for p, r in zip(gp_preds, test_records)])

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.artifacts += export_scatter(
            crnn_preds[0], test_records[0].labels, os.path.join(out_dir, "scatter_crnn_test1")
        )
        if gp_preds is not None:
            report.artifacts += export_scatter(
                gp_preds[0], test_records[0].labels, os.path.join(out_dir, "scatter_gp_test1")
            )
        column = grid_w // 2 if sp_column is None else sp_column
        layers = layer_sp_indices(grid_h, grid_w, column)
        for i, rec in enumerate(test_records):
            for layer, sp in layers.items():
                base = os.path.join(out_dir, f"timeseries_test{i + 1}_{layer}_sp{sp}")
                report.artifacts += export_timeseries(
                    crnn_preds[i], rec.labels, sp, base,
                    gp_pred=gp_preds[i] if gp_preds is not None else None,
                )
    return report
