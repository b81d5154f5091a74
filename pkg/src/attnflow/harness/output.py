"""JSONL records, CSV summaries and SVG trajectory plots."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np

from attnflow.errors import AttnflowError, ContractViolation
from attnflow.harness.census import CensusRecord

SVG_SIZE = 800
SVG_RADIUS = 360.0
TIMING_FIELDS = ("wall_ms",)

_TOKEN_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                 "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")


class OutputError(AttnflowError):
    """Writing or reading an output file failed; the message names the path."""


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc


# -- JSONL ------------------------------------------------------------------

def records_to_jsonl(records: Iterable[CensusRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def parse_jsonl(text: str) -> list[CensusRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(CensusRecord.from_json(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise ContractViolation(f"line {lineno}: malformed record ({exc})") from exc
    return out


def strip_timing(line: str) -> str:
    """Drop timing fields from one JSONL line, keeping key order."""
    d = json.loads(line)
    for key in TIMING_FIELDS:
        d.pop(key, None)
    return json.dumps(d, allow_nan=False)


def read_jsonl(path) -> list[CensusRecord]:
    return parse_jsonl(_read_text(path))


# -- CSV --------------------------------------------------------------------

def summary_counts(records: Iterable[CensusRecord]) -> list[tuple[str, int | None, int]]:
    """``(class, k, count)`` over converged runs, sorted by class then k.

    Clustering rows are labelled ``<m>-clustering`` and carry no ``k``.
    """
    counts: Counter = Counter()
    for r in records:
        if not r.converged:
            continue
        k = r.k if r.cls in ("consensus", "bipartite") else None
        counts[(r.label(), k)] += 1
    return sorted(((c, k, v) for (c, k), v in counts.items()),
                  key=lambda row: (row[0], -1 if row[1] is None else row[1]))


def summary_csv(records: Iterable[CensusRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "k", "count"])
    for cls, k, count in summary_counts(records):
        w.writerow([cls, "" if k is None else k, count])
    return buf.getvalue()


# -- SVG --------------------------------------------------------------------

def _projection_basis(d: int) -> np.ndarray:
    """Rows: screen x and y axes in R^d (orthographic, viewer along +e_3 tilted)."""
    if d == 2:
        return np.eye(2)
    if d == 3:
        # view direction (1, 1, 1)/sqrt(3) tilted so the north pole points up
        view = np.array([1.0, 0.6, 0.8])
        view /= np.linalg.norm(view)
        up = np.array([0.0, 0.0, 1.0])
        ex = np.cross(up, view)
        ex /= np.linalg.norm(ex)
        ey = np.cross(view, ex)
        return np.vstack([ex, ey])
    # higher d: first two coordinates
    B = np.zeros((2, d))
    B[0, 0] = B[1, 1] = 1.0
    return B


def trajectory_svg(states: np.ndarray, title: str | None = None) -> str:
    """Render token paths ``states[t, i, :]`` projected onto the screen plane.

    One polyline per token and one ``circle class="endpoint"`` per token at
    the final sample.
    """
    S = np.asarray(states, dtype=float)
    if S.ndim != 3 or S.shape[0] < 1:
        raise ContractViolation(f"states must have shape (samples, n, d), got {S.shape}")
    B = _projection_basis(S.shape[2])
    c = SVG_SIZE / 2
    P = np.einsum("tid,ed->tie", S, B)
    px = c + SVG_RADIUS * P[..., 0]
    py = c - SVG_RADIUS * P[..., 1]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}" '
             f'width="{SVG_SIZE}" height="{SVG_SIZE}">']
    if title:
        parts.append(f"<title>{title}</title>")
    parts.append(f'<circle class="sphere" cx="{c:g}" cy="{c:g}" r="{SVG_RADIUS:g}" '
                 'fill="none" stroke="#444" stroke-width="1.5"/>')
    n = S.shape[1]
    for i in range(n):
        color = _TOKEN_COLORS[i % len(_TOKEN_COLORS)]
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px[:, i], py[:, i]))
        parts.append(f'<polyline class="path" points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1" stroke-opacity="0.7"/>')
    for i in range(n):
        color = _TOKEN_COLORS[i % len(_TOKEN_COLORS)]
        parts.append(f'<circle class="endpoint" cx="{px[-1, i]:.2f}" cy="{py[-1, i]:.2f}" '
                     f'r="5" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- files ------------------------------------------------------------------

def emit_outputs(records: Iterable[CensusRecord], jsonl=None, csv_path=None,
                 meta: dict | None = None, meta_path=None) -> list[CensusRecord]:
    """Write the record stream to ``jsonl`` and its summary to ``csv_path``.

    Records are sorted by ``(instance, run)`` first so the bytes never depend
    on completion order. ``meta`` (timestamps, host info) goes to a separate
    ``meta_path`` file.
    """
    recs = sorted(records, key=lambda r: (r.instance, r.run))
    if jsonl is not None:
        _write_text(jsonl, records_to_jsonl(recs))
    if csv_path is not None:
        _write_text(csv_path, summary_csv(recs))
    if meta is not None and meta_path is not None:
        _write_text(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return recs


def write_svg(path, states: np.ndarray, title: str | None = None) -> None:
    _write_text(path, trajectory_svg(states, title))


def write_json(path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")
