"""
plots.py — Plotly figures for measurement reports.

One trace per report; sweeps and PSDs use log-frequency axes, PSDs a log
power axis as well.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import plotly.graph_objects as go

from src.measure import MeasurementReport, ReportKind

log = logging.getLogger(__name__)

AXIS_TITLES = {
    ReportKind.SWEEP: ("Frequency (Hz)", "Gain (dB)"),
    ReportKind.PSD: ("Frequency (Hz)", "PSD (V²/Hz)"),
    ReportKind.SNDR_CURVE: ("Input (dBV)", "SNDR (dB)"),
    ReportKind.RATE_CURVE: ("Amplitude (V)", "Spike rate (Hz)"),
    ReportKind.MEMBRANE: ("Time (s)", "Membrane potential (V)"),
}
LOG_X = {ReportKind.SWEEP, ReportKind.PSD}


def report_figure(reports: MeasurementReport | Sequence[MeasurementReport],
                  title: str | None = None) -> go.Figure:
    items = list(reports) if isinstance(reports, (list, tuple)) else [reports]
    kind = items[0].kind
    fig = go.Figure()
    for r in items:
        x, y = r.x, r.y
        if kind is ReportKind.PSD:
            x, y = x[1:], y[1:]   # DC bin has no place on a log axis
        fig.add_trace(go.Scatter(x=x, y=y, mode="lines+markers" if x.size < 50 else "lines",
                                 name=r.label or kind.value))

    meta = items[0].metadata
    if kind is ReportKind.RATE_CURVE and not math.isnan(meta.get("r2", math.nan)):
        xs = items[0].x
        fig.add_trace(go.Scatter(x=xs, y=meta["slope"] * xs + meta["intercept"], mode="lines",
                                 line=dict(dash="dash"),
                                 name=f"fit (R²={meta['r2']:.4f})"))

    x_title, y_title = AXIS_TITLES[kind]
    fig.update_layout(
        title=title or kind.value.replace("_", " ").title(),
        xaxis_title=x_title,
        yaxis_title=y_title,
        template="plotly_white",
        height=480,
        legend=dict(orientation="h", yanchor="bottom", y=1.02, x=0),
    )
    if kind in LOG_X:
        fig.update_xaxes(type="log")
    if kind is ReportKind.PSD:
        fig.update_yaxes(type="log")
    return fig


def write_figure(reports, path: str, title: str | None = None) -> None:
    """Render reports to a standalone HTML file."""
    report_figure(reports, title).write_html(path, include_plotlyjs="cdn")
    log.info("wrote figure to %s", path)
