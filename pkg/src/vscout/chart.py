"""Static SVG control chart of the 0-4 anomaly score."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

WIDTH = 900
HEIGHT = 360
MARGIN = 50
SCORE_MAX = 4.0
CONSENSUS_LINE = 2.0


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def control_chart_svg(
    scores: list[float],
    flagged: list[bool],
    tau_star: int | None = None,
    title: str = "VSCOUT control chart",
) -> str:
    """Render the chart and return the SVG document as text.

    Flagged observations are drawn as ``circle.flagged``; the consensus limit
    is ``line.threshold`` and the earliest changepoint ``line.changepoint``.
    """
    n = len(scores)
    plot_w = WIDTH - 2 * MARGIN
    plot_h = HEIGHT - 2 * MARGIN

    def x_of(i: float) -> float:
        return MARGIN + (plot_w * (i - 1) / max(n - 1, 1))

    def y_of(v: float) -> float:
        return MARGIN + plot_h * (1.0 - min(max(v, 0.0), SCORE_MAX) / SCORE_MAX)

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(WIDTH),
        height=str(HEIGHT),
        viewBox=f"0 0 {WIDTH} {HEIGHT}",
    )
    ET.SubElement(svg, "title").text = title
    ET.SubElement(
        svg, "rect", x=str(MARGIN), y=str(MARGIN), width=str(plot_w), height=str(plot_h),
        fill="none", stroke="#444", **{"class": "frame"},
    )
    for level in range(int(SCORE_MAX) + 1):
        y = y_of(level)
        label = ET.SubElement(
            svg, "text", x=str(MARGIN - 8), y=_fmt(y + 4), fill="#444",
            **{"font-size": "11", "text-anchor": "end", "class": "tick"},
        )
        label.text = str(level)
    xlabel = ET.SubElement(
        svg, "text", x=str(WIDTH // 2), y=str(HEIGHT - 12),
        **{"font-size": "12", "text-anchor": "middle", "class": "axis-label"},
    )
    xlabel.text = "observation index"
    ET.SubElement(
        svg, "line", x1=str(MARGIN), x2=str(WIDTH - MARGIN),
        y1=_fmt(y_of(CONSENSUS_LINE)), y2=_fmt(y_of(CONSENSUS_LINE)),
        stroke="#c00", **{"stroke-dasharray": "6 4", "class": "threshold"},
    )
    if n:
        points = " ".join(f"{_fmt(x_of(i + 1))},{_fmt(y_of(v))}" for i, v in enumerate(scores))
        ET.SubElement(
            svg, "polyline", points=points, fill="none", stroke="#1f77b4",
            **{"stroke-width": "1", "class": "score"},
        )
    for i, (v, hit) in enumerate(zip(scores, flagged)):
        if hit:
            ET.SubElement(
                svg, "circle", cx=_fmt(x_of(i + 1)), cy=_fmt(y_of(v)), r="3",
                fill="#d62728", **{"class": "flagged"},
            )
    if tau_star is not None:
        x = _fmt(x_of(tau_star + 0.5))
        ET.SubElement(
            svg, "line", x1=x, x2=x, y1=str(MARGIN), y2=str(HEIGHT - MARGIN),
            stroke="#2ca02c", **{"stroke-width": "1.5", "class": "changepoint"},
        )
    ET.indent(svg)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"


def write_chart(path: str | Path, record: dict) -> None:
    """Write the chart for a detection record produced by ``vscout detect``."""
    obs = record["observations"]
    scores = [float(o["anomaly_score"]) for o in obs]
    flagged = [bool(o["y_hat"]) for o in obs]
    tau = record["summary"].get("tau_star")
    Path(path).write_text(control_chart_svg(scores, flagged, tau), encoding="utf-8")
