"""Minimal SVG line and scatter charts; no plotting dependency."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f")
WIDTH, HEIGHT, MARGIN = 640, 400, 56


def _scale(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo or 1.0
    return lambda v: out_lo + (np.asarray(v, dtype=float) - lo) / span * (out_hi - out_lo)


def _frame(title: str, x_range, y_range, x_label: str, y_label: str) -> list[str]:
    (x0, x1), (y0, y1) = x_range, y_range
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - 16}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN - 24}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(y_label)}</text>',
    ]
    sx = _scale(x0, x1, MARGIN, WIDTH - 16)
    sy = _scale(y0, y1, HEIGHT - MARGIN, MARGIN - 24)
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{sx(v):.1f}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle">{v:.4g}</text>')
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{MARGIN - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.4g}</text>')
    return parts


def line_chart_svg(
    title: str,
    t: Sequence[float],
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    y_label: str = "",
) -> str:
    """Mean curves with shaded +-sd bands; ``series`` maps label -> (mean, sd)."""
    t = np.asarray(t, dtype=float)
    finite = [np.concatenate([m - s, m + s]) for m, s in series.values() if np.isfinite(m).any()]
    values = np.concatenate(finite) if finite else np.array([0.0, 1.0])
    values = values[np.isfinite(values)]
    y_lo, y_hi = min(0.0, float(values.min())), float(values.max()) or 1.0
    parts = _frame(title, (t.min(), t.max()), (y_lo, y_hi), "t", y_label)
    sx = _scale(t.min(), t.max(), MARGIN, WIDTH - 16)
    sy = _scale(y_lo, y_hi, HEIGHT - MARGIN, MARGIN - 24)
    for i, (label, (mean, sd)) in enumerate(series.items()):
        if not np.isfinite(mean).any():
            continue
        color = COLORS[i % len(COLORS)]
        upper = [f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(t, mean + sd)]
        lower = [f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(t[::-1], (mean - sd)[::-1])]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15"/>')
        line = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(t, mean))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{WIDTH - 150}" y="{MARGIN - 8 + 14 * i}" fill="{color}">{escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def curriculum_svg(title: str, t: Sequence[int], tasks: Sequence[int]) -> str:
    """Selected task id against teaching step."""
    t = np.asarray(t, dtype=float)
    tasks = np.asarray(tasks, dtype=float)
    lo, hi = (float(tasks.min()), float(tasks.max())) if tasks.size else (0.0, 1.0)
    parts = _frame(title, (t.min(), t.max()), (lo - 0.5, hi + 0.5), "t", "task")
    sx = _scale(t.min(), t.max(), MARGIN, WIDTH - 16)
    sy = _scale(lo - 0.5, hi + 0.5, HEIGHT - MARGIN, MARGIN - 24)
    for a, b in zip(t, tasks):
        parts.append(f'<rect x="{sx(a) - 1.5:.1f}" y="{sy(b) - 4:.1f}" width="3" height="8" fill="{COLORS[0]}"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_teacher_charts(
    teacher: str,
    series: Sequence[dict[str, np.ndarray]],
    t: Sequence[int],
    sel_tasks: Sequence[int],
    out_dir: str | Path,
) -> list[Path]:
    """Parameter-distance, reward-gap and curriculum charts for one teacher.

    ``series`` holds one ``{metric name: values}`` dict per seed, all of length ``len(t)``.
    """
    out_dir = Path(out_dir)

    def band(name):
        stack = np.array([s[name] for s in series])
        sd = stack.std(axis=0, ddof=1) if len(stack) > 1 else np.zeros(len(t))
        return stack.mean(axis=0), sd

    written = []
    lam = band("lambda_dist")
    if np.isfinite(lam[0]).any():
        path = out_dir / "lambda_dist.svg"
        path.write_text(line_chart_svg(f"{teacher}: parameter distance", t, {"|lam_t - lam*|": lam}))
        written.append(path)
    gaps = {"all": band("nu_gap_all")}
    for name in series[0]:
        if name.startswith("nu_gap_task_"):
            gaps["T" + name.removeprefix("nu_gap_task_")] = band(name)
    path = out_dir / "nu_gap.svg"
    path.write_text(line_chart_svg(f"{teacher}: expected reward gap", t, gaps, "|nu_E - nu_L|"))
    written.append(path)
    path = out_dir / "curriculum.svg"
    path.write_text(curriculum_svg(f"{teacher}: selected task (first seed)", t, sel_tasks))
    written.append(path)
    return written
