"""Minimal standalone SVG renderers for logs, spectra and landscape grids.

Hand-rolled rather than delegating to a plotting library so the output
bytes are deterministic and diff-able in CI. Each plot is a single SVG
document with axes, tick labels and the data layer.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50
PLOT_W = WIDTH - MARGIN_L - MARGIN_R
PLOT_H = HEIGHT - MARGIN_T - MARGIN_B

KINDS = ("loss-curve", "grad-norm", "eigenspectrum", "landscape-heatmap")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" '
        f'font-family="monospace" font-size="13">{title}</text>',
    ]


def _axes(x_lo, x_hi, y_lo, y_hi, x_label, y_label, n_ticks=5) -> list[str]:
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{PLOT_W}" height="{PLOT_H}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    ]
    for i in range(n_ticks):
        frac = i / (n_ticks - 1)
        xv = x_lo + frac * (x_hi - x_lo)
        px = MARGIN_L + frac * PLOT_W
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{MARGIN_T + PLOT_H}" x2="{_fmt(px)}" '
            f'y2="{MARGIN_T + PLOT_H + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{MARGIN_T + PLOT_H + 18}" '
            f'text-anchor="middle" font-family="monospace" font-size="10">'
            f'{_fmt(xv)}</text>'
        )
        yv = y_lo + frac * (y_hi - y_lo)
        py = MARGIN_T + PLOT_H - frac * PLOT_H
        parts.append(
            f'<line x1="{MARGIN_L - 5}" y1="{_fmt(py)}" x2="{MARGIN_L}" '
            f'y2="{_fmt(py)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{_fmt(py + 3)}" text-anchor="end" '
            f'font-family="monospace" font-size="10">{_fmt(yv)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + PLOT_W / 2}" y="{HEIGHT - 10}" '
        f'text-anchor="middle" font-family="monospace" font-size="11">{x_label}</text>'
    )
    parts.append(
        f'<text x="15" y="{MARGIN_T + PLOT_H / 2}" text-anchor="middle" '
        f'font-family="monospace" font-size="11" '
        f'transform="rotate(-90 15 {MARGIN_T + PLOT_H / 2})">{y_label}</text>'
    )
    return parts


def _polyline(xs, ys, x_lo, x_hi, y_lo, y_hi, color) -> str:
    span_x = (x_hi - x_lo) or 1.0
    span_y = (y_hi - y_lo) or 1.0
    pts = []
    for xv, yv in zip(xs, ys):
        px = MARGIN_L + (xv - x_lo) / span_x * PLOT_W
        py = MARGIN_T + PLOT_H - (yv - y_lo) / span_y * PLOT_H
        pts.append(f"{_fmt(px)},{_fmt(py)}")
    return (
        f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
        'stroke-width="1.5"/>'
    )


def _series_svg(steps, values, title, y_label, log_scale) -> str:
    if len(steps) == 0:
        raise ContractError("cannot plot an empty series")
    xs = np.asarray(steps, dtype=np.float64)
    ys = np.asarray(values, dtype=np.float64)
    if log_scale:
        floor = 1e-300
        ys = np.log10(np.maximum(ys, floor))
        y_label = f"log10({y_label})"
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    parts = _header(title)
    parts += _axes(x_lo, x_hi, y_lo, y_hi, "step", y_label)
    parts.append(_polyline(xs, ys, x_lo, x_hi, y_lo, y_hi, "#1f77b4"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _eigenspectrum_svg(eigenvalues, title) -> str:
    eigs = np.sort(np.asarray(eigenvalues, dtype=np.float64))
    if eigs.size == 0:
        raise ContractError("cannot plot an empty spectrum")
    lo = float(min(eigs.min(), 0.0))
    hi = float(max(eigs.max(), 0.0))
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    parts = _header(title)
    parts += _axes(lo, hi, 0.0, 1.0, "eigenvalue", "")
    # zero rule: negative eigenvalues render left of it
    zx = MARGIN_L + (0.0 - lo) / (hi - lo) * PLOT_W
    parts.append(
        f'<line x1="{_fmt(zx)}" y1="{MARGIN_T}" x2="{_fmt(zx)}" '
        f'y2="{MARGIN_T + PLOT_H}" stroke="#999999" stroke-dasharray="4 3"/>'
    )
    for lam in eigs:
        px = MARGIN_L + (float(lam) - lo) / (hi - lo) * PLOT_W
        color = "#d62728" if lam < 0 else "#1f77b4"
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{MARGIN_T + 0.25 * PLOT_H}" '
            f'x2="{_fmt(px)}" y2="{MARGIN_T + 0.75 * PLOT_H}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _heat_color(frac: float) -> str:
    """Blue -> white -> red diverging map on [0, 1]."""
    frac = min(1.0, max(0.0, frac))
    if frac < 0.5:
        t = frac / 0.5
        r, g, b = int(49 + t * (255 - 49)), int(54 + t * (255 - 54)), 149 + int(t * (255 - 149))
    else:
        t = (frac - 0.5) / 0.5
        r, g, b = 255, int(255 - t * (255 - 48)), int(255 - t * (255 - 39))
    return f"#{r:02x}{g:02x}{b:02x}"


def _heatmap_svg(alphas, betas, values, title) -> str:
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ContractError("cannot plot an empty grid")
    lo, hi = float(vals.min()), float(vals.max())
    span = (hi - lo) or 1.0
    n_a, n_b = vals.shape
    cell_w = PLOT_W / n_b
    cell_h = PLOT_H / n_a
    parts = _header(title)
    parts += _axes(float(betas[0]), float(betas[-1]), float(alphas[0]),
                   float(alphas[-1]), "beta (v_max)", "alpha (v_min)")
    for i in range(n_a):
        for j in range(n_b):
            frac = (vals[i, j] - lo) / span
            px = MARGIN_L + j * cell_w
            py = MARGIN_T + PLOT_H - (i + 1) * cell_h
            parts.append(
                f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(cell_w)}" '
                f'height="{_fmt(cell_h)}" fill="{_heat_color(frac)}"/>'
            )
    parts.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{PLOT_W}" height="{PLOT_H}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_svg(payload, kind: str, title: str = "", log_scale: bool = False) -> str:
    """Render one of the supported plot kinds to an SVG string.

    loss-curve / grad-norm take a TrainLog; eigenspectrum takes a 1-D
    eigenvalue array; landscape-heatmap takes a LandscapeGrid.
    """
    if kind not in KINDS:
        raise ContractError(f"unknown plot kind {kind!r}")
    if kind in ("loss-curve", "grad-norm"):
        steps = payload.step_numbers()
        if kind == "loss-curve":
            values = payload.losses()
            label = "train_loss"
        else:
            values = np.array([
                rec.grad_norm if rec.grad_norm is not None else math.nan
                for rec in payload.steps
            ])
            label = "grad_norm"
        return _series_svg(steps, values, title or label, label, log_scale)
    if kind == "eigenspectrum":
        return _eigenspectrum_svg(payload, title or "eigenspectrum")
    return _heatmap_svg(payload.alphas, payload.betas, payload.values,
                        title or "landscape")


def emit_svg_plot(payload, kind: str, path, title: str = "",
                  log_scale: bool = False) -> None:
    """Write the rendered SVG atomically (temp file + rename)."""
    from .runio import atomic_write_text

    atomic_write_text(path, render_svg(payload, kind, title, log_scale))
