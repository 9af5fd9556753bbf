"""Deterministic SVG rendering of training curves (loss and accuracy panels)."""

from __future__ import annotations

from .trainer import CurvePoint

PANEL_W = 420
PANEL_H = 300
MARGIN = 46


def _polyline(xs, ys, x0, y0, w, h, x_range, y_range, color):
    x_lo, x_hi = x_range
    y_lo, y_hi = y_range
    span_x = max(x_hi - x_lo, 1e-12)
    span_y = max(y_hi - y_lo, 1e-12)
    pts = " ".join(
        f"{x0 + (x - x_lo) / span_x * w:.2f},{y0 + h - (y - y_lo) / span_y * h:.2f}"
        for x, y in zip(xs, ys)
    )
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def _panel(x0, title, epochs, series, y_range, y_label):
    w = PANEL_W - 2 * MARGIN
    h = PANEL_H - 2 * MARGIN
    y0 = MARGIN
    parts = [
        '<g class="panel">',
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>',
        f'<text x="{x0 + w / 2:.0f}" y="{y0 - 12}" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<text x="{x0 + w / 2:.0f}" y="{PANEL_H - 8}" text-anchor="middle" '
        f'font-size="11">epoch</text>',
        f'<text x="{x0 - 34}" y="{y0 + h / 2:.0f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 - 34} {y0 + h / 2:.0f})">{y_label}</text>',
    ]
    x_range = (min(epochs), max(epochs)) if len(epochs) > 1 else (0, 1)
    colors = {"train": "#1f77b4", "val": "#d62728"}
    for i, (name, ys) in enumerate(series.items()):
        parts.append(_polyline(epochs, ys, x0, y0, w, h, x_range, y_range, colors[name]))
        parts.append(
            f'<text x="{x0 + 6}" y="{y0 + 16 + 14 * i}" font-size="11" '
            f'fill="{colors[name]}">{name}</text>'
        )
    parts.append("</g>")
    return "\n".join(parts)


def curves_svg(curves: list[CurvePoint]) -> str:
    """Render loss and accuracy vs epoch as a two-panel SVG document."""
    if not curves:
        raise ValueError("no curve points to plot")
    epochs = [p.epoch for p in curves]
    losses = {"train": [p.train_loss for p in curves], "val": [p.val_loss for p in curves]}
    accs = {"train": [p.train_acc for p in curves], "val": [p.val_acc for p in curves]}
    loss_hi = max(max(losses["train"]), max(losses["val"]), 1e-6)
    width = 2 * PANEL_W
    body = "\n".join([
        _panel(MARGIN, "loss", epochs, losses, (0.0, loss_hi), "loss"),
        _panel(PANEL_W + MARGIN, "accuracy", epochs, accs, (0.0, 1.0), "accuracy"),
    ])
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
        f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">\n{body}\n</svg>\n'
    )


def write_curves_svg(curves: list[CurvePoint], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(curves_svg(curves))
