"""Byte-stable SVG emission for CMC curves (no timestamps, fixed layout)."""

from __future__ import annotations

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 60, 20, 20, 50


def _x(rank, max_rank):
    if max_rank <= 1:
        return float(_ML)
    return _ML + (rank - 1) / (max_rank - 1) * (_W - _ML - _MR)


def _y(pct):
    return _MT + (100.0 - pct) / 100.0 * (_H - _MT - _MB)


def cmc_svg(curves, labels) -> str:
    """curves: list of percent sequences (index 0 = rank 1)."""
    if not curves:
        raise ValueError("at least one curve required")
    max_rank = max(len(c) for c in curves)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    # axes and gridlines
    for pct in range(0, 101, 20):
        y = _y(pct)
        parts.append(
            f'<line x1="{_ML}" y1="{y:.2f}" x2="{_W - _MR}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end" font-family="sans-serif">{pct}</text>'
        )
    parts.append(
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 14}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif">rank</text>'
    )
    parts.append(
        f'<text x="16" y="{(_MT + _H - _MB) / 2:.2f}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.2f})">recognition rate [%]</text>'
    )
    for i, (curve, label) in enumerate(zip(curves, labels)):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{_x(k + 1, max_rank):.2f},{_y(v):.2f}" for k, v in enumerate(curve)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = _MT + 16 + 16 * i
        parts.append(
            f'<line x1="{_W - _MR - 150}" y1="{ly - 4}" x2="{_W - _MR - 120}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 114}" y="{ly}" font-size="12" '
            f'font-family="sans-serif">{_escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot_cmc(report_paths, out_path) -> None:
    from .evalproto import ExperimentReport

    if not report_paths:
        raise ValueError("at least one report required")
    curves, labels = [], []
    for p in report_paths:
        rep = ExperimentReport.load(p)
        curves.append(rep.curve)
        labels.append(str(p).rsplit("/", 1)[-1].removesuffix(".json"))
    with open(out_path, "w") as f:
        f.write(cmc_svg(curves, labels))
