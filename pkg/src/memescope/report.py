"""Self-contained HTML/SVG explanation reports.

Words are shaded green when their score pushes toward *hateful* and red
when it pushes toward *non-hateful*; intensity is ``|score| / max|score|``
over the record.  Region overlays draw bounding boxes on a normalised
1000x1000 canvas with opacity proportional to attention mass.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, field

OPACITY_FLOOR = 0.15
CANVAS = 1000
GREEN = (0, 150, 60)
RED = (200, 30, 30)


@dataclass
class WordHighlight:
    word: str
    score: float
    color: str
    intensity: float


@dataclass
class HeadOverlay:
    layer: int
    head: int
    peak: float
    regions: list[int]
    masses: list[float]
    boxes: list[list[float]]


@dataclass
class ReportDocument:
    record_id: str
    text: str
    gold_label: str
    predicted_label: str
    p_hateful: float
    words: list[WordHighlight] = field(default_factory=list)
    heads: list[HeadOverlay] = field(default_factory=list)
    keyword: str | None = None
    modality: tuple[float, float] | None = None
    method: str | None = None
    diagnostics: dict = field(default_factory=dict)
    image_path: str | None = None


def word_colors(scores: list[tuple[str, float]]) -> list[WordHighlight]:
    """Map signed word scores to highlight colours; all-zero scores stay neutral."""
    peak = max((abs(s) for _, s in scores), default=0.0)
    out = []
    for word, s in scores:
        if peak == 0.0 or s == 0.0:
            out.append(WordHighlight(word, s, "none", 0.0))
            continue
        intensity = max(OPACITY_FLOOR, abs(s) / peak)
        r, g, b = GREEN if s > 0 else RED
        out.append(WordHighlight(word, s, f"rgba({r},{g},{b},{intensity:.3f})", intensity))
    return out


def _word_html(words: list[WordHighlight]) -> str:
    spans = []
    for w in words:
        style = f' style="background:{w.color}"' if w.color != "none" else ""
        spans.append(f'<span class="w"{style} title="{w.score:+.6f}">{html.escape(w.word)}</span>')
    return " ".join(spans)


def overlay_svg(overlay: HeadOverlay, image_path: str | None = None, size: int = 300) -> str:
    peak = max(overlay.masses, default=0.0)
    parts = [
        f'<svg viewBox="0 0 {CANVAS} {CANVAS}" '
        f'width="{size}" height="{size}" role="img">',
        f'<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="#f4f4f4" stroke="#999"/>',
    ]
    if image_path:
        parts.append(
            f'<image href="{html.escape(image_path)}" x="0" y="0" width="{CANVAS}" '
            f'height="{CANVAS}" preserveAspectRatio="none"/>'
        )
    # draw weakest first so the strongest boxes end up on top
    for rank in reversed(range(len(overlay.regions))):
        j, mass, box = overlay.regions[rank], overlay.masses[rank], overlay.boxes[rank]
        x1, y1, x2, y2 = (v * CANVAS for v in box)
        opacity = max(OPACITY_FLOOR, mass / peak) if peak > 0 else OPACITY_FLOOR
        parts.append(
            f'<rect x="{x1:.1f}" y="{y1:.1f}" width="{x2 - x1:.1f}" height="{y2 - y1:.1f}" '
            f'fill="rgb(30,90,200)" fill-opacity="{opacity * 0.35:.3f}" '
            f'stroke="rgb(30,90,200)" stroke-opacity="{opacity:.3f}" stroke-width="6">'
            f"<title>region {j}: mass {mass:.4f}</title></rect>"
        )
        parts.append(
            f'<text x="{x1 + 8:.1f}" y="{y1 + 40:.1f}" font-size="36" fill="#123" '
            f'fill-opacity="{opacity:.3f}">r{j}</text>'
        )
    parts.append(
        f'<text x="12" y="{CANVAS - 20}" font-size="48" fill="#000">'
        f"layer {overlay.layer + 1} / head {overlay.head + 1}</text>"
    )
    parts.append("</svg>")
    return "".join(parts)


_CSS = """
body { font-family: sans-serif; margin: 24px; color: #222; }
.w { padding: 2px 4px; border-radius: 3px; }
.text { font-size: 20px; line-height: 2.0; }
table { border-collapse: collapse; }
td, th { border: 1px solid #ccc; padding: 4px 8px; text-align: right; }
.panels { display: flex; flex-wrap: wrap; gap: 12px; }
.legend span { padding: 2px 6px; margin-right: 8px; }
"""


def render_html(doc: ReportDocument) -> str:
    rows = [
        f"<tr><th>gold</th><td>{html.escape(doc.gold_label)}</td></tr>",
        f"<tr><th>predicted</th><td>{html.escape(doc.predicted_label)} (p_hateful={doc.p_hateful:.4f})</td></tr>",
    ]
    if doc.modality is not None:
        rows.append(f"<tr><th>text contribution</th><td>{doc.modality[0]:.4f}</td></tr>")
        rows.append(f"<tr><th>visual contribution</th><td>{doc.modality[1]:.4f}</td></tr>")
    for key, value in sorted(doc.diagnostics.items()):
        shown = f"{value:.3e}" if isinstance(value, float) else html.escape(str(value))
        rows.append(f"<tr><th>{html.escape(key)}</th><td>{shown}</td></tr>")
    body = [
        f"<h1>Record {html.escape(doc.record_id)}</h1>",
        f"<table>{''.join(rows)}</table>",
    ]
    if doc.words:
        body.append(f"<h2>Word attribution ({html.escape(doc.method or '')})</h2>")
        body.append(
            '<p class="legend"><span style="background:rgba(0,150,60,0.6)">toward hateful</span>'
            '<span style="background:rgba(200,30,30,0.6)">toward non-hateful</span></p>'
        )
        body.append(f'<p class="text">{_word_html(doc.words)}</p>')
    else:
        body.append(f'<p class="text">{html.escape(doc.text)}</p>')
    if doc.heads:
        kw = html.escape(doc.keyword or "")
        body.append(f"<h2>Region alignment for &ldquo;{kw}&rdquo;</h2>")
        panels = [
            f"<figure>{overlay_svg(h, doc.image_path)}<figcaption>L{h.layer + 1} H{h.head + 1} "
            f"peak {h.peak:.3f}</figcaption></figure>"
            for h in doc.heads
        ]
        body.append(f'<div class="panels">{"".join(panels)}</div>')
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>memescope {html.escape(doc.record_id)}</title><style>{_CSS}</style></head>"
        f"<body>{''.join(body)}</body></html>\n"
    )
