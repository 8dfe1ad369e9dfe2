"""Ground-truth vs detection timelines as plain SVG (no plotting dependency)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .data import DatasetManifest
from .localize import Detection

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
WIDTH, LEFT, TRACK_H, GAP = 900, 140, 22, 10


def timeline_tracks(manifest: DatasetManifest, video_id: str,
                    sources: Mapping[str, Sequence[Detection]]) -> list[tuple[str, list[tuple[int, float, float, float | None]]]]:
    video = manifest.video(video_id)
    tracks = [("ground truth", [(g.class_id, g.start, g.end, None) for g in video.ground_truth])]
    for name, dets in sources.items():
        tracks.append((name, [(d.class_id, d.start, d.end, d.confidence) for d in dets if d.video_id == video_id]))
    return tracks


def render_svg(manifest: DatasetManifest, video_id: str, sources: Mapping[str, Sequence[Detection]]) -> str:
    video = manifest.video(video_id)
    tracks = timeline_tracks(manifest, video_id, sources)
    span = WIDTH - LEFT - 10
    scale = span / video.duration
    height = GAP + len(tracks) * (TRACK_H + GAP) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">',
           f'<title>{escape(video_id)}</title>']
    for row, (name, items) in enumerate(tracks):
        y = GAP + row * (TRACK_H + GAP)
        out.append(f'<text x="4" y="{y + TRACK_H - 6}">{escape(name)}</text>')
        out.append(f'<rect x="{LEFT}" y="{y}" width="{span:.2f}" height="{TRACK_H}" fill="#f2f2f2"/>')
        for cid, start, end, conf in items:
            tip = manifest.class_names[cid] + ("" if conf is None else f" ({conf:.3f})")
            out.append(f'<rect x="{LEFT + start * scale:.2f}" y="{y}" width="{max((end - start) * scale, 0.5):.2f}" '
                       f'height="{TRACK_H}" fill="{PALETTE[cid % len(PALETTE)]}" fill-opacity="0.8">'
                       f'<title>{escape(tip)}</title></rect>')
    axis_y = GAP + len(tracks) * (TRACK_H + GAP) + 4
    out.append(f'<text x="{LEFT}" y="{axis_y + 10}">0 s</text>')
    out.append(f'<text x="{WIDTH - 10}" y="{axis_y + 10}" text-anchor="end">{video.duration:.2f} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_timeline(manifest: DatasetManifest, video_id: str, sources: Mapping[str, Sequence[Detection]],
                   out_prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.svg`` and ``<prefix>.csv`` (track,class,start,end,confidence)."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    svg = out_prefix.with_suffix(".svg")
    svg.write_text(render_svg(manifest, video_id, sources))
    table = out_prefix.with_suffix(".csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track", "class", "start", "end", "confidence"])
        for name, items in timeline_tracks(manifest, video_id, sources):
            for cid, start, end, conf in items:
                w.writerow([name, manifest.class_names[cid], repr(start), repr(end), "" if conf is None else repr(conf)])
    return svg, table
