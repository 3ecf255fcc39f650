"""SVG Gantt chart for schedules: one row per device, then one row per
active link, both in ascending id order."""

from __future__ import annotations

from .cluster import ClusterSpec
from .simulate import Schedule

_DEVICE_COLORS = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                  "#76b7b2", "#edc948", "#b07aa1", "#9c755f")
_LINK_COLOR = "#bab0ac"
_ROW_H = 26
_BAR_H = 18
_LEFT = 90
_WIDTH = 860
_TOP = 30


def schedule_to_svg(schedule: Schedule, cluster: ClusterSpec,
                    manifest_hash: str = "") -> str:
    makespan = schedule.makespan_ms or 1.0
    scale = (_WIDTH - _LEFT - 20) / makespan

    open_beg = {}
    exec_bars: dict[int, list[tuple[float, float, int]]] = {
        d: [] for d in range(cluster.device_count)}
    link_bars: dict[tuple[int, int], list[tuple[float, float, int]]] = {}
    for e in schedule.events:
        if e.type == "beg":
            open_beg[e.task] = e.time_ms
            continue
        beg = open_beg.pop(e.task)
        if e.task.kind == "exec":
            exec_bars[e.task.device].append((beg, e.time_ms, e.task.vertex))
        else:
            link_bars.setdefault((e.task.src, e.task.dst), []).append(
                (beg, e.time_ms, e.task.vertex))

    rows: list[tuple[str, list[tuple[float, float, int]], str]] = []
    for d in range(cluster.device_count):
        rows.append((f"device {d}", sorted(exec_bars[d]),
                     _DEVICE_COLORS[d % len(_DEVICE_COLORS)]))
    for (s, t), bars in sorted(link_bars.items()):
        rows.append((f"link {s}&#8594;{t}", sorted(bars), _LINK_COLOR))

    height = _TOP + _ROW_H * len(rows) + 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{height}" font-family="monospace" font-size="11">',
    ]
    if manifest_hash:
        out.append(f"<!-- manifest: {manifest_hash} -->")
    out.append(f'<text x="{_LEFT}" y="16">makespan: {makespan:.6g} ms</text>')
    for i, (label, bars, color) in enumerate(rows):
        y = _TOP + i * _ROW_H
        out.append(f'<text x="4" y="{y + 14}">{label}</text>')
        out.append(f'<line x1="{_LEFT}" y1="{y + _ROW_H - 3}" x2="{_WIDTH - 10}" '
                   f'y2="{y + _ROW_H - 3}" stroke="#ddd"/>')
        for beg, end, vertex in bars:
            x = _LEFT + beg * scale
            w = max((end - beg) * scale, 0.5)
            out.append(
                f'<rect x="{x:.2f}" y="{y + 2}" width="{w:.2f}" '
                f'height="{_BAR_H}" fill="{color}" stroke="#333" '
                f'stroke-width="0.5"><title>v{vertex}: {beg:.6g}-{end:.6g} ms'
                f'</title></rect>')
    axis_y = _TOP + len(rows) * _ROW_H + 14
    out.append(f'<text x="{_LEFT}" y="{axis_y}">0</text>')
    out.append(f'<text x="{_WIDTH - 70}" y="{axis_y}">{makespan:.6g} ms</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
