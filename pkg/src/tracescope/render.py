"""Static SVG renderings: timeline, communication heatmap, stacked bars."""

import logging
import math
import zlib
from xml.sax.saxutils import escape

import numpy as np

from .callgraph import ENTER, INSTANT, match_caller_callee
from .errors import EmptyTrace, NonSquare
from .model import ABSENT

log = logging.getLogger(__name__)

# tab20
PALETTE = (
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896",
    "#9467bd", "#c5b0d5", "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f", "#c7c7c7",
    "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
)
BACKGROUND = "#ffffff"
HEAT_RGB = (8, 48, 107)
DEFAULT_MAX_EVENTS = 50_000


def color_for(name):
    """Palette color chosen by a stable hash of the function name."""
    return PALETTE[zlib.crc32(name.encode("utf-8")) % len(PALETTE)]


class SvgDoc:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def add(self, text):
        self.parts.append(text)

    def rect(self, x, y, w, h, fill, extra=""):
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(w, 0):.2f}" height="{max(h, 0):.2f}" fill="{fill}"{extra}/>')

    def text(self, x, y, s, extra=""):
        self.add(f'<text x="{x:.2f}" y="{y:.2f}"{extra}>{escape(str(s))}</text>')

    def line(self, x1, y1, x2, y2, stroke, extra=""):
        self.add(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}"{extra}/>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}" '
                f'font-family="sans-serif" font-size="11">')
        return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', head] + self.parts + ["</svg>"]) + "\n"


def _time_unit(span):
    for unit, scale in (("s", 1e9), ("ms", 1e6), ("us", 1e3)):
        if span >= scale:
            return unit, scale
    return "ns", 1.0


def _axis(doc, x0, x1, y, lo, hi, ticks=5):
    unit, scale = _time_unit(hi - lo)
    doc.add(f'<g class="axis" data-lo="{lo}" data-hi="{hi}"/>')
    doc.line(x0, y, x1, y, "#000000")
    for k in range(ticks + 1):
        t = lo + (hi - lo) * k / ticks
        x = x0 + (x1 - x0) * k / ticks
        doc.line(x, y, x, y + 4, "#000000")
        doc.text(x, y + 16, f"{(t - lo) / scale:.3g}", ' text-anchor="middle"')
    doc.text((x0 + x1) / 2, y + 30, f"time [{unit}] from {lo} ns", ' text-anchor="middle"')


def render_timeline(trace, critical_path=None, spans=None, time_range=None, arrows=False,
                    max_events=DEFAULT_MAX_EVENTS, width=1200, lane_height=14, stats=None):
    """Timeline SVG: one row per (process, thread, depth) lane.

    Calls are bars, instants diamonds.  ``critical_path`` draws a polyline
    over its segments, ``spans`` shades time ranges and ``arrows`` draws
    matched messages.  ``time_range=(lo, hi)`` fixes the x axis to exactly
    that window.  At most ``max_events`` bars are drawn, shortest dropped
    first; ``stats`` (a dict) receives the drawn and dropped counts.
    """
    match_caller_callee(trace)
    ev = trace.events
    if len(ev) == 0:
        raise EmptyTrace("nothing to draw")
    lo, hi = time_range if time_range is not None else (int(ev.timestamp.min()), int(ev.timestamp.max()))
    if hi <= lo:
        hi = lo + 1
    depth = ev.get("depth")
    matching = ev.get("matching_index")

    lanes = {}
    y = 30
    label_rows = []
    for proc, thr, a, b in ev.streams():
        top = int(depth[a:b].max()) + 1 if b > a else 1
        label_rows.append((y, proc, thr))
        for d in range(top):
            lanes[(proc, thr, d)] = y
            y += lane_height
        y += 6
    height = y + 50
    left, right = 90, width - 20
    sx = (right - left) / (hi - lo)

    def xpos(t):
        return left + (min(max(t, lo), hi) - lo) * sx

    doc = SvgDoc(width, height)
    doc.rect(0, 0, width, height, BACKGROUND)
    for ly, proc, thr in label_rows:
        doc.text(4, ly + lane_height - 3, f"P{proc} T{thr}")

    enters = np.flatnonzero(ev.kind == ENTER)
    ends = ev.timestamp[matching[enters]]
    starts = ev.timestamp[enters]
    visible = (starts <= hi) & (ends >= lo)
    enters, starts, ends = enters[visible], starts[visible], ends[visible]
    dropped = 0
    if len(enters) > max_events:
        keep = np.sort(np.argsort(-(ends - starts), kind="stable")[:max_events])
        dropped = len(enters) - len(keep)
        enters, starts, ends = enters[keep], starts[keep], ends[keep]
        log.warning("timeline: drew %d calls, dropped %d shortest", len(enters), dropped)
    if stats is not None:
        stats["drawn"] = int(len(enters))
        stats["dropped"] = int(dropped)

    if spans:
        for s_lo, s_hi in spans:
            doc.rect(xpos(s_lo), 20, xpos(s_hi) - xpos(s_lo), y - 20, "#ffd54f", ' fill-opacity="0.25"')

    doc.add('<g class="calls">')
    for r, t0, t1 in zip(enters.tolist(), starts.tolist(), ends.tolist()):
        ly = lanes[(int(ev.process[r]), int(ev.thread[r]), int(depth[r]))]
        name = ev.name_of(r)
        x0, x1 = xpos(t0), xpos(t1)
        doc.add(f'<rect data-row="{r}" x="{x0:.2f}" y="{ly:.2f}" width="{max(x1 - x0, 0.5):.2f}" '
                f'height="{lane_height - 2}" '
                f'fill="{color_for(name)}"><title>{escape(name)} [{t0}, {t1}]</title></rect>')
    doc.add("</g>")

    inst = np.flatnonzero(ev.kind == INSTANT)
    inst = inst[(ev.timestamp[inst] >= lo) & (ev.timestamp[inst] <= hi)]
    doc.add('<g class="instants">')
    for r in inst.tolist():
        ly = lanes[(int(ev.process[r]), int(ev.thread[r]), int(depth[r]))] + (lane_height - 2) / 2
        x = xpos(int(ev.timestamp[r]))
        h = (lane_height - 2) / 2
        doc.add(f'<polygon points="{x:.2f},{ly - h:.2f} {x + h:.2f},{ly:.2f} {x:.2f},{ly + h:.2f} {x - h:.2f},{ly:.2f}" '
                f'fill="#333333"><title>{escape(ev.name_of(r))} {int(ev.timestamp[r])}</title></polygon>')
    doc.add("</g>")

    def lane_mid(row):
        return lanes[(int(ev.process[row]), int(ev.thread[row]), int(depth[row]))] + (lane_height - 2) / 2

    if arrows:
        from .comm import match_messages
        doc.add('<g class="messages">')
        for m in match_messages(trace).messages:
            doc.line(xpos(m.send_ts), lane_mid(m.send_row), xpos(m.recv_ts), lane_mid(m.recv_row), "#000000",
                     ' stroke-width="0.8" marker-end="url(#arrow)"')
        doc.add("</g>")
        doc.parts.insert(1, '<defs><marker id="arrow" markerWidth="6" markerHeight="6" refX="5" refY="3" '
                            'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#000000"/></marker></defs>')

    if critical_path is not None and critical_path.segments:
        pts = []
        for seg in critical_path.segments:
            if seg.kind == "local":
                ya = lane_mid(seg.first_row)
                yb = lane_mid(seg.event_row)
                pts.append((xpos(seg.t_start), ya))
                pts.append((xpos(seg.t_end), yb))
        text = " ".join(f"{x:.2f},{yy:.2f}" for x, yy in pts)
        doc.add(f'<polyline class="critical-path" points="{text}" fill="none" stroke="#e41a1c" stroke-width="2.5"/>')

    _axis(doc, left, right, y + 4, lo, hi)
    return doc.render()


def _heat_color(frac):
    frac = min(max(frac, 0.0), 1.0)
    r = round(255 + (HEAT_RGB[0] - 255) * frac)
    g = round(255 + (HEAT_RGB[1] - 255) * frac)
    b = round(255 + (HEAT_RGB[2] - 255) * frac)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_heatmap(table, colormap="linear", cell=24, title="Communication matrix"):
    """Heatmap of a square table; ``colormap`` is ``linear`` or ``log``.

    Zero cells always use the background color.
    """
    nr, nc = table.shape
    if nr != nc:
        raise NonSquare(f"heatmap needs a square table, got {nr}x{nc}")
    if colormap not in ("linear", "log"):
        raise ValueError("colormap must be 'linear' or 'log'")
    vals = np.array(table.cells, dtype=float).reshape(nr, nc)
    peak = float(vals.max()) if vals.size else 0.0
    left, top = 60, 40
    width = left + nc * cell + 120
    height = top + nr * cell + 50
    doc = SvgDoc(width, height)
    doc.rect(0, 0, width, height, BACKGROUND)
    doc.text(left, 20, f"{title} ({colormap})")
    for i in range(nr):
        for j in range(nc):
            v = vals[i, j]
            if v <= 0 or peak <= 0:
                fill = BACKGROUND
            elif colormap == "linear":
                fill = _heat_color(v / peak)
            else:
                fill = _heat_color(math.log1p(v) / math.log1p(peak))
            doc.rect(left + j * cell, top + i * cell, cell, cell, fill,
                     f' class="cell" data-row="{i}" data-col="{j}" stroke="#dddddd"')
    for i, lab in enumerate(table.row_labels):
        doc.text(left - 6, top + i * cell + cell * 0.7, lab, ' text-anchor="end"')
    for j, lab in enumerate(table.column_labels):
        doc.text(left + j * cell + cell / 2, top + nr * cell + 14, lab, ' text-anchor="middle"')
    doc.text(left + nc * cell / 2, top + nr * cell + 34, "receiver", ' text-anchor="middle"')
    # legend bar
    lx = left + nc * cell + 20
    steps = 10
    for k in range(steps):
        doc.rect(lx, top + k * 12, 16, 12, _heat_color(1 - k / (steps - 1)))
    doc.text(lx + 22, top + 10, f"{peak:.6g}")
    doc.text(lx + 22, top + steps * 12, "0")
    return doc.render()


def render_stacked_bars(table, title="", bar_width=None, width=900, height=400):
    """One stacked bar per table row; each column is a segment (legend keyed by column)."""
    nr, nc = table.shape
    if nr == 0:
        raise EmptyTrace("no rows to draw")
    vals = np.clip(np.array(table.cells, dtype=float).reshape(nr, nc), 0, None)
    totals = vals.sum(axis=1)
    peak = float(totals.max())
    left, top, bottom = 60, 30, 50
    legend_w = 180
    plot_w = width - left - legend_w
    plot_h = height - top - bottom
    slot = plot_w / nr
    bw = bar_width or max(slot * 0.8, 1.0)
    doc = SvgDoc(width, height)
    doc.rect(0, 0, width, height, BACKGROUND)
    if title:
        doc.text(left, 18, title)
    base_y = top + plot_h
    doc.line(left, base_y, left + plot_w, base_y, "#000000")
    doc.line(left, top, left, base_y, "#000000")
    doc.text(left - 6, top + 4, f"{peak:.6g}", ' text-anchor="end"')
    doc.text(left - 6, base_y, "0", ' text-anchor="end"')
    colors = [color_for(c) for c in table.column_labels]
    for i in range(nr):
        x = left + i * slot + (slot - bw) / 2
        acc = 0.0
        doc.add(f'<g class="stack" data-row="{i}" data-total="{totals[i]:.6g}">')
        for j in range(nc):
            v = vals[i, j]
            if v <= 0:
                continue
            h = plot_h * v / peak if peak > 0 else 0
            doc.add(f'<rect class="segment" data-col="{j}" data-value="{v:.10g}" x="{x:.2f}" '
                    f'y="{base_y - acc - h:.2f}" width="{bw:.2f}" height="{h:.2f}" '
                    f'fill="{colors[j]}"><title>{escape(table.column_labels[j])}: {v:.6g}</title></rect>')
            acc += h
        doc.add("</g>")
    step = max(1, nr // 10)
    for i in range(0, nr, step):
        doc.text(left + i * slot + slot / 2, base_y + 14, table.row_labels[i], ' text-anchor="middle"')
    lx = left + plot_w + 16
    for j, lab in enumerate(table.column_labels[:30]):
        doc.rect(lx, top + j * 16, 10, 10, colors[j])
        doc.text(lx + 14, top + j * 16 + 9, lab)
    return doc.render()
