"""SVG rendering of a placement."""

from __future__ import annotations

import numpy as np

from rlplace.env import Placement, PlacementProblem, demand_map, net_boxes

SCALE_PX = 640.0


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(placement: Placement | None, problem: PlacementProblem, show_nets: bool = False) -> str:
    """Grid, macro rectangles labelled by id, cluster dots, optional net boxes.

    Net boxes are tinted by the mean routing demand under them. The y axis
    is flipped so row 0 sits at the bottom.
    """
    cfg = problem.cfg
    s = SCALE_PX / max(cfg.width_um, cfg.height_um)
    w, h = cfg.width_um * s, cfg.height_um * s
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w)}" height="{_f(h)}" viewBox="0 0 {_f(w)} {_f(h)}">',
        f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="white" stroke="black"/>',
    ]

    def y(v):
        return h - v * s

    for c in range(1, cfg.cols):
        x = c * cfg.cell_w_um * s
        out.append(f'<line x1="{_f(x)}" y1="0" x2="{_f(x)}" y2="{_f(h)}" stroke="#ddd"/>')
    for r in range(1, cfg.rows):
        yy = y(r * cfg.cell_h_um)
        out.append(f'<line x1="0" y1="{_f(yy)}" x2="{_f(w)}" y2="{_f(yy)}" stroke="#ddd"/>')
    if placement is None:
        out.append("</svg>")
        return "\n".join(out) + "\n"

    node = problem.clustered.original.node
    for mid, (row, col) in sorted(placement.macro_cells.items()):
        n = node(mid)
        x0, y0 = col * cfg.cell_w_um, row * cfg.cell_h_um
        out.append(
            f'<rect class="macro" x="{_f(x0 * s)}" y="{_f(y(y0 + n.height_um))}" '
            f'width="{_f(n.width_um * s)}" height="{_f(n.height_um * s)}" fill="#9ecae1" stroke="#08519c"/>'
        )
        out.append(
            f'<text x="{_f((x0 + n.width_um / 2) * s)}" y="{_f(y(y0 + n.height_um / 2))}" '
            f'font-size="10" text-anchor="middle">{mid}</text>'
        )
    for cid, (cx, cy) in sorted(placement.cluster_xy.items()):
        out.append(f'<circle class="cluster" cx="{_f(cx * s)}" cy="{_f(y(cy))}" r="3" fill="#e6550d"/>')

    if show_nets and problem.num_nets:
        obj_xy = _object_xy(placement, problem)
        pin_xy = obj_xy[problem.pin_obj] + problem.pin_off
        demand = demand_map(pin_xy, problem.pin_net, problem.num_nets, cfg)
        peak = demand.max() if demand.size and demand.max() > 0 else 1.0
        for x0, y0, x1, y1 in net_boxes(pin_xy, problem.pin_net, problem.num_nets):
            if not np.isfinite(x0):
                continue
            c0 = int(np.clip(x0 // cfg.cell_w_um, 0, cfg.cols - 1))
            c1 = int(np.clip(x1 // cfg.cell_w_um, 0, cfg.cols - 1))
            r0 = int(np.clip(y0 // cfg.cell_h_um, 0, cfg.rows - 1))
            r1 = int(np.clip(y1 // cfg.cell_h_um, 0, cfg.rows - 1))
            level = float(demand[r0 : r1 + 1, c0 : c1 + 1].mean()) / peak
            red = int(round(255 * level))
            out.append(
                f'<rect class="net" x="{_f(x0 * s)}" y="{_f(y(y1))}" width="{_f((x1 - x0) * s)}" '
                f'height="{_f((y1 - y0) * s)}" fill="none" stroke="rgb({red},0,{255 - red})" stroke-opacity="0.5"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _object_xy(placement: Placement, problem: PlacementProblem) -> np.ndarray:
    xy = [placement.cluster_xy[c] for c in problem.cluster_ids]
    xy += [placement.macro_xy[m] for m in problem.order]
    xy += [tuple(p) for p in problem.port_xy]
    return np.array(xy, dtype=float).reshape(-1, 2)
