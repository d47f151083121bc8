"""Static SVG of an xy trajectory with 2-sigma covariance ellipses."""

from __future__ import annotations

import numpy as np

SIZE = 640
MARGIN = 30


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def trajectory_svg(traj, truth=None, windows=(), n_sigma: float = 2.0) -> str:
    """``windows``: rows ``(i0, i1, dx, dy, dz, s00..s22)`` in world axes.

    Each ellipse is drawn at the estimate's position at ``i1`` when the
    trajectory is sampled per IMU sample, else at the window's end point.
    """
    paths = [np.asarray(traj.pos)[:, :2]]
    if truth is not None:
        paths.append(np.asarray(truth.pos)[:, :2])
    pts = np.vstack(paths)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = (SIZE - 2 * MARGIN) / max(float(np.max(hi - lo)), 1e-9)

    def xy(p):
        # y axis flipped so north is up
        return MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale

    def polyline(p, color):
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in map(xy, p))
        return f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
           f'viewBox="0 0 {SIZE} {SIZE}">', f'<rect width="{SIZE}" height="{SIZE}" fill="white"/>']
    if truth is not None:
        out.append(polyline(paths[1], "#888888"))
    out.append(polyline(paths[0], "#1f5fbf"))

    t_pos = np.asarray(traj.pos)
    dense = len(windows) and len(t_pos) > len(windows) + 1
    for q, row in enumerate(windows):
        centre = t_pos[int(row[1])] if dense and int(row[1]) < len(t_pos) else t_pos[min(q + 1, len(t_pos) - 1)]
        S = np.asarray(row[5:14], dtype=float).reshape(3, 3)[:2, :2]
        evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
        rx, ry = n_sigma * np.sqrt(np.clip(evals[::-1], 0.0, None)) * scale
        angle = -np.degrees(np.arctan2(evecs[1, 1], evecs[0, 1]))
        cx, cy = xy(centre)
        out.append(f'<ellipse cx="{_fmt(cx)}" cy="{_fmt(cy)}" rx="{_fmt(rx)}" ry="{_fmt(ry)}" '
                   f'transform="rotate({_fmt(angle)} {_fmt(cx)} {_fmt(cy)})" fill="none" '
                   f'stroke="#d04020" stroke-width="0.8"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
