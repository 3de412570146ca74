"""Error metrics, convergence fitting and figure-data output.

Files written by :func:`emit_figures` (time in s, elevations in m, forces in N):

* ``estimates.csv``: ``t, z_r, z_r_hat_<position>...`` for the selected agents
* ``rmse.csv``: ``position, j, rmse_mm``
* ``first_last_error.csv``: ``t, error_first, error_last`` (estimate minus road)
* ``learning_signals.csv``: ``t, d_f_<position>...`` for the selected agents

Each CSV has a matching ``.svg`` line chart.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.optimize import curve_fit

from roadsense.errors import DegenerateFit, DimensionMismatch

DEFAULT_SELECTION = (1, 2, 30, 90)
SVG_WIDTH, SVG_HEIGHT = 800, 500
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def rmse(estimate, truth, skip=0.0):
    """Root-mean-square difference in millimetres after discarding ``skip`` s."""
    if len(estimate) != len(truth) or not np.isclose(estimate.dt, truth.dt, rtol=1e-12, atol=0.0):
        raise DimensionMismatch("traces must share dt and length")
    start = int(round(skip / truth.dt))
    if start >= len(truth):
        raise ValueError("skip covers the whole trace")
    diff = estimate.samples[start:] - truth.samples[start:]
    return 1000.0 * float(np.sqrt(np.mean(diff**2)))


def _geometric(k, floor, c, rate):
    return floor + c * rate**k


def convergence_fit(series):
    """Fit ``floor + c * rate**k``; returns ``(floor, rate, r_squared)``."""
    y = np.asarray(series, dtype=float)
    if y.size < 10:
        raise ValueError("need at least 10 points for a convergence fit")
    if np.ptp(y) == 0.0:
        raise DegenerateFit("series is constant")
    k = np.arange(y.size, dtype=float)
    p0 = (max(float(y.min()), 0.0), float(y[0] - y.min()), 0.5)
    try:
        (floor, c, rate), _ = curve_fit(
            _geometric, k, y, p0=p0,
            bounds=([0.0, -np.inf, 0.0], [np.inf, np.inf, 1.5]),
            maxfev=20000, xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
    except (RuntimeError, ValueError) as exc:
        raise DegenerateFit(str(exc)) from exc
    resid = y - _geometric(k, floor, c, rate)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(floor), float(rate), r2


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def svg_line_chart(x, series, title="", xlabel="", ylabel="", max_points=2000):
    """Self-contained SVG line chart on a fixed canvas."""
    x = np.asarray(x, dtype=float)
    left, right, top, bottom = 80, 160, 40, 60
    pw, ph = SVG_WIDTH - left - right, SVG_HEIGHT - top - bottom
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    allv = np.concatenate(ys) if ys else np.zeros(1)
    ylo, yhi = float(np.min(allv)), float(np.max(allv))
    if yhi == ylo:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    xlo, xhi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if xhi == xlo:
        xhi = xlo + 1.0

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    step = max(1, int(np.ceil(x.size / max_points)))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for v in _nice_ticks(xlo, xhi):
        out.append(
            f'<text x="{px(v):.1f}" y="{top + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{v:.3g}</text>'
        )
    for v in _nice_ticks(ylo, yhi):
        out.append(
            f'<line x1="{left}" x2="{left + pw}" y1="{py(v):.1f}" y2="{py(v):.1f}" stroke="#ddd"/>'
        )
        out.append(
            f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{v:.3g}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2}" y="{SVG_HEIGHT - 15}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{top + ph / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13" transform="rotate(-90 18 {top + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, (name, y) in enumerate(series.items()):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::step], y[::step]))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 14 + 18 * i
        out.append(
            f'<line x1="{left + pw + 10}" x2="{left + pw + 30}" y1="{ly}" y2="{ly}" '
            f'stroke="{colour}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{left + pw + 35}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="11">{escape(str(name))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------


def _write_csv(path, columns):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def read_csv(path):
    """Read one of the figure CSVs back as a name -> column mapping."""
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def _figure(out_dir, stem, columns, xname, title, xlabel, ylabel):
    _write_csv(out_dir / f"{stem}.csv", columns)
    series = {k: v for k, v in columns.items() if k != xname}
    (out_dir / f"{stem}.svg").write_text(
        svg_line_chart(columns[xname], series, title, xlabel, ylabel)
    )


def emit_figures(results, out_dir, selection=DEFAULT_SELECTION):
    """Write the figure CSVs and SVGs; returns the list of files written.

    Positions in ``selection`` that are not part of the run are skipped.
    The estimate and learning-signal figures are omitted when no selected
    position exists.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = results.logs
    positions = [spec.position for spec in results.fleet]
    index = {p: i for i, p in enumerate(positions)}
    chosen = [p for p in selection if p in index]
    t = logs[0].z_r.t
    written = []

    _figure(
        out_dir, "rmse",
        {
            "position": np.asarray(positions, dtype=float),
            "j": np.asarray([spec.j for spec in results.fleet], dtype=float),
            "rmse_mm": np.asarray(results.rmse_mm, dtype=float),
        },
        "position", "Road estimate RMSE per agent", "cascade position", "RMSE (mm)",
    )
    first, last = logs[0], logs[-1]
    _figure(
        out_dir, "first_last_error",
        {
            "t": t,
            "error_first": first.z_r_hat.samples - first.z_r.samples,
            "error_last": last.z_r_hat.samples - last.z_r.samples,
        },
        "t", "Estimation error, first vs last agent", "time (s)", "error (m)",
    )
    written += ["rmse", "first_last_error"]
    if chosen:
        est = {"t": t, "z_r": logs[0].z_r.samples}
        est.update({f"z_r_hat_{p}": logs[index[p]].z_r_hat.samples for p in chosen})
        _figure(out_dir, "estimates", est, "t", "Road profile estimates", "time (s)", "elevation (m)")
        sig = {"t": t}
        sig.update({f"d_f_{p}": logs[index[p]].d_f.samples for p in chosen})
        _figure(out_dir, "learning_signals", sig, "t", "Learning signals", "time (s)", "d_f (N)")
        written += ["estimates", "learning_signals"]
    return [out_dir / f"{stem}.{ext}" for stem in written for ext in ("csv", "svg")]
