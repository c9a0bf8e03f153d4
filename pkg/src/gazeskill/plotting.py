"""SVG figures for reports: group density curves and Vincentile profiles.

Figures are 800x500 px and byte-stable: the SVG id salt is fixed and no
creation date is written.
"""

from __future__ import annotations

import io
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gazeio import fmt_num  # noqa: E402

WIDTH_PX, HEIGHT_PX = 800, 500
_DPI = 72.0
_RC = {
    "svg.hashsalt": "gazeskill",
    "svg.fonttype": "path",
    "font.size": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}
# group markers: low triangles, high diamonds, pro circles
GROUP_STYLE = {
    "low": {"marker": "^", "color": "#1b9e77"},
    "high": {"marker": "D", "color": "#7570b3"},
    "pro": {"marker": "o", "color": "#d95f02"},
}
_OTHER = {"marker": "s", "color": "#666666"}


def _save(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _figure():
    fig = plt.figure(figsize=(WIDTH_PX / _DPI, HEIGHT_PX / _DPI), dpi=_DPI)
    ax = fig.add_axes((0.1, 0.12, 0.85, 0.8))
    return fig, ax


def density_svg(curves: Mapping[str, tuple[np.ndarray, np.ndarray]], bandwidth_ms: float | None = None,
                modes: Mapping[str, Sequence[float]] | None = None) -> str:
    """One density line per group; detected modes are marked with dots."""
    with plt.rc_context(_RC):
        fig, ax = _figure()
        for name, (grid, dens) in curves.items():
            style = GROUP_STYLE.get(name, _OTHER)
            ax.plot(grid, dens, color=style["color"], lw=1.8, label=name)
            for loc in (modes or {}).get(name, ()):
                ax.plot([loc], [np.interp(loc, grid, dens)], "o", color=style["color"], ms=5)
        ax.set_xlabel("fixation duration (ms)")
        ax.set_ylabel("density")
        if bandwidth_ms is not None:
            ax.set_title(f"bandwidth {bandwidth_ms:g} ms", fontsize=10)
        ax.set_xlim(left=0)
        ax.set_ylim(bottom=0)
        if curves:
            ax.legend()
        return _save(fig)


def vincentile_svg(profiles: Mapping[str, Sequence[float]]) -> str:
    """Mean duration per Vincentile bin, one line per group."""
    with plt.rc_context(_RC):
        fig, ax = _figure()
        k = 0
        for name, means in profiles.items():
            style = GROUP_STYLE.get(name, _OTHER)
            bins = np.arange(1, len(means) + 1)
            k = max(k, len(means))
            ax.plot(bins, means, marker=style["marker"], color=style["color"], lw=1.5, ms=7, label=name)
        ax.set_xlabel("bin")
        ax.set_ylabel("mean fixation duration (ms)")
        if k:
            ax.set_xticks(np.arange(1, k + 1))
            ax.legend()
        return _save(fig)


def density_table(curves: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> str:
    """CSV with a shared t_ms column; curves must share their grid."""
    names = list(curves)
    if not names:
        return "t_ms\n"
    grid = curves[names[0]][0]
    lines = ["t_ms," + ",".join(names)]
    cols = [np.interp(grid, *curves[n]) if len(curves[n][0]) != len(grid) else curves[n][1] for n in names]
    for i, t in enumerate(grid):
        lines.append(",".join([fmt_num(t)] + [fmt_num(c[i]) for c in cols]))
    return "\n".join(lines) + "\n"


def vincentile_table(profiles: Mapping[str, Sequence[float]]) -> str:
    names = list(profiles)
    k = max((len(v) for v in profiles.values()), default=0)
    lines = ["bin," + ",".join(names)]
    for b in range(k):
        lines.append(",".join([str(b + 1)] + [fmt_num(profiles[n][b]) for n in names]))
    return "\n".join(lines) + "\n"
