"""SVG rendering for the figure grids.

Pure presentation: every number plotted here comes from ResultRow lists (or
the grid's manifest extras), never from fresh computation, so the CSV stays
the single source of truth.  Output is deterministic: fixed hash salt, no
embedded date, Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import FIG3_LAYERS, ResultRow  # noqa: E402

plt.rcParams["svg.hashsalt"] = "bpgrad"

_K_MARKERS = {"fixed_slot(0)": "o", "random_effective": "^", "random_all": "s"}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def _scatter_series(ax, rows, key, color):
    pts = sorted((key(r), r.var_est) for r in rows)
    marker = _K_MARKERS.get(rows[0].k_mode, "o") if rows else "o"
    ax.plot(
        [x for x, _ in pts],
        [y for _, y in pts],
        marker,
        color=color,
        markersize=4.5,
        linestyle="none",
        markerfacecolor="none" if rows and rows[0].k_mode != "fixed_slot(0)" else None,
    )


def _render_fig1(rows: list[ResultRow], extra: dict) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    widths = sorted({r.s for r in rows})
    for i, s in enumerate(widths):
        color = f"C{i}"
        for k_mode in ("fixed_slot(0)", "random_effective"):
            series = [
                r
                for r in rows
                if r.s == s and r.k_mode == k_mode and r.prefactor_mode == "eq14"
            ]
            _scatter_series(ax, series, lambda r: r.n, color)
        for mode, style in (("eq14", "-"), ("figure1", "--")):
            line = sorted(
                {
                    (r.n, r.predicted)
                    for r in rows
                    if r.s == s and r.prefactor_mode == mode and r.predicted > 0
                }
            )
            label = f"s={s}" if mode == "eq14" else None
            ax.plot(
                [x for x, _ in line],
                [y for _, y in line],
                style,
                color=color,
                linewidth=1.2,
                alpha=0.85,
                label=label,
            )
    ax.set_yscale("log")
    ax.set_xlabel("qubits n")
    ax.set_ylabel("gradient variance")
    ax.set_title("single layer: variance vs width per block size")
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(fontsize=8, title="predictions", title_fontsize=8)
    return fig


def _render_fig2(rows: list[ResultRow], extra: dict) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for k_mode, color in (("fixed_slot(0)", "C0"), ("random_effective", "C1")):
        series = [
            r for r in rows if r.k_mode == k_mode and r.prefactor_mode == "eq14"
        ]
        _scatter_series(ax, series, lambda r: r.n_eff, color)
        ax.plot([], [], _K_MARKERS[k_mode], color=color, label=k_mode)
    for mode, style in (("eq14", "-"), ("figure1", "--")):
        line = sorted(
            {(r.n_eff, r.predicted) for r in rows if r.prefactor_mode == mode}
        )
        ax.plot(
            [x for x, _ in line],
            [y for _, y in line],
            style,
            color="k",
            linewidth=1.1,
            alpha=0.7,
            label=mode,
        )
    ax.set_yscale("log")
    ax.set_xlabel("effective parameters N_eff (observable support)")
    ax.set_ylabel("gradient variance")
    ax.set_title("single layer: variance vs observable support")
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(fontsize=8)
    return fig


def _render_fig3(rows: list[ResultRow], extra: dict) -> plt.Figure:
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.8, 4.2))
    data = [r for r in rows if r.k_mode == "random_all"]
    ns = sorted({r.n for r in data})
    for i, n in enumerate(ns):
        series = sorted((r.l, r.var_est) for r in data if r.n == n)
        left.plot(
            [x for x, _ in series],
            [y for _, y in series],
            "o-",
            color=plt.cm.viridis(i / max(len(ns) - 1, 1)),
            markersize=3.5,
            linewidth=1.0,
            label=f"n={n}",
        )
    left.set_xscale("log")
    left.set_yscale("log")
    left.set_xlabel("layers l")
    left.set_ylabel("gradient variance")
    left.set_title("saturation with depth")
    left.grid(True, which="both", alpha=0.25)
    left.legend(fontsize=7, ncol=2)

    deepest = FIG3_LAYERS[-1]
    tail = sorted((r.n, r.var_est) for r in data if r.l == deepest)
    right.plot(
        [x for x, _ in tail],
        [y for _, y in tail],
        "o",
        color="C0",
        label=f"l={deepest}",
    )
    fit = extra.get("fit_random_all")
    if fit:
        xs = [x for x, _ in tail]
        right.plot(
            xs,
            [fit["amplitude"] * fit["base"] ** x for x in xs],
            "--",
            color="C3",
            linewidth=1.2,
            label=f"fit base={fit['base']:.3f}",
        )
    right.set_yscale("log")
    right.set_xlabel("qubits n")
    right.set_ylabel("saturated variance")
    right.set_title("exponential decay at saturation")
    right.grid(True, which="both", alpha=0.25)
    right.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _render_fig4(rows: list[ResultRow], extra: dict) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    markers = {1: "o", 2: "s", 4: "^"}
    layer_fill = {50: True, 100: False}
    xs_all = []
    for r in rows:
        x = r.s * r.n_eff / r.l
        xs_all.append(x)
        filled = layer_fill.get(r.l, True)
        ax.plot(
            [x],
            [r.var_est],
            markers.get(r.s, "o"),
            color=f"C{[1, 2, 4].index(r.s) if r.s in (1, 2, 4) else 0}",
            markersize=5,
            markerfacecolor=None if filled else "none",
        )
    collapse = extra.get("collapse")
    if collapse and xs_all:
        hi = max(xs_all) * 1.05
        ax.plot(
            [0.0, hi],
            [0.0, collapse["beta"] * hi],
            "-",
            color="k",
            linewidth=1.1,
            alpha=0.7,
            label=f"slope fit, R²={collapse['r2']:.3f}",
        )
    for s in (1, 2, 4):
        ax.plot([], [], markers[s], color=f"C{[1, 2, 4].index(s)}", label=f"s={s}")
    ax.set_xlabel("s · N_eff / l")
    ax.set_ylabel("gradient variance")
    ax.set_title("deep circuits: collapse onto s·N_eff/l")
    ax.grid(True, alpha=0.25)
    ax.legend(fontsize=8)
    return fig


_RENDERERS = {
    "fig1": _render_fig1,
    "fig2": _render_fig2,
    "fig3": _render_fig3,
    "fig4": _render_fig4,
}


def render_figure(
    tag: str, rows: list[ResultRow], path: str | Path, extra: dict | None = None
) -> None:
    """Render one figure grid's rows to an SVG file."""
    try:
        renderer = _RENDERERS[tag]
    except KeyError:
        raise ValueError(f"unknown figure tag {tag!r}") from None
    _save(renderer(rows, extra or {}), path)
