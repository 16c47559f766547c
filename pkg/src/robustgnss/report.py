"""Figure rendering for sweep reports.

Kept separate from the evaluation library so the metrics path stays free of
plotting dependencies; the CLI calls into this module after writing the
delimited outputs. Files are written with stripped metadata so repeated runs
are byte-identical.
"""

from __future__ import annotations

import os

from .evaluate import SweepResult

_SCHEME_STYLE = {
    "l2": dict(color="#555555", marker="o", linestyle="-"),
    "huber": dict(color="#1f77b4", marker="s", linestyle="-"),
    "cauchy": dict(color="#2ca02c", marker="^", linestyle="-"),
    "switch": dict(color="#d62728", marker="v", linestyle="-"),
    "dcs": dict(color="#9467bd", marker="D", linestyle="--"),
    "maxmix": dict(color="#ff7f0e", marker="x", linestyle="-"),
}


def _style(scheme: str) -> dict:
    return _SCHEME_STYLE.get(scheme, dict(marker="o", linestyle="-"))


def render_sweep_figures(results: list[SweepResult], out_dir: str,
                         dpi: int = 130) -> list[str]:
    """Render median and mean RSOS error versus fault percentage.

    Returns the written file paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for stat_name in ("median", "mean"):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for res in results:
            x = [100.0 * p for p in res.fault_probabilities]
            y = [getattr(s, stat_name) for s in res.stats]
            ax.plot(x, y, label=res.scheme, **_style(res.scheme))
        ax.set_xlabel("faulted observations (%)")
        ax.set_ylabel(f"{stat_name} RSOS positioning error (m)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"sweep_{stat_name}.png")
        fig.savefig(path, dpi=dpi, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
