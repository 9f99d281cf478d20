"""Scatter of automatic against reference coverage, written as SVG."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

OUTCOME_STYLE = {
    "TP": ("tab:red", "o"),
    "TN": ("tab:blue", "o"),
    "FP": ("tab:orange", "^"),
    "FN": ("tab:purple", "v"),
}

# fixed ids and no timestamp so the same rows always give the same bytes
_RC = {"svg.hashsalt": "hipscreen", "svg.fonttype": "none", "font.size": 9}


def fhc_scatter(path, rows, threshold=50.0, title=None):
    """``rows`` are dicts with ``reference_fhc``, ``afhc`` and ``outcome``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 100], [0, 100], color="0.75", lw=0.8, ls=":", zorder=1)
        ax.axvline(threshold, color="k", lw=0.8, ls="--", zorder=1)
        ax.axhline(threshold, color="k", lw=0.8, ls="--", zorder=1)
        for outcome, (color, marker) in OUTCOME_STYLE.items():
            pts = [(r["reference_fhc"], r["afhc"]) for r in rows if r["outcome"] == outcome]
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=14, c=color, marker=marker, label=f"{outcome} ({len(pts)})", zorder=2)
        ax.set_xlim(0, 100)
        ax.set_ylim(0, 100)
        ax.set_aspect("equal")
        ax.set_xlabel("reference FHC (%)")
        ax.set_ylabel("automatic FHC (%)")
        if title:
            ax.set_title(title)
        if rows:
            ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
