"""Static SVG plots of sweep and budget results."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Line colours per baseline scheme; other schemes use the default cycle.
c = {
    "fourier": "#1111ee",
    "gray": "#11bb11",
    "coarse": "#bb8811",
    "frh": "#000000",
    "optimized": "#ee1111",
}


def _save_svg(fig, path):
    # Fixed hash salt and no date keep repeated runs byte identical.
    with matplotlib.rc_context({"svg.hashsalt": "pyspc"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_metric(df, metric, ax=None, sbr=None):
    """Plot `metric` against Φ^sig for every scheme (log x axis).

    Parameters
    ----------
    df : `pandas.DataFrame`
        Sweep table with scheme, phi, sbr and metric columns.
    metric : str
        Column to plot, e.g. "mae" or "rmse".
    sbr : float or None
        Only plot rows with this SBR; every SBR is drawn as separate lines otherwise.
    """
    if ax is None:
        ax = plt.gca()
    if sbr is not None:
        df = df[df["sbr"] == sbr]
    for (scheme, row_sbr), group in df.groupby(["scheme", "sbr"], sort=False):
        group = group.sort_values("phi")
        label = scheme if sbr is not None else f"{scheme} (SBR {row_sbr:g})"
        ax.plot(group["phi"], group[metric], marker="o", label=label, color=c.get(scheme))
    ax.set_xscale("log")
    ax.grid(True)
    ax.set_xlabel("Signal photons")
    ax.set_ylabel(f"{metric.upper()} (bins)")
    ax.legend(loc="best")
    return ax


def plot_sweep(result, path=None, sbr=None):
    """MAE (left) and RMSE (right) against photon count for each scheme."""
    df = result.to_dataframe() if hasattr(result, "to_dataframe") else result
    fig, axarr = plt.subplots(1, 2, figsize=(12, 5), facecolor="white")
    plot_metric(df, "mae", ax=axarr[0], sbr=sbr)
    plot_metric(df, "rmse", ax=axarr[1], sbr=sbr)
    fig.tight_layout()
    if path is not None:
        _save_svg(fig, path)
    return fig, axarr


def plot_budget(df, path=None):
    """RMSE against storage budget, one panel per compression type."""
    kinds = list(dict.fromkeys(df["compression"]))
    fig, axarr = plt.subplots(1, len(kinds), figsize=(6 * len(kinds), 5), facecolor="white")
    if len(kinds) == 1:
        axarr = [axarr]
    for ax, kind in zip(axarr, kinds):
        group = df[df["compression"] == kind].sort_values("budget")
        ax.plot(group["budget"], group["rmse"], marker="o", color=c["optimized"])
        ax.grid(True)
        ax.set_xlabel("Bits" if kind == "bits" else "Fourier coefficients")
        ax.set_ylabel("RMSE (bins)")
        ax.set_title(kind)
    fig.tight_layout()
    if path is not None:
        _save_svg(fig, path)
    return fig, axarr
