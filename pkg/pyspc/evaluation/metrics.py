import numpy as np

SPEED_OF_LIGHT = 299792458.0

# Circular errors above this fraction of N count as outliers.
OUTLIER_FRACTION = 0.03


def error_stats(errors, n: int) -> dict:
    """MAE, RMSE and outlier rate of circular depth errors (in bins)."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return {"mae": np.nan, "rmse": np.nan, "outlier_rate": np.nan}
    return {
        "mae": float(np.mean(errors)),
        "rmse": float(np.sqrt(np.mean(errors**2))),
        "outlier_rate": float(np.mean(errors > OUTLIER_FRACTION * n)),
    }


def bins_to_metres(bins, bin_size_ps: float):
    """Convert a depth in bins to metres, c·Δ/2 per bin."""
    return np.asarray(bins) * bin_size_ps * 1e-12 * SPEED_OF_LIGHT / 2.0
