"""Input validation helpers shared by the estimators."""
import numpy as np


def check_states(X, params=None) -> np.ndarray:
    """Validate a batch of state rows ``(t, price, demand, installed)``.

    Accepts a single row or a 2-D array. Demand may be ``inf`` (price-only
    variant); every other entry must be finite. With ``params`` the stage and
    installed columns are range-checked as well.
    """
    X = np.array(X, dtype=float, ndmin=2)
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValueError(f"expected state rows of shape (n, 4), got {X.shape}")
    if np.isnan(X).any():
        raise ValueError("state rows contain NaN")
    if not np.isfinite(X[:, [0, 1, 3]]).all():
        raise ValueError("stage, price and installed must be finite")
    if (X[:, 1] <= 0).any() or (X[:, 2] <= 0).any():
        raise ValueError("price and demand must be positive")
    if params is not None:
        if (X[:, 3] < 0).any() or (X[:, 3] > params.max_capacity).any():
            raise ValueError(f"installed must lie in [0, {params.max_capacity}]")
        if (X[:, 0] < 1).any() or (X[:, 0] > params.horizon + 1).any():
            raise ValueError(f"stage must lie in [1, {params.horizon + 1}]")
    return X


def check_positive_int(value, name, minimum=1) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
