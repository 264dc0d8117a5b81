import numpy as np
import pytest


def rate_fit(epochs, errors, start=0, floor=1e-12, min_points=5):
    """Affine fit of ``log10(error)`` against epoch over the final decade of
    errors above ``floor``, restricted to ``epoch >= start``.

    The window is the longest tail of points within a factor 10 of the last
    error above the floor; it is extended backwards to ``min_points`` points
    when the decade is crossed in fewer epochs.  Returns ``(r2, slope, n_points)``.
    """
    epochs = np.asarray(epochs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = (epochs >= start) & (errors > floor)
    e, k = errors[keep], epochs[keep]
    if e.size < 2:
        raise ValueError("not enough post-identification points above floor")
    first = e.size - 1
    while first > 0 and e[first - 1] <= 10 * e[-1]:
        first -= 1
    first = min(first, max(0, e.size - min_points))
    k, y = k[first:], np.log10(e[first:])
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1. - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.
    return r2, slope, k.size


def assert_step_state_machine(trace):
    """Adaptive ``1 / ||g||`` steps until the first increase of the criterion,
    then a frozen step divided by exactly 10 at every further increase."""
    rows = trace.iterations
    adaptive = True
    for i, row in enumerate(rows):
        increased = i > 0 and row["value"] > rows[i - 1]["value"]
        if increased:
            adaptive = False
            assert row["step"] * 10 == pytest.approx(rows[i - 1]["step"],
                                                     rel=1e-15)
        elif adaptive:
            if row["grad_norm"] > 0:
                assert row["step"] == 1. / row["grad_norm"]
        else:
            assert row["step"] == rows[i - 1]["step"]
    return adaptive
