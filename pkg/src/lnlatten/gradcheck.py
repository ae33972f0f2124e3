"""Central finite-difference oracle for analytic gradients."""

import numpy as np

from .errors import NumericalError
from .tensor import Tensor, backward, no_grad


def finite_diff_check(f, point, h=1e-5, max_coords=None, rng=None):
    """Compare the analytic gradient of scalar `f` at `point` to central differences.

    Returns the max over checked coordinates of
    |analytic - central| / max(1, |central|).

    `max_coords` caps the number of perturbed coordinates (random subset);
    by default every coordinate is checked.
    """
    x = Tensor(np.array(point.data if isinstance(point, Tensor) else point,
                        dtype=np.float64, copy=True), requires_grad=True)
    y = f(x)
    if y.size != 1:
        raise NumericalError("finite_diff_check requires a scalar-valued function")
    if not np.isfinite(y.data).all():
        raise NumericalError("function is not finite at the evaluation point")
    backward(y)
    analytic = x.grad.reshape(-1).copy()

    n = x.size
    if max_coords is not None and max_coords < n:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = np.arange(n)

    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            central = (fp - fm) / (2.0 * h)
            err = abs(analytic[i] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst
