"""Central finite-difference gradient checking."""

from dataclasses import dataclass

import numpy as np

# Relative errors are measured against the gradient's overall scale, floored
# here so that an all-zero gradient compares as an absolute error.
SCALE_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    relative_error: np.ndarray
    max_relative_error: float
    worst_index: tuple
    tol: float

    @property
    def passed(self):
        return self.max_relative_error <= self.tol

    def describe(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status} max_rel_err={self.max_relative_error:.3e} "
            f"at {self.worst_index} (analytic={self.analytic[self.worst_index]:.6e}, "
            f"numeric={self.numeric[self.worst_index]:.6e}, tol={self.tol:.0e})"
        )


def numerical_grad(f, point, eps=1e-5):
    """Central differences of the scalar map ``f`` at ``point``."""
    x = np.array(point, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + eps
        upper = float(f(x))
        x[index] = original - eps
        lower = float(f(x))
        x[index] = original
        grad[index] = (upper - lower) / (2.0 * eps)
    return grad


def grad_check(f, grad_f, point, eps=1e-5, tol=1e-4):
    """
    Compare the analytic gradient ``grad_f(point)`` of the scalar map ``f``
    with central differences. Never raises on mismatch; inspect the report.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_f(point.copy()), dtype=np.float64).reshape(point.shape)
    numeric = numerical_grad(f, point, eps=eps)

    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    relative = np.abs(analytic - numeric) / max(scale, SCALE_FLOOR)
    if relative.size:
        worst = np.unravel_index(int(np.argmax(relative)), relative.shape)
        max_error = float(relative[worst])
    else:
        worst, max_error = (), 0.0

    return GradCheckReport(
        analytic=analytic,
        numeric=numeric,
        relative_error=relative,
        max_relative_error=max_error,
        worst_index=tuple(int(i) for i in worst),
        tol=tol,
    )
