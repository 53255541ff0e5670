"""Accuracy metrics and calibration diagnostics for probabilistic predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    rmse: float
    mae: float
    r_squared: float | None   # None when the truth has zero variance
    p90: float
    p95: float
    p98: float
    n: int
    units: str = "normalized"

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "r_squared": self.r_squared,
            "abs_error_percentiles": {"90": self.p90, "95": self.p95, "98": self.p98},
            "n": self.n,
            "units": self.units,
        }


def error_percentile(abs_errors, q: float) -> float:
    """Linear-interpolation percentile of |errors| at level q in (0, 100)."""
    abs_errors = np.asarray(abs_errors, dtype=float).ravel()
    if abs_errors.size == 0:
        raise EvaluationError("empty input")
    if not 0 < q < 100:
        raise EvaluationError(f"percentile level {q} outside (0, 100)")
    ordered = np.sort(abs_errors)
    h = (ordered.size - 1) * q / 100.0
    lo = int(math.floor(h))
    hi = min(lo + 1, ordered.size - 1)
    return float(ordered[lo] + (h - lo) * (ordered[hi] - ordered[lo]))


def metrics(predicted, truths, units: str = "normalized") -> EvalReport:
    """RMSE, MAE, R^2, and tail percentiles of the absolute error."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if predicted.shape != truths.shape:
        raise EvaluationError(
            f"length mismatch: {predicted.shape[0]} predictions vs "
            f"{truths.shape[0]} truths"
        )
    if predicted.size == 0:
        raise EvaluationError("empty input")
    err = predicted - truths
    abs_err = np.abs(err)
    sse = float(err @ err)
    rmse = math.sqrt(sse / err.size)
    mae = float(abs_err.mean())
    sst = float(np.sum((truths - truths.mean()) ** 2))
    r2 = None if sst == 0.0 else 1.0 - sse / sst
    return EvalReport(
        rmse=rmse, mae=mae, r_squared=r2,
        p90=error_percentile(abs_err, 90),
        p95=error_percentile(abs_err, 95),
        p98=error_percentile(abs_err, 98),
        n=err.size, units=units,
    )


# ---------------------------------------------------------------------------
# Inverse normal CDF (Acklam's rational approximation + one Halley step)

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)

_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal, |error| well below 1e-9 on (0, 1).

    A piecewise rational approximation supplies ~1e-9 accuracy; one Halley
    refinement against the exact CDF (via erfc) pushes it to full double
    precision.  Exactly zero at p = 0.5.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise EvaluationError(f"probability {p} outside (0, 1)")
    if p == 0.5:
        return 0.0
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q
              + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r
              + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r
                + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q
               + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley step: e = Phi(x) - p, with Phi via erfc for tail accuracy.
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass
class QQData:
    """Paired (theoretical, sample) quantiles of standardized residuals."""

    theoretical: np.ndarray
    sample: np.ndarray

    def __post_init__(self):
        if self.theoretical.shape != self.sample.shape:
            raise EvaluationError("quantile lists must have equal length")


def qq_data(means, stds, truths) -> QQData:
    """Standard-normal Q-Q pairs for residuals standardized by the model.

    Sample quantiles are the sorted z_i = (truth_i - mean_i)/std_i;
    theoretical quantiles are Phi^{-1}((i - 0.5)/n).
    """
    means = np.asarray(means, dtype=float).ravel()
    stds = np.asarray(stds, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if not means.shape == stds.shape == truths.shape:
        raise EvaluationError("means, stds, truths must have equal length")
    if np.any(stds <= 0):
        raise EvaluationError("predictive stds must be positive")
    z = np.sort((truths - means) / stds)
    n = z.size
    theo = np.array([inverse_normal_cdf((i - 0.5) / n) for i in range(1, n + 1)])
    return QQData(theo, z)
