"""Exact zero-mean Gaussian process regression with ARD-RBF and deep kernels.

The kernel is k(x, x') = sigma^2 exp(-sum_d (z_d - z'_d)^2 / (2 l_d^2)) where
z = x for the raw kernel or z = phi(x; w) for a deep kernel with feature
extractor phi.  Conditioning caches a Cholesky factor of K + sigma_y^2 I
(plus jitter); the marginal likelihood, posterior, and all gradients are
computed from that factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

LOG_2PI = math.log(2.0 * math.pi)


class GPError(RuntimeError):
    """Numerical failure in GP conditioning or prediction."""


@dataclass
class RBFParams:
    """Log-parameterized ARD-RBF hyperparameters (positivity by construction)."""

    log_length_scales: np.ndarray
    log_signal_variance: float = 0.0

    def __post_init__(self):
        self.log_length_scales = np.atleast_1d(
            np.asarray(self.log_length_scales, dtype=float)
        )
        self.log_signal_variance = float(self.log_signal_variance)
        if not np.all(np.isfinite(self.log_length_scales)):
            raise ValueError("non-finite log length scales")
        if not math.isfinite(self.log_signal_variance):
            raise ValueError("non-finite log signal variance")

    @property
    def length_scales(self) -> np.ndarray:
        return np.exp(self.log_length_scales)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def dim(self) -> int:
        return self.log_length_scales.shape[0]


@dataclass(frozen=True)
class JitterConfig:
    """Diagonal jitter: initial_scale * mean(diag), doubled on Cholesky failure."""

    initial_scale: float = 1e-6
    max_doublings: int = 8


class GPModel:
    """Kernel hyperparameters, observation noise, and optional deep extractor."""

    def __init__(self, rbf: RBFParams, log_noise_variance: float,
                 extractor=None):
        self.rbf = rbf
        self.log_noise_variance = float(log_noise_variance)
        self.extractor = extractor
        if extractor is not None and rbf.dim != extractor.latent_dim:
            raise ValueError(
                f"RBF dimension {rbf.dim} != extractor latent dim "
                f"{extractor.latent_dim}"
            )

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def latent(self, x: np.ndarray) -> np.ndarray:
        """Map raw inputs (windows or flat rows) to kernel space."""
        x = np.asarray(x, dtype=float)
        if self.extractor is not None:
            return self.extractor.forward(x)
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.rbf.dim:
            raise ValueError(f"input width {flat.shape[1]} != kernel dim {self.rbf.dim}")
        return flat

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters as an ordered name -> array dict (copies)."""
        params = {
            "log_length_scales": self.rbf.log_length_scales.copy(),
            "log_signal_variance": np.array(self.rbf.log_signal_variance),
            "log_noise_variance": np.array(self.log_noise_variance),
        }
        if self.extractor is not None:
            for name, value in self.extractor.params.items():
                params[f"extractor.{name}"] = value.copy()
        return params

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.rbf.log_length_scales = np.asarray(
            params["log_length_scales"], dtype=float
        ).copy()
        self.rbf.log_signal_variance = float(params["log_signal_variance"])
        self.log_noise_variance = float(params["log_noise_variance"])
        if self.extractor is not None:
            for name in self.extractor.params:
                self.extractor.params.arrays[name] = np.asarray(
                    params[f"extractor.{name}"], dtype=float
                ).copy()


def rbf_kernel(x: np.ndarray, x2: np.ndarray, p: RBFParams) -> float:
    """Scalar ARD-RBF kernel value between two points in kernel space."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape or x.shape[0] != p.dim:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape} vs D={p.dim}")
    d = (x - x2) / p.length_scales
    return p.signal_variance * math.exp(-0.5 * float(d @ d))


def _scaled_sqdist(z1: np.ndarray, z2: np.ndarray, length_scales: np.ndarray):
    u = z1 / length_scales
    v = z2 / length_scales
    uu = np.sum(u * u, axis=1)
    vv = np.sum(v * v, axis=1)
    sq = uu[:, None] + vv[None, :] - 2.0 * (u @ v.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def kernel_matrix(model: GPModel, x: np.ndarray, x2: np.ndarray | None = None,
                  _latent=None, _latent2=None) -> np.ndarray:
    """Cross-covariance k(x_i, x2_j); symmetric when x2 is omitted."""
    z1 = model.latent(x) if _latent is None else _latent
    if x2 is None and _latent2 is None:
        z2 = z1
    else:
        z2 = model.latent(x2) if _latent2 is None else _latent2
    if z1.shape[1] != z2.shape[1]:
        raise ValueError("kernel-space dimension mismatch")
    sq = _scaled_sqdist(z1, z2, model.rbf.length_scales)
    k = model.rbf.signal_variance * np.exp(-0.5 * sq)
    if x2 is None and _latent2 is None:
        k = 0.5 * (k + k.T)  # exact symmetry despite BLAS rounding
    return k


class ConditionedGP:
    """Immutable training-data factorization K = L L^T with solved alpha."""

    def __init__(self, model, x, y, latents, k_f, chol, alpha, jitter,
                 jitter_doublings, recording=None):
        self.model = model
        self.x = x
        self.y = y
        self.latents = latents
        self.k_f = k_f
        self.chol = chol
        self.alpha = alpha
        self.jitter = jitter
        self.jitter_doublings = jitter_doublings
        self.recording = recording

    @property
    def n(self) -> int:
        return self.y.shape[0]


def condition(model: GPModel, x: np.ndarray, y: np.ndarray,
              jitter: JitterConfig = JitterConfig(),
              record: bool = False) -> ConditionedGP:
    """Factorize K(X, X) + sigma_y^2 I (+ escalating jitter) and solve for y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != x.shape[0] or y.shape[0] < 1:
        raise ValueError("need n >= 1 matching inputs and targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    recording = None
    if record and model.extractor is not None:
        recording = model.extractor.record(x)
        latents = recording.latents
    else:
        latents = model.latent(x)
    k_f = kernel_matrix(model, x, _latent=latents)
    n = k_f.shape[0]
    mean_diag = float(np.mean(np.diag(k_f))) + model.noise_variance
    diag = np.arange(n)
    for doublings in range(jitter.max_doublings + 1):
        jit = jitter.initial_scale * (2.0 ** doublings) * mean_diag
        k_full = k_f.copy()
        k_full[diag, diag] += model.noise_variance + jit
        try:
            chol = cholesky(k_full, lower=True, overwrite_a=True)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((chol, True), y)
        return ConditionedGP(model, x, y, latents, k_f, chol, alpha, jit,
                             doublings, recording)
    raise GPError(
        f"Cholesky failed after {jitter.max_doublings} jitter doublings "
        f"(kernel matrix too ill-conditioned)"
    )


def log_marginal_likelihood(c: ConditionedGP) -> float:
    fit, complexity, const = mll_terms(c)
    return fit + complexity + const


def mll_terms(c: ConditionedGP) -> tuple[float, float, float]:
    """(model fit, complexity penalty, normalizing constant) of the MLL."""
    fit = -0.5 * float(c.y @ c.alpha)
    complexity = -float(np.sum(np.log(np.diag(c.chol))))
    const = -0.5 * c.n * LOG_2PI
    return fit, complexity, const


@dataclass
class PredictiveDistribution:
    """Gaussian posterior at test points; variances are clamped at zero."""

    means: np.ndarray
    variances: np.ndarray
    covariance: np.ndarray | None = None
    includes_noise: bool = False
    clamped: int = 0

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


def posterior_predict(c: ConditionedGP, x_star: np.ndarray,
                      include_noise: bool = False,
                      full_cov: bool = False) -> PredictiveDistribution:
    """Posterior mean and (co)variance at new inputs.

    mean = K(X*, X) alpha and cov = K(X*, X*) - V^T V with V = L^{-1} K(X, X*);
    the zero prior mean makes the mean a pure data term.  ``include_noise``
    adds the observation noise variance to the diagonal.
    """
    x_star = np.asarray(x_star, dtype=float)
    if x_star.shape[0] < 1:
        raise ValueError("need at least one test point")
    z_star = c.model.latent(x_star)
    k_cross = kernel_matrix(c.model, None, None, _latent=z_star, _latent2=c.latents)
    means = k_cross @ c.alpha
    v = solve_triangular(c.chol, k_cross.T, lower=True)
    sigma2 = c.model.rbf.signal_variance
    noise = c.model.noise_variance if include_noise else 0.0
    if full_cov:
        k_ss = kernel_matrix(c.model, None, None, _latent=z_star, _latent2=z_star)
        k_ss = 0.5 * (k_ss + k_ss.T)
        cov = k_ss - v.T @ v
        cov = 0.5 * (cov + cov.T)
        variances = np.diag(cov).copy()
        clamped = int(np.sum(variances < 0))
        np.maximum(variances, 0.0, out=variances)
        if include_noise:
            cov = cov + noise * np.eye(cov.shape[0])
        return PredictiveDistribution(means, variances + noise, cov,
                                      include_noise, clamped)
    variances = sigma2 - np.sum(v * v, axis=0)
    clamped = int(np.sum(variances < 0))
    np.maximum(variances, 0.0, out=variances)
    return PredictiveDistribution(means, variances + noise, None,
                                  include_noise, clamped)


def _chol_inverse(chol: np.ndarray) -> np.ndarray:
    """Full inverse of L L^T from its lower Cholesky factor (LAPACK potri)."""
    inv, info = dpotri(chol, lower=1)
    if info != 0:
        raise GPError(f"potri failed with info={info}")
    # potri fills only the lower triangle; mirror it.
    low = np.tril(inv)
    full = low + low.T
    diag = np.arange(chol.shape[0])
    full[diag, diag] = low[diag, diag]
    return full


def mll_gradients(c: ConditionedGP) -> dict[str, np.ndarray]:
    """Exact MLL gradient for every entry of ``model.parameters()``.

    Uses dMLL/dK = (alpha alpha^T - K^{-1}) / 2, chained in closed form into
    the ARD-RBF hyperparameters and, through the recorded extractor tape,
    into the feature-map weights.  The jitter's dependence on the mean
    kernel diagonal is included so finite differences match exactly.
    """
    n = c.n
    k_inv = _chol_inverse(c.chol)
    g = 0.5 * (np.outer(c.alpha, c.alpha) - k_inv)
    trace_g = float(np.trace(g))
    sigma2 = c.model.rbf.signal_variance
    noise = c.model.noise_variance
    jitter_coeff = c.jitter / (sigma2 + noise)  # realized scale * 2^doublings

    w = g * c.k_f
    grads: dict[str, np.ndarray] = {}
    z = c.latents
    length2 = c.model.rbf.length_scales ** 2
    row_sums = w.sum(axis=1)
    wz = w @ z
    # d MLL / d log l_d = sum_ij W_ij (z_id - z_jd)^2 / l_d^2
    a = (z * z).T @ row_sums
    b = np.sum(z * wz, axis=0)
    grads["log_length_scales"] = 2.0 * (a - b) / length2
    grads["log_signal_variance"] = np.array(
        float(np.sum(w)) + trace_g * jitter_coeff * sigma2
    )
    grads["log_noise_variance"] = np.array(
        trace_g * noise * (1.0 + jitter_coeff)
    )
    if c.model.extractor is not None:
        if c.recording is None:
            raise GPError(
                "extractor gradients need conditioning with record=True"
            )
        dz = -2.0 * (z * row_sums[:, None] - wz) / length2[None, :]
        for name, grad in c.recording.param_gradients(dz).items():
            grads[f"extractor.{name}"] = grad
    return grads
