"""Zero-mean Gaussian process over configuration features.

Matern-5/2 kernel with per-dimension (ARD) lengthscales, heteroscedastic
per-observation noise, Cholesky factorization with escalating jitter, and
marginal-likelihood hyperparameter selection by multi-start coordinate
search. Inputs are expected in standardized feature units so the lengthscale
bounds are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from sklearn.base import BaseEstimator

from .validation import check_matrix, check_vector

SQRT5 = math.sqrt(5.0)
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class SingularKernelError(np.linalg.LinAlgError):
    """The noisy Gram matrix stayed non-positive-definite at maximum jitter."""


@dataclass(frozen=True)
class Matern52Kernel:
    """k(x, x') = sv * (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r), ARD r."""

    signal_variance: float
    lengthscales: tuple[float, ...]

    def __post_init__(self):
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")

    def _scaled(self, X: np.ndarray) -> np.ndarray:
        return X / np.asarray(self.lengthscales, dtype=np.float64)

    def gram(self, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
        a, b = self._scaled(X1), self._scaled(X2)
        sq = (
            (a**2).sum(axis=1)[:, None]
            + (b**2).sum(axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        r = np.sqrt(np.maximum(sq, 0.0))
        return self.signal_variance * (1.0 + SQRT5 * r + 5.0 * sq / 3.0) * np.exp(
            -SQRT5 * r
        )

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> float:
        x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
        x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
        if x1.shape != x2.shape or x1.ndim != 1:
            raise ValueError("kernel arguments must be equal-length vectors")
        if len(x1) != len(self.lengthscales):
            raise ValueError("input dimension does not match lengthscale count")
        return float(self.gram(x1[None, :], x2[None, :])[0, 0])


class ResidualGP(BaseEstimator):
    """GP regression with fixed per-observation noise and a variance floor."""

    def __init__(
        self,
        signal_variance: float = 1.0,
        lengthscale: float = 1.0,
        noise_floor: float = 1e-4,
    ):
        self.signal_variance = signal_variance
        self.lengthscale = lengthscale
        self.noise_floor = noise_floor

    def _kernel(self, n_dims: int) -> Matern52Kernel:
        if getattr(self, "kernel_", None) is None:
            self.kernel_ = Matern52Kernel(
                self.signal_variance, (self.lengthscale,) * n_dims
            )
        return self.kernel_

    def fit(self, X, targets, noise):
        """Factorize K + diag(noise) for the given observations.

        Noise entries are clipped up to the floor. Jitter escalates from
        1e-10 by factors of ten up to 1e-4 before giving up.
        """
        X = check_matrix(X)
        targets = check_vector(targets, n_rows=len(X))
        noise = np.maximum(check_vector(noise, n_rows=len(X)), self.noise_floor)
        self.X_ = X
        self.targets_ = targets
        self.noise_ = noise
        kernel = self._kernel(X.shape[1]) if len(X) else None
        if len(X) == 0:
            self.chol_ = None
            self.alpha_ = None
            self.jitter_ = 0.0
            return self
        K = kernel.gram(X, X) + np.diag(noise)
        jitter = 0.0
        while True:
            try:
                self.chol_ = cholesky(
                    K + jitter * np.eye(len(X)), lower=True, check_finite=False
                )
                break
            except np.linalg.LinAlgError:
                jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
                if jitter > JITTER_MAX:
                    raise SingularKernelError(
                        f"factorization failed at jitter {JITTER_MAX}"
                    ) from None
        self.jitter_ = jitter
        self.alpha_ = cho_solve((self.chol_, True), targets, check_finite=False)
        return self

    def _check_fitted(self):
        if not hasattr(self, "X_"):
            raise RuntimeError("GP has not been fitted")

    def posterior(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at the query points."""
        self._check_fitted()
        Xq = check_matrix(Xq)
        if len(self.X_) == 0:
            kernel = self._kernel(Xq.shape[1])
            prior_sd = math.sqrt(kernel.signal_variance)
            return np.zeros(len(Xq)), np.full(len(Xq), prior_sd)
        kernel = self.kernel_
        Kq = kernel.gram(Xq, self.X_)
        mean = Kq @ self.alpha_
        v = solve_triangular(self.chol_, Kq.T, lower=True, check_finite=False)
        var = kernel.signal_variance - (v**2).sum(axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def log_marginal_likelihood(self) -> float:
        self._check_fitted()
        if len(self.X_) == 0:
            return 0.0
        n = len(self.targets_)
        return float(
            -0.5 * self.targets_ @ self.alpha_
            - np.log(np.diag(self.chol_)).sum()
            - 0.5 * n * math.log(2.0 * math.pi)
        )

    def optimize_hyperparameters(
        self,
        seed: int = 0,
        restarts: int = 8,
        sweeps: int = 2,
        lengthscale_bounds: tuple[float, float] = (1e-2, 1e2),
        signal_variance_bounds: tuple[float, float] = (1e-3, 10.0),
    ):
        """Maximize the log marginal likelihood by coordinate line search.

        Gradient-free: each restart scans seven log-spaced candidates per
        coordinate for a few sweeps. The first restart starts from the
        current kernel; the rest start from seeded uniform draws in log
        bounds. Requires at least two observations, otherwise a no-op.
        """
        self._check_fitted()
        if len(self.X_) < 2:
            return self
        d = self.X_.shape[1]
        rng = np.random.default_rng(seed)
        lo = np.log(np.asarray([signal_variance_bounds[0]] + [lengthscale_bounds[0]] * d))
        hi = np.log(np.asarray([signal_variance_bounds[1]] + [lengthscale_bounds[1]] * d))

        def objective(theta: np.ndarray) -> float:
            kernel = Matern52Kernel(
                float(np.exp(theta[0])), tuple(np.exp(theta[1:]).tolist())
            )
            K = self.kernel_  # keep for restore
            try:
                self.kernel_ = kernel
                self.fit(self.X_, self.targets_, self.noise_)
                return self.log_marginal_likelihood()
            except SingularKernelError:
                return -np.inf
            finally:
                self.kernel_ = K

        current = np.log(
            np.asarray(
                [self.kernel_.signal_variance, *self.kernel_.lengthscales]
            )
        )
        starts = [np.clip(current, lo, hi)]
        for _ in range(restarts - 1):
            starts.append(lo + rng.random(d + 1) * (hi - lo))

        best_theta, best_val = starts[0], objective(starts[0])
        for theta in starts:
            theta = theta.copy()
            val = objective(theta)
            for _ in range(sweeps):
                for c in range(d + 1):
                    grid = np.linspace(lo[c], hi[c], 7)
                    cands = np.unique(np.append(grid, theta[c]))
                    for cand in cands:
                        trial = theta.copy()
                        trial[c] = cand
                        trial_val = objective(trial)
                        if trial_val > val:
                            val, theta = trial_val, trial
            if val > best_val:
                best_val, best_theta = val, theta

        self.kernel_ = Matern52Kernel(
            float(np.exp(best_theta[0])), tuple(np.exp(best_theta[1:]).tolist())
        )
        return self.fit(self.X_, self.targets_, self.noise_)


def naive_posterior(
    kernel: Matern52Kernel, X: np.ndarray, targets: np.ndarray, noise: np.ndarray, Xq: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reference posterior via an explicit dense matrix inverse.

    Exists solely as an independent check of the factorized path; do not use
    in production code paths.
    """
    K = kernel.gram(X, X) + np.diag(noise)
    K_inv = np.linalg.inv(K)
    Kq = kernel.gram(Xq, X)
    mean = Kq @ K_inv @ targets
    var = kernel.signal_variance - np.einsum("ij,jk,ik->i", Kq, K_inv, Kq)
    return mean, np.sqrt(np.maximum(var, 0.0))
