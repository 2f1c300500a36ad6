"""Full-covariance Gaussian mixture fitted by expectation-maximisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mqa.errors import FitError, NumericalError
from mqa.rng import make_rng

COVARIANCE_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ExerciseModel:
    weights: np.ndarray  # [C]
    means: np.ndarray  # [C, L]
    covariances: np.ndarray  # [C, L, L]
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_density(self, X: np.ndarray) -> np.ndarray:
        """``log w_c + log N(x; mu_c, Sigma_c)`` as an ``[n, C]`` array."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _weighted_log_density(X, self.weights, self.means, _cholesky_all(self.covariances))

    def log_likelihood(self, X: np.ndarray) -> np.ndarray:
        return _logsumexp(self.component_log_density(X), axis=1)

    def n_parameters(self) -> int:
        C, L = self.means.shape
        return (C - 1) + C * L + C * L * (L + 1) // 2

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExerciseModel":
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray(d["means"], dtype=np.float64),
            np.asarray(d["covariances"], dtype=np.float64),
            list(d.get("log_likelihood_trace", [])),
            bool(d.get("converged", False)),
        )


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    return np.squeeze(peak, axis=axis) + np.log(np.sum(np.exp(a - peak), axis=axis))


def _cholesky_all(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is not positive definite even after flooring") from None


def _weighted_log_density(X, weights, means, chols) -> np.ndarray:
    n, L = X.shape
    out = np.empty((n, len(weights)))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for c in range(len(weights)):
        diff = (X - means[c]).T
        sol = np.linalg.solve(chols[c], diff)  # lower-triangular system
        maha = np.sum(sol * sol, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chols[c])))
        out[:, c] = log_w[c] - 0.5 * (L * LOG_2PI + log_det + maha)
    return out


def _kmeans_init(X: np.ndarray, C: int, rng: np.random.Generator, iters: int = 20) -> np.ndarray:
    """k-means++ seeding followed by a few Lloyd iterations; returns hard labels."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, C):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        d2 = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        for c in range(C):
            if not np.any(new == c):
                # reseed an empty cluster with the point farthest from its centre
                far = np.argmax(d2[np.arange(n), new])
                new[far] = c
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        centers = np.array([X[labels == c].mean(axis=0) for c in range(C)])
    return labels


def _m_step(X: np.ndarray, resp: np.ndarray, reg: float):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = resp.T @ X / nk[:, None]
    L = X.shape[1]
    covs = np.empty((len(nk), L, L))
    for c in range(len(nk)):
        diff = X - means[c]
        covs[c] = (resp[:, c, None] * diff).T @ diff / nk[c]
        covs[c] = 0.5 * (covs[c] + covs[c].T)
        covs[c].flat[:: L + 1] += reg
    return weights, means, covs


def fit_gmm_em(
    latents,
    C: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-6,
    reg: float = COVARIANCE_FLOOR,
) -> ExerciseModel:
    """Fit a ``C``-component mixture to ``latents`` (``[n, L]``).

    The trace holds the mean per-sample log-likelihood after initialisation
    and after every accepted EM step. Iteration stops once the gain drops
    below ``tol``; a step that would lower the likelihood (possible only at
    round-off level because of the covariance floor) is rejected and ends
    the fit, so the trace is non-decreasing by construction.
    """
    X = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    n, L = X.shape
    if C < 1:
        raise FitError(f"component count must be >= 1, got {C}")
    if n < C * (L + 1):
        raise FitError(f"{n} samples are too few for {C} components in {L} dimensions (need {C * (L + 1)})")
    if not np.isfinite(X).all():
        raise FitError("latent codes contain non-finite values")
    rng = make_rng(seed, 17)
    labels = _kmeans_init(X, C, rng) if C > 1 else np.zeros(n, dtype=int)
    resp = np.eye(C)[labels]
    weights, means, covs = _m_step(X, resp, reg)
    chols = _cholesky_all(covs)
    logp = _weighted_log_density(X, weights, means, chols)
    ll = float(np.mean(_logsumexp(logp, axis=1)))
    trace = [ll]
    converged = False
    for _ in range(max_iters):
        log_norm = _logsumexp(logp, axis=1)
        resp = np.exp(logp - log_norm[:, None])
        new_w, new_mu, new_cov = _m_step(X, resp, reg)
        new_chols = _cholesky_all(new_cov)
        new_logp = _weighted_log_density(X, new_w, new_mu, new_chols)
        new_ll = float(np.mean(_logsumexp(new_logp, axis=1)))
        if new_ll < ll:
            converged = True
            break
        weights, means, covs, logp = new_w, new_mu, new_cov, new_logp
        gain = new_ll - ll
        ll = new_ll
        trace.append(ll)
        if gain < tol:
            converged = True
            break
    return ExerciseModel(weights, means, covs, trace, converged)


def bic(model: ExerciseModel, X: np.ndarray) -> float:
    X = np.atleast_2d(X)
    return float(-2.0 * np.sum(model.log_likelihood(X)) + model.n_parameters() * np.log(len(X)))


def select_by_bic(latents, max_components: int = 6, seed: int = 0, **kw) -> ExerciseModel:
    """Fit ``C = 1..max_components`` (as far as sample count allows) and keep the lowest BIC."""
    X = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    n, L = X.shape
    best, best_score = None, np.inf
    for C in range(1, max_components + 1):
        if n < C * (L + 1):
            break
        model = fit_gmm_em(X, C, seed=seed, **kw)
        score = bic(model, X)
        if score < best_score:
            best, best_score = model, score
    if best is None:
        raise FitError(f"{n} samples are too few for even one component in {L} dimensions")
    return best


def performance_metric(model: ExerciseModel, latent) -> float | np.ndarray:
    """Negative log-likelihood of ``latent`` under the mixture (lower is better)."""
    latent = np.asarray(latent, dtype=np.float64)
    nll = -model.log_likelihood(np.atleast_2d(latent))
    return float(nll[0]) if latent.ndim == 1 else nll
