"""Joint Gaussian mixture over (time, output) and time-conditioned regression.

``fit_gmm`` runs EM on the stacked samples of an aligned demo set; ``gmr``
conditions the fitted joint density on the time input to produce the
per-timestep reference distribution (mean + moment-matched covariance).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .demos import OUTPUT_DIM, DemoSet
from .errors import (
    DataError,
    DegenerateComponent,
    InsufficientData,
    SingularInputVariance,
)

COV_FLOOR = 1e-6
EM_TOL = 1e-8
EM_MAX_ITER = 300


@dataclass
class Gmm:
    """Gaussian mixture over the 10-D joint (input, output) space."""

    priors: np.ndarray              # (K,)
    means: np.ndarray               # (K, 1 + O)
    covariances: np.ndarray         # (K, 1 + O, 1 + O)
    input_range: tuple[float, float] = (0.0, 0.0)
    loglik_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise DataError("mixture priors must sum to 1")
        if np.any(self.priors < 0.0):
            raise DataError("mixture priors must be non-negative")

    @property
    def n_components(self) -> int:
        return self.priors.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self, path) -> None:
        payload = {
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covariances": [c.flatten().tolist() for c in self.covariances],
            "input_range": list(self.input_range),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "Gmm":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        means = np.asarray(payload["means"])
        dim = means.shape[1]
        covs = np.asarray([np.asarray(c).reshape(dim, dim) for c in payload["covariances"]])
        return cls(np.asarray(payload["priors"]), means, covs,
                   tuple(payload.get("input_range", (0.0, 0.0))))


@dataclass
class ReferenceTrajectory:
    """GMR output: per-timestep output mean and covariance, sorted by input."""

    inputs: np.ndarray              # (N,)
    means: np.ndarray               # (N, O)
    covariances: np.ndarray         # (N, O, O)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        order = np.argsort(self.inputs, kind="stable")
        self.inputs = self.inputs[order]
        self.means = self.means[order]
        self.covariances = self.covariances[order]
        if np.any(np.diff(self.inputs) <= 0.0):
            raise DataError("reference inputs must be distinct")

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def output_dim(self) -> int:
        return self.means.shape[1]


def _stack_samples(demo_set: DemoSet) -> np.ndarray:
    rows = [np.column_stack([demo.t, demo.outputs()]) for demo in demo_set.demos]
    return np.vstack(rows)


def _log_gaussian(data: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log N(x | mean, cov) for each row of data, via Cholesky."""
    dim = mean.shape[0]
    chol = cholesky(cov, lower=True)
    diff = (data - mean).T
    sol = solve_triangular(chol, diff, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (dim * np.log(2.0 * np.pi) + logdet + np.sum(sol * sol, axis=0))


def _floored(cov: np.ndarray) -> np.ndarray:
    # Eigenvalue clamp, not a diagonal add: clamping is the exact M-step
    # maximizer under the min-eigenvalue constraint, so EM stays monotone.
    return _spd_floor(cov, COV_FLOOR)


def _binned_init(data: np.ndarray, k: int):
    """Deterministic init: uniform time bins over the input range."""
    s = data[:, 0]
    edges = np.linspace(s.min(), s.max(), k + 1)
    edges[-1] += 1e-9
    assignment = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, k - 1)
    priors = np.empty(k)
    means = np.empty((k, data.shape[1]))
    covs = np.empty((k, data.shape[1], data.shape[1]))
    for j in range(k):
        members = data[assignment == j]
        if members.shape[0] < 2:
            raise DegenerateComponent(f"time bin {j} holds {members.shape[0]} samples; lower k")
        priors[j] = members.shape[0] / data.shape[0]
        means[j] = members.mean(axis=0)
        centered = members - means[j]
        covs[j] = _floored(centered.T @ centered / members.shape[0])
    return priors, means, covs


def fit_gmm(demo_set: DemoSet, k: int, rng_seed: int) -> Gmm:
    """EM fit of a k-component joint mixture on an aligned demo set.

    Initialization is deterministic (uniform time binning); the seed is only
    consumed if a collapsed component has to be re-seeded from a random sample.
    """
    if not demo_set.aligned:
        raise DataError("fit_gmm requires an aligned demo set (run align first)")
    data = _stack_samples(demo_set)
    n = data.shape[0]
    if n < 10 * k:
        raise InsufficientData(f"{n} samples for k={k}; need at least {10 * k}")
    priors, means, covs = _binned_init(data, k)
    rng = np.random.default_rng(rng_seed)
    trace: list[float] = []
    reseeds = 0
    prev_ll = -np.inf
    for _ in range(EM_MAX_ITER):
        # E step
        log_resp = np.empty((n, k))
        for j in range(k):
            log_resp[:, j] = np.log(priors[j]) + _log_gaussian(data, means[j], covs[j])
        log_norm = logsumexp(log_resp, axis=1)
        ll = float(log_norm.sum())
        trace.append(ll)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) < EM_TOL:
            break
        prev_ll = ll
        resp = np.exp(log_resp - log_norm[:, None])
        # M step
        mass = resp.sum(axis=0)
        for j in range(k):
            if mass[j] < 1e-10:
                if reseeds >= 3 * k:
                    raise DegenerateComponent(f"component {j} collapsed repeatedly")
                reseeds += 1
                pick = rng.integers(0, n)
                means[j] = data[pick]
                covs[j] = _floored(np.cov(data.T))
                priors[j] = 1.0 / n
                continue
            means[j] = resp[:, j] @ data / mass[j]
            centered = data - means[j]
            covs[j] = _floored((resp[:, j] * centered.T) @ centered / mass[j])
            priors[j] = mass[j] / n
        priors = priors / priors.sum()
    return Gmm(priors, means, covs, (float(data[:, 0].min()), float(data[:, 0].max())), trace)


def responsibilities(gmm: Gmm, s: np.ndarray) -> np.ndarray:
    """Per-component posterior weights h_k(s) of the input marginal, (S, K)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    mu_s = gmm.means[:, 0]
    var_s = gmm.covariances[:, 0, 0]
    if np.any(var_s <= 0.0):
        raise SingularInputVariance("component input variance is not positive")
    log_h = (
        np.log(gmm.priors)[None, :]
        - 0.5 * np.log(2.0 * np.pi * var_s)[None, :]
        - 0.5 * (s[:, None] - mu_s[None, :]) ** 2 / var_s[None, :]
    )
    return np.exp(log_h - logsumexp(log_h, axis=1)[:, None])


def gmr(gmm: Gmm, inputs: np.ndarray) -> ReferenceTrajectory:
    """Condition the joint mixture on each input, with moment-matched covariance."""
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    lo, hi = gmm.input_range
    if hi > lo and (inputs.min() < lo - 1e-12 or inputs.max() > hi + 1e-12):
        warnings.warn("GMR queried outside the training input range; extrapolating", stacklevel=2)
    k = gmm.n_components
    out_dim = gmm.dim - 1
    mu_s = gmm.means[:, 0]
    var_s = gmm.covariances[:, 0, 0]
    if np.any(var_s <= 0.0):
        raise SingularInputVariance("component input variance is not positive")
    mu_o = gmm.means[:, 1:]
    cov_os = gmm.covariances[:, 1:, 0]                      # (K, O)
    gains = cov_os / var_s[:, None]                         # (K, O)
    cond_cov = gmm.covariances[:, 1:, 1:] - gains[:, :, None] * cov_os[:, None, :]

    h = responsibilities(gmm, inputs)                       # (S, K)
    cond_means = mu_o[None, :, :] + gains[None, :, :] * (inputs[:, None, None] - mu_s[None, :, None])
    means = np.einsum("sk,sko->so", h, cond_means)

    covs = np.empty((inputs.shape[0], out_dim, out_dim))
    for i in range(inputs.shape[0]):
        second = np.zeros((out_dim, out_dim))
        for j in range(k):
            m = cond_means[i, j]
            second += h[i, j] * (cond_cov[j] + np.outer(m, m))
        cov = second - np.outer(means[i], means[i])
        covs[i] = _spd_floor(cov)
    return ReferenceTrajectory(inputs, means, covs)


def _spd_floor(cov: np.ndarray, floor: float = COV_FLOOR) -> np.ndarray:
    """Symmetrize and clamp eigenvalues from below so the result is SPD."""
    cov = 0.5 * (cov + cov.T)
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] >= floor:
        return cov
    eigval = np.maximum(eigval, floor)
    out = (eigvec * eigval) @ eigvec.T
    return 0.5 * (out + out.T)
