"""Kernelized movement primitive: dual-form mean prediction and via-point adaptation.

Given a reference trajectory {s_n, mu_n, Sigma_n}, the predicted output mean at
a query s* is

    E(xi(s*)) = k* (K + lambda * Sigma)^-1 mu

with K the block kernel Gram matrix (block (i, j) = k(s_i, s_j) I_O), Sigma the
block diagonal of the reference covariances, and mu the stacked reference
means.  New desired points are inserted into (or replace points of) the
reference and the model is retrained, which drags the prediction through them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateViaPoint,
    FactorizationFailure,
)
from .gmm import ReferenceTrajectory

JITTER_SEQUENCE = (0.0, 1e-10, 1e-8)


@dataclass(frozen=True)
class KernelParams:
    """Gaussian kernel k(s_i, s_j) = exp(-bandwidth * (s_i - s_j)^2), plus the
    regularization factor on the reference covariances."""

    bandwidth: float = 0.1      # 1 / s^2
    lam: float = 10.0

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise DataError(f"kernel bandwidth must be > 0, got {self.bandwidth}")
        if self.lam <= 0.0:
            raise DataError(f"lambda must be > 0, got {self.lam}")


@dataclass(frozen=True)
class ViaPoint:
    """A desired (input, mean, covariance) triple; tight covariance makes it
    a quasi-hard constraint."""

    s: float
    mean: np.ndarray
    covariance: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        dim = self.mean.shape[0]
        if self.covariance is None:
            object.__setattr__(self, "covariance", 1e-6 * np.eye(dim))
        else:
            cov = np.asarray(self.covariance, dtype=float)
            if cov.shape != (dim, dim):
                raise DimensionMismatch(f"via-point covariance must be ({dim}, {dim})")
            object.__setattr__(self, "covariance", cov)
        if not np.all(np.isfinite(self.mean)) or not np.isfinite(self.s):
            raise DataError("via-point values must be finite")


def kernel_gram(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    diff = np.asarray(a, dtype=float)[:, None] - np.asarray(b, dtype=float)[None, :]
    return np.exp(-params.bandwidth * diff * diff)


def build_system(ref: ReferenceTrajectory, params: KernelParams) -> np.ndarray:
    """Assemble K + lambda * Sigma for the given reference."""
    n, o = ref.n_points, ref.output_dim
    system = np.kron(kernel_gram(ref.inputs, ref.inputs, params), np.eye(o))
    for i in range(n):
        block = slice(i * o, (i + 1) * o)
        system[block, block] += params.lam * ref.covariances[i]
    return system


class KmpModel:
    """Trained movement primitive; immutable once constructed."""

    def __init__(self, params: KernelParams, ref: ReferenceTrajectory):
        self.params = params
        self.ref = ref
        self.mu_stack = ref.means.reshape(-1)
        self.sigma_blocks = ref.covariances
        system = build_system(ref, params)
        last_err: Exception | None = None
        for jitter in JITTER_SEQUENCE:
            try:
                mat = system if jitter == 0.0 else system + jitter * np.eye(system.shape[0])
                self.solve_factor = cho_factor(mat, lower=True)
                break
            except np.linalg.LinAlgError as err:  # pragma: no cover - rare path
                last_err = err
        else:
            raise FactorizationFailure(
                f"K + lambda*Sigma is not positive definite (after jitter retries): {last_err}"
            )
        self._weights = cho_solve(self.solve_factor, self.mu_stack).reshape(ref.n_points, ref.output_dim)

    @property
    def output_dim(self) -> int:
        return self.ref.output_dim

    def predict(self, s_star) -> np.ndarray:
        """Mean prediction; scalar input gives (O,), vector input gives (S, O)."""
        s = np.asarray(s_star, dtype=float)
        scalar = s.ndim == 0
        k_star = kernel_gram(np.atleast_1d(s), self.ref.inputs, self.params)
        out = k_star @ self._weights
        return out[0] if scalar else out

    def to_json(self, path) -> None:
        payload = {
            "bandwidth": self.params.bandwidth,
            "lambda": self.params.lam,
            "inputs": self.ref.inputs.tolist(),
            "means": self.ref.means.tolist(),
            "covariances": [c.flatten().tolist() for c in self.ref.covariances],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "KmpModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        inputs = np.asarray(payload["inputs"])
        means = np.asarray(payload["means"])
        o = means.shape[1]
        covs = np.asarray([np.asarray(c).reshape(o, o) for c in payload["covariances"]])
        params = KernelParams(bandwidth=float(payload["bandwidth"]), lam=float(payload["lambda"]))
        return cls(params, ReferenceTrajectory(inputs, means, covs))


def train(ref: ReferenceTrajectory, params: KernelParams) -> KmpModel:
    """Factor (K + lambda * Sigma) once and cache the prediction weights."""
    if ref.n_points < 1:
        raise DataError("reference trajectory is empty")
    return KmpModel(params, ref)


def predict_mean(model: KmpModel, s_star: float) -> np.ndarray:
    return model.predict(s_star)


def adapt(model: KmpModel, via: list[ViaPoint]) -> KmpModel:
    """Retrain on the reference extended (or locally overridden) by via-points.

    A via-point whose input falls within half a grid step of an existing
    reference point replaces that point; otherwise it is inserted.  The input
    model is left untouched.
    """
    ref = model.ref
    for i in range(len(via)):
        for j in range(i + 1, len(via)):
            if abs(via[i].s - via[j].s) < 1e-12:
                raise DuplicateViaPoint(
                    f"via-points {i} (s={via[i].s}) and {j} (s={via[j].s}) share the same input"
                )
    inputs = list(ref.inputs)
    means = list(ref.means)
    covs = list(ref.covariances)
    if ref.n_points > 1:
        half_step = 0.5 * float(np.median(np.diff(ref.inputs)))
    else:
        half_step = 0.0
    for vp in via:
        if vp.mean.shape[0] != ref.output_dim:
            raise DimensionMismatch(
                f"via-point dimension {vp.mean.shape[0]} != output dimension {ref.output_dim}"
            )
        dists = np.abs(np.asarray(inputs) - vp.s)
        nearest = int(np.argmin(dists))
        if dists[nearest] < half_step:
            inputs[nearest] = vp.s
            means[nearest] = vp.mean
            covs[nearest] = vp.covariance
        else:
            inputs.append(vp.s)
            means.append(vp.mean)
            covs.append(vp.covariance)
    new_ref = ReferenceTrajectory(np.asarray(inputs), np.asarray(means), np.asarray(covs))
    return KmpModel(model.params, new_ref)
