"""Gaussian-mixture dataset generation.

Features are drawn as x_i = y_i * mu + Sigma^(1/2) z_i with labels y_i = +-1.
The spiked covariance is applied matrix-free: a Householder reflection maps
the first basis vector onto the mean direction, so Sigma has the mean as an
exact eigenvector and the configured bulk spectrum on the complement.

Randomness uses the counter-based Philox generator keyed as (seed, stream):
trials draw from disjoint streams and can be generated concurrently without
coordination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import MeanDistribution
from .separability import CovarianceSpec

MEAN_STREAM = 0xA11CE


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream); streams never collide."""
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    )


@dataclass(frozen=True)
class Dataset:
    """A sampled training set plus everything needed to regenerate it."""

    features: np.ndarray
    labels: np.ndarray
    mean_vector: np.ndarray
    cov: CovarianceSpec
    seed: int

    def __post_init__(self):
        n, d = self.features.shape
        if self.labels.shape != (n,):
            raise ValueError("labels length must match feature rows")
        if self.mean_vector.shape != (d,):
            raise ValueError("mean vector length must match feature columns")
        if not np.all(np.abs(self.labels) == 1):
            raise ValueError("labels must be +-1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def sample_mean(d: int, dist: MeanDistribution, seed: int) -> np.ndarray:
    """Mean vector whose rescaled entries sqrt(d)*mu_i are iid from the law.

    Gaussian laws sample the continuous distribution; other laws sample the
    discrete node representation.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    rng = rng_for(seed, MEAN_STREAM)
    if dist.gaussian_scale is not None:
        entries = dist.gaussian_scale * rng.standard_normal(d)
    else:
        entries = rng.choice(dist.values, size=d, p=dist.weights)
    return entries / np.sqrt(d)


def _householder_apply(v: np.ndarray, mu_hat: np.ndarray) -> np.ndarray:
    """Apply the reflection H mapping e1 -> mu_hat to rows of v, in O(n d)."""
    w = mu_hat.copy()
    w[0] -= 1.0
    nw2 = float(w @ w)
    if nw2 < 1e-32:
        return v
    return v - np.outer(2.0 / nw2 * (v @ w), w)


def _sqrt_cov_apply(z: np.ndarray, mu_hat: np.ndarray, cov: CovarianceSpec) -> np.ndarray:
    """Matrix-free Sigma^(1/2) z for rows z, with the mean an eigenvector."""
    if cov.kind == "isotropic":
        return z
    d = z.shape[1]
    scales = np.empty(d)
    scales[0] = np.sqrt(cov.a2)
    scales[1:] = np.sqrt(np.resize(cov.eigen_sample, d - 1))
    zr = _householder_apply(z, mu_hat)
    zr *= scales
    return _householder_apply(zr, mu_hat)


def sample_dataset(
    n: int,
    mu: np.ndarray,
    cov: CovarianceSpec,
    pi_plus: float = 0.5,
    seed: int = 0,
    stream: int = 1,
) -> Dataset:
    """Draw n labelled points from the two-component mixture around +-mu."""
    if not (0.0 < pi_plus < 1.0):
        raise ValueError("pi_plus must lie strictly between 0 and 1")
    mu = np.asarray(mu, dtype=float)
    norm_mu = np.linalg.norm(mu)
    if cov.kind == "spiked" and norm_mu == 0.0:
        raise ValueError("spiked covariance needs a nonzero mean direction")
    rng = rng_for(seed, stream)
    labels = np.where(rng.random(n) < pi_plus, 1.0, -1.0)
    noise = rng.standard_normal((n, mu.size))
    if cov.kind == "spiked":
        noise = _sqrt_cov_apply(noise, mu / norm_mu, cov)
    features = labels[:, None] * mu[None, :] + noise
    return Dataset(
        features=features, labels=labels, mean_vector=mu, cov=cov, seed=seed
    )


def apply_sqrt_cov(v: np.ndarray, mu: np.ndarray, cov: CovarianceSpec) -> np.ndarray:
    """Sigma^(1/2) v for a single vector; used by population accuracy."""
    if cov.kind == "isotropic":
        return v
    mu_hat = mu / np.linalg.norm(mu)
    return _sqrt_cov_apply(v[None, :], mu_hat, cov)[0]


# ---------------------------------------------------------------------------
# Debug dump format: column-major float64 features + int8 labels + sidecar
# ---------------------------------------------------------------------------

def dump_dataset(ds: Dataset, stem: str | Path) -> dict:
    """Write <stem>.features.bin / <stem>.labels.bin / <stem>.json."""
    stem = Path(stem)
    feat_path = stem.with_suffix(".features.bin")
    lab_path = stem.with_suffix(".labels.bin")
    meta_path = stem.with_suffix(".json")
    feat_path.write_bytes(np.asfortranarray(ds.features).tobytes(order="F"))
    lab_path.write_bytes(ds.labels.astype(np.int8).tobytes())
    meta = {
        "n": ds.n,
        "d": ds.d,
        "seed": ds.seed,
        "order": "column-major",
        "dtype": "float64",
        "cov": {
            "kind": ds.cov.kind,
            "a2": ds.cov.a2,
            "eigen_sample": ds.cov.eigen_sample.tolist(),
        },
        "mean_vector": ds.mean_vector.tolist(),
        "files": {"features": feat_path.name, "labels": lab_path.name},
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def load_dataset(stem: str | Path) -> Dataset:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    n, d = meta["n"], meta["d"]
    raw = np.frombuffer(stem.with_suffix(".features.bin").read_bytes(), dtype=np.float64)
    features = np.reshape(raw, (n, d), order="F").copy()
    labels = np.frombuffer(
        stem.with_suffix(".labels.bin").read_bytes(), dtype=np.int8
    ).astype(float)
    cov_meta = meta["cov"]
    cov = CovarianceSpec(
        kind=cov_meta["kind"],
        a2=cov_meta["a2"],
        eigen_sample=np.array(cov_meta["eigen_sample"]),
    )
    return Dataset(
        features=features,
        labels=labels,
        mean_vector=np.array(meta["mean_vector"]),
        cov=cov,
        seed=meta["seed"],
    )
