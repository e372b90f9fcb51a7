"""Similarity metrics over precision-tagged embeddings.

An embedding stored at b bits is viewed as the mean of an isotropic
Gaussian whose variance grows as precision drops:

    sigma_eff^2 = sigma_obs^2 * (32 / b) ** kappa

Distances between two such Gaussians use the closed-form geodesic for
diagonal Gaussians, per coordinate

    d_k = sqrt(2) * arccosh(1 + ((mu1_k - mu2_k)^2 + 2 (s1 - s2)^2) / (4 s1 s2))

with total distance sqrt(sum_k d_k^2). When both sides share one sigma the
metric reduces to ||mu1 - mu2|| / sigma, and retrieval blends from plain
cosine toward the geodesic as a memory accumulates accesses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(Exception):
    pass


@dataclass(frozen=True)
class PrecisionGaussian:
    mean: np.ndarray
    base_variance: float
    bits: int
    kappa_quant: float = 1.0

    def __post_init__(self):
        if self.base_variance <= 0:
            raise GeometryError(f"base variance must be positive, got {self.base_variance}")
        if self.bits not in (2, 4, 8, 32):
            raise GeometryError(f"bits must be one of 2/4/8/32, got {self.bits}")
        if self.kappa_quant <= 0:
            raise GeometryError("kappa_quant must be positive")

    @property
    def effective_variance(self) -> float:
        return self.base_variance * (32.0 / self.bits) ** self.kappa_quant

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.effective_variance))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise GeometryError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def fr_simplified(g1: PrecisionGaussian, g2: PrecisionGaussian) -> float:
    """Uniform-precision distance ||mu1 - mu2|| / sigma.

    Only valid when both sides share one effective variance; mixed
    precision must go through frqad (inflating sigma in this formula's
    denominator would *shrink* the distance of the blurrier side).
    """
    v1, v2 = g1.effective_variance, g2.effective_variance
    if not np.isclose(v1, v2, rtol=1e-9, atol=0.0):
        raise GeometryError("fr_simplified requires equal effective variances; use frqad")
    diff = np.asarray(g1.mean, dtype=np.float64) - np.asarray(g2.mean, dtype=np.float64)
    return float(np.linalg.norm(diff) / np.sqrt(v1))


def geodesic_distance(mu1: np.ndarray, mu2: np.ndarray, sigma1: float, sigma2: float) -> float:
    """Closed-form geodesic between isotropic Gaussians (scalar sigmas)."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise GeometryError("sigmas must be positive")
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    num = (mu1 - mu2) ** 2 + 2.0 * (sigma1 - sigma2) ** 2
    arg = 1.0 + num / (4.0 * sigma1 * sigma2)
    per_coord = np.sqrt(2.0) * np.arccosh(np.maximum(arg, 1.0))
    return float(np.sqrt(np.sum(per_coord * per_coord)))


def geodesic_distance_batch(mu1: np.ndarray, mu2: np.ndarray,
                            sigma1: float, sigma2: float) -> np.ndarray:
    """Vectorized geodesic over rows; broadcasting applies to mu1/mu2."""
    num = (np.asarray(mu1) - np.asarray(mu2)) ** 2 + 2.0 * (sigma1 - sigma2) ** 2
    arg = 1.0 + num / (4.0 * sigma1 * sigma2)
    per_coord = np.sqrt(2.0) * np.arccosh(np.maximum(arg, 1.0))
    return np.sqrt(np.sum(per_coord * per_coord, axis=-1))


def frqad(g1: PrecisionGaussian, g2: PrecisionGaussian) -> float:
    """Quantization-aware distance: geodesic with precision-inflated sigmas."""
    return geodesic_distance(g1.mean, g2.mean, g1.sigma, g2.sigma)


def ramp_weight(access_count: float, saturation: float = 20.0) -> float:
    """Blend weight toward the geodesic term: 0 at no history, 1 once saturated."""
    if access_count < 0:
        raise GeometryError("access count must be non-negative")
    if saturation <= 0:
        return 1.0
    return min(access_count / saturation, 1.0)


def graduated_score(query: PrecisionGaussian, memory: PrecisionGaussian,
                    access_count: float, saturation: float = 20.0) -> float:
    """Similarity that starts as cosine and ramps toward 1/(1 + frqad)."""
    w = ramp_weight(access_count, saturation)
    cos = cosine(query.mean, memory.mean)
    if w == 0.0:
        return cos
    fr_term = 1.0 / (1.0 + frqad(query, memory))
    return w * fr_term + (1.0 - w) * cos
