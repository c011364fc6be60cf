"""Student-t soft assignments, sharpened targets and KL self-supervision."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numcore as nc

log = logging.getLogger(__name__)

F_FLOOR = 1e-12


@dataclass
class Centroids:
    centers: np.ndarray  # k x n_z
    t: float = 1.0

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("Student-t degree must be positive")

    @property
    def k(self) -> int:
        return nc.value_of(self.centers).shape[0]


def student_t_assign(z, centers, t=1.0):
    """q_ij proportional to (1 + ||z_i - c_j||^2 / t) ** (-(t + 1) / 2), rows normalized."""
    if isinstance(centers, Centroids):
        centers, t = centers.centers, centers.t
    d2 = nc.sq_dist(z, centers)
    kernel = nc.power(nc.add_scalar(nc.scale(d2, 1.0 / t), 1.0), -(t + 1.0) / 2.0)
    return nc.row_normalize(kernel)


def target_distribution(q) -> np.ndarray:
    """p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), f_j = sum_i q_ij.

    Always returns a plain array: the target is held fixed during optimization.
    """
    q = np.asarray(nc.value_of(q), dtype=np.float64)
    f = q.sum(axis=0)
    if np.any(f < F_FLOOR):
        log.warning("soft cluster frequency below %g; clamping", F_FLOOR)
        f = np.maximum(f, F_FLOOR)
    w = q * q / f
    return w / w.sum(axis=1, keepdims=True)


def kl_divergence(p, q):
    """sum_ij p_ij log(p_ij / q_ij) in nats, with 0 log 0 = 0."""
    if nc.value_of(p).shape != nc.value_of(q).shape:
        raise nc.DimensionError(f"kl_divergence: {nc.value_of(p).shape} vs {nc.value_of(q).shape}")
    return nc.kl_div(p, q)


def centroid_gradient(z, centers, p, q=None, t=1.0) -> np.ndarray:
    """Closed-form gradient of KL(P || Q(c)) with respect to the centroids, P fixed."""
    z = np.asarray(z, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if q is None:
        q = student_t_assign(z, c, t)
    diff = z[:, None, :] - c[None, :, :]  # N x k x d
    inv = 1.0 / (1.0 + np.einsum("ikd,ikd->ik", diff, diff) / t)
    w = inv * (np.asarray(p) - np.asarray(q))
    return -((t + 1.0) / t) * np.einsum("ik,ikd->kd", w, diff)


def extract_labels(q) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest cluster index."""
    return np.argmax(np.asarray(nc.value_of(q)), axis=1).astype(np.int64)
