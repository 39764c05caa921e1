"""Shape prior deformation, decoupled depth assembly and the loss terms.

A shape prior ``P`` (N_m x 3, canonical) is deformed by per-point offsets
``D`` and re-sampled by a row-stochastic assignment ``M`` (N x N_m), giving
``M @ (P + D)``. The same operator produces camera-aligned shape points for
depth and canonical NOCS coordinates.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import as_points

SMOOTH_L1_BETA = 1.0


@dataclass(frozen=True)
class LossWeights:
    z: float = 1.0
    d: float = 0.1
    g: float = 0.1
    corr: float = 1.0
    cd: float = 5.0
    entro: float = 0.0001
    reg: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value >= 0):
                raise InvalidInputError(f"loss weight {f.name} must be a non-negative number, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class LossTerms:
    """The seven scalar loss terms, in weight order."""

    l_z: float = 0.0
    l_d: float = 0.0
    l_g: float = 0.0
    l_corr: float = 0.0
    l_cd: float = 0.0
    l_entro: float = 0.0
    l_reg: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def check_assign(assign, n_prior: int | None = None, tol: float = 1e-6) -> np.ndarray:
    m = np.asarray(assign, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError(f"assign field must be 2-D, got shape {m.shape}")
    if n_prior is not None and m.shape[1] != n_prior:
        raise InvalidInputError(f"assign field has {m.shape[1]} columns, prior has {n_prior} points")
    if np.any(m < 0) or np.abs(m.sum(axis=1) - 1.0).max(initial=0.0) > tol:
        raise InvalidInputError("assign field rows must be non-negative and sum to 1")
    return m


def spd_apply(prior, deform, assign) -> np.ndarray:
    """Deform the prior and resample it: ``assign @ (prior + deform)``."""
    prior = as_points(prior, "prior")
    deform = np.asarray(deform, dtype=float)
    assign = np.asarray(assign, dtype=float)
    if deform.shape != prior.shape:
        raise InvalidInputError(f"deform field shape {deform.shape} does not match prior {prior.shape}")
    if assign.ndim != 2 or assign.shape[1] != prior.shape[0]:
        raise InvalidInputError(f"assign field shape {assign.shape} incompatible with {prior.shape[0]} prior points")
    return assign @ (prior + deform)


def assemble_depth(shape_points, depth_translation: float) -> np.ndarray:
    """Per-point depth: z of the shape points plus the shared depth translation."""
    shape_points = as_points(shape_points, "shape_points")
    if not np.isfinite(depth_translation):
        raise InvalidInputError("depth translation must be finite")
    return shape_points[:, 2] + float(depth_translation)


def estimate_size(prior, deform) -> np.ndarray:
    """Per-axis extent (max - min) of the deformed prior."""
    pts = as_points(np.asarray(prior, dtype=float) + np.asarray(deform, dtype=float), "deformed prior")
    return pts.max(axis=0) - pts.min(axis=0)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def chamfer_distance(a, b) -> float:
    """Symmetric chamfer distance: mean squared nearest-neighbour distance of each side, summed."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    d2 = _sq_dists(a, b)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def loss_depth_l1(pred, gt) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    gt = np.asarray(gt, dtype=float).ravel()
    if pred.shape != gt.shape or pred.size == 0:
        raise InvalidInputError(f"depth vectors must be non-empty and equal length ({pred.size} vs {gt.size})")
    return float(np.abs(pred - gt).mean())


def loss_adv_discriminator(score_real, score_fake) -> float:
    """Least-squares discriminator objective: real scores pushed to 1, fake to 0."""
    real = np.asarray(score_real, dtype=float)
    fake = np.asarray(score_fake, dtype=float)
    return float(((real - 1.0) ** 2).mean() + (fake**2).mean())


def loss_adv_generator(score_fake) -> float:
    fake = np.asarray(score_fake, dtype=float)
    return float(((fake - 1.0) ** 2).mean())


def smooth_l1(diff: np.ndarray, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    ad = np.abs(diff)
    return np.where(ad < beta, 0.5 * diff**2 / beta, ad - 0.5 * beta)


def loss_corr(pred_nocs, gt_nocs) -> float:
    """Smooth-L1 (beta = 1) averaged over points and coordinates."""
    pred = np.asarray(pred_nocs, dtype=float)
    gt = np.asarray(gt_nocs, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(smooth_l1(pred - gt).mean())


def loss_entropy(assign) -> float:
    """Mean negative log of each row's largest weight; zero exactly for one-hot rows."""
    m = np.asarray(assign, dtype=float)
    return float(-np.log(m.max(axis=1)).mean())


def loss_reg(assign) -> float:
    m = np.asarray(assign, dtype=float)
    return float((m**2).mean())


def total_loss(terms: LossTerms | Sequence[float], weights: LossWeights = LossWeights()) -> float:
    values = terms.as_array() if isinstance(terms, LossTerms) else np.asarray(terms, dtype=float)
    if values.shape != (7,):
        raise InvalidInputError(f"expected 7 loss terms, got {values.shape}")
    return float(values @ weights.as_array())
