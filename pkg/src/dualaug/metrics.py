"""Pose evaluation metrics: MPJPE, PA-MPJPE, PCK and AUC.

All distances are millimeters. PCK/AUC follow the 3DHP community protocol:
150 mm threshold, AUC over thresholds 0,5,...,150, strict ``<`` at the
threshold.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateError, EmptyBatchError

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)  # 31 values


def _as_joints(pose) -> np.ndarray:
    return pose.joints if hasattr(pose, "joints") else np.asarray(pose, dtype=np.float64)


def mpjpe(pred, gt) -> float:
    """Mean over joints of the Euclidean prediction error."""
    p, g = _as_joints(pred), _as_joints(gt)
    return float(np.mean(np.linalg.norm(p - g, axis=-1)))


def similarity_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Optimal rotation + translation + uniform scale of pred onto gt.

    Orthogonal Procrustes on the centered point sets, with the reflection
    excluded (det +1 enforced). Raises DegenerateError when pred has no
    spread to estimate a scale from.
    """
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xc = pred - mu_p
    yc = gt - mu_g
    ss = float(np.sum(xc * xc))
    if ss < 1e-12:
        raise DegenerateError("prediction has zero spread; cannot align")
    h = xc.T @ yc
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.ones(3)
    flip[-1] = d
    rot = u @ np.diag(flip) @ vt  # applied as row-vector @ rot
    scale = float(np.sum(s * flip)) / ss
    return scale * xc @ rot + mu_g


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after optimal similarity alignment of pred onto gt."""
    p, g = _as_joints(pred), _as_joints(gt)
    return mpjpe(similarity_align(p, g), g)


def _pooled_errors(preds, gts) -> np.ndarray:
    preds = list(preds)
    gts = list(gts)
    if not preds or len(preds) != len(gts):
        raise EmptyBatchError("need a non-empty, equal-length batch of poses")
    errs = [
        np.linalg.norm(_as_joints(p) - _as_joints(g), axis=-1) for p, g in zip(preds, gts)
    ]
    return np.concatenate(errs)


def pck(preds, gts, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of pooled joints with error strictly below the threshold."""
    errs = _pooled_errors(preds, gts)
    return float(100.0 * np.mean(errs < threshold_mm))


def auc(preds, gts) -> float:
    """Mean PCK over the 0..150 mm threshold grid."""
    errs = _pooled_errors(preds, gts)
    fractions = [np.mean(errs < t) for t in AUC_THRESHOLDS_MM]
    return float(100.0 * np.mean(fractions))
