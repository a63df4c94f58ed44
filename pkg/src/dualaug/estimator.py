"""2D-to-3D lifting network and its supervised loss.

Desk-scale backbone: a residual MLP (two 256-wide skip blocks) lifting
normalized 2D keypoints to a root-relative 3D pose in millimeters. The
network predicts in a unit-free range and a fixed output scale converts
to millimeters, keeping the zero-initialized output layer trainable at
the configured learning rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import normalize_keypoints, project_array
from .diffcore import MlpSpec, init_params, mlp_forward
from .diffcore import tape as T
from .errors import ShapeError
from .skeleton import Pose2D, Pose3D

ESTIMATOR_WIDTH = 256
OUTPUT_SCALE_MM = 1000.0


@dataclass
class EstimatorParams:
    spec: MlpSpec
    store: ParamStore
    output_scale: float = OUTPUT_SCALE_MM


def new_estimator(
    rng: np.random.Generator,
    joint_count: int = 16,
    width: int = ESTIMATOR_WIDTH,
    blocks: int = 2,
) -> EstimatorParams:
    spec = MlpSpec(
        input_dim=2 * joint_count,
        hidden_dims=(width,) * (2 * blocks),
        output_dim=3 * joint_count,
        final_layer_zero_init=True,
        residual=True,
    )
    return EstimatorParams(spec=spec, store=init_params(spec, rng))


def _root_mask(joint_count: int) -> np.ndarray:
    mask = np.ones((joint_count, 1))
    mask[0, 0] = 0.0
    return mask


def estimate_batch(keypoints, params: EstimatorParams, tape=None):
    """Lift (B, J, 2) normalized keypoints to (B, J, 3) mm poses.

    The root row of the output is forced to zero: predictions are
    root-relative by construction.
    """
    shape = T._shape_of(keypoints)
    if len(shape) != 3 or shape[1] * shape[2] != params.spec.input_dim:
        raise ShapeError(
            f"keypoint batch shape {shape} incompatible with estimator input "
            f"{params.spec.input_dim}"
        )
    joints = shape[1]
    flat = T.reshape(keypoints, (shape[0], shape[1] * shape[2]))
    out = mlp_forward(params.spec, params.store, flat, tape)
    pose = T.reshape(out, (shape[0], joints, 3))
    return T.mul(T.mul(pose, _root_mask(joints)), params.output_scale)


def estimate(keypoints: Pose2D | np.ndarray, params: EstimatorParams, tape=None):
    """Single-pose lift; input is normalized image coordinates."""
    kp = keypoints.keypoints if isinstance(keypoints, Pose2D) else keypoints
    out = estimate_batch(T.reshape(kp, (1, *T._shape_of(kp))), params, tape)
    if isinstance(out, T.Node):
        return out[0]
    return Pose3D(out[0])


def mse_loss(pred, target, tape=None):
    """Mean of squared coordinate differences over all entries."""
    p = pred.joints if isinstance(pred, Pose3D) else pred
    t = target.joints if isinstance(target, Pose3D) else target
    diff = T.sub(p, t)
    return T.mean_all(T.mul(diff, diff))


def root_relative(joints):
    """Subtract the root row from (B, J, 3) or (J, 3) joints."""
    if len(T._shape_of(joints)) == 2:
        return T.sub(joints, joints[0:1, :])
    return T.sub(joints, joints[:, 0:1, :])


def supervised_loss(params: EstimatorParams, keypoints, targets, tape=None):
    """MSE between lifted keypoints and root-relativized 3D targets."""
    pred = estimate_batch(keypoints, params, tape)
    return mse_loss(pred, root_relative(targets), tape)


def dg_objective_eval(source_batch, augmentor, estimator, camera, skeleton, rng):
    """Diagnostic (source MSE, augmented MSE) pair; no parameter updates.

    The augmented term regenerates poses with fresh noise, projects them
    through the camera and measures the supervised loss on the result.
    """
    from .augmentor import augment_batch, draw_noise

    joints3d, keypoints2d = source_batch
    x_src = normalize_keypoints(keypoints2d, camera)
    source_term = float(T.raw(supervised_loss(estimator, x_src, joints3d)))

    noise = draw_noise(rng, joints3d.shape[0], augmentor.noise_dim)
    states = augment_batch(joints3d, noise, augmentor, skeleton)
    aug_3d = T.raw(states.rt_state)
    x_aug = normalize_keypoints(project_array(aug_3d, camera), camera)
    aug_term = float(T.raw(supervised_loss(estimator, x_aug, aug_3d)))
    return source_term, aug_term
