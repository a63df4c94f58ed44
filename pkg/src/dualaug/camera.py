"""Pinhole 3D-to-2D projection with a fixed subject distance.

The camera is applied outside all gradient paths: generators output 3D
poses, supervision is 3D, and only plain data pairs flow through the
projection, so this module works on raw arrays only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError
from .skeleton import Pose2D, Pose3D

MIN_DEPTH_MM = 100.0


@dataclass(frozen=True)
class Camera:
    fx: float = 1000.0
    fy: float = 1000.0
    cx: float = 500.0
    cy: float = 500.0
    subject_distance: float = 5000.0
    width: int = 1000
    height: int = 1000

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.subject_distance <= 0:
            raise ValueError("subject_distance must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "fx": self.fx,
                "fy": self.fy,
                "cx": self.cx,
                "cy": self.cy,
                "subject_distance": self.subject_distance,
                "width": self.width,
                "height": self.height,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "Camera":
        d = json.loads(text)
        return Camera(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            subject_distance=float(d["subject_distance"]),
            width=int(d.get("width", 1000)),
            height=int(d.get("height", 1000)),
        )


def project_array(joints: np.ndarray, camera: Camera) -> np.ndarray:
    """Project (..., J, 3) mm joints to (..., J, 2) pixel keypoints."""
    z = joints[..., 2] + camera.subject_distance
    if np.any(z <= MIN_DEPTH_MM):
        raise BehindCameraError(
            f"joint depth {float(np.min(z)):.1f} mm is at or behind the "
            f"{MIN_DEPTH_MM:.0f} mm guard"
        )
    u = camera.fx * joints[..., 0] / z + camera.cx
    v = camera.fy * joints[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def project(pose: Pose3D, camera: Camera) -> Pose2D:
    return Pose2D(project_array(pose.joints, camera))


def normalize_keypoints(keypoints: np.ndarray, camera: Camera) -> np.ndarray:
    """Pixels to unit-less coordinates: ((u - cx)/fx, (v - cy)/fy)."""
    out = np.empty_like(keypoints, dtype=np.float64)
    out[..., 0] = (keypoints[..., 0] - camera.cx) / camera.fx
    out[..., 1] = (keypoints[..., 1] - camera.cy) / camera.fy
    return out
