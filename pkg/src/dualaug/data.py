"""Synthetic pose domains: generation, persistence and loading.

Three shipped domain specs realize the toy picture the framework targets:
a narrow source domain, a near target that drifts slightly from it, and a
far target with large joint deviations, arbitrary yaw and root
translations. Poses are sampled per-bone: the canonical standing pose's
bone directions get random axis-angle deviations, lengths come from an
anthropometric table with a small jitter, then an optional global yaw and
root translation are applied.

Sampling uses counter-based streams seeded from (seed, index), so draws
are order-independent and bit-reproducible.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .camera import Camera, project_array
from .errors import IoError, ParseError, ShapeError
from .skeleton import Skeleton, default_skeleton

# Anthropometric defaults (mm), ordered like Skeleton.bone_list:
# (Hip-RHip, Hip-LHip, Hip-Spine, RHip-RKnee, LHip-LKnee, Spine-Thorax,
#  RKnee-RAnkle, LKnee-LAnkle, Thorax-Neck, Thorax-LShoulder,
#  Thorax-RShoulder, Neck-Head, LShoulder-LElbow, RShoulder-RElbow,
#  LElbow-LWrist)
DEFAULT_BONE_LENGTHS_MM = (
    130.0, 130.0, 230.0, 450.0, 450.0, 260.0, 440.0, 440.0,
    110.0, 150.0, 150.0, 120.0, 280.0, 280.0, 250.0,
)

# Canonical standing directions per bone (camera frame: x right, y down).
_CANONICAL_DIRECTIONS = (
    (-1.0, 0.0, 0.0),  # Hip -> RHip
    (1.0, 0.0, 0.0),   # Hip -> LHip
    (0.0, -1.0, 0.0),  # Hip -> Spine
    (0.0, 1.0, 0.0),   # RHip -> RKnee
    (0.0, 1.0, 0.0),   # LHip -> LKnee
    (0.0, -1.0, 0.0),  # Spine -> Thorax
    (0.0, 1.0, 0.0),   # RKnee -> RAnkle
    (0.0, 1.0, 0.0),   # LKnee -> LAnkle
    (0.0, -1.0, 0.0),  # Thorax -> Neck
    (1.0, 0.0, 0.0),   # Thorax -> LShoulder
    (-1.0, 0.0, 0.0),  # Thorax -> RShoulder
    (0.0, -1.0, 0.0),  # Neck -> Head
    (0.0, 1.0, 0.0),   # LShoulder -> LElbow
    (0.0, 1.0, 0.0),   # RShoulder -> RElbow
    (0.0, 1.0, 0.0),   # LElbow -> LWrist
)

LENGTH_JITTER = 0.02


@dataclass(frozen=True)
class DomainSpec:
    name: str
    bone_lengths: tuple[float, ...] = DEFAULT_BONE_LENGTHS_MM
    joint_angle_ranges: tuple[tuple[float, float], ...] = ((0.0, 0.2),) * 15
    global_rotation_range: float = 0.0
    global_translation_range: float = 0.0
    sample_count: int = 2048
    seed: int = 0

    def __post_init__(self):
        if any(l <= 0 for l in self.bone_lengths):
            raise ValueError("bone lengths must be positive")
        if any(lo > hi or lo < 0 for lo, hi in self.joint_angle_ranges):
            raise ValueError("angle ranges must satisfy 0 <= min <= max")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bone_lengths": list(self.bone_lengths),
            "joint_angle_ranges": [list(r) for r in self.joint_angle_ranges],
            "global_rotation_range": self.global_rotation_range,
            "global_translation_range": self.global_translation_range,
            "sample_count": self.sample_count,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "DomainSpec":
        return DomainSpec(
            name=d["name"],
            bone_lengths=tuple(float(x) for x in d["bone_lengths"]),
            joint_angle_ranges=tuple(
                (float(lo), float(hi)) for lo, hi in d["joint_angle_ranges"]
            ),
            global_rotation_range=float(d.get("global_rotation_range", 0.0)),
            global_translation_range=float(d.get("global_translation_range", 0.0)),
            sample_count=int(d.get("sample_count", 2048)),
            seed=int(d.get("seed", 0)),
        )


def source_spec(sample_count: int = 2048, seed: int = 0) -> DomainSpec:
    return DomainSpec(
        name="source",
        joint_angle_ranges=((0.0, 0.2),) * 15,
        global_rotation_range=0.0,
        global_translation_range=0.0,
        sample_count=sample_count,
        seed=seed,
    )


def target_near_spec(sample_count: int = 1024, seed: int = 1) -> DomainSpec:
    return DomainSpec(
        name="target_near",
        joint_angle_ranges=((0.0, 0.3),) * 15,
        global_rotation_range=0.3,
        global_translation_range=0.0,
        sample_count=sample_count,
        seed=seed,
    )


def target_far_spec(sample_count: int = 1024, seed: int = 2) -> DomainSpec:
    return DomainSpec(
        name="target_far",
        joint_angle_ranges=((0.0, 0.9),) * 15,
        global_rotation_range=math.pi,
        global_translation_range=800.0,
        sample_count=sample_count,
        seed=seed,
    )


def shipped_specs(source_count: int = 2048, target_count: int = 1024) -> list[DomainSpec]:
    return [
        source_spec(source_count),
        target_near_spec(target_count),
        target_far_spec(target_count),
    ]


@dataclass
class Dataset:
    """Paired 2D-3D poses from one domain, with the projecting camera."""

    joints3d: np.ndarray  # (N, J, 3) mm
    keypoints2d: np.ndarray  # (N, J, 2) px
    camera: Camera
    domain_name: str

    def __len__(self) -> int:
        return self.joints3d.shape[0]


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def sample_pose(
    spec: DomainSpec, rng: np.random.Generator, skeleton: Skeleton | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """One (root-relative pose, root translation) draw.

    Bone directions deviate from the canonical pose by a uniform angle
    about a random axis; lengths carry a +/-2% jitter; the whole pose may
    then yaw about the vertical axis and translate.
    """
    skeleton = skeleton if skeleton is not None else default_skeleton()
    nb = skeleton.bone_count
    if len(spec.bone_lengths) != nb or len(spec.joint_angle_ranges) != nb:
        raise ShapeError(
            f"spec sized for {len(spec.bone_lengths)} bones, skeleton has {nb}"
        )

    bones = np.zeros((nb, 3))
    for b in range(nb):
        direction = np.asarray(_CANONICAL_DIRECTIONS[b])
        lo, hi = spec.joint_angle_ranges[b]
        angle = rng.uniform(lo, hi)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        direction = _axis_angle_matrix(axis, angle) @ direction
        length = spec.bone_lengths[b] * (1.0 + rng.uniform(-LENGTH_JITTER, LENGTH_JITTER))
        bones[b] = length * direction

    joints = skeleton.path_matrix() @ bones
    if spec.global_rotation_range > 0.0:
        yaw = rng.uniform(-spec.global_rotation_range, spec.global_rotation_range)
        rot = _axis_angle_matrix(np.array([0.0, 1.0, 0.0]), yaw)
        joints = joints @ rot.T
    translation = np.zeros(3)
    if spec.global_translation_range > 0.0:
        translation = rng.uniform(
            -spec.global_translation_range, spec.global_translation_range, size=3
        )
    return joints, translation


def generate_dataset(
    spec: DomainSpec, camera: Camera, skeleton: Skeleton | None = None
) -> Dataset:
    """Sample spec.sample_count poses and project them exactly."""
    skeleton = skeleton if skeleton is not None else default_skeleton()
    joints3d = np.zeros((spec.sample_count, skeleton.joint_count, 3))
    for i in range(spec.sample_count):
        rng = _sample_rng(spec.seed, i)
        pose, translation = sample_pose(spec, rng, skeleton)
        joints3d[i] = pose + translation
    keypoints2d = (
        project_array(joints3d, camera)
        if spec.sample_count
        else np.zeros((0, skeleton.joint_count, 2))
    )
    return Dataset(joints3d, keypoints2d, camera, spec.name)


def save_dataset(ds: Dataset, path: str) -> None:
    """JSONL with one pose pair per line; floats round-trip bit-exactly."""
    try:
        lines = []
        for i in range(len(ds)):
            lines.append(
                json.dumps(
                    {
                        "id": i,
                        "joints3d": ds.joints3d[i].tolist(),
                        "keypoints2d": ds.keypoints2d[i].tolist(),
                        "domain": ds.domain_name,
                    }
                )
            )
        atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise IoError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path: str, camera: Camera) -> Dataset:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read dataset from {path}: {exc}") from exc
    joints, keypoints, domain = [], [], ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            joints.append(np.asarray(rec["joints3d"], dtype=np.float64))
            keypoints.append(np.asarray(rec["keypoints2d"], dtype=np.float64))
            domain = rec["domain"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad dataset record ({exc})", line=lineno) from exc
    if joints:
        j3 = np.stack(joints)
        k2 = np.stack(keypoints)
    else:
        j3 = np.zeros((0, 16, 3))
        k2 = np.zeros((0, 16, 2))
    return Dataset(j3, k2, camera, domain)


def atomic_write(path: str, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
