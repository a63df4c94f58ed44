"""16-joint human body graph, its matrices, and bone-vector kinematics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffcore import tape as T
from .errors import ArityError, CycleError, ShapeError

DEFAULT_JOINT_NAMES = [
    "Hip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "Spine",
    "Thorax", "Neck", "Head", "LShoulder", "LElbow", "LWrist", "RShoulder",
    "RElbow",
]

# Hip roots the tree; its children are RHip, LHip and Spine, so adjacency
# row 0 has ones exactly at columns 1, 4, 7 and degree(Hip) = 3.
DEFAULT_PARENTS: list[int | None] = [
    None, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14,
]


@dataclass(frozen=True)
class Skeleton:
    """Immutable joint tree with its adjacency, degree and Laplacian."""

    joint_count: int
    parents: tuple[int | None, ...]
    joint_names: tuple[str, ...]
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    bone_list: tuple[tuple[int, int], ...]
    # pairs of bone indices whose lengths are tied left/right
    symmetric_bones: tuple[tuple[int, int], ...] = field(default=())

    @property
    def bone_count(self) -> int:
        return self.joint_count - 1

    def path_matrix(self) -> np.ndarray:
        """(J, J-1) 0/1 matrix: joints = root + path_matrix @ bones."""
        m = np.zeros((self.joint_count, self.bone_count))
        for b, (parent, child) in enumerate(self.bone_list):
            m[child] = m[parent]
            m[child, b] = 1.0
        return m

    def to_json(self) -> str:
        return json.dumps(
            {"joint_names": list(self.joint_names), "parents": list(self.parents)},
            indent=2,
        )

    @staticmethod
    def from_json(text: str, expect_joints: int | None = 16) -> "Skeleton":
        d = json.loads(text)
        return build_skeleton(
            d["parents"], d.get("joint_names"), expect_joints=expect_joints
        )


@dataclass(frozen=True)
class Pose3D:
    """16x3 joint positions in millimeters, camera frame."""

    joints: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.joints, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ShapeError(f"Pose3D expects (J, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("Pose3D entries must be finite")
        object.__setattr__(self, "joints", arr)

    def root_relative(self) -> "Pose3D":
        return Pose3D(self.joints - self.joints[0:1])


@dataclass(frozen=True)
class Pose2D:
    """16x2 keypoints in pixels."""

    keypoints: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.keypoints, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ShapeError(f"Pose2D expects (J, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("Pose2D entries must be finite")
        object.__setattr__(self, "keypoints", arr)


@dataclass(frozen=True)
class BoneVectors:
    """15x3 child-minus-parent vectors plus the root position."""

    bones: np.ndarray
    root_position: np.ndarray

    def __post_init__(self):
        bones = np.asarray(self.bones, dtype=np.float64)
        root = np.asarray(self.root_position, dtype=np.float64)
        if bones.ndim != 2 or bones.shape[1] != 3:
            raise ShapeError(f"BoneVectors expects (J-1, 3), got {bones.shape}")
        if root.shape != (3,):
            raise ShapeError(f"root_position expects (3,), got {root.shape}")
        object.__setattr__(self, "bones", bones)
        object.__setattr__(self, "root_position", root)


def _symmetric_pairs(joint_names, bone_list) -> tuple[tuple[int, int], ...]:
    """Match L*/R* bones by the stripped child name (e.g. LKnee vs RKnee)."""
    by_key = {}
    for idx, (_, child) in enumerate(bone_list):
        name = joint_names[child]
        if name[:1] in ("L", "R") and len(name) > 1:
            by_key.setdefault(name[1:], {})[name[0]] = idx
    pairs = []
    for key in sorted(by_key):
        sides = by_key[key]
        if "L" in sides and "R" in sides:
            pairs.append((sides["L"], sides["R"]))
    return tuple(pairs)


def build_skeleton(
    parents,
    joint_names=None,
    expect_joints: int | None = None,
) -> Skeleton:
    """Build the joint graph from a parent array.

    Exactly one entry must be the root (None or negative). Raises CycleError
    when the parent pointers do not form a tree and ArityError when the
    joint count differs from expect_joints.
    """
    parents = [None if p is None or (isinstance(p, int) and p < 0) else int(p) for p in parents]
    n = len(parents)
    if expect_joints is not None and n != expect_joints:
        raise ArityError(f"expected {expect_joints} joints, got {n}")
    roots = [i for i, p in enumerate(parents) if p is None]
    if len(roots) != 1:
        raise CycleError(f"expected exactly one root, found {len(roots)}")
    root = roots[0]
    for i, p in enumerate(parents):
        if p is not None and not (0 <= p < n):
            raise CycleError(f"parent index {p} of joint {i} out of range")

    # Walk each joint to the root; revisiting a joint on the way means a cycle.
    for i in range(n):
        seen = set()
        j = i
        while parents[j] is not None:
            if j in seen:
                raise CycleError(f"cycle detected through joint {j}")
            seen.add(j)
            j = parents[j]

    children: list[list[int]] = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p is not None:
            children[p].append(i)

    # Breadth-first bone ordering guarantees parent-before-child.
    bone_list = []
    queue = [root]
    while queue:
        j = queue.pop(0)
        for c in children[j]:
            bone_list.append((j, c))
            queue.append(c)
    if len(bone_list) != n - 1:
        raise CycleError("parent graph is not connected")

    adjacency = np.zeros((n, n))
    for p, c in bone_list:
        adjacency[p, c] = 1.0
        adjacency[c, p] = 1.0
    degree = np.diag(adjacency.sum(axis=1))

    d_inv_sqrt = np.diag(1.0 / np.sqrt(np.diag(degree)))
    laplacian = np.eye(n) - d_inv_sqrt @ adjacency @ d_inv_sqrt

    if joint_names is None:
        names = DEFAULT_JOINT_NAMES if n == 16 else [f"J{i}" for i in range(n)]
    else:
        if len(joint_names) != n:
            raise ArityError(f"{len(joint_names)} names for {n} joints")
        names = list(joint_names)

    return Skeleton(
        joint_count=n,
        parents=tuple(parents),
        joint_names=tuple(names),
        adjacency=adjacency,
        degree=degree,
        laplacian=laplacian,
        bone_list=tuple(bone_list),
        symmetric_bones=_symmetric_pairs(names, bone_list),
    )


def default_skeleton() -> Skeleton:
    return build_skeleton(DEFAULT_PARENTS, DEFAULT_JOINT_NAMES, expect_joints=16)


def normalized_laplacian(skeleton: Skeleton) -> np.ndarray:
    """I - D^(-1/2) A D^(-1/2); symmetric with unit diagonal."""
    return skeleton.laplacian


def joints_to_bones(pose: Pose3D, skeleton: Skeleton) -> BoneVectors:
    j = pose.joints
    bones = np.array([j[c] - j[p] for p, c in skeleton.bone_list])
    return BoneVectors(bones=bones, root_position=j[0].copy())


def bones_to_joints(bones: BoneVectors, skeleton: Skeleton) -> Pose3D:
    joints = np.zeros((skeleton.joint_count, 3))
    joints[0] = bones.root_position
    for b, (p, c) in enumerate(skeleton.bone_list):
        joints[c] = joints[p] + bones.bones[b]
    return Pose3D(joints)


# Batched array forms used on the differentiation tape. Poses are
# (B, J, 3) arrays or Nodes; bones are (B, J-1, 3).


def bones_from_joints(joints, skeleton: Skeleton):
    parent_idx = [p for p, _ in skeleton.bone_list]
    child_idx = [c for _, c in skeleton.bone_list]
    sel_c = np.zeros((skeleton.bone_count, skeleton.joint_count))
    sel_p = np.zeros((skeleton.bone_count, skeleton.joint_count))
    sel_c[np.arange(skeleton.bone_count), child_idx] = 1.0
    sel_p[np.arange(skeleton.bone_count), parent_idx] = 1.0
    return T.matmul(sel_c - sel_p, joints)


def joints_from_bones(bones, root, skeleton: Skeleton):
    """root is (B, 1, 3); bones (B, J-1, 3) -> joints (B, J, 3)."""
    paths = skeleton.path_matrix()
    return T.add(T.matmul(paths, bones), root)
