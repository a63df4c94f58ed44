"""Three-stage pose generation and the differential generation losses.

A generator pass produces four states — the untouched source pose (OR),
after the bone-angle stage (BA), after the bone-length stage (BL), and
after the rigid rotation-translation stage (RT). Proximate state pairs
(PP) and one-state-gap pairs (OG) feed the weak/strong similarity losses.

Each head is a small MLP conditioned on the flattened unit bone vectors
of its input state plus a shared standard-normal noise vector; outputs
are tanh-bounded so every stage stays inside its configured envelope and
a zero-initialized head is exactly the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import MlpSpec, ParamStore, init_params, mlp_forward
from .diffcore import tape as T
from .errors import ShapeError
from .skeleton import (
    BoneVectors,
    Pose3D,
    Skeleton,
    bones_from_joints,
)

# Keeps norms and Rodrigues coefficients smooth at exactly zero without
# measurably perturbing them anywhere else.
_EPS_SQ = 1e-36


@dataclass(frozen=True)
class Bounds:
    max_angle_rad: float
    max_log_scale: float
    max_translation_mm: float
    max_rotation_rad: float

    def __post_init__(self):
        for name in ("max_angle_rad", "max_log_scale", "max_translation_mm", "max_rotation_rad"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "max_angle_rad": self.max_angle_rad,
            "max_log_scale": self.max_log_scale,
            "max_translation_mm": self.max_translation_mm,
            "max_rotation_rad": self.max_rotation_rad,
        }

    @staticmethod
    def from_dict(d: dict) -> "Bounds":
        return Bounds(
            max_angle_rad=float(d["max_angle_rad"]),
            max_log_scale=float(d["max_log_scale"]),
            max_translation_mm=float(d["max_translation_mm"]),
            max_rotation_rad=float(d["max_rotation_rad"]),
        )


WEAK_BOUNDS = Bounds(0.25, 0.15, 300.0, 0.3)
STRONG_BOUNDS = Bounds(0.8, 0.4, 1000.0, math.pi)

DEFAULT_NOISE_DIM = 16
DEFAULT_HIDDEN = (128, 128)


@dataclass
class AugmentorParams:
    """The three generator heads of one augmentor (weak or strong)."""

    kind: str  # "weak" | "strong"
    noise_dim: int
    bounds: Bounds
    ba_spec: MlpSpec
    ba: ParamStore
    bl_spec: MlpSpec
    bl: ParamStore
    rt_spec: MlpSpec
    rt: ParamStore
    tie_symmetric: bool = True

    def stores(self) -> dict[str, ParamStore]:
        return {"ba": self.ba, "bl": self.bl, "rt": self.rt}


def new_augmentor(
    kind: str,
    skeleton: Skeleton,
    rng: np.random.Generator,
    noise_dim: int = DEFAULT_NOISE_DIM,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    bounds: Bounds | None = None,
    tie_symmetric: bool = True,
) -> AugmentorParams:
    if kind not in ("weak", "strong"):
        raise ValueError(f"kind must be weak or strong, got {kind!r}")
    if bounds is None:
        bounds = WEAK_BOUNDS if kind == "weak" else STRONG_BOUNDS
    nb = skeleton.bone_count
    in_dim = 3 * nb + noise_dim
    ba_spec = MlpSpec(in_dim, hidden, 3 * nb, final_layer_zero_init=True)
    bl_spec = MlpSpec(in_dim, hidden, nb, final_layer_zero_init=True)
    rt_spec = MlpSpec(in_dim, hidden, 6, final_layer_zero_init=True)
    return AugmentorParams(
        kind=kind,
        noise_dim=noise_dim,
        bounds=bounds,
        ba_spec=ba_spec,
        ba=init_params(ba_spec, rng),
        bl_spec=bl_spec,
        bl=init_params(bl_spec, rng),
        rt_spec=rt_spec,
        rt=init_params(rt_spec, rng),
        tie_symmetric=tie_symmetric,
    )


@dataclass(frozen=True)
class PoseStates:
    """The (OR, BA, BL, RT) quadruple from one augmentor pass."""

    or_state: object
    ba_state: object
    bl_state: object
    rt_state: object

    def get(self, name: str):
        return getattr(self, f"{name.lower()}_state")


@dataclass(frozen=True)
class PairSets:
    """Proximate pairs and one-state-gap pairs over the four states."""

    pp: tuple[tuple[str, str], ...] = (("OR", "BA"), ("BA", "BL"), ("BL", "RT"))
    og: tuple[tuple[str, str], ...] = (("OR", "BL"), ("BA", "RT"))


DEFAULT_PAIRS = PairSets()


def _safe_norm(v, axis=-1):
    """sqrt(sum v^2 + eps^2): smooth everywhere, exact enough elsewhere."""
    return T.sqrt(T.sum_axis(T.mul(v, v), axis, keepdims=True) + _EPS_SQ)


def _rodrigues_delta(vectors, points):
    """Rotation-minus-identity applied to points: R(v) @ p - p.

    Uses the series-safe coefficients sin(t)/t and (1-cos t)/t^2, so a zero
    rotation vector yields an exactly-zero delta; adding the delta back is
    then a bitwise identity, which the identity-at-init contract relies on.
    """
    theta = _safe_norm(vectors)
    a = T.div(T.sin(theta), theta)
    b = T.div(T.sub(1.0, T.cos(theta)), T.mul(theta, theta))
    cross1 = T.cross3(vectors, points)
    cross2 = T.cross3(vectors, cross1)
    return T.add(T.mul(a, cross1), T.mul(b, cross2))


def _bounded_rotation(raw_vec, max_angle: float):
    """Rescale rotation vectors so the angle is max_angle * tanh(|v|)."""
    n = _safe_norm(raw_vec)
    return T.mul(raw_vec, T.div(T.mul(T.tanh(n), max_angle), n))


def _head_input(bones, noise, noise_dim: int):
    shape = T._shape_of(bones)
    unit = T.div(bones, _safe_norm(bones))
    flat = T.reshape(unit, (shape[0], shape[1] * 3))
    if T._shape_of(noise) != (shape[0], noise_dim):
        raise ShapeError(
            f"noise shape {T._shape_of(noise)} != ({shape[0]}, {noise_dim})"
        )
    return T.concat([flat, noise], axis=1)


def _tie_matrix(skeleton: Skeleton) -> np.ndarray:
    m = np.eye(skeleton.bone_count)
    for i, j in skeleton.symmetric_bones:
        m[i, i] = m[j, j] = m[i, j] = m[j, i] = 0.5
    return m


def ba_apply_batch(bones, noise, params: AugmentorParams, tape=None):
    """Bone-angle stage on (B, J-1, 3) bones; lengths are preserved."""
    x = _head_input(bones, noise, params.noise_dim)
    out = mlp_forward(params.ba_spec, params.ba, x, tape)
    shape = T._shape_of(bones)
    rot = _bounded_rotation(
        T.reshape(out, shape), params.bounds.max_angle_rad
    )
    return T.add(bones, _rodrigues_delta(rot, bones))


def bl_apply_batch(
    bones, noise, params: AugmentorParams, skeleton: Skeleton, tape=None
):
    """Bone-length stage: per-bone scale exp(max_log_scale * tanh(o))."""
    x = _head_input(bones, noise, params.noise_dim)
    out = mlp_forward(params.bl_spec, params.bl, x, tape)
    if params.tie_symmetric and skeleton.symmetric_bones:
        out = T.matmul(out, _tie_matrix(skeleton))
    scale = T.exp(T.mul(T.tanh(out), params.bounds.max_log_scale))
    nb = T._shape_of(bones)[1]
    return T.mul(bones, T.reshape(scale, (T._shape_of(bones)[0], nb, 1)))


def rt_apply_batch(
    joints, noise, params: AugmentorParams, skeleton: Skeleton, tape=None
):
    """Rigid rotation about the root plus bounded global translation."""
    root = joints[:, 0:1, :]
    bones = bones_from_joints(joints, skeleton)
    x = _head_input(bones, noise, params.noise_dim)
    out = mlp_forward(params.rt_spec, params.rt, x, tape)
    batch = T._shape_of(joints)[0]
    rot_vec = _bounded_rotation(
        T.reshape(out[:, 0:3], (batch, 1, 3)), params.bounds.max_rotation_rad
    )
    trans = T.mul(
        T.tanh(T.reshape(out[:, 3:6], (batch, 1, 3))),
        params.bounds.max_translation_mm,
    )
    centered = T.sub(joints, root)
    return T.add(T.add(joints, _rodrigues_delta(rot_vec, centered)), trans)


def augment_batch(
    joints, noise, params: AugmentorParams, skeleton: Skeleton, tape=None
) -> PoseStates:
    """Full OR -> BA -> BL -> RT chain on a (B, J, 3) batch.

    Intermediate states are the source pose plus a path-propagated bone
    delta, so a zero-initialized augmentor reproduces the input bitwise.
    """
    paths = skeleton.path_matrix()
    bones_or = bones_from_joints(joints, skeleton)
    ba_bones = ba_apply_batch(bones_or, noise, params, tape)
    ba_state = T.add(joints, T.matmul(paths, T.sub(ba_bones, bones_or)))
    bl_bones = bl_apply_batch(ba_bones, noise, params, skeleton, tape)
    bl_state = T.add(joints, T.matmul(paths, T.sub(bl_bones, bones_or)))
    rt_state = rt_apply_batch(bl_state, noise, params, skeleton, tape)
    return PoseStates(joints, ba_state, bl_state, rt_state)


# Single-pose wrappers over the batched cores.


def ba_apply(bones: BoneVectors, noise: np.ndarray, params: AugmentorParams) -> BoneVectors:
    out = ba_apply_batch(bones.bones[None], np.asarray(noise)[None], params)
    return BoneVectors(out[0], bones.root_position)


def bl_apply(
    bones: BoneVectors, noise: np.ndarray, params: AugmentorParams, skeleton: Skeleton
) -> BoneVectors:
    out = bl_apply_batch(bones.bones[None], np.asarray(noise)[None], params, skeleton)
    return BoneVectors(out[0], bones.root_position)


def rt_apply(
    pose: Pose3D, noise: np.ndarray, params: AugmentorParams, skeleton: Skeleton
) -> Pose3D:
    out = rt_apply_batch(pose.joints[None], np.asarray(noise)[None], params, skeleton)
    return Pose3D(out[0])


def augment(
    pose: Pose3D, noise: np.ndarray, params: AugmentorParams, skeleton: Skeleton
) -> PoseStates:
    states = augment_batch(pose.joints[None], np.asarray(noise)[None], params, skeleton)
    return PoseStates(
        Pose3D(states.or_state[0]),
        Pose3D(states.ba_state[0]),
        Pose3D(states.bl_state[0]),
        Pose3D(states.rt_state[0]),
    )


def draw_noise(rng: np.random.Generator, batch: int, noise_dim: int) -> np.ndarray:
    return rng.standard_normal((batch, noise_dim))


# Differential generation losses.


def _as_array_or_node(st):
    if isinstance(st, Pose3D):
        return st.joints
    return st


def sim_loss(st1, st2, laplacian: np.ndarray):
    """Coordinate MSE plus MSE of Laplacian-filtered coordinates.

    Accepts (J, 3) or (B, J, 3) states (arrays, nodes or Pose3D); the mean
    runs over every entry, so batched values are batch means.
    """
    a = _as_array_or_node(st1)
    b = _as_array_or_node(st2)
    diff = T.sub(a, b)
    wdiff = T.matmul(laplacian, diff)
    return T.add(
        T.mean_all(T.mul(diff, diff)), T.mean_all(T.mul(wdiff, wdiff))
    )


def _pair_mean(states: PoseStates, pairs, laplacian):
    total = None
    for name1, name2 in pairs:
        term = sim_loss(states.get(name1), states.get(name2), laplacian)
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(pairs))


def weak_gen_loss(
    states: PoseStates, pairs: PairSets, laplacian: np.ndarray, alpha1: float
):
    """Pull both PP and OG pairs together: slight augmentation."""
    return T.add(
        _pair_mean(states, pairs.pp, laplacian),
        T.mul(_pair_mean(states, pairs.og, laplacian), alpha1),
    )


def strong_gen_loss(
    states: PoseStates, pairs: PairSets, laplacian: np.ndarray, alpha2: float
):
    """Pull PP together while pushing OG apart: significant augmentation."""
    return T.sub(
        _pair_mean(states, pairs.pp, laplacian),
        T.mul(_pair_mean(states, pairs.og, laplacian), alpha2),
    )
