"""Wasserstein critics and the chained discrimination losses.

Two critics drive the two min-max games: the weak critic separates source
from weak-augmented poses, the strong critic separates weak-augmented from
strong-augmented poses. Both follow the WGAN-GP recipe: the critic
minimizes E[D(synthetic)] - E[D(real)] plus a gradient penalty at random
interpolants, and each generator minimizes -E[D(own synthetic)].

Critics score the flattened root-relative pose; the root row is subtracted
inside the score so translated states are handled uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import MlpSpec, ParamStore, init_params, mlp_forward
from .diffcore import tape as T
from .errors import EmptyBatchError, ShapeError
from .skeleton import Pose3D

CRITIC_HIDDEN = (128, 128)


@dataclass
class CriticParams:
    """One critic network and its role in the chain."""

    role: str  # "weak" | "strong"
    spec: MlpSpec
    store: ParamStore


def new_critic(role: str, rng: np.random.Generator, joint_count: int = 16) -> CriticParams:
    if role not in ("weak", "strong"):
        raise ValueError(f"role must be weak or strong, got {role!r}")
    spec = MlpSpec(3 * joint_count, CRITIC_HIDDEN, 1)
    return CriticParams(role=role, spec=spec, store=init_params(spec, rng))


@dataclass(frozen=True)
class GpSample:
    """One interpolated pose for the gradient penalty."""

    endpoint_a: Pose3D
    endpoint_b: Pose3D
    epsilon: float

    @property
    def interpolant(self) -> Pose3D:
        e = self.epsilon
        return Pose3D(e * self.endpoint_a.joints + (1.0 - e) * self.endpoint_b.joints)


def _as_batch(poses):
    if isinstance(poses, Pose3D):
        return poses.joints[None]
    if isinstance(poses, (list, tuple)):
        if len(poses) == 0:
            raise EmptyBatchError("empty pose batch")
        return np.stack([p.joints if isinstance(p, Pose3D) else np.asarray(p) for p in poses])
    return poses  # ndarray (B, J, 3) or Node


def critic_score(pose, critic: CriticParams, tape=None):
    """Scalar score per pose; (B,) for a batch, scalar for a single pose.

    Differentiable with respect to both the pose and the critic parameters.
    """
    if isinstance(pose, Pose3D):
        batch, single = pose.joints[None], True
    elif isinstance(pose, (list, tuple)):
        batch, single = _as_batch(pose), False
    elif len(T._shape_of(pose)) == 2:
        batch, single = T.reshape(pose, (1, *T._shape_of(pose))), True
    else:
        batch, single = pose, False
    shape = T._shape_of(batch)
    if len(shape) != 3 or shape[1] * shape[2] != critic.spec.input_dim:
        raise ShapeError(
            f"pose batch shape {shape} incompatible with critic input "
            f"{critic.spec.input_dim}"
        )
    rel = T.sub(batch, batch[:, 0:1, :])
    flat = T.reshape(rel, (shape[0], shape[1] * shape[2]))
    scores = mlp_forward(critic.spec, critic.store, flat, tape)
    scores = T.reshape(scores, (shape[0],))
    if single:
        return scores[0]
    return scores


def _mean_score(batch, critic, tape):
    return T.mean_all(critic_score(batch, critic, tape))


def gradient_penalty(
    critic: CriticParams,
    a,
    b,
    epsilon,
    tape: T.Tape,
    squared: bool = True,
):
    """Penalty (1 - |grad D|)^2 at interpolants eps*a + (1-eps)*b.

    ``a`` and ``b`` are single poses or (B, J, 3) batches; epsilon is a
    scalar or a (B,) draw with one value per sample. The per-sample input
    gradient comes from a create-graph backward pass, so the result stays
    differentiable with respect to the critic parameters. ``squared=False``
    gives the unsquared printed form for fidelity experiments.
    """
    a = _as_batch(a)
    b = _as_batch(b)
    eps = np.asarray(epsilon, dtype=np.float64)
    if np.any(eps < 0) or np.any(eps > 1):
        raise ValueError("epsilon must lie in [0, 1]")
    if eps.ndim == 1:
        eps = eps[:, None, None]
    interp = tape.leaf(eps * T.raw(a) + (1.0 - eps) * T.raw(b))
    # Scores are per-sample, so the gradient of their sum w.r.t. the batch
    # stacks the per-sample input gradients.
    total = T.sum_all(critic_score(interp, critic, tape))
    grads = T.backward(total, [interp], create_graph=True)[0]
    sq = T.sum_axis(T.mul(grads, grads), axis=(1, 2), keepdims=False)
    norms = T.sqrt(sq)
    gap = T.sub(1.0, norms)
    if squared:
        return T.mean_all(T.mul(gap, gap))
    return T.mean_all(gap)


def _critic_loss(real, synth, critic, beta, rng, tape, squared):
    real = _as_batch(real)
    synth = _as_batch(synth)
    if T._shape_of(real)[0] == 0 or T._shape_of(synth)[0] == 0:
        raise EmptyBatchError("critic loss needs non-empty batches")
    if T._shape_of(real) != T._shape_of(synth):
        raise ShapeError("real and synthetic batches must match in shape")
    eps = rng.uniform(0.0, 1.0, size=T._shape_of(real)[0])
    gp = gradient_penalty(critic, real, synth, eps, tape, squared=squared)
    return T.add(
        T.sub(_mean_score(synth, critic, tape), _mean_score(real, critic, tape)),
        T.mul(gp, beta),
    )


def weak_critic_loss(batch_or, batch_wa, critic: CriticParams, beta1: float,
                     rng: np.random.Generator, tape: T.Tape | None = None,
                     squared: bool = True):
    """E[D(wa)] - E[D(or)] + beta1 * penalty; minimized by the weak critic."""
    tape = tape if tape is not None else T.Tape()
    return _critic_loss(batch_or, batch_wa, critic, beta1, rng, tape, squared)


def strong_critic_loss(batch_wa, batch_sa, critic: CriticParams, beta2: float,
                       rng: np.random.Generator, tape: T.Tape | None = None,
                       squared: bool = True):
    """E[D(sa)] - E[D(wa)] + beta2 * penalty; minimized by the strong critic."""
    tape = tape if tape is not None else T.Tape()
    return _critic_loss(batch_wa, batch_sa, critic, beta2, rng, tape, squared)


def generator_adv_loss(batch_synth, critic: CriticParams, tape=None):
    """-E[D(synthetic)]; gradients flow back into the generating augmentor."""
    batch = _as_batch(batch_synth)
    if T._shape_of(batch)[0] == 0:
        raise EmptyBatchError("generator adversarial loss needs a non-empty batch")
    return T.neg(_mean_score(batch, critic, tape))
