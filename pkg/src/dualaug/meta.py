"""Two-step meta optimization over source, weak- and strong-augmented pairs.

One round runs two half-rounds. The first meta-trains on source pairs and
meta-tests on weak-augmented pairs; the second meta-trains on the weak
pairs and meta-tests on strong-augmented pairs, so weak data bridges the
gap between source and strong distributions.

A half-round computes the inner step P' = P - lr1 * grad L_train(P), the
meta-test loss at P', and updates P along grad[L_train + gamma * L_test].
First-order mode evaluates the test gradient at P' and treats it as the
gradient with respect to P; second-order mode differentiates through the
inner step. With an optimizer state attached, the combined gradient feeds
that optimizer instead of the plain lr2 step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augmentor import AugmentorParams, augment_batch, draw_noise
from .camera import Camera, normalize_keypoints, project_array
from .diffcore import OptimizerState, ParamStore, optimizer_step
from .diffcore import tape as T
from .errors import EmptyBatchError
from .estimator import EstimatorParams, mse_loss, root_relative
from .skeleton import Skeleton


@dataclass(frozen=True)
class MetaConfig:
    lr1: float = 1e-4
    lr2: float = 5e-4
    gamma: float = 1.0
    k: int = 1
    order: str = "first"  # "first" | "second"

    def __post_init__(self):
        if self.lr1 < 0 or self.lr2 <= 0:
            raise ValueError("learning rates must be positive (lr1 may be zero)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be first or second, got {self.order!r}")


def _check_batch(batch, label):
    x, y = batch
    if T._shape_of(x)[0] == 0 or T._shape_of(y)[0] == 0:
        raise EmptyBatchError(f"{label} batch is empty")
    return x, y


def meta_half_round_core(
    store: ParamStore,
    loss_fn,
    train_batch,
    test_batches,
    cfg: MetaConfig,
    opt_state: OptimizerState | None = None,
    diagnostics: dict | None = None,
) -> ParamStore:
    """Generic half-round over any loss_fn(weights, batch) -> scalar node.

    ``weights`` is a dict of parameter leaves (or expressions of them in the
    inner-adapted pass). Mutates and returns the store; when a diagnostics
    dict is passed it receives the train and mean test loss values.
    """
    _check_batch(train_batch, "meta-train")
    if len(test_batches) != cfg.k:
        raise EmptyBatchError(f"expected {cfg.k} meta-test batches, got {len(test_batches)}")
    for b in test_batches:
        _check_batch(b, "meta-test")

    second = cfg.order == "second"
    tape = T.Tape()
    bound = tape.bind(store)
    names = store.names()
    leaves = [bound[n] for n in names]

    train_loss = loss_fn(bound, train_batch)
    train_grads = T.backward(train_loss, leaves, create_graph=second)
    if diagnostics is not None:
        diagnostics["train"] = float(T.raw(train_loss))
        diagnostics["test"] = float("nan")

    if cfg.gamma == 0.0:
        # Degenerate weight: exactly one plain supervised step, bitwise equal
        # to the non-meta path (the test term is skipped, not multiplied out).
        combined = [T.raw(g) for g in train_grads]
        return _apply(store, names, combined, cfg, opt_state)

    if second:
        adapted = {
            n: T.sub(bound[n], T.mul(g, cfg.lr1))
            for n, g in zip(names, train_grads)
        }
        test_loss = None
        for batch in test_batches:
            term = loss_fn(adapted, batch)
            test_loss = term if test_loss is None else T.add(test_loss, term)
        test_loss = T.mul(test_loss, 1.0 / cfg.k)
        total = T.add(train_loss, T.mul(test_loss, cfg.gamma))
        combined = [T.raw(g) for g in T.backward(total, leaves)]
        if diagnostics is not None:
            diagnostics["test"] = float(T.raw(test_loss))
    else:
        adapted_store = store.copy()
        flat = np.concatenate([np.ravel(T.raw(g)) for g in train_grads])
        adapted_store.values -= cfg.lr1 * flat
        test_tape = T.Tape()
        test_bound = test_tape.bind(adapted_store)
        test_leaves = [test_bound[n] for n in names]
        test_loss = None
        for batch in test_batches:
            term = loss_fn(test_bound, batch)
            test_loss = term if test_loss is None else T.add(test_loss, term)
        test_loss = T.mul(test_loss, 1.0 / cfg.k)
        test_grads = T.backward(test_loss, test_leaves)
        combined = [
            T.raw(gt) + cfg.gamma * T.raw(ge)
            for gt, ge in zip(train_grads, test_grads)
        ]
        if diagnostics is not None:
            diagnostics["test"] = float(T.raw(test_loss))
    return _apply(store, names, combined, cfg, opt_state)


def _apply(store, names, grads, cfg, opt_state):
    flat = np.concatenate([np.ravel(g) for g in grads])
    if opt_state is not None:
        optimizer_step(opt_state, store, flat)
    else:
        store.values -= cfg.lr2 * flat
    return store


def _estimator_loss_fn(params: EstimatorParams):
    def loss_fn(weights, batch):
        x, y = batch
        pred = estimate_batch_with(weights, params, x)
        return mse_loss(pred, y)

    return loss_fn


def estimate_batch_with(weights, params: EstimatorParams, keypoints):
    """estimate_batch with explicit weight leaves (used by inner updates)."""
    from .diffcore import mlp_forward

    shape = T._shape_of(keypoints)
    flat = T.reshape(keypoints, (shape[0], shape[1] * shape[2]))
    out = mlp_forward(params.spec, weights, flat)
    pose = T.reshape(out, (shape[0], shape[1], 3))
    mask = np.ones((shape[1], 1))
    mask[0, 0] = 0.0
    return T.mul(T.mul(pose, mask), params.output_scale)


def meta_half_round(
    params: EstimatorParams,
    train_batch,
    test_batches,
    cfg: MetaConfig,
    opt_state: OptimizerState | None = None,
    diagnostics: dict | None = None,
) -> EstimatorParams:
    """Half-round on the estimator; batches are (normalized 2D, relative 3D)."""
    meta_half_round_core(
        params.store, _estimator_loss_fn(params), train_batch, test_batches,
        cfg, opt_state, diagnostics,
    )
    return params


def _partition(x, y, k: int):
    """Split a batch into k nearly equal test batches (k=1: the batch itself)."""
    if k == 1:
        return [(x, y)]
    n = x.shape[0]
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [
        (x[a:b], y[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    ]


def generate_pairs(
    joints3d: np.ndarray,
    augmentor: AugmentorParams,
    camera: Camera,
    skeleton: Skeleton,
    rng: np.random.Generator,
):
    """Augment a source batch and project it: (normalized 2D, relative 3D).

    Runs outside any tape — augmentor snapshots are fixed, and the camera
    sits outside all gradient paths.
    """
    noise = draw_noise(rng, joints3d.shape[0], augmentor.noise_dim)
    states = augment_batch(joints3d, noise, augmentor, skeleton)
    aug3d = T.raw(states.rt_state)
    x = normalize_keypoints(project_array(aug3d, camera), camera)
    return x, T.raw(root_relative(aug3d))


def meta_round(
    params: EstimatorParams,
    source_batch,
    weak_augmentor: AugmentorParams,
    strong_augmentor: AugmentorParams | None,
    camera: Camera,
    cfg: MetaConfig,
    skeleton: Skeleton,
    rng: np.random.Generator,
    opt_state: OptimizerState | None = None,
    rng_second: np.random.Generator | None = None,
    diagnostics: list | None = None,
) -> EstimatorParams:
    """One full two-half-round update of the estimator.

    Augmentor and critic parameters are never touched. When only one
    augmentor is supplied (single-augmentor baselines) the round collapses
    to a single half-round from source to that augmentor's output. Fresh
    noise is drawn for the weak and strong generations within the round.
    """
    joints3d, keypoints2d = source_batch
    x_src = normalize_keypoints(keypoints2d, camera)
    y_src = T.raw(root_relative(joints3d))

    diag1 = {} if diagnostics is not None else None
    x_wa, y_wa = generate_pairs(joints3d, weak_augmentor, camera, skeleton, rng)
    meta_half_round(
        params, (x_src, y_src), _partition(x_wa, y_wa, cfg.k), cfg, opt_state,
        diagnostics=diag1,
    )
    if diagnostics is not None:
        diagnostics.append(diag1)
    if strong_augmentor is None:
        return params

    diag2 = {} if diagnostics is not None else None
    rng_second = rng_second if rng_second is not None else rng
    x_sa, y_sa = generate_pairs(joints3d, strong_augmentor, camera, skeleton, rng_second)
    meta_half_round(
        params, (x_wa, y_wa), _partition(x_sa, y_sa, cfg.k), cfg, opt_state,
        diagnostics=diag2,
    )
    if diagnostics is not None:
        diagnostics.append(diag2)
    return params
