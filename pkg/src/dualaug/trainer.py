"""Training schedule: warm-up, augmentor updates, and meta optimization.

Per batch the step runs three isolated phases — critic updates, augmentor
updates, then one meta round on the estimator — each touching only its own
parameters. Generator-side losses (similarity, adversarial, estimator
feedback) are computed on meter-scaled poses so the three terms mix at
comparable magnitudes; estimator losses and all reported metrics stay in
millimeters.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .augmentor import (
    AugmentorParams,
    Bounds,
    DEFAULT_PAIRS,
    PoseStates,
    augment_batch,
    draw_noise,
    new_augmentor,
    strong_gen_loss,
    weak_gen_loss,
)
from .camera import Camera, normalize_keypoints, project_array
from .checkpoints import save_augmentor, save_critic, save_estimator
from .critic import (
    CriticParams,
    generator_adv_loss,
    new_critic,
    strong_critic_loss,
    weak_critic_loss,
)
from .data import Dataset, DomainSpec, atomic_write, generate_dataset
from .diffcore import OptimizerState, optimizer_step
from .diffcore import tape as T
from .diffcore.nets import param_gradient
from .errors import IoError
from .estimator import (
    EstimatorParams,
    dg_objective_eval,
    estimate_batch,
    mse_loss,
    new_estimator,
    root_relative,
    supervised_loss,
)
from .meta import MetaConfig, generate_pairs, meta_round
from .metrics import auc, mpjpe, pa_mpjpe, pck
from .skeleton import Skeleton, default_skeleton

POSE_SCALE = 1e-3  # mm -> m for generator/critic-side losses


@dataclass(frozen=True)
class TrainConfig:
    """Every schedule hyperparameter plus the design-decision defaults."""

    alpha1: float = 0.50
    alpha2: float = 0.35
    beta1: float = 4.0
    beta2: float = 4.0
    gen_lr: float = 1e-4
    disc_lr: float = 2e-4
    lr1: float = 1e-4
    lr2: float = 5e-4
    gamma: float = 1.0
    k: int = 1
    meta_order: str = "first"
    batch_size: int = 256
    epochs: int = 30
    warmup_epochs: int = 2
    feedback_weight: float = 0.1
    n_critic: int = 1
    seed: int = 0
    noise_dim: int = 16
    penalty_squared: bool = True
    tie_symmetric: bool = True
    weak_max_angle_rad: float = 0.25
    weak_max_log_scale: float = 0.15
    weak_max_translation_mm: float = 300.0
    weak_max_rotation_rad: float = 0.3
    strong_max_angle_rad: float = 0.8
    strong_max_log_scale: float = 0.4
    strong_max_translation_mm: float = 1000.0
    strong_max_rotation_rad: float = math.pi
    # ablation flags (all-on is the full method)
    diffgen: bool = True
    diffdis: bool = True
    metaopt: bool = True
    weak_only: bool = False
    strong_only: bool = False
    # skips critic/augmentor updates entirely (source-only style baselines)
    train_augmentors: bool = True

    def meta(self) -> MetaConfig:
        return MetaConfig(
            lr1=self.lr1, lr2=self.lr2, gamma=self.gamma, k=self.k, order=self.meta_order
        )

    def weak_bounds(self) -> Bounds:
        return Bounds(
            self.weak_max_angle_rad,
            self.weak_max_log_scale,
            self.weak_max_translation_mm,
            self.weak_max_rotation_rad,
        )

    def strong_bounds(self) -> Bounds:
        return Bounds(
            self.strong_max_angle_rad,
            self.strong_max_log_scale,
            self.strong_max_translation_mm,
            self.strong_max_rotation_rad,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d)


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: batch 256, 30 epochs."""
    return replace(TrainConfig(), **overrides)


def paper_config(**overrides) -> TrainConfig:
    """Paper-faithful schedule constants: batch 1024, 60 epochs."""
    return replace(TrainConfig(batch_size=1024, epochs=60), **overrides)


ABLATION_VARIANTS: dict[str, dict] = {
    "full": {},
    "no_diffgen": {"diffgen": False},
    "no_diffdis": {"diffdis": False},
    "no_metaopt": {"metaopt": False},
    "weak_only": {"weak_only": True},
    "strong_only": {"strong_only": True},
    "source_only": {"metaopt": False, "weak_only": True, "train_augmentors": False},
}


def apply_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return replace(cfg, **ABLATION_VARIANTS[variant])


@dataclass
class TrainerState:
    cfg: TrainConfig
    skeleton: Skeleton
    camera: Camera
    estimator: EstimatorParams
    est_opt: OptimizerState
    weak_aug: AugmentorParams
    weak_opts: dict[str, OptimizerState]
    strong_aug: AugmentorParams
    strong_opts: dict[str, OptimizerState]
    weak_critic: CriticParams
    weak_critic_opt: OptimizerState
    strong_critic: CriticParams
    strong_critic_opt: OptimizerState
    rngs: dict[str, np.random.Generator]
    step: int = 0
    log_rows: list = field(default_factory=list)

    def param_snapshot(self) -> dict[str, np.ndarray]:
        """Copies of every parameter vector, for isolation checks."""
        return {
            "estimator": self.estimator.store.values.copy(),
            "weak_ba": self.weak_aug.ba.values.copy(),
            "weak_bl": self.weak_aug.bl.values.copy(),
            "weak_rt": self.weak_aug.rt.values.copy(),
            "strong_ba": self.strong_aug.ba.values.copy(),
            "strong_bl": self.strong_aug.bl.values.copy(),
            "strong_rt": self.strong_aug.rt.values.copy(),
            "weak_critic": self.weak_critic.store.values.copy(),
            "strong_critic": self.strong_critic.store.values.copy(),
        }


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def init_trainer(
    cfg: TrainConfig,
    skeleton: Skeleton | None = None,
    camera: Camera | None = None,
) -> TrainerState:
    skeleton = skeleton if skeleton is not None else default_skeleton()
    camera = camera if camera is not None else Camera()
    estimator = new_estimator(_rng(cfg.seed, 0), skeleton.joint_count)
    weak = new_augmentor(
        "weak", skeleton, _rng(cfg.seed, 1), noise_dim=cfg.noise_dim,
        bounds=cfg.weak_bounds(), tie_symmetric=cfg.tie_symmetric,
    )
    strong = new_augmentor(
        "strong", skeleton, _rng(cfg.seed, 2), noise_dim=cfg.noise_dim,
        bounds=cfg.strong_bounds(), tie_symmetric=cfg.tie_symmetric,
    )
    weak_critic = new_critic("weak", _rng(cfg.seed, 3), skeleton.joint_count)
    strong_critic = new_critic("strong", _rng(cfg.seed, 4), skeleton.joint_count)
    rngs = {
        "noise_weak": _rng(cfg.seed, 5),
        "noise_strong": _rng(cfg.seed, 6),
        "eps_weak": _rng(cfg.seed, 7),
        "eps_strong": _rng(cfg.seed, 8),
        "shuffle": _rng(cfg.seed, 9),
        "dg": _rng(cfg.seed, 10),
        "meta_weak": _rng(cfg.seed, 11),
        "meta_strong": _rng(cfg.seed, 12),
    }
    return TrainerState(
        cfg=cfg,
        skeleton=skeleton,
        camera=camera,
        estimator=estimator,
        est_opt=OptimizerState.adamw(estimator.store.values.size, cfg.lr2),
        weak_aug=weak,
        weak_opts={
            n: OptimizerState.adam(s.values.size, cfg.gen_lr)
            for n, s in weak.stores().items()
        },
        strong_aug=strong,
        strong_opts={
            n: OptimizerState.adam(s.values.size, cfg.gen_lr)
            for n, s in strong.stores().items()
        },
        weak_critic=weak_critic,
        weak_critic_opt=OptimizerState.adam(weak_critic.store.values.size, cfg.disc_lr),
        strong_critic=strong_critic,
        strong_critic_opt=OptimizerState.adam(
            strong_critic.store.values.size, cfg.disc_lr
        ),
        rngs=rngs,
    )


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _scaled(states: PoseStates) -> PoseStates:
    return PoseStates(
        T.mul(states.or_state, POSE_SCALE),
        T.mul(states.ba_state, POSE_SCALE),
        T.mul(states.bl_state, POSE_SCALE),
        T.mul(states.rt_state, POSE_SCALE),
    )


def _supervised_step(state: TrainerState, x, y3d) -> float:
    """One plain supervised estimator update; returns the loss value."""
    tape = T.Tape()
    loss = supervised_loss(state.estimator, x, y3d, tape)
    grads = param_gradient(loss, state.estimator.store, tape)
    optimizer_step(state.est_opt, state.estimator.store, grads)
    return float(T.raw(loss))


def warmup(estimator: EstimatorParams, source: Dataset, cfg: TrainConfig,
           opt_state: OptimizerState | None = None,
           log_rows: list | None = None) -> EstimatorParams:
    """warmup_epochs of plain supervised training on the source domain."""
    if opt_state is None:
        opt_state = OptimizerState.adamw(estimator.store.values.size, cfg.lr2)
    rng = _rng(cfg.seed, 13)
    x_all = normalize_keypoints(source.keypoints2d, source.camera)
    y_all = source.joints3d
    for epoch in range(cfg.warmup_epochs):
        for idx in _epoch_batches(len(source), cfg.batch_size, rng):
            tape = T.Tape()
            loss = supervised_loss(estimator, x_all[idx], y_all[idx], tape)
            grads = param_gradient(loss, estimator.store, tape)
            optimizer_step(opt_state, estimator.store, grads)
            if log_rows is not None:
                log_rows.append(
                    {"kind": "warmup", "epoch": epoch, "loss": float(T.raw(loss))}
                )
    return estimator


def _critic_phase(state: TrainerState, or_m, wa_m, sa_m) -> tuple[float, float]:
    cfg = state.cfg
    wd_val = sd_val = float("nan")
    for _ in range(cfg.n_critic):
        if not cfg.strong_only:
            tape = T.Tape()
            wd = weak_critic_loss(
                or_m, wa_m, state.weak_critic, cfg.beta1,
                state.rngs["eps_weak"], tape, squared=cfg.penalty_squared,
            )
            grads = param_gradient(wd, state.weak_critic.store, tape)
            optimizer_step(state.weak_critic_opt, state.weak_critic.store, grads)
            wd_val = float(T.raw(wd))
        if not cfg.weak_only:
            # Chained discrimination: the strong critic's real side is the
            # weak-augmented batch; without diffdis (or without a weak
            # augmentor) it falls back to the source batch.
            real_side = wa_m if (cfg.diffdis and not cfg.strong_only) else or_m
            tape = T.Tape()
            sd = strong_critic_loss(
                real_side, sa_m, state.strong_critic, cfg.beta2,
                state.rngs["eps_strong"], tape, squared=cfg.penalty_squared,
            )
            grads = param_gradient(sd, state.strong_critic.store, tape)
            optimizer_step(state.strong_critic_opt, state.strong_critic.store, grads)
            sd_val = float(T.raw(sd))
    return wd_val, sd_val


def _feedback_term(state: TrainerState, rt_state):
    """-feedback_weight * L_MSE(P(R(rt)), rt) on meter-scaled poses.

    The projection runs on detached values (the camera sits outside all
    gradient paths); gradients reach the augmentor through the target side.
    """
    cfg = state.cfg
    rt_raw = T.raw(rt_state)
    x = normalize_keypoints(project_array(rt_raw, state.camera), state.camera)
    pred_m = T.mul(estimate_batch(x, state.estimator), POSE_SCALE)
    target_m = T.mul(root_relative(rt_state), POSE_SCALE)
    fb = mse_loss(pred_m, target_m)
    return T.mul(fb, -cfg.feedback_weight)


def _generator_phase(
    state: TrainerState, aug: AugmentorParams, opts, states: PoseStates,
    critic: CriticParams, gen_loss_fn, alpha: float,
) -> float:
    cfg = state.cfg
    laplacian = state.skeleton.laplacian
    states_m = _scaled(states)
    loss = None
    if cfg.diffgen:
        loss = gen_loss_fn(states_m, DEFAULT_PAIRS, laplacian, alpha)
    adv = generator_adv_loss(states_m.rt_state, critic)
    loss = adv if loss is None else T.add(loss, adv)
    if cfg.feedback_weight > 0.0:
        loss = T.add(loss, _feedback_term(state, states.rt_state))
    tape = states.rt_state.tape
    value = float(T.raw(loss))
    for name, store in aug.stores().items():
        grads = param_gradient(loss, store, tape)
        optimizer_step(opts[name], store, grads)
    return value


def _estimator_phase(state: TrainerState, joints3d, keypoints2d) -> dict[str, float]:
    cfg = state.cfg
    diag: dict[str, float] = {}
    if cfg.metaopt:
        first = state.strong_aug if cfg.strong_only else state.weak_aug
        second = None if (cfg.weak_only or cfg.strong_only) else state.strong_aug
        rng_first = state.rngs["meta_strong" if cfg.strong_only else "meta_weak"]
        halves: list[dict] = []
        meta_round(
            state.estimator, (joints3d, keypoints2d), first, second,
            state.camera, cfg.meta(), state.skeleton, rng_first,
            opt_state=state.est_opt, rng_second=state.rngs["meta_strong"],
            diagnostics=halves,
        )
        for i, h in enumerate(halves, start=1):
            diag[f"meta{i}_train"] = h["train"]
            diag[f"meta{i}_test"] = h["test"]
    else:
        x_src = normalize_keypoints(keypoints2d, state.camera)
        diag["meta1_train"] = _supervised_step(state, x_src, joints3d)
        aug = state.strong_aug if cfg.strong_only else state.weak_aug
        rng = state.rngs["meta_strong" if cfg.strong_only else "meta_weak"]
        x_wa, y_wa = generate_pairs(
            joints3d, aug, state.camera, state.skeleton, rng
        )
        diag["meta2_train"] = _supervised_step(state, x_wa, y_wa)
    return diag


def train_step(state: TrainerState, source_batch) -> TrainerState:
    """One batch: critic updates, augmentor updates, one meta round."""
    cfg = state.cfg
    joints3d, keypoints2d = source_batch
    row = {"kind": "step", "epoch": None, "step": state.step}

    if cfg.train_augmentors:
        noise_w = draw_noise(state.rngs["noise_weak"], joints3d.shape[0], cfg.noise_dim)
        noise_s = draw_noise(state.rngs["noise_strong"], joints3d.shape[0], cfg.noise_dim)
        tape_w = T.Tape()
        tape_s = T.Tape()
        states_w = (
            None
            if cfg.strong_only
            else augment_batch(joints3d, noise_w, state.weak_aug, state.skeleton, tape_w)
        )
        states_s = (
            None
            if cfg.weak_only
            else augment_batch(joints3d, noise_s, state.strong_aug, state.skeleton, tape_s)
        )

        or_m = joints3d * POSE_SCALE
        wa_m = None if states_w is None else T.raw(states_w.rt_state) * POSE_SCALE
        sa_m = None if states_s is None else T.raw(states_s.rt_state) * POSE_SCALE
        wd_val, sd_val = _critic_phase(state, or_m, wa_m, sa_m)
        row["weak_critic"] = wd_val
        row["strong_critic"] = sd_val

        if states_w is not None:
            row["weak_gen"] = _generator_phase(
                state, state.weak_aug, state.weak_opts, states_w,
                state.weak_critic, weak_gen_loss, cfg.alpha1,
            )
        if states_s is not None:
            row["strong_gen"] = _generator_phase(
                state, state.strong_aug, state.strong_opts, states_s,
                state.strong_critic, strong_gen_loss, cfg.alpha2,
            )

    row.update(_estimator_phase(state, joints3d, keypoints2d))
    state.log_rows.append(row)
    state.step += 1
    return state


def evaluate(estimator: EstimatorParams, dataset: Dataset) -> dict:
    """Metric row for one dataset; 3D targets are root-relativized."""
    x = normalize_keypoints(dataset.keypoints2d, dataset.camera)
    preds = T.raw(estimate_batch(x, estimator))
    gts = dataset.joints3d - dataset.joints3d[:, 0:1, :]
    per_pose_mpjpe = [mpjpe(p, g) for p, g in zip(preds, gts)]
    per_pose_pa = [pa_mpjpe(p, g) for p, g in zip(preds, gts)]
    return {
        "domain": dataset.domain_name,
        "mpjpe": float(np.mean(per_pose_mpjpe)),
        "pa_mpjpe": float(np.mean(per_pose_pa)),
        "pck150": pck(list(preds), list(gts)),
        "auc": auc(list(preds), list(gts)),
        "n": len(dataset),
    }


LOG_COLUMNS = [
    "kind", "epoch", "step", "loss", "weak_critic", "strong_critic",
    "weak_gen", "strong_gen", "meta1_train", "meta1_test", "meta2_train",
    "meta2_test", "dg_source", "dg_weak", "dg_strong",
]


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def run_training(
    cfg: TrainConfig,
    source: Dataset,
    out_dir: str | None = None,
    save_epochs: bool = False,
    skeleton: Skeleton | None = None,
) -> TrainerState:
    """Warm-up plus the full epoch schedule on one source dataset."""
    state = init_trainer(cfg, skeleton=skeleton, camera=source.camera)
    warmup(state.estimator, source, cfg, opt_state=state.est_opt,
           log_rows=state.log_rows)

    x_all = source.keypoints2d
    y_all = source.joints3d
    for epoch in range(cfg.epochs):
        for idx in _epoch_batches(len(source), cfg.batch_size, state.rngs["shuffle"]):
            train_step(state, (y_all[idx], x_all[idx]))
            state.log_rows[-1]["epoch"] = epoch
        dg_idx = state.rngs["dg"].choice(len(source), size=min(256, len(source)), replace=False)
        dg_batch = (y_all[dg_idx], x_all[dg_idx])
        src_term, weak_term = dg_objective_eval(
            dg_batch, state.weak_aug, state.estimator, state.camera,
            state.skeleton, state.rngs["dg"],
        )
        _, strong_term = dg_objective_eval(
            dg_batch, state.strong_aug, state.estimator, state.camera,
            state.skeleton, state.rngs["dg"],
        )
        state.log_rows.append(
            {
                "kind": "epoch", "epoch": epoch, "step": state.step,
                "dg_source": src_term, "dg_weak": weak_term, "dg_strong": strong_term,
            }
        )
        if out_dir and save_epochs:
            save_estimator(
                state.estimator, os.path.join(out_dir, f"estimator_epoch{epoch}.json")
            )

    if out_dir:
        write_run_outputs(state, out_dir)
    return state


def write_run_outputs(state: TrainerState, out_dir: str) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    atomic_write(
        os.path.join(out_dir, "losses.csv"), rows_to_csv(state.log_rows, LOG_COLUMNS)
    )
    save_estimator(state.estimator, os.path.join(out_dir, "estimator_final.json"))
    save_augmentor(state.weak_aug, os.path.join(out_dir, "augmentor_weak.json"))
    save_augmentor(state.strong_aug, os.path.join(out_dir, "augmentor_strong.json"))
    save_critic(state.weak_critic, os.path.join(out_dir, "critic_weak.json"))
    save_critic(state.strong_critic, os.path.join(out_dir, "critic_strong.json"))


EVAL_COLUMNS = ["domain", "mpjpe", "pa_mpjpe", "pck150", "auc", "n"]


def run_experiment(
    cfg: TrainConfig,
    specs: list[DomainSpec],
    out_dir: str,
    seeds: tuple[int, ...] = (0, 1, 2),
    save_epochs: bool = False,
) -> dict:
    """Train per seed on the source spec and evaluate on every target spec.

    Writes per-seed run outputs plus an aggregate eval table (mean and std
    per domain over seeds) and returns the report dict.
    """
    camera = Camera()
    datasets = [generate_dataset(spec, camera) for spec in specs]
    source = next(d for d in datasets if d.domain_name == "source")
    targets = [d for d in datasets if d.domain_name != "source"]

    per_seed: dict[int, list[dict]] = {}
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed)
        run_dir = os.path.join(out_dir, f"seed{seed}")
        state = run_training(seed_cfg, source, out_dir=run_dir, save_epochs=save_epochs)
        rows = [evaluate(state.estimator, ds) for ds in targets + [source]]
        atomic_write(
            os.path.join(run_dir, "eval.csv"),
            rows_to_csv(rows, EVAL_COLUMNS),
        )
        per_seed[seed] = rows

    aggregate = []
    for i, ds in enumerate(targets + [source]):
        values = {m: [per_seed[s][i][m] for s in seeds] for m in ("mpjpe", "pa_mpjpe", "pck150", "auc")}
        row = {"domain": ds.domain_name, "n": len(ds)}
        for m, vals in values.items():
            row[f"{m}_mean"] = float(np.mean(vals))
            row[f"{m}_std"] = float(np.std(vals))
        aggregate.append(row)
    agg_cols = ["domain", "n"] + [
        f"{m}_{s}" for m in ("mpjpe", "pa_mpjpe", "pck150", "auc") for s in ("mean", "std")
    ]
    atomic_write(os.path.join(out_dir, "eval.csv"), rows_to_csv(aggregate, agg_cols))
    return {"per_seed": per_seed, "aggregate": aggregate, "seeds": list(seeds)}
