"""JSON checkpoint formats for parameter stores and module bundles."""

from __future__ import annotations

import json

from .augmentor import AugmentorParams, Bounds
from .critic import CriticParams
from .data import atomic_write
from .diffcore import MlpSpec, ParamStore
from .errors import IoError, ParseError
from .estimator import EstimatorParams


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad checkpoint JSON in {path}: {exc}") from exc


def _dump_json(path: str, payload: dict) -> None:
    try:
        atomic_write(path, json.dumps(payload))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def save_estimator(params: EstimatorParams, path: str) -> None:
    _dump_json(
        path,
        {
            "kind": "estimator",
            "spec": params.spec.to_dict(),
            "output_scale": params.output_scale,
            "params": params.store.to_dict(),
        },
    )


def load_estimator(path: str) -> EstimatorParams:
    d = _load_json(path)
    return EstimatorParams(
        spec=MlpSpec.from_dict(d["spec"]),
        store=ParamStore.from_dict(d["params"]),
        output_scale=float(d.get("output_scale", 1000.0)),
    )


def save_augmentor(params: AugmentorParams, path: str) -> None:
    _dump_json(
        path,
        {
            "kind": "augmentor",
            "augmentor_kind": params.kind,
            "noise_dim": params.noise_dim,
            "bounds": params.bounds.to_dict(),
            "tie_symmetric": params.tie_symmetric,
            "ba_spec": params.ba_spec.to_dict(),
            "ba": params.ba.to_dict(),
            "bl_spec": params.bl_spec.to_dict(),
            "bl": params.bl.to_dict(),
            "rt_spec": params.rt_spec.to_dict(),
            "rt": params.rt.to_dict(),
        },
    )


def load_augmentor(path: str) -> AugmentorParams:
    d = _load_json(path)
    return AugmentorParams(
        kind=d["augmentor_kind"],
        noise_dim=int(d["noise_dim"]),
        bounds=Bounds.from_dict(d["bounds"]),
        ba_spec=MlpSpec.from_dict(d["ba_spec"]),
        ba=ParamStore.from_dict(d["ba"]),
        bl_spec=MlpSpec.from_dict(d["bl_spec"]),
        bl=ParamStore.from_dict(d["bl"]),
        rt_spec=MlpSpec.from_dict(d["rt_spec"]),
        rt=ParamStore.from_dict(d["rt"]),
        tie_symmetric=bool(d.get("tie_symmetric", True)),
    )


def save_critic(params: CriticParams, path: str) -> None:
    _dump_json(
        path,
        {
            "kind": "critic",
            "role": params.role,
            "spec": params.spec.to_dict(),
            "params": params.store.to_dict(),
        },
    )


def load_critic(path: str) -> CriticParams:
    d = _load_json(path)
    return CriticParams(
        role=d["role"],
        spec=MlpSpec.from_dict(d["spec"]),
        store=ParamStore.from_dict(d["params"]),
    )
