"""Serialization of training/integration state on top of the checkpoint
container. Adam moments ride along as optim.m.* / optim.v.* records; scalar
state lives in the config blob."""

from __future__ import annotations

import dataclasses

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .llmbridge import FrozenLM, IntegrationState
from .model import ModelConfig
from .numcore import AdamState, Tensor
from .training import TrainState

OPTIM_M = "optim.m."
OPTIM_V = "optim.v."


def _state_blob(step: int, seed: int, adam: AdamState, ema_lm, ema_cl) -> dict:
    return {
        "step": step,
        "seed": seed,
        "adam_t": adam.t,
        "adam_lr": adam.lr,
        "ema_lm": ema_lm,
        "ema_cl": ema_cl,
    }


def _pack_adam(tensors: dict[str, Tensor], adam: AdamState) -> None:
    for name, arr in adam.m.items():
        tensors[OPTIM_M + name] = Tensor(arr)
    for name, arr in adam.v.items():
        tensors[OPTIM_V + name] = Tensor(arr)


def _unpack_adam(tensors: dict[str, Tensor], blob: dict) -> tuple[dict[str, Tensor], AdamState]:
    adam = AdamState(lr=blob["adam_lr"], t=blob["adam_t"])
    params: dict[str, Tensor] = {}
    for name, t in tensors.items():
        if name.startswith(OPTIM_M):
            adam.m[name[len(OPTIM_M) :]] = t.data
        elif name.startswith(OPTIM_V):
            adam.v[name[len(OPTIM_V) :]] = t.data
        else:
            params[name] = t
    return params, adam


def save_train_state(path, state: TrainState, model_config: ModelConfig, extra: dict | None = None) -> None:
    tensors = dict(state.params)
    _pack_adam(tensors, state.adam)
    config = {
        "kind": "standalone",
        "model": dataclasses.asdict(model_config),
        "state": _state_blob(state.step, state.seed, state.adam, state.ema_lm, state.ema_cl),
    }
    if extra:
        config.update(extra)
    save_checkpoint(path, tensors, config, frozen=set())


def load_train_state(path) -> tuple[TrainState, ModelConfig, dict]:
    tensors, config, _frozen = load_checkpoint(path)
    if config.get("kind") != "standalone":
        raise CheckpointError(f"{path}: expected a standalone checkpoint, got {config.get('kind')!r}")
    blob = config["state"]
    params, adam = _unpack_adam(tensors, blob)
    for p in params.values():
        p.requires_grad = True
    state = TrainState(
        params=params,
        adam=adam,
        seed=blob["seed"],
        step=blob["step"],
        ema_lm=blob["ema_lm"],
        ema_cl=blob["ema_cl"],
    )
    return state, ModelConfig(**config["model"]), config


def save_frozen_lm(path, lm: FrozenLM) -> None:
    config = {
        "kind": "lm",
        "model": dataclasses.asdict(lm.config),
        "fingerprints": lm.fingerprints,
    }
    save_checkpoint(path, lm.params, config, frozen=set(lm.params))


def load_frozen_lm(path) -> FrozenLM:
    tensors, config, frozen = load_checkpoint(path)
    if config.get("kind") != "lm":
        raise CheckpointError(f"{path}: expected a frozen LM checkpoint, got {config.get('kind')!r}")
    if frozen != set(tensors):
        raise CheckpointError(f"{path}: LM checkpoint contains non-frozen tensors")
    lm = FrozenLM(tensors, ModelConfig(**config["model"]), dict(config["fingerprints"]))
    lm.verify_frozen()
    return lm


def save_integration_state(path, state: IntegrationState, extra: dict | None = None) -> None:
    tensors = dict(state.params)
    _pack_adam(tensors, state.adam)
    config = {
        "kind": "integration",
        "model": dataclasses.asdict(state.config),
        "state": _state_blob(state.step, state.seed, state.adam, None, None),
        "fingerprints": state.frozen_fingerprints,
    }
    if extra:
        config.update(extra)
    save_checkpoint(path, tensors, config, frozen=state.frozen)


def load_integration_state(path) -> IntegrationState:
    tensors, config, frozen = load_checkpoint(path)
    if config.get("kind") != "integration":
        raise CheckpointError(f"{path}: expected an integration checkpoint, got {config.get('kind')!r}")
    blob = config["state"]
    params, adam = _unpack_adam(tensors, blob)
    frozen = {n for n in frozen if not n.startswith(("optim.m.", "optim.v."))}
    for name, p in params.items():
        p.requires_grad = name not in frozen
    state = IntegrationState(
        params=params,
        config=ModelConfig(**config["model"]),
        adam=adam,
        seed=blob["seed"],
        step=blob["step"],
        frozen=frozen,
        frozen_fingerprints=dict(config["fingerprints"]),
    )
    state.verify_frozen()
    return state


def init_tensor_dump(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}
