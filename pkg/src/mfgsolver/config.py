"""YAML run configuration: parsing, validation, and hashing.

The file mirrors the training configuration one-to-one; unknown keys anywhere
in the document are rejected so typos cannot silently fall back to defaults.
"""

import hashlib
import json
from dataclasses import asdict

import numpy as np
import yaml

from .langevin import LmcConfig
from .models import FlockingParams, params_class
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {"id", "params"}
_GRID_KEYS = {"horizon", "n_steps"}
_TRAIN_KEYS = {"k_end", "dtau", "beta_a", "beta_mu", "n_batch", "minibatch",
               "epochs", "learning_rates", "decay", "hidden"}
_EPOCH_KEYS = {"score", "critic", "actor"}
_LR_KEYS = {"actor", "critic", "score"}
_DECAY_KEYS = {"milestones", "actor", "critic", "score"}
_LMC_KEYS = {"n_steps", "step", "total"}
_TOP_KEYS = {"model", "grid", "train", "lmc", "seed", "diagnostics_every"}

_PARAM_KEYS = {
    "systemic_risk": {"a", "sigma", "q", "epsilon", "c", "init_mean", "init_var"},
    "optimal_execution": {"c_alpha", "c_x", "c_g", "gamma", "sigma", "init_mean", "init_var"},
    "flocking": {"diffusion", "control_weight", "alignment_weight", "beta_w"},
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {sorted(unknown)}")


def _model_params(model_id: str, raw: dict):
    if model_id not in _PARAM_KEYS:
        raise ConfigError(f"unknown model id: {model_id!r}")
    _check_keys(raw, _PARAM_KEYS[model_id], f"model.params ({model_id})")
    cls = params_class(model_id)
    if model_id == "flocking":
        kwargs = dict(raw)
        for key in ("diffusion", "control_weight", "alignment_weight"):
            if key in kwargs:
                val = kwargs[key]
                kwargs[key] = (float(val) * np.eye(3)) if np.isscalar(val) else np.asarray(val, dtype=float)
        return FlockingParams(**kwargs)
    return cls(**{k: float(v) for k, v in raw.items()})


def config_from_dict(doc: dict) -> TrainConfig:
    _check_keys(doc, _TOP_KEYS, "top level")
    for key in ("model", "grid", "train"):
        if key not in doc:
            raise ConfigError(f"missing required section '{key}'")
    _check_keys(doc["model"], _MODEL_KEYS, "model")
    _check_keys(doc["grid"], _GRID_KEYS, "grid")
    _check_keys(doc["train"], _TRAIN_KEYS, "train")
    train = doc["train"]
    epochs = train.get("epochs", {})
    lrs = train.get("learning_rates", {})
    decay = train.get("decay", {})
    _check_keys(epochs, _EPOCH_KEYS, "train.epochs")
    _check_keys(lrs, _LR_KEYS, "train.learning_rates")
    _check_keys(decay, _DECAY_KEYS, "train.decay")
    lmc_raw = doc.get("lmc", {})
    _check_keys(lmc_raw, _LMC_KEYS, "lmc")

    model_id = doc["model"]["id"]
    params = _model_params(model_id, doc["model"].get("params", {}))
    defaults = {}

    def put(name, value):
        if value is not None:
            defaults[name] = value

    put("horizon", doc["grid"].get("horizon"))
    put("n_steps", doc["grid"].get("n_steps"))
    for key in ("k_end", "dtau", "beta_a", "beta_mu", "n_batch", "minibatch", "hidden"):
        put(key, train.get(key))
    put("n_score_epochs", epochs.get("score"))
    put("n_critic_epochs", epochs.get("critic"))
    put("n_actor_epochs", epochs.get("actor"))
    put("lr_actor", lrs.get("actor"))
    put("lr_critic", lrs.get("critic"))
    put("lr_score", lrs.get("score"))
    put("gamma_actor", decay.get("actor"))
    put("gamma_critic", decay.get("critic"))
    put("gamma_score", decay.get("score"))
    if "milestones" in decay:
        put("milestones", tuple(int(m) for m in decay["milestones"]))
    if lmc_raw:
        lmc_defaults = LmcConfig()
        defaults["lmc"] = LmcConfig(
            n_steps=int(lmc_raw.get("n_steps", lmc_defaults.n_steps)),
            step=float(lmc_raw.get("step", lmc_defaults.step)),
            total=float(lmc_raw.get("total", lmc_defaults.total)),
        )
    put("seed", doc.get("seed"))
    put("diagnostics_every", doc.get("diagnostics_every"))
    try:
        return TrainConfig(model_id=model_id, model_params=params, **defaults)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    return config_from_dict(doc)


def config_snapshot(cfg: TrainConfig) -> dict:
    """JSON-serializable dump of the effective configuration."""
    doc = asdict(cfg)
    doc["model_params"] = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v)
        for k, v in asdict(cfg.model_params).items()
    }
    doc["milestones"] = list(cfg.milestones)
    doc["lmc"] = asdict(cfg.lmc)
    return doc


def config_from_snapshot(doc: dict) -> TrainConfig:
    """Inverse of :func:`config_snapshot`; manifests reconstruct their run."""
    doc = dict(doc)
    params_cls = params_class(doc["model_id"])
    raw_params = doc.pop("model_params")
    if doc["model_id"] == "flocking":
        raw_params = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v)
                      for k, v in raw_params.items()}
    doc["model_params"] = params_cls(**raw_params)
    doc["milestones"] = tuple(doc["milestones"])
    doc["lmc"] = LmcConfig(**doc["lmc"])
    return TrainConfig(**doc)


def config_hash(cfg: TrainConfig) -> str:
    canon = json.dumps(config_snapshot(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
