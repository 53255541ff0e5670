"""Joint hyperparameter and feature-map training by marginal likelihood.

The loss is the negative exact marginal log likelihood on the training
split; the monitor is the negative Gaussian log predictive density on a
held-out tail of the windows.  Adam updates every parameter; training stops
on patience and restores the best-monitor parameters.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .gp import (
    GPModel,
    JitterConfig,
    LOG_2PI,
    RBFParams,
    condition,
    log_marginal_likelihood,
    mll_gradients,
    posterior_predict,
)


class TrainingError(RuntimeError):
    """Non-finite loss or parameters during optimization."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupted, or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 2000
    patience: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    validation_fraction: float = 0.1
    seed: int = 0
    jitter: JitterConfig = field(default_factory=JitterConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")
        if not 0 < self.patience <= self.max_epochs:
            raise ValueError("need 0 < patience <= max_epochs")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @staticmethod
    def zeros_like(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, t: int, cfg: TrainConfig
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        if g.shape != np.asarray(p).shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v)


class EarlyStopper:
    """Patience bookkeeping: stop after ``patience`` epochs without a new best."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = -1

    def update(self, epoch: int, loss: float) -> bool:
        """Record this epoch's monitor value; True means stop now."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainTrace:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def n_epochs(self) -> int:
        return len(self.train_losses)


def split_windows(n: int, validation_fraction: float) -> tuple[slice, slice]:
    """Time-ordered split: the final fraction of windows is the monitor set."""
    n_val = max(1, int(round(n * validation_fraction)))
    if n_val >= n:
        raise ValueError(f"cannot hold out {n_val} of {n} windows")
    return slice(0, n - n_val), slice(n - n_val, n)


def validation_nlpd(c, x_val: np.ndarray, y_val: np.ndarray) -> float:
    """Negative Gaussian log predictive density of the held-out targets."""
    pred = posterior_predict(c, x_val, include_noise=True)
    var = np.maximum(pred.variances, 1e-300)
    resid = y_val - pred.means
    return float(0.5 * np.sum(np.log(2.0 * np.pi * var) + resid * resid / var))


def train(model: GPModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig
          ) -> tuple[GPModel, TrainTrace]:
    """Minimize the negative MLL over all parameters; early-stop on NLPD.

    ``x`` are windows (n, n_inputs, window) or flat rows, time-ordered;
    the final ``validation_fraction`` of them is held out as the monitor
    split and never enters the conditioning set.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    tr, va = split_windows(y.shape[0], cfg.validation_fraction)
    x_tr, y_tr, x_va, y_va = x[tr], y[tr], x[va], y[va]

    params = model.parameters()
    state = AdamState.zeros_like(params)
    stopper = EarlyStopper(cfg.patience)
    trace = TrainTrace()
    best_params = {k: p.copy() for k, p in params.items()}
    record = model.extractor is not None

    for epoch in range(cfg.max_epochs):
        tic = time.perf_counter()
        c = condition(model, x_tr, y_tr, cfg.jitter, record=record)
        train_loss = -log_marginal_likelihood(c)
        val_loss = validation_nlpd(c, x_va, y_va)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}: "
                f"train={train_loss}, val={val_loss}"
            )
        trace.train_losses.append(train_loss)
        trace.val_losses.append(val_loss)
        improved = val_loss < stopper.best_loss
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_params = {k: p.copy() for k, p in params.items()}
        if stop:
            trace.stop_reason = "patience"
            trace.epoch_seconds.append(time.perf_counter() - tic)
            break
        grads = {k: -g for k, g in mll_gradients(c).items()}
        params, state = adam_step(params, grads, state, epoch + 1, cfg)
        for name, p in params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"non-finite parameter {name!r} at epoch {epoch}")
        model.set_parameters(params)
        trace.epoch_seconds.append(time.perf_counter() - tic)
    else:
        trace.stop_reason = "max_epochs"

    trace.best_epoch = stopper.best_epoch
    model.set_parameters(best_params)
    return model, trace


@dataclass
class GradientCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(model: GPModel, x: np.ndarray, y: np.ndarray,
                   step: float = 1e-5, tolerance: float = 1e-5,
                   jitter: JitterConfig = JitterConfig()) -> GradientCheckReport:
    """Central finite differences of the loss against the analytic gradient.

    Every scalar parameter is perturbed by +-``step``.  Relative error uses
    a small denominator floor so that parameters with (near-)zero gradient
    are judged on an absolute scale.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    params = model.parameters()

    def loss_at(p):
        model.set_parameters(p)
        return -log_marginal_likelihood(condition(model, x, y, jitter))

    c = condition(model, x, y, jitter, record=model.extractor is not None)
    analytic = {k: -g for k, g in mll_gradients(c).items()}

    per_param: dict[str, float] = {}
    worst, worst_name = 0.0, ""
    try:
        for name, value in params.items():
            a = np.atleast_1d(analytic[name]).ravel()
            flat = np.atleast_1d(value).ravel()
            errs = np.empty_like(flat)
            for i in range(flat.shape[0]):
                original = flat[i]
                perturbed = {k: v.copy() for k, v in params.items()}
                pflat = np.atleast_1d(perturbed[name]).ravel()
                pflat[i] = original + step
                perturbed[name] = pflat.reshape(np.shape(value))
                hi = loss_at(perturbed)
                pflat[i] = original - step
                perturbed[name] = pflat.reshape(np.shape(value))
                lo = loss_at(perturbed)
                fd = (hi - lo) / (2.0 * step)
                denom = max(abs(fd), abs(a[i]), 1e-3)
                errs[i] = abs(fd - a[i]) / denom
            per_param[name] = float(errs.max())
            if per_param[name] > worst:
                worst, worst_name = per_param[name], name
    finally:
        model.set_parameters(params)
    return GradientCheckReport(worst, worst_name, per_param, tolerance)


# ---------------------------------------------------------------------------
# Checkpointing

CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype=float).reshape(payload["shape"]).copy()


def model_to_payload(model: GPModel) -> dict:
    """JSON-safe description of a model: hyperparameters, extractor, graph."""
    from . import extractors as ex
    from .graphs import serialize_graph

    payload = {
        "log_length_scales": _encode_array(model.rbf.log_length_scales),
        "log_signal_variance": model.rbf.log_signal_variance,
        "log_noise_variance": model.log_noise_variance,
    }
    e = model.extractor
    if e is None:
        payload["variant"] = "rbf"
        return payload
    payload["params"] = {k: _encode_array(v) for k, v in e.params.items()}
    if isinstance(e, ex.MLPExtractor):
        payload["variant"] = "mlp"
        payload["spec"] = {
            "layer_widths": list(e.spec.layer_widths),
            "activation": e.spec.activation,
        }
    elif isinstance(e, ex.CNNExtractor):
        payload["variant"] = "cnn"
        payload["spec"] = {
            "in_channels": e.spec.in_channels,
            "window": e.spec.window,
            "conv_channels": list(e.spec.conv_channels),
            "kernel_widths": list(e.spec.kernel_widths),
            "pool_width": e.spec.pool_width,
            "dense_widths": list(e.spec.dense_widths),
        }
    elif isinstance(e, ex.GCNExtractor):
        payload["variant"] = "gcn"
        payload["spec"] = {
            "feature_widths": list(e.spec.feature_widths),
            "subsample_count": e.spec.subsample_count,
            "subsample_policy": e.spec.subsample_policy,
        }
        payload["operator"] = _encode_array(e.operator.matrix)
        payload["node_order"] = list(e.operator.node_order)
        payload["subsample"] = list(e.subsample)
    else:
        raise CheckpointError(f"cannot serialize extractor {type(e).__name__}")
    return payload


def model_from_payload(payload: dict) -> GPModel:
    from . import extractors as ex
    from .graphs import PropagationOperator

    rbf = RBFParams(
        _decode_array(payload["log_length_scales"]),
        payload["log_signal_variance"],
    )
    variant = payload["variant"]
    if variant == "rbf":
        return GPModel(rbf, payload["log_noise_variance"])
    params = ex.ExtractorParams(
        {k: _decode_array(v) for k, v in payload["params"].items()}
    )
    if variant == "mlp":
        spec = ex.MLPSpec(tuple(payload["spec"]["layer_widths"]),
                          payload["spec"]["activation"])
        extractor = ex.MLPExtractor(spec, params)
    elif variant == "cnn":
        s = payload["spec"]
        spec = ex.CNN1DSpec(
            in_channels=s["in_channels"], window=s["window"],
            conv_channels=tuple(s["conv_channels"]),
            kernel_widths=tuple(s["kernel_widths"]),
            pool_width=s["pool_width"],
            dense_widths=tuple(s["dense_widths"]),
        )
        extractor = ex.CNNExtractor(spec, params)
    elif variant == "gcn":
        s = payload["spec"]
        spec = ex.GCNSpec(
            feature_widths=tuple(s["feature_widths"]),
            subsample_count=s["subsample_count"],
            subsample_policy=s["subsample_policy"],
        )
        operator = PropagationOperator(
            _decode_array(payload["operator"]), tuple(payload["node_order"])
        )
        extractor = ex.GCNExtractor(spec, params, operator,
                                    tuple(payload["subsample"]))
    else:
        raise CheckpointError(f"unknown model variant {variant!r}")
    return GPModel(rbf, payload["log_noise_variance"], extractor)


def save_checkpoint(path, model: GPModel, cfg: TrainConfig,
                    extras: dict | None = None) -> None:
    """Write a versioned, checksummed JSON checkpoint.

    Arrays are stored as base64 little-endian float64, so reloading
    reproduces bitwise-identical predictions on the same platform.
    ``extras`` carries pipeline state (normalizers, graph, window layout).
    """
    body = {
        "version": CHECKPOINT_VERSION,
        "model": model_to_payload(model),
        "train_config": {
            "learning_rate": cfg.learning_rate,
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "adam_beta1": cfg.adam_beta1,
            "adam_beta2": cfg.adam_beta2,
            "adam_epsilon": cfg.adam_epsilon,
            "validation_fraction": cfg.validation_fraction,
            "seed": cfg.seed,
            "jitter": asdict(cfg.jitter),
        },
        "extras": extras or {},
    }
    blob = json.dumps(body, sort_keys=True)
    payload = {
        "checksum": hashlib.sha256(blob.encode()).hexdigest(),
        "body": body,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[GPModel, TrainConfig, dict]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint (bad JSON): {exc}") from exc
    if not isinstance(payload, dict) or "body" not in payload:
        raise CheckpointError("corrupted checkpoint (missing body)")
    body = payload["body"]
    blob = json.dumps(body, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()
    if digest != payload.get("checksum"):
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    if body.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {body.get('version')} != "
            f"supported {CHECKPOINT_VERSION}"
        )
    tc = body["train_config"]
    cfg = TrainConfig(
        learning_rate=tc["learning_rate"],
        max_epochs=tc["max_epochs"],
        patience=tc["patience"],
        adam_beta1=tc["adam_beta1"],
        adam_beta2=tc["adam_beta2"],
        adam_epsilon=tc["adam_epsilon"],
        validation_fraction=tc["validation_fraction"],
        seed=tc["seed"],
        jitter=JitterConfig(**tc["jitter"]),
    )
    model = model_from_payload(body["model"])
    return model, cfg, body.get("extras", {})
