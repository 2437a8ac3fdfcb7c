"""Recurrent forecaster: LSTM layers, a ReLU fully-connected stack with
optional batch normalization, and a linear output head, trained by plain
gradient descent with exact backpropagation through time.

Everything is float64 numpy so analytic gradients can be validated against
central finite differences.  The training loss is mean squared error on the
normalized scale (same minimizer as RMSE with a smooth gradient); reported
errors use :func:`rmse`.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .timeseries import FEATURE_ORDER, NormStats, SequenceDataset, WEATHER_CHANNELS

GATES = ("i", "f", "g", "o")  # input, forget, candidate, output
CHECKPOINT_MAGIC = b"CROSSGRID-MODEL-V1\n"


class ModelError(ValueError):
    """Bad configuration, shape mismatch, or training failure."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 7
    seq_len: int = 7
    lstm_sizes: tuple[int, ...] = (256,)
    fc_sizes: tuple[int, ...] = (128,)
    output_dim: int = 1
    batch_norm: bool = True
    init_std: float = 1.0
    init_mode: str = "normal"  # "normal": N(0, std^2); "fan-in": N(0, (std/sqrt(fan))^2)
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    max_epochs: int = 1000
    patience: int = 20
    batch_size: int = 80
    seed: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "lstm_sizes", tuple(int(s) for s in self.lstm_sizes))
        object.__setattr__(self, "fc_sizes", tuple(int(s) for s in self.fc_sizes))
        sizes = (self.input_dim, self.seq_len, self.output_dim, self.batch_size,
                 *self.lstm_sizes, *self.fc_sizes)
        if any(s < 1 for s in sizes):
            raise ModelError("all layer sizes, dims, and batch size must be >= 1")
        if not self.lstm_sizes:
            raise ModelError("need at least one LSTM layer")
        if not (self.lr_start >= self.lr_end > 0):
            raise ModelError("require lr_start >= lr_end > 0")
        if self.max_epochs > 1 and not 0 < self.patience < self.max_epochs:
            raise ModelError("require 0 < patience < max_epochs")
        if self.init_mode not in ("normal", "fan-in"):
            raise ModelError(f"unknown init_mode {self.init_mode!r}")
        if self.seed < 0:
            raise ModelError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim, "seq_len": self.seq_len,
            "lstm_sizes": list(self.lstm_sizes), "fc_sizes": list(self.fc_sizes),
            "output_dim": self.output_dim, "batch_norm": self.batch_norm,
            "init_std": self.init_std, "init_mode": self.init_mode,
            "lr_start": self.lr_start, "lr_end": self.lr_end,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "batch_size": self.batch_size, "seed": self.seed,
            "bn_momentum": self.bn_momentum, "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["lstm_sizes"] = tuple(data["lstm_sizes"])
        data["fc_sizes"] = tuple(data["fc_sizes"])
        return cls(**data)


@dataclass
class ForecastModel:
    """Parameter tensors plus batch-norm running statistics and data stats."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    stats: NormStats | None = None

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def clone(self) -> "ForecastModel":
        return ForecastModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.stats,
        )


@dataclass(frozen=True)
class TrainHistory:
    losses: tuple[float, ...]
    learning_rates: tuple[float, ...]
    stop_reason: str  # "early-stop" | "max-epochs"
    best_epoch: int  # 0-based index into losses
    best_loss: float

    @property
    def epoch_count(self) -> int:
        return len(self.losses)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_model(cfg: ModelConfig, stats: NormStats | None = None) -> ForecastModel:
    """Draw weights from the seeded generator; biases start at zero."""
    rng = np.random.default_rng(cfg.seed)

    def draw(shape):
        std = cfg.init_std
        if cfg.init_mode == "fan-in":
            std = cfg.init_std / np.sqrt(shape[0])
        return rng.normal(0.0, 1.0, size=shape) * std  # std=0 gives exact zeros

    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    in_dim = cfg.input_dim
    for l, h in enumerate(cfg.lstm_sizes):
        for g in GATES:
            params[f"lstm{l}.W_{g}"] = draw((in_dim, h))
        for g in GATES:
            params[f"lstm{l}.U_{g}"] = draw((h, h))
        for g in GATES:
            params[f"lstm{l}.b_{g}"] = np.zeros(h)
        in_dim = h
    for j, width in enumerate(cfg.fc_sizes):
        params[f"fc{j}.W"] = draw((in_dim, width))
        params[f"fc{j}.b"] = np.zeros(width)
        if cfg.batch_norm:
            params[f"fc{j}.bn.gamma"] = np.ones(width)
            params[f"fc{j}.bn.beta"] = np.zeros(width)
            buffers[f"fc{j}.bn.mean"] = np.zeros(width)
            buffers[f"fc{j}.bn.var"] = np.ones(width)
        in_dim = width
    params["out.W"] = draw((in_dim, cfg.output_dim))
    params["out.b"] = np.zeros(cfg.output_dim)
    return ForecastModel(cfg, params, buffers, stats)


def _fused(params, prefix: str, kind: str) -> np.ndarray:
    return np.concatenate([params[f"{prefix}.{kind}_{g}"] for g in GATES], axis=-1)


def forward(model: ForecastModel, batch: np.ndarray, training: bool = False):
    """Run the network; returns (predictions (B, T, 1), cache for backward).

    The call never mutates the model: in training mode the freshly computed
    batch-norm statistics ride along in the cache for the caller to fold
    into the running buffers.
    """
    cfg = model.config
    x = np.asarray(batch, dtype=float)
    if x.ndim != 3 or x.shape[1] != cfg.seq_len or x.shape[2] != cfg.input_dim:
        raise ModelError(
            f"expected batch of shape (B, {cfg.seq_len}, {cfg.input_dim}), got {x.shape}"
        )
    B, T, _ = x.shape
    cache: dict = {"training": training, "lstm": [], "fc": [], "batch_shape": (B, T)}

    layer_in = x
    for l, h in enumerate(cfg.lstm_sizes):
        W = _fused(model.params, f"lstm{l}", "W")
        U = _fused(model.params, f"lstm{l}", "U")
        b = _fused(model.params, f"lstm{l}", "b")
        hs = np.zeros((B, T, h))
        lc: dict = {k: np.zeros((B, T, h)) for k in ("i", "f", "g", "o", "c", "hc", "h_prev", "c_prev")}
        lc["x"] = layer_in
        h_t = np.zeros((B, h))
        c_t = np.zeros((B, h))
        for t in range(T):
            lc["h_prev"][:, t] = h_t
            lc["c_prev"][:, t] = c_t
            z = layer_in[:, t] @ W + h_t @ U + b
            i_t = _sigmoid(z[:, :h])
            f_t = _sigmoid(z[:, h : 2 * h])
            g_t = np.tanh(z[:, 2 * h : 3 * h])
            o_t = _sigmoid(z[:, 3 * h :])
            c_t = f_t * c_t + i_t * g_t
            hc_t = np.tanh(c_t)
            h_t = o_t * hc_t
            for key, val in (("i", i_t), ("f", f_t), ("g", g_t), ("o", o_t),
                             ("c", c_t), ("hc", hc_t)):
                lc[key][:, t] = val
            hs[:, t] = h_t
        cache["lstm"].append(lc)
        layer_in = hs

    a = layer_in.reshape(B * T, -1)  # fully-connected stack runs per time step
    for j in range(len(cfg.fc_sizes)):
        fcache: dict = {"a_in": a}
        z = a @ model.params[f"fc{j}.W"] + model.params[f"fc{j}.b"]
        fcache["z"] = z
        if cfg.batch_norm:
            gamma = model.params[f"fc{j}.bn.gamma"]
            beta = model.params[f"fc{j}.bn.beta"]
            if training:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mean = model.buffers[f"fc{j}.bn.mean"]
                var = model.buffers[f"fc{j}.bn.var"]
            inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
            xhat = (z - mean) * inv_std
            pre = gamma * xhat + beta
            fcache.update(mean=mean, var=var, inv_std=inv_std, xhat=xhat)
        else:
            pre = z
        a = np.maximum(pre, 0.0)
        fcache["relu_mask"] = pre > 0
        cache["fc"].append(fcache)

    cache["out_in"] = a
    preds = (a @ model.params["out.W"] + model.params["out.b"]).reshape(B, T, cfg.output_dim)
    cache["preds"] = preds
    return preds, cache


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    t = np.asarray(targets, dtype=float).reshape(preds.shape)
    return float(np.mean((preds - t) ** 2))


def backward_bptt(model: ForecastModel, cache: dict, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the mean-squared loss for every parameter tensor."""
    cfg = model.config
    B, T = cache["batch_shape"]
    preds = cache["preds"]
    t = np.asarray(targets, dtype=float).reshape(preds.shape)
    grads: dict[str, np.ndarray] = {}

    dpred = (2.0 / preds.size) * (preds - t)
    dy = dpred.reshape(B * T, cfg.output_dim)

    a = cache["out_in"]
    grads["out.W"] = a.T @ dy
    grads["out.b"] = dy.sum(axis=0)
    da = dy @ model.params["out.W"].T

    for j in reversed(range(len(cfg.fc_sizes))):
        fcache = cache["fc"][j]
        dpre = da * fcache["relu_mask"]
        if cfg.batch_norm:
            if not cache["training"]:
                raise ModelError("backward needs a cache from a training-mode forward")
            xhat, inv_std = fcache["xhat"], fcache["inv_std"]
            z, mean = fcache["z"], fcache["mean"]
            gamma = model.params[f"fc{j}.bn.gamma"]
            m = z.shape[0]
            grads[f"fc{j}.bn.gamma"] = (dpre * xhat).sum(axis=0)
            grads[f"fc{j}.bn.beta"] = dpre.sum(axis=0)
            dxhat = dpre * gamma
            dvar = (dxhat * (z - mean) * -0.5 * inv_std**3).sum(axis=0)
            dmean = (-dxhat * inv_std).sum(axis=0) + dvar * (-2.0 * (z - mean)).mean(axis=0)
            dz = dxhat * inv_std + dvar * 2.0 * (z - mean) / m + dmean / m
        else:
            dz = dpre
        a_in = fcache["a_in"]
        grads[f"fc{j}.W"] = a_in.T @ dz
        grads[f"fc{j}.b"] = dz.sum(axis=0)
        da = dz @ model.params[f"fc{j}.W"].T

    dh_out = da.reshape(B, T, -1)
    for l in reversed(range(len(cfg.lstm_sizes))):
        lc = cache["lstm"][l]
        h = cfg.lstm_sizes[l]
        W = _fused(model.params, f"lstm{l}", "W")
        U = _fused(model.params, f"lstm{l}", "U")
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros(4 * h)
        dx = np.zeros_like(lc["x"])
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t_ in reversed(range(T)):
            i_t, f_t, g_t, o_t = (lc[k][:, t_] for k in ("i", "f", "g", "o"))
            hc_t = lc["hc"][:, t_]
            dh = dh_out[:, t_] + dh_next
            do = dh * hc_t
            dc = dc_next + dh * o_t * (1.0 - hc_t**2)
            di = dc * g_t
            dg = dc * i_t
            df = dc * lc["c_prev"][:, t_]
            dc_next = dc * f_t
            dz = np.concatenate(
                [
                    di * i_t * (1.0 - i_t),
                    df * f_t * (1.0 - f_t),
                    dg * (1.0 - g_t**2),
                    do * o_t * (1.0 - o_t),
                ],
                axis=1,
            )
            dW += lc["x"][:, t_].T @ dz
            dU += lc["h_prev"][:, t_].T @ dz
            db += dz.sum(axis=0)
            dx[:, t_] = dz @ W.T
            dh_next = dz @ U.T
        for k, g in enumerate(GATES):
            grads[f"lstm{l}.W_{g}"] = dW[:, k * h : (k + 1) * h]
            grads[f"lstm{l}.U_{g}"] = dU[:, k * h : (k + 1) * h]
            grads[f"lstm{l}.b_{g}"] = db[k * h : (k + 1) * h]
        dh_out = dx

    return grads


def rmse(y, y_hat) -> float:
    """Root of the mean squared difference between two equal-length vectors."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ModelError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ModelError("rmse of empty vectors is undefined")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def learning_rate(cfg: ModelConfig, epoch: int) -> float:
    """Exponential decay hitting lr_start at epoch 0 and lr_end at the last epoch."""
    if epoch == 0 or cfg.max_epochs == 1:
        return cfg.lr_start
    if epoch == cfg.max_epochs - 1:
        return cfg.lr_end  # pinned so the endpoints are exact in floating point
    frac = epoch / (cfg.max_epochs - 1)
    return float(cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac)


class EarlyStopper:
    """Stop once the monitored loss has not improved for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.streak = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.streak = 0
            return False
        self.streak += 1
        return self.streak >= self.patience


def train(
    model: ForecastModel, dataset: SequenceDataset, cfg: ModelConfig | None = None
) -> tuple[ForecastModel, TrainHistory]:
    """Mini-batch gradient descent; returns the best-loss epoch's parameters."""
    cfg = cfg if cfg is not None else model.config
    n = len(dataset)
    if n == 0:
        raise ModelError("cannot train on an empty dataset")
    x = dataset.inputs
    y = dataset.targets
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    work = model.clone()
    stopper = EarlyStopper(cfg.patience)
    best = work.clone()
    losses: list[float] = []
    lrs: list[float] = []
    stop_reason = "max-epochs"

    for epoch in range(cfg.max_epochs):
        lr = learning_rate(cfg, epoch)
        lrs.append(lr)
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            preds, cache = forward(work, x[sel], training=True)
            batch_losses.append(mse_loss(preds, y[sel]))
            grads = backward_bptt(work, cache, y[sel])
            for key, g in grads.items():
                work.params[key] -= lr * g
            if cfg.batch_norm:
                mom = cfg.bn_momentum
                for j, fcache in enumerate(cache["fc"]):
                    if "mean" in fcache:
                        work.buffers[f"fc{j}.bn.mean"] = (
                            mom * work.buffers[f"fc{j}.bn.mean"] + (1 - mom) * fcache["mean"]
                        )
                        work.buffers[f"fc{j}.bn.var"] = (
                            mom * work.buffers[f"fc{j}.bn.var"] + (1 - mom) * fcache["var"]
                        )
        epoch_loss = float(np.mean(batch_losses))
        if not np.isfinite(epoch_loss):
            raise ModelError(f"non-finite training loss at epoch {epoch + 1}")
        losses.append(epoch_loss)
        improved = epoch_loss < stopper.best
        should_stop = stopper.update(epoch, epoch_loss)
        if improved:
            best = work.clone()
        if should_stop:
            stop_reason = "early-stop"
            break

    history = TrainHistory(
        losses=tuple(losses),
        learning_rates=tuple(lrs),
        stop_reason=stop_reason,
        best_epoch=stopper.best_epoch,
        best_loss=float(stopper.best),
    )
    return best, history


def evaluate_rmse(model: ForecastModel, dataset: SequenceDataset, batch_size: int = 512) -> float:
    """Inference-mode RMSE over a dataset, on the normalized scale."""
    if len(dataset) == 0:
        raise ModelError("cannot evaluate on an empty dataset")
    preds = []
    for lo in range(0, len(dataset), batch_size):
        p, _ = forward(model, dataset.inputs[lo : lo + batch_size], training=False)
        preds.append(p.reshape(p.shape[0], -1))
    return rmse(dataset.targets, np.concatenate(preds))


def predict_week(
    model: ForecastModel,
    last_week: np.ndarray,
    next_week_weather: np.ndarray,
    current_week_weather: np.ndarray,
) -> np.ndarray:
    """Forecast the next 7 daily consumption values (denormalized).

    ``last_week`` is the previous week's consumption; the weather arguments
    are (7, 3) arrays ordered air_temp, solar, wind.
    """
    if model.stats is None:
        raise ModelError("model carries no normalization statistics")
    last_week = np.asarray(last_week, dtype=float)
    nw = np.asarray(next_week_weather, dtype=float)
    cw = np.asarray(current_week_weather, dtype=float)
    T = model.config.seq_len
    if last_week.shape != (T,):
        raise ModelError(f"last_week must have shape ({T},), got {last_week.shape}")
    for name, arr in (("next_week_weather", nw), ("current_week_weather", cw)):
        if arr.shape != (T, len(WEATHER_CHANNELS)):
            raise ModelError(
                f"{name} must have shape ({T}, {len(WEATHER_CHANNELS)}), got {arr.shape}"
            )
    stats = model.stats
    cols = [stats.scale("consumption", last_week)]
    cols += [stats.scale(ch, cw[:, k]) for k, ch in enumerate(WEATHER_CHANNELS)]
    cols += [stats.scale(ch, nw[:, k]) for k, ch in enumerate(WEATHER_CHANNELS)]
    window = np.column_stack(cols)[None, :, :]
    preds, _ = forward(model, window, training=False)
    return np.asarray(stats.unscale("consumption", preds[0, :, 0]))


def save_checkpoint(model: ForecastModel, path) -> None:
    """Write a self-describing, byte-deterministic container."""
    manifest = []
    blobs = []
    for kind, table in (("param", model.params), ("buffer", model.buffers)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype=np.float64)
            manifest.append({"name": name, "kind": kind, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "format": "crossgrid-model-v1",
        "config": model.config.to_dict(),
        "stats": model.stats.to_dict() if model.stats is not None else None,
        "seed": model.config.seed,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ForecastModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a crossgrid model checkpoint")
        (header_len,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype=np.float64).reshape(shape)
            target = params if entry["kind"] == "param" else buffers
            target[entry["name"]] = data.copy()
    cfg = ModelConfig.from_dict(header["config"])
    stats = NormStats.from_dict(header["stats"]) if header["stats"] is not None else None
    return ForecastModel(cfg, params, buffers, stats)
