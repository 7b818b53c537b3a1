"""
Contextual anomaly detection with a windowed dense autoencoder.

A window of ``W`` samples over all ``S`` sensors is flattened row-major
(index ``w * S + s``), squeezed through a bottleneck and reconstructed. The
network is trained with a denoising objective: whole input channels are
randomly replaced by the reading of a sensor that emits nothing, while the
target stays clean, so the reconstruction of a channel leans on the other
sensors. Reconstruction error is reported as a percentage of each sensor's
training range.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NormStats, TimeSeriesFrame, fit_normalization, window_array
from .errors import DivergenceError, EmptyInputError, FormatError, InvalidArgumentError, SchemaError, ShapeError
from .verdicts import AnomalyVerdict, Kind, Level, runs

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
# normalized inputs are clipped so a far out-of-range reading cannot saturate every unit
INPUT_CLIP = (-1.0, 2.0)


@dataclass(eq=False)
class DenseNet:
    """Stack of affine layers, tanh on hidden layers and identity on the output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix and at least one layer")
        for k, (Wm, b) in enumerate(zip(self.weights, self.biases)):
            if Wm.ndim != 2 or b.shape != (Wm.shape[1],):
                raise ShapeError(f"layer {k}: weight {Wm.shape} and bias {b.shape} do not match")
            if k and self.weights[k - 1].shape[1] != Wm.shape[0]:
                raise ShapeError(f"layer {k} expects {Wm.shape[0]} inputs, previous layer gives {self.weights[k - 1].shape[1]}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [Wm.shape[1] for Wm in self.weights]

    @property
    def n_params(self) -> int:
        return sum(Wm.size + b.size for Wm, b in zip(self.weights, self.biases))


def init_network(layer_dims: Sequence[int], rng: np.random.Generator) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases)


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Reconstruction of ``x`` (one vector or a batch of rows) and every layer's activation.

    ``activations[0]`` is the input and ``activations[-1]`` the output.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.layer_dims[0]:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {net.layer_dims[0]}")
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for k, (Wm, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ Wm + b
        h = z if k == last else np.tanh(z)
        acts.append(h)
    return h, acts


def backward(net: DenseNet, target: np.ndarray, activations: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the mean squared reconstruction error with respect to every weight and bias.

    For a batch the loss is also averaged over rows.
    """
    if len(activations) != len(net.weights) + 1:
        raise ShapeError(f"{len(activations)} activations for a {len(net.weights)}-layer network")
    for k, a in enumerate(activations):
        if a.shape[-1] != net.layer_dims[k]:
            raise ShapeError(f"activation {k} has width {a.shape[-1]}, expected {net.layer_dims[k]}")
    target = np.asarray(target, dtype=float)
    out = activations[-1]
    if target.shape != out.shape:
        raise ShapeError(f"target shape {target.shape} != output shape {out.shape}")
    g = 2.0 * (out - target) / out.size
    single = out.ndim == 1
    gW: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for k in range(len(net.weights) - 1, -1, -1):
        a_in = activations[k]
        if single:
            gW[k] = np.outer(a_in, g)
            gb[k] = g.copy()
        else:
            gW[k] = a_in.T @ g
            gb[k] = g.sum(axis=0)
        if k:
            g = (g @ net.weights[k].T) * (1.0 - activations[k] ** 2)
    return gW, gb


def mse(net: DenseNet, x_in: np.ndarray, target: np.ndarray) -> float:
    out, _ = forward(net, x_in)
    return float(np.mean((out - target) ** 2))


@dataclass(eq=False)
class AutoencoderModel(DenseNet):
    norm_stats: NormStats = None  # type: ignore[assignment]
    window_len: int = 32
    input_dropout_rate: float = 0.0
    activation: str = "tanh-hidden/identity-output"
    final_loss: float = float("nan")
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        super().__post_init__()
        if self.norm_stats is None:
            raise ShapeError("autoencoder needs normalization statistics")
        D = self.window_len * len(self.norm_stats)
        dims = self.layer_dims
        if dims[0] != D or dims[-1] != D:
            raise ShapeError(f"input/output dims {dims[0]}/{dims[-1]} must equal W*S = {D}")
        if len(dims) < 3 or min(dims[1:-1]) >= D:
            raise ShapeError(f"latent width must be smaller than W*S = {D}")
        if not 0.0 <= self.input_dropout_rate < 1.0:
            raise InvalidArgumentError("input_dropout_rate must lie in [0, 1)")

    @property
    def S(self) -> int:
        return len(self.norm_stats)

    @property
    def latent_dim(self) -> int:
        return min(self.layer_dims[1:-1])

    @property
    def dropout_fill(self) -> np.ndarray:
        """Normalized value of a raw reading of zero, per sensor."""
        return np.clip(-self.norm_stats.train_min / self.norm_stats.range, *INPUT_CLIP)


@dataclass(frozen=True)
class TrainConfig:
    W: int = 32
    L: int = 8
    hidden_dims: tuple[int, ...] = (64,)
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    final_lr_fraction: float = 0.05  # cosine decay of the step size down to this fraction
    input_dropout_rate: float = 0.15
    input_shift_rate: float = 0.15
    input_shift_scale: float = 0.3
    seed: int = 0
    stride: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def layer_dims(self, S: int) -> list[int]:
        D = self.W * S
        return [D, *self.hidden_dims, self.L, *reversed(self.hidden_dims), D]


def _fit_stats(frames: Sequence[TimeSeriesFrame]) -> NormStats:
    stats = [fit_normalization(f) for f in frames]
    return NormStats(
        np.min([s.train_min for s in stats], axis=0),
        np.max([s.train_max for s in stats], axis=0),
    )


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1: float, b2: float, eps: float):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _corrupt(
    batch: np.ndarray,
    W: int,
    S: int,
    config: "TrainConfig",
    fill: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrupt whole input channels of a batch of flattened windows.

    A dropped channel reads ``fill`` over the whole window, or over a
    prefix or suffix of it so that onsets and recoveries of signal loss are
    seen too. A shifted channel gets a random offset or a ramp.
    """
    n = len(batch)
    x = batch.reshape(n, W, S)
    t = np.arange(W)[None, :, None]
    drop = rng.random((n, S)) < config.input_dropout_rate
    cut = rng.integers(1, W, size=(n, S))[:, None, :]
    mode = rng.integers(0, 4, size=(n, S))[:, None, :]  # 0,1 whole window; 2 suffix; 3 prefix
    lost = drop[:, None, :] & ((mode < 2) | ((mode == 2) & (t >= cut)) | ((mode == 3) & (t < cut)))
    out = np.where(lost, fill, x)
    if config.input_shift_rate > 0:
        shift = (rng.random((n, S)) < config.input_shift_rate) & ~drop
        amount = rng.uniform(-config.input_shift_scale, config.input_shift_scale, size=(n, S))[:, None, :]
        ramp = rng.random((n, S))[:, None, :] < 0.5
        profile = np.where(ramp, t / (W - 1), 1.0)
        out = out + np.where(shift[:, None, :], amount * profile, 0.0)
    return out.reshape(n, W * S)


def train(frames: Sequence[TimeSeriesFrame], config: TrainConfig = TrainConfig()) -> AutoencoderModel:
    """Fit normalization on ``frames`` and train the autoencoder by mini-batch Adam.

    Deterministic for a given seed. The per-epoch mean training loss is kept
    in ``model.loss_history``.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInputError("no training frames")
    names = frames[0].names
    for f in frames[1:]:
        if f.names != names:
            raise SchemaError("training frames do not share the same sensor list")
    stats = _fit_stats(frames)
    S, W = len(names), config.W
    chunks = []
    for f in frames:
        if f.T < W:
            continue
        win, _ = window_array(f, W, config.stride)
        chunks.append((win - stats.train_min) / stats.range)
    data = np.concatenate(chunks) if chunks else np.empty((0, W, S))
    if len(data) == 0:
        raise EmptyInputError(f"no complete windows of length {W} in the training data")
    data = data.reshape(len(data), W * S)

    rng = np.random.default_rng(config.seed)
    net = init_network(config.layer_dims(S), rng)
    model = AutoencoderModel(
        net.weights, net.biases, norm_stats=stats, window_len=W, input_dropout_rate=config.input_dropout_rate
    )
    fill = model.dropout_fill
    params = [*model.weights, *model.biases]
    opt = _Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    nlayer = len(model.weights)
    N, B = len(data), config.batch_size
    history = []
    for epoch in range(1, config.epochs + 1):
        frac = (epoch - 1) / max(config.epochs - 1, 1)
        cos = 0.5 * (1.0 + np.cos(np.pi * frac))
        opt.lr = config.learning_rate * (config.final_lr_fraction + (1.0 - config.final_lr_fraction) * cos)
        order = rng.permutation(N)
        total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            for a in range(0, N, B):
                target = data[order[a : a + B]]
                x_in = target
                if config.input_dropout_rate > 0 or config.input_shift_rate > 0:
                    x_in = _corrupt(target, W, S, config, fill, rng)
                out, acts = forward(model, x_in)
                total += float(np.sum((out - target) ** 2))
                gW, gb = backward(model, target, acts)
                opt.step([*gW, *gb])
        loss = total / data.size
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        history.append(loss)
        if epoch % 50 == 0 or epoch == config.epochs:
            log.debug("epoch %d loss %.6g", epoch, loss)
    model.weights = params[:nlayer]
    model.biases = params[nlayer:]
    model.final_loss = history[-1]
    model.loss_history = tuple(history)
    return model


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    """Per-sample reconstruction (process units), percentage error and coverage.

    ``perr`` is NaN wherever ``coverage`` is false. Missing input samples
    still receive an (imputed) reconstruction but are not covered.
    """

    reconstruction: np.ndarray
    perr: np.ndarray
    coverage: np.ndarray

    @property
    def T(self) -> int:
        return self.perr.shape[0]

    @property
    def S(self) -> int:
        return self.perr.shape[1]


def _check_frame(model: AutoencoderModel, frame: TimeSeriesFrame):
    if frame.S != model.S:
        raise SchemaError(f"frame has {frame.S} sensors, model was trained on {model.S}")


def _reconstruct(
    model: AutoencoderModel, norm: np.ndarray, masked: bool, excluded: np.ndarray | None, batch: int
) -> np.ndarray:
    """Window-averaged reconstruction in normalized units."""
    T, S = norm.shape
    W = model.window_len
    fill = model.dropout_fill
    if excluded is not None:
        norm = np.where(excluded, fill, norm)
    windows = np.lib.stride_tricks.sliding_window_view(norm, W, axis=0).transpose(0, 2, 1)
    n = windows.shape[0]
    acc = np.zeros((T, S))
    counts = np.zeros(T)
    passes = range(S) if masked else [None]
    for a in range(0, n, batch):
        chunk = windows[a : a + batch]
        m = len(chunk)
        for w in range(W):
            counts[a + w : a + w + m] += 1
        for s in passes:
            x = chunk
            if s is not None:
                x = chunk.copy()
                x[:, :, s] = fill[s]
            out, _ = forward(model, x.reshape(m, W * S))
            out = out.reshape(m, W, S)
            cols = slice(None) if s is None else s
            for w in range(W):
                acc[a + w : a + w + m, cols] += out[:, w, cols]
    return acc / counts[:, None]


def score(
    model: AutoencoderModel,
    frame: TimeSeriesFrame,
    masked: bool = True,
    exclude_above: float | None = 5.0,
    exclude_min_run: int = 10,
    max_excluded: int | None = None,
    batch: int = 4096,
) -> ReconstructionReport:
    """Slide the model over ``frame`` with stride 1 and average overlapping reconstructions.

    With ``masked`` each sensor is reconstructed from windows in which its
    own input is replaced by the dropout fill, so a deviating signal cannot
    pull its own reconstruction along. Otherwise one joint pass is used.

    With ``exclude_above`` a second pass is run in which samples whose
    first-pass error exceeds that percentage for at least
    ``exclude_min_run`` consecutive samples are blanked out as lost signal,
    so one deviating sensor does not leak into the reconstruction of the
    others. Time steps where more than ``max_excluded`` sensors
    (default ``S // 4``) deviate are left alone unless blanking the single
    strongest one brings the count back within that limit: a coherent
    deviation of many sensors is information about the process, not noise
    to remove.
    """
    _check_frame(model, frame)
    T, S, W = frame.T, frame.S, model.window_len
    stats = model.norm_stats
    if T < W:
        nan = np.full((T, S), np.nan)
        return ReconstructionReport(nan, nan.copy(), np.zeros((T, S), dtype=bool))
    norm = (frame.values - stats.train_min) / stats.range
    norm = np.where(frame.missing, model.dropout_fill, norm)
    norm = np.clip(norm, *INPUT_CLIP)
    coverage = ~frame.missing
    rec = _reconstruct(model, norm, masked, None, batch)
    if exclude_above is not None:
        limit = S // 4 if max_excluded is None else max_excluded
        truth = (frame.values - stats.train_min) / stats.range

        def hot_runs(r, skip):
            with np.errstate(invalid="ignore"):
                dev = 100.0 * np.abs(r - truth)
                hot = coverage & ~skip & (dev > exclude_above)
            for k in range(S):
                keep = np.zeros(T, dtype=bool)
                for a, b in runs(hot[:, k], min_len=exclude_min_run):
                    keep[a : b + 1] = True
                hot[:, k] = keep
            return hot, dev

        none = np.zeros((T, S), dtype=bool)
        hot, dev = hot_runs(rec, none)
        crowded = hot.sum(axis=1) > limit
        mask = hot & ~crowded[:, None]
        if crowded.any():
            # one strong fault leaks into its neighbours on the first pass; blank only the
            # strongest channel and keep that where it explains the other deviations away
            top = np.zeros((T, S), dtype=bool)
            top[np.arange(T), np.argmax(np.where(hot, dev, -np.inf), axis=1)] = True
            trial = mask | (hot & top & crowded[:, None])
            left, _ = hot_runs(_reconstruct(model, norm, masked, trial, batch), trial)
            explained = crowded & (left.sum(axis=1) + trial.sum(axis=1) <= limit)
            mask |= trial & explained[:, None]
        if mask.any():
            rec = _reconstruct(model, norm, masked, mask, batch)
    recon = rec * stats.range + stats.train_min
    with np.errstate(invalid="ignore"):
        perr = np.where(coverage, 100.0 * np.abs(recon - frame.values) / stats.range, np.nan)
    return ReconstructionReport(recon, perr, coverage)


def flag_contextual(report: ReconstructionReport, perr_threshold: float = 5.0, min_run: int = 10) -> list[AnomalyVerdict]:
    """Runs of at least ``min_run`` covered samples with percentage error above the threshold."""
    if perr_threshold <= 0:
        raise InvalidArgumentError("perr_threshold must be > 0")
    out = []
    for s in range(report.S):
        p = report.perr[:, s]
        with np.errstate(invalid="ignore"):
            hot = report.coverage[:, s] & (p > perr_threshold)
        for a, b in runs(hot, min_len=max(min_run, 1)):
            out.append(
                AnomalyVerdict(Level.L4, (s,), a, b, float(p[a : b + 1].mean()), Kind.CONTEXTUAL_DEVIATION)
            )
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(model: AutoencoderModel, path: str | Path) -> None:
    header = {
        "format": "mtsvalid-autoencoder",
        "version": FORMAT_VERSION,
        "layer_dims": model.layer_dims,
        "activation": model.activation,
        "window_len": model.window_len,
        "input_dropout_rate": model.input_dropout_rate,
        "final_loss": model.final_loss,
        "input_clip": list(INPUT_CLIP),
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for k, (Wm, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{k}"] = np.ascontiguousarray(Wm)
        arrays[f"b{k}"] = np.ascontiguousarray(b)
    arrays["train_min"] = np.asarray(model.norm_stats.train_min)
    arrays["train_max"] = np.asarray(model.norm_stats.train_max)
    arrays["loss_history"] = np.asarray(model.loss_history, dtype=float)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> AutoencoderModel:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != "mtsvalid-autoencoder":
            raise FormatError(f"{path} is not an autoencoder model file")
        if header["version"] > FORMAT_VERSION:
            raise FormatError(f"model format version {header['version']} is newer than supported {FORMAT_VERSION}")
        n = len(header["layer_dims"]) - 1
        weights = [z[f"W{k}"].copy() for k in range(n)]
        biases = [z[f"b{k}"].copy() for k in range(n)]
        stats = NormStats(z["train_min"].copy(), z["train_max"].copy())
        history = tuple(float(v) for v in z["loss_history"])
    return AutoencoderModel(
        weights,
        biases,
        norm_stats=stats,
        window_len=int(header["window_len"]),
        input_dropout_rate=float(header["input_dropout_rate"]),
        activation=header["activation"],
        final_loss=float(header["final_loss"]),
        loss_history=history,
    )
