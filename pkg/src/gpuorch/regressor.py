"""Small feedforward regressor trained with mini-batch gradient descent on MSE.

Hidden layers use tanh, the output layer is linear. Model files are ``.npz``
archives holding ``format_version``, ``layer_sizes``, ``activation`` and one
``W{i}``/``b{i}`` array pair per layer (``W{i}`` has shape (fan_in, fan_out)).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

FORMAT_VERSION = 1
ACTIVATION = "tanh"


class DimensionError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    pass


class ModelFileError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 400
    batch_size: int = 32
    patience: int = 40
    seed: int = 0


@dataclass
class TrainReport:
    epochs_run: int
    final_train_loss: float
    final_val_loss: float
    final_train_mae: float
    final_val_mae: float
    best_epoch: int = 0
    history: List[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("epochs_run", "best_epoch", "final_train_loss", "final_val_loss",
                 "final_train_mae", "final_val_mae")}


def _as_2d(x, width: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"{what} width {arr.shape[-1] if arr.ndim else 0} != expected {width}")
    return arr


class Regressor:
    def __init__(self, layer_sizes: Sequence[int], weights: List[np.ndarray],
                 biases: List[np.ndarray]):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights = weights
        self.biases = biases
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise DimensionError(f"layer {i} parameter shapes do not match {self.layer_sizes}")

    @classmethod
    def new(cls, layer_sizes: Sequence[int], seed: int = 0) -> "Regressor":
        sizes = list(layer_sizes)
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        rng = np.random.default_rng(seed)
        weights = [rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
                   for n_in, n_out in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(n_out) for n_out in sizes[1:]]
        return cls(sizes, weights, biases)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _forward(self, x: np.ndarray) -> List[np.ndarray]:
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return acts

    def predict(self, x) -> np.ndarray:
        """Raw (unclamped) outputs; a 1-D input gives a 1-D output."""
        single = np.ndim(x) == 1
        out = self._forward(_as_2d(x, self.n_inputs, "input"))[-1]
        return out[0] if single else out

    def loss_and_grads(self, x, y) -> Tuple[float, List[np.ndarray]]:
        """MSE over all outputs and its gradient, ordered like ``parameters()``."""
        x = _as_2d(x, self.n_inputs, "input")
        y = _as_2d(y, self.n_outputs, "target")
        if len(x) != len(y):
            raise DimensionError("input and target counts differ")
        acts = self._forward(x)
        diff = acts[-1] - y
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size
        grads: List[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        grads.reverse()
        return loss, grads

    def copy(self) -> "Regressor":
        return copy.deepcopy(self)


def _metrics(model: Regressor, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    if len(x) == 0:
        return 0.0, 0.0
    diff = model.predict(x) - y
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


def train(model: Regressor, train_samples, val_samples=None,
          hyper: Optional[TrainConfig] = None) -> TrainReport:
    """Mini-batch gradient descent with early stopping on validation loss.

    Samples are ``(X, Y)`` array pairs. The model is left holding the parameters
    from the epoch with the best validation loss.
    """
    hp = hyper or TrainConfig()
    x_tr = _as_2d(train_samples[0], model.n_inputs, "train input")
    y_tr = _as_2d(train_samples[1], model.n_outputs, "train target")
    if len(x_tr) != len(y_tr) or len(x_tr) == 0:
        raise DimensionError("train inputs and targets must be non-empty and equally long")
    if val_samples is not None and len(val_samples[0]):
        x_va = _as_2d(val_samples[0], model.n_inputs, "val input")
        y_va = _as_2d(val_samples[1], model.n_outputs, "val target")
    else:
        x_va, y_va = x_tr, y_tr

    rng = np.random.default_rng(hp.seed)
    params = model.parameters()
    best_val = math.inf
    best_params = [p.copy() for p in params]
    best_epoch = 0
    history: List[float] = []
    epoch = 0
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(len(x_tr))
        for start in range(0, len(order), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            loss, grads = model.loss_and_grads(x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            for p, g in zip(params, grads):
                p -= hp.lr * g
        tr_loss, _ = _metrics(model, x_tr, y_tr)
        va_loss, _ = _metrics(model, x_va, y_va)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
        history.append(tr_loss)
        if va_loss < best_val:
            best_val, best_epoch = va_loss, epoch
            best_params = [p.copy() for p in params]
        elif epoch - best_epoch >= hp.patience:
            break
    for p, b in zip(params, best_params):
        p[...] = b
    tr_loss, tr_mae = _metrics(model, x_tr, y_tr)
    va_loss, va_mae = _metrics(model, x_va, y_va)
    return TrainReport(epoch, tr_loss, va_loss, tr_mae, va_mae, best_epoch, history)


def gradient_check(model: Regressor, sample, epsilon: float = 1e-5) -> float:
    """Worst relative deviation between backprop and central-difference gradients.

    Deviation per parameter array is ``|g_a - g_n| / (|g_a| + |g_n|)`` in the
    Euclidean norm; an array whose gradients are both exactly zero counts as 0.
    """
    x, y = sample
    _, analytic = model.loss_and_grads(x, y)
    worst = 0.0
    for p, g_a in zip(model.parameters(), analytic):
        g_n = np.zeros_like(p)
        flat = p.reshape(-1)
        out = g_n.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up, _ = model.loss_and_grads(x, y)
            flat[k] = orig - epsilon
            down, _ = model.loss_and_grads(x, y)
            flat[k] = orig
            out[k] = (up - down) / (2.0 * epsilon)
        denom = np.linalg.norm(g_a) + np.linalg.norm(g_n)
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(g_a - g_n) / denom))
    return worst


def save(model: Regressor, path) -> None:
    arrays = {"format_version": np.array(FORMAT_VERSION),
              "layer_sizes": np.array(model.layer_sizes, dtype=np.int64),
              "activation": np.array(ACTIVATION)}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load(path) -> Regressor:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != FORMAT_VERSION:
                raise ModelFileError(f"model format {version} unsupported (expected {FORMAT_VERSION})")
            if str(data["activation"]) != ACTIVATION:
                raise ModelFileError(f"unsupported activation {data['activation']}")
            sizes = [int(s) for s in data["layer_sizes"]]
            weights = [np.array(data[f"W{i}"], dtype=float) for i in range(len(sizes) - 1)]
            biases = [np.array(data[f"b{i}"], dtype=float) for i in range(len(sizes) - 1)]
    except ModelFileError:
        raise
    except (KeyError, ValueError, OSError, EOFError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ModelFileError(f"{path}: corrupt model file ({exc})") from exc
    try:
        return Regressor(sizes, weights, biases)
    except DimensionError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
