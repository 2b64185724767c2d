"""Multi-task ranker: shared ReLU trunk, five sigmoid heads, weighted BCE.

The loss is the per-example mean of ``sum_i w_i * BCE(p_i, y_i)`` over the
four engagement tasks, plus the weighted repin-and-revisit term.  Ranking
scores are ``sum_i u_i * p_i`` over the same five heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .events import ALL_TASKS, BASE_TASKS, TaskId

EPS = 1e-12
DEFAULT_HIDDEN = (64, 32)
UTILITY_RATIO = 1.27
MODEL_DIGITS = 17


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def default_loss_weights() -> dict[TaskId, float]:
    return {t: 1.0 for t in ALL_TASKS}


def default_utilities(ratio: float = UTILITY_RATIO) -> dict[TaskId, float]:
    u = {t: 1.0 for t in BASE_TASKS}
    u[TaskId.REPIN] = 2.0
    u[TaskId.REPIN_AND_REVISIT] = ratio * u[TaskId.REPIN]
    return u


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # trunk layers, each (fan_in, fan_out)
    biases: list[np.ndarray]
    head_w: np.ndarray  # (trunk_out, 5)
    head_b: np.ndarray  # (5,)
    loss_weights: dict[TaskId, float] = field(default_factory=default_loss_weights)
    utilities: dict[TaskId, float] = field(default_factory=default_utilities)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.head_w, self.head_b]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.head_w.copy(), self.head_b.copy(),
                           dict(self.loss_weights), dict(self.utilities))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(input_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0,
                loss_weights: Optional[Mapping[TaskId, float]] = None,
                utilities: Optional[Mapping[TaskId, float]] = None) -> ModelParams:
    if input_dim < 1:
        raise ModelError("input dimension must be positive")
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    limit = np.sqrt(6.0 / (sizes[-1] + len(ALL_TASKS)))
    head_w = rng.uniform(-limit, limit, size=(sizes[-1], len(ALL_TASKS)))
    return ModelParams(weights, biases, head_w, np.zeros(len(ALL_TASKS)),
                       dict(loss_weights or default_loss_weights()),
                       dict(utilities or default_utilities()))


def zero_params(input_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> ModelParams:
    sizes = [input_dim, *hidden]
    return ModelParams([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                       [np.zeros(b) for b in sizes[1:]],
                       np.zeros((sizes[-1], len(ALL_TASKS))), np.zeros(len(ALL_TASKS)))


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.input_dim:
        raise ModelError(f"feature length {X.shape[1]} does not match model input {params.input_dim}")
    if not np.isfinite(X).all():
        raise ModelError("non-finite feature value")
    return X


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(params: ModelParams, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    for W, b in zip(params.weights, params.biases):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = h @ params.head_w + params.head_b
    return acts, pre, _sigmoid(logits)


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Head probabilities, shape (n, 5) (or (5,) for a single feature vector)."""
    single = np.asarray(X).ndim == 1
    X = _check_input(params, X)
    probs = _forward_cache(params, X)[2]
    return probs[0] if single else probs


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, EPS, 1.0 - EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _task_weights(w: Optional[Mapping[TaskId, float]], params: ModelParams) -> list[float]:
    w = params.loss_weights if w is None else w
    vals = [float(w.get(t, 0.0)) for t in ALL_TASKS]
    if any(v < 0 for v in vals):
        raise ModelError("loss weights must be non-negative")
    return vals


def _per_example_loss(probs: np.ndarray, Y: np.ndarray, weights: Sequence[float],
                      tasks: Sequence[TaskId]) -> np.ndarray:
    # Base tasks first, then the revisit term on top, in a fixed order.
    total = np.zeros(probs.shape[0])
    for t in BASE_TASKS:
        if t in tasks:
            j = ALL_TASKS.index(t)
            total = total + weights[j] * _bce(probs[:, j], Y[:, j])
    if TaskId.REPIN_AND_REVISIT in tasks:
        j = ALL_TASKS.index(TaskId.REPIN_AND_REVISIT)
        total = total + weights[j] * _bce(probs[:, j], Y[:, j])
    return total


def loss(params: ModelParams, X: np.ndarray, Y: np.ndarray,
         w: Optional[Mapping[TaskId, float]] = None,
         tasks: Sequence[TaskId] = ALL_TASKS) -> float:
    """Mean weighted BCE; ``tasks=BASE_TASKS`` gives the four-task loss."""
    X = _check_input(params, X)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] == 0:
        raise ModelError("empty batch")
    weights = _task_weights(w, params)
    probs = _forward_cache(params, X)[2]
    return float(np.mean(_per_example_loss(probs, Y, weights, tasks)))


def loss_and_grad(params: ModelParams, X: np.ndarray, Y: np.ndarray,
                  w: Optional[Mapping[TaskId, float]] = None) -> tuple[float, list[np.ndarray]]:
    """Loss and gradients in the order of ``ModelParams.arrays()``."""
    X = _check_input(params, X)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ModelError("empty batch")
    weights = np.array(_task_weights(w, params))
    acts, pre, probs = _forward_cache(params, X)
    value = float(np.mean(_per_example_loss(probs, Y, weights, ALL_TASKS)))
    # d BCE / d logit = p - y inside the clamp, 0 where the clamp is active.
    inside = (probs > EPS) & (probs < 1.0 - EPS)
    dlogits = np.where(inside, probs - Y, 0.0) * weights / n
    g_head_w = acts[-1].T @ dlogits
    g_head_b = dlogits.sum(axis=0)
    dh = dlogits @ params.head_w.T
    g_w: list[np.ndarray] = [None] * len(params.weights)
    g_b: list[np.ndarray] = [None] * len(params.weights)
    for layer in range(len(params.weights) - 1, -1, -1):
        dz = dh * (pre[layer] > 0)
        g_w[layer] = acts[layer].T @ dz
        g_b[layer] = dz.sum(axis=0)
        if layer > 0:
            dh = dz @ params.weights[layer].T
    return value, [*g_w, *g_b, g_head_w, g_head_b]


def score(probs: Sequence[float], u: Mapping[TaskId, float]) -> float:
    """Utility-weighted sum of head probabilities (engagement tasks, then revisit)."""
    total = 0.0
    for j, t in enumerate(BASE_TASKS):
        total += u.get(t, 0.0) * probs[j]
    total += u.get(TaskId.REPIN_AND_REVISIT, 0.0) * probs[len(BASE_TASKS)]
    return total


def score_base(probs: Sequence[float], u: Mapping[TaskId, float]) -> float:
    """Four-task score without the revisit term."""
    total = 0.0
    for j, t in enumerate(BASE_TASKS):
        total += u.get(t, 0.0) * probs[j]
    return total


def score_matrix(probs: np.ndarray, u: Mapping[TaskId, float]) -> np.ndarray:
    """Vectorized ``score`` with the same summation order."""
    total = np.zeros(probs.shape[0])
    for j, t in enumerate(BASE_TASKS):
        total = total + u.get(t, 0.0) * probs[:, j]
    return total + u.get(TaskId.REPIN_AND_REVISIT, 0.0) * probs[:, len(BASE_TASKS)]


@dataclass
class RankedCandidate:
    pin_id: str
    probabilities: np.ndarray
    score: float


def rank(params: ModelParams, u: Optional[Mapping[TaskId, float]],
         candidates: Sequence[tuple[str, Sequence[float]]]) -> list[RankedCandidate]:
    """Order candidates by descending score; ties go to the smaller pin_id."""
    if not candidates:
        raise ModelError("no candidates to rank")
    u = params.utilities if u is None else u
    probs = forward(params, np.array([c[1] for c in candidates], dtype=float))
    scores = score_matrix(probs, u)
    ranked = [RankedCandidate(pin, probs[i], float(scores[i])) for i, (pin, _) in enumerate(candidates)]
    ranked.sort(key=lambda r: (-r.score, r.pin_id))
    return ranked


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 1
    momentum: float = 0.9
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    rng_seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ModelError("batch_size must be positive")
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ModelError("momentum must lie in [0, 1)")


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    step_losses: list[float]


def train(X: np.ndarray, Y: np.ndarray, config: TrainConfig,
          loss_weights: Optional[Mapping[TaskId, float]] = None,
          utilities: Optional[Mapping[TaskId, float]] = None,
          init: Optional[ModelParams] = None) -> TrainResult:
    """Mini-batch SGD with momentum; deterministic for a given seed."""
    config.validate()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ModelError("training features must be a non-empty 2-D array")
    if X.shape[0] == 0:
        raise ModelError("empty training set")
    if Y.shape != (X.shape[0], len(ALL_TASKS)):
        raise ModelError(f"labels must have shape (n, {len(ALL_TASKS)})")
    params = init.copy() if init is not None else init_params(
        X.shape[1], config.hidden, config.rng_seed, loss_weights, utilities)
    if loss_weights is not None:
        params.loss_weights = dict(loss_weights)
    if utilities is not None:
        params.utilities = dict(utilities)
    rng = np.random.default_rng(config.rng_seed)
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    epoch_losses, step_losses = [], []
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = loss_and_grad(params, X[idx], Y[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {len(step_losses)}")
            step_losses.append(value)
            total += value * len(idx)
            for a, v, g in zip(arrays, velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
                a += v
        epoch_losses.append(total / n)
        if not params.is_finite():
            raise TrainingError(f"parameters diverged during epoch {epoch}")
    return TrainResult(params, epoch_losses, step_losses)


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def _fmt_row(row) -> str:
    return " ".join(f"{x:.{MODEL_DIGITS}g}" for x in row)


def save_model(path, params: ModelParams) -> None:
    lines = [" ".join(str(s) for s in params.layer_sizes)]
    for W, b in zip(params.weights, params.biases):
        lines.extend(_fmt_row(r) for r in W)
        lines.append(_fmt_row(b))
    lines.extend(_fmt_row(r) for r in params.head_w)
    lines.append(_fmt_row(params.head_b))
    lines.append("[weights]")
    for t in ALL_TASKS:
        lines.append(f"loss.{t.value} = {params.loss_weights.get(t, 0.0)!r}")
    for t in ALL_TASKS:
        lines.append(f"utility.{t.value} = {params.utilities.get(t, 0.0)!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    try:
        sizes = [int(x) for x in lines[0].split()]
        pos = 1

        def take(rows: int, cols: int) -> np.ndarray:
            nonlocal pos
            block = np.array([[float(x) for x in lines[pos + i].split()] for i in range(rows)])
            if block.shape != (rows, cols):
                raise ModelError(f"{path}: expected a {rows}x{cols} block at line {pos + 1}")
            pos += rows
            return block

        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(take(fan_in, fan_out))
            biases.append(take(1, fan_out)[0])
        head_w = take(sizes[-1], len(ALL_TASKS))
        head_b = take(1, len(ALL_TASKS))[0]
        if lines[pos] != "[weights]":
            raise ModelError(f"{path}: missing [weights] section")
        lw, ut = {}, {}
        for line in lines[pos + 1:]:
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            kind, _, task = key.strip().partition(".")
            target = lw if kind == "loss" else ut if kind == "utility" else None
            if target is None:
                raise ModelError(f"{path}: unknown weight entry {key.strip()!r}")
            target[TaskId(task)] = float(value)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"{path}: malformed model file ({exc})") from None
    return ModelParams(weights, biases, head_w, head_b, lw, ut)
