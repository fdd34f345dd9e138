"""Reference classifier: a small feed-forward softmax network in plain numpy.

One optional ReLU hidden layer with inverted dropout, trained by Adam on
cross-entropy against (possibly smoothed) targets, early-stopped on
validation macro-F1. Deterministic given the config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, TrainingError, ValidationError
from .fileio import atomic_write_text, read_text
from .metrics import classification_scores, confusion
from .records import NUM_STAGES
from .smoothing import cross_entropy, softmax


@dataclass(frozen=True)
class ReferenceModel:
    input_dim: int
    hidden_width: int
    dropout_rate: float
    seed: int
    params: dict


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    max_iterations: int = 100
    patience: int = 10
    seed: int = 0


@dataclass(frozen=True)
class TrainHistory:
    losses: tuple
    val_scores: tuple
    best_iteration: int
    stop_reason: str


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_model(
    input_dim: int, hidden_width: int = 32, dropout_rate: float = 0.3, seed: int = 0
) -> ReferenceModel:
    """Zero-mean gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    if input_dim < 1:
        raise ValidationError("input_dim must be positive")
    if hidden_width < 0:
        raise ValidationError("hidden_width must be nonnegative")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValidationError("dropout_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    params = {}
    if hidden_width > 0:
        params["w1"] = rng.normal(0.0, 1.0 / math.sqrt(input_dim), (input_dim, hidden_width))
        params["b1"] = np.zeros(hidden_width)
        params["w2"] = rng.normal(0.0, 1.0 / math.sqrt(hidden_width), (hidden_width, NUM_STAGES))
        params["b2"] = np.zeros(NUM_STAGES)
    else:
        params["w1"] = rng.normal(0.0, 1.0 / math.sqrt(input_dim), (input_dim, NUM_STAGES))
        params["b1"] = np.zeros(NUM_STAGES)
    return ReferenceModel(input_dim, hidden_width, dropout_rate, seed, params)


def _logits(model: ReferenceModel, x: np.ndarray, train_mode: bool, rng):
    p = model.params
    if model.hidden_width == 0:
        return x @ p["w1"] + p["b1"], None, None, None
    h_pre = x @ p["w1"] + p["b1"]
    h = np.maximum(h_pre, 0.0)
    mask = None
    if train_mode and model.dropout_rate > 0.0:
        if rng is None:
            raise ValidationError("training-mode forward with dropout needs an rng")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(h.shape) < keep) / keep
        h = h * mask
    return h @ p["w2"] + p["b2"], h_pre, h, mask


def forward(model: ReferenceModel, features, train_mode: bool = False, rng=None) -> np.ndarray:
    """Class probabilities for one feature row or a batch."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ValidationError(f"expected {model.input_dim} features, got {x.shape[1]}")
    logits, _, _, _ = _logits(model, x, train_mode, rng)
    probs = softmax(logits)
    return probs[0] if np.ndim(features) == 1 else probs


def loss_and_grads(model: ReferenceModel, x, targets, train_mode: bool = False, rng=None):
    """Mean cross-entropy over the batch and its gradient in every parameter."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    logits, h_pre, h, mask = _logits(model, x, train_mode, rng)
    probs = softmax(logits)
    loss = float(cross_entropy(t, probs).mean())
    g_logits = (probs - t) / n
    p = model.params
    grads = {}
    if model.hidden_width == 0:
        grads["w1"] = x.T @ g_logits
        grads["b1"] = g_logits.sum(axis=0)
    else:
        grads["w2"] = h.T @ g_logits
        grads["b2"] = g_logits.sum(axis=0)
        g_h = g_logits @ p["w2"].T
        if mask is not None:
            g_h = g_h * mask
        g_pre = g_h * (h_pre > 0.0)
        grads["w1"] = x.T @ g_pre
        grads["b1"] = g_pre.sum(axis=0)
    return loss, grads


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    if not state.m:
        for k, p in params.items():
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {k} at step {state.t}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        params[k] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def macro_f1_of(model: ReferenceModel, x: np.ndarray, codes: np.ndarray) -> float:
    pred = forward(model, x).argmax(axis=1)
    return classification_scores(confusion(codes, pred)).macro_f1


def train(model: ReferenceModel, train_x, train_targets, val_x, val_codes, config: TrainConfig):
    """Mini-batch Adam with early stopping on validation macro-F1.

    Returns the snapshot with the best validation score and the history.
    The caller's model is left untouched.
    """
    x = np.asarray(train_x, dtype=np.float64)
    t = np.asarray(train_targets, dtype=np.float64)
    vx = np.asarray(val_x, dtype=np.float64)
    vy = np.asarray(val_codes, dtype=np.int64)
    if x.shape[0] != t.shape[0]:
        raise ValidationError("training features and targets disagree in length")
    if config.max_iterations < 1 or config.patience < 1 or config.batch_size < 1:
        raise ValidationError("max_iterations, patience, and batch_size must be positive")
    rng = np.random.default_rng(config.seed)
    work = ReferenceModel(
        model.input_dim,
        model.hidden_width,
        model.dropout_rate,
        model.seed,
        {k: v.copy() for k, v in model.params.items()},
    )
    state = AdamState(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    losses = []
    val_scores = []
    best_score = -math.inf
    best_iteration = -1
    best_params = None
    stop_reason = "max_iterations"
    for iteration in range(config.max_iterations):
        order = rng.permutation(x.shape[0])
        batch_losses = []
        for start in range(0, x.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(work, x[idx], t[idx], train_mode=True, rng=rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at iteration {iteration}")
            adam_step(work.params, grads, state)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        score = macro_f1_of(work, vx, vy)
        val_scores.append(score)
        if score > best_score:
            best_score = score
            best_iteration = iteration
            best_params = {k: v.copy() for k, v in work.params.items()}
        elif iteration - best_iteration >= config.patience:
            stop_reason = "early_stop"
            break
    trained = ReferenceModel(
        model.input_dim, model.hidden_width, model.dropout_rate, model.seed, best_params
    )
    history = TrainHistory(tuple(losses), tuple(val_scores), best_iteration, stop_reason)
    return trained, history


def mc_dropout_predict(model: ReferenceModel, features, passes: int, seed: int = 0) -> np.ndarray:
    """Mean probabilities over stochastic dropout passes."""
    if model.dropout_rate <= 0.0:
        raise ValidationError("MC-dropout prediction needs a model trained with dropout")
    if passes < 1:
        raise ValidationError("passes must be positive")
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    rng = np.random.default_rng(seed)
    acc = np.zeros((x.shape[0], NUM_STAGES))
    for _ in range(passes):
        acc += forward(model, x, train_mode=True, rng=rng)
    return acc / passes


def with_context(features) -> np.ndarray:
    """Concatenate each epoch's features with its two neighbours (edges repeat)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("context window expects a T x D matrix")
    prev_rows = np.vstack([x[:1], x[:-1]])
    next_rows = np.vstack([x[1:], x[-1:]])
    return np.hstack([prev_rows, x, next_rows])


def save_model(model: ReferenceModel, path) -> None:
    """Text checkpoint: a header line of dims and hyperparameters, then one
    comma-separated row of values per parameter (exact decimal round-trip)."""
    lines = [
        "# softstage model checkpoint v1",
        f"# input_dim={model.input_dim} hidden_width={model.hidden_width} "
        f"dropout_rate={model.dropout_rate!r} seed={model.seed}",
    ]
    for name in sorted(model.params):
        arr = model.params[name]
        shape = "x".join(str(s) for s in arr.shape)
        values = ",".join(repr(float(v)) for v in arr.ravel())
        lines.append(f"{name},{shape},{values}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(source) -> ReferenceModel:
    lines = [ln for ln in read_text(source).splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("# softstage model checkpoint"):
        raise ParseError("not a model checkpoint", line=1)
    meta = dict(kv.split("=", 1) for kv in lines[1].lstrip("# ").split())
    params = {}
    for line_no, line in enumerate(lines[2:], start=3):
        try:
            name, shape, values = line.split(",", 2)
            dims = tuple(int(s) for s in shape.split("x"))
            arr = np.array([float(v) for v in values.split(",")]).reshape(dims)
        except ValueError:
            raise ParseError("malformed checkpoint row", line=line_no)
        params[name] = arr
    return ReferenceModel(
        int(meta["input_dim"]),
        int(meta["hidden_width"]),
        float(meta["dropout_rate"]),
        int(meta["seed"]),
        params,
    )
