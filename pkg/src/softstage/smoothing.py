"""Label smoothing over consensus targets, and the matching loss math.

Both smoothing modes mix a one-hot consensus label y with a prior q via
(1 - alpha) * y + alpha * q: the uniform mode uses q = 1/K, the
soft-consensus mode uses the epoch's scorer vote distribution. Training
optimises cross-entropy against these generally non-degenerate targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .records import NUM_STAGES

CLAMP_EPS = 1e-12
STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True)
class SmoothedTarget:
    values: np.ndarray
    alpha: float
    mode: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (NUM_STAGES,):
            raise ValidationError("smoothed target must hold one value per stage")
        if (vals < -STOCHASTIC_TOL).any() or abs(vals.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValidationError("smoothed target is not a distribution")
        object.__setattr__(self, "values", vals)


def one_hot(codes) -> np.ndarray:
    """Stage codes (scalar or array) to one-hot rows."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= NUM_STAGES):
        raise ValidationError("one_hot needs committed stage codes (no NC)")
    out = np.zeros(codes.shape + (NUM_STAGES,), dtype=np.float64)
    np.put_along_axis(out, codes[..., None], 1.0, axis=-1)
    return out


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _check_one_hot(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != NUM_STAGES:
        raise ValidationError("label vector must hold one entry per stage")
    if not (np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=-1) == 1.0).all()):
        raise ValidationError("label vector must be exactly one-hot")
    return y


def _check_stochastic(q, what: str) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != NUM_STAGES:
        raise ValidationError(f"{what} must hold one entry per stage")
    if not np.isfinite(q).all():
        raise ValidationError(f"{what} rows must be finite")
    if (q < -STOCHASTIC_TOL).any() or (np.abs(q.sum(axis=-1) - 1.0) > STOCHASTIC_TOL).any():
        raise ValidationError(f"{what} rows must be distributions")
    return q


def uniform_smooth(y, alpha: float) -> SmoothedTarget:
    """(1 - alpha) * y + alpha / K, the classic uniform smoothing."""
    alpha = _check_alpha(alpha)
    y = _check_one_hot(y)
    if y.ndim != 1:
        raise ValidationError("uniform_smooth takes a single label vector")
    return SmoothedTarget(y * (1.0 - alpha) + alpha / NUM_STAGES, alpha, "uniform")


def sc_smooth(y, alpha: float, sc_row) -> SmoothedTarget:
    """(1 - alpha) * y + alpha * sc_row, smoothing toward the scorer votes."""
    alpha = _check_alpha(alpha)
    y = _check_one_hot(y)
    if y.ndim != 1:
        raise ValidationError("sc_smooth takes a single label vector")
    sc_row = _check_stochastic(sc_row, "soft-consensus row")
    if sc_row.ndim != 1:
        raise ValidationError("sc_smooth takes a single soft-consensus row")
    return SmoothedTarget(_blend_toward(y, alpha, sc_row), alpha, "soft-consensus")


def _blend_toward(y, alpha, sc):
    # where the votes already equal the label the blend is an identity;
    # computing it would wobble in the last bit for most alpha values
    return np.where(sc == y, y, y * (1.0 - alpha) + alpha * sc)


def smooth_matrix(onehots, mode: str, alpha: float, sc=None) -> np.ndarray:
    """Vectorised smoothing over T label rows; mode 'none' passes labels through."""
    y = _check_one_hot(onehots)
    if mode == "none":
        return y.copy()
    alpha = _check_alpha(alpha)
    if mode == "uniform":
        return y * (1.0 - alpha) + alpha / NUM_STAGES
    if mode == "soft-consensus":
        if sc is None:
            raise ValidationError("soft-consensus smoothing needs the vote matrix")
        sc = _check_stochastic(sc, "soft-consensus matrix")
        if sc.shape != y.shape:
            raise ValidationError("soft-consensus matrix shape must match the labels")
        return _blend_toward(y, alpha, sc)
    raise ValidationError(f"unknown smoothing mode {mode!r}")


def softmax(logits) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target, probs):
    """- sum(target * log(probs)), probabilities clamped at 1e-12 before the log.

    Accepts single rows or matching batches; batches return one value per row.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if t.shape != p.shape:
        raise ValidationError("target and probability shapes must match")
    return -(t * np.log(np.clip(p, CLAMP_EPS, None))).sum(axis=-1)


def cross_entropy_grad(target, logits) -> np.ndarray:
    """Gradient of cross_entropy(target, softmax(logits)) in the logits."""
    t = np.asarray(target, dtype=np.float64)
    z = np.asarray(logits, dtype=np.float64)
    if t.shape != z.shape:
        raise ValidationError("target and logit shapes must match")
    return softmax(z) - t
