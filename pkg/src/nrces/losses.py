"""Loss kernels for span classification under missing-entity noise.

Every function here is pure and works on raw logits, so the model and the
trainer can share them and the tests can check them in isolation.  Class
index ``none_index`` (0 by default) is the non-entity label.
"""

from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInputError

PROB_FLOOR = 1e-12


class LossGrad(NamedTuple):
    loss: float
    grad: np.ndarray


class LossVariant(str, enum.Enum):
    CE = "ce"
    CS = "cs"
    NRCES = "nrces"
    NRCES_NO_SAMPLING = "nrces_no_sampling"
    WO_SIGMOID = "wo_sigmoid"
    WO_SEPARATE = "wo_separate"
    WO_IND_NEG = "wo_ind_neg"
    WO_IND_POS = "wo_ind_pos"

    @classmethod
    def parse(cls, tag: "str | LossVariant") -> "LossVariant":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).lower())
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown loss variant {tag!r}; valid: {valid}") from None


# (weight on CE, weight on the blended CE/sigmoid loss) for positive and
# negative samples respectively.
_DISPATCH = {
    LossVariant.CE: ((1, 0), (1, 0)),
    LossVariant.WO_SIGMOID: ((1, 0), (1, 0)),
    LossVariant.CS: ((0, 1), (0, 1)),
    LossVariant.WO_SEPARATE: ((0, 1), (0, 1)),
    LossVariant.NRCES: ((1, 0), (0, 1)),
    LossVariant.NRCES_NO_SAMPLING: ((1, 0), (0, 1)),
    LossVariant.WO_IND_NEG: ((1, 1), (0, 1)),
    LossVariant.WO_IND_POS: ((1, 0), (1, 1)),
}


def dispatch_weights(variant: LossVariant, is_positive: bool) -> tuple[int, int]:
    """Return ``(ce_weight, cs_weight)`` for one sample."""
    pos, neg = _DISPATCH[LossVariant.parse(variant)]
    return pos if is_positive else neg


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError(f"logits must be a non-empty vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite values")
    return z


def _check_target(target: int, n_classes: int) -> int:
    target = int(target)
    if not 0 <= target < n_classes:
        raise InvalidInputError(f"target {target} outside [0, {n_classes})")
    return target


def _sigmoid(x):
    # Branch on sign so exp never overflows.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    """Logistic function, elementwise; returns a float for scalar input."""
    out = _sigmoid(np.atleast_1d(x))
    return float(out[0]) if np.ndim(x) == 0 else out


def softmax(z) -> np.ndarray:
    z = _as_logits(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def ce_loss_grad(z, target: int) -> LossGrad:
    """Cross-entropy ``-log p_target`` and its logit gradient ``p - onehot``."""
    p = softmax(z)
    target = _check_target(target, p.size)
    loss = -math.log(max(p[target], PROB_FLOOR))
    grad = p.copy()
    grad[target] -= 1.0
    return LossGrad(loss, grad)


def sigmoid_term_grad(z, target: int) -> LossGrad:
    """``sigmoid(z_target)`` and its gradient, which touches only the target logit."""
    z = _as_logits(z)
    target = _check_target(target, z.size)
    s = sigmoid(z[target])
    grad = np.zeros_like(z)
    grad[target] = s * (1.0 - s)
    return LossGrad(s, grad)


def beta(epoch: int, w: float) -> float:
    """CE weight after ``epoch`` completed epochs: ``exp(-epoch / w)``."""
    if not w > 0:
        raise ConfigError(f"w must be positive, got {w}")
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return math.exp(-epoch / w)


def _check_beta(b: float) -> float:
    if not 0.0 < b <= 1.0:
        raise ConfigError(f"beta must lie in (0, 1], got {b}")
    return float(b)


def cs_loss_grad(z, target: int, beta: float) -> LossGrad:
    """Convex blend ``beta * CE + (1 - beta) * sigmoid term``."""
    beta = _check_beta(beta)
    ce = ce_loss_grad(z, target)
    sg = sigmoid_term_grad(z, target)
    return LossGrad(
        beta * ce.loss + (1.0 - beta) * sg.loss,
        beta * ce.grad + (1.0 - beta) * sg.grad,
    )


def nrces_loss_grad(
    z,
    target: int,
    is_positive: bool,
    beta: float,
    variant: LossVariant | str = LossVariant.NRCES,
    none_index: int = 0,
) -> LossGrad:
    """Per-sample loss for any member of the family.

    Positives (annotated entities) and negatives (non-entity spans) are routed
    to CE, the blended loss, or their sum according to ``variant``.
    """
    variant = LossVariant.parse(variant)
    if bool(is_positive) == (int(target) == none_index):
        raise InvalidInputError(
            f"is_positive={is_positive} inconsistent with target {target} "
            f"(non-entity index {none_index})"
        )
    ce_w, cs_w = dispatch_weights(variant, bool(is_positive))
    if ce_w and not cs_w:
        return ce_loss_grad(z, target)
    if cs_w and not ce_w:
        return cs_loss_grad(z, target, beta)
    ce = ce_loss_grad(z, target)
    cs = cs_loss_grad(z, target, beta)
    return LossGrad(ce.loss + cs.loss, ce.grad + cs.grad)


def batch_loss_grad(
    logits: np.ndarray,
    targets: np.ndarray,
    beta: float,
    variant: LossVariant | str,
    none_index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`nrces_loss_grad` over rows of ``logits``.

    Positivity is derived from the targets.  Returns per-sample losses of
    shape ``(N,)`` and logit gradients of shape ``(N, C)``.
    """
    variant = LossVariant.parse(variant)
    beta = _check_beta(beta)
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits contain non-finite values")
    n, c = logits.shape
    rows = np.arange(n)

    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    ce_loss = -np.log(np.maximum(p[rows, targets], PROB_FLOOR))
    ce_grad = p
    ce_grad[rows, targets] -= 1.0

    s = _sigmoid(logits[rows, targets])
    sg_grad = np.zeros_like(logits)
    sg_grad[rows, targets] = s * (1.0 - s)
    cs_loss = beta * ce_loss + (1.0 - beta) * s
    cs_grad = beta * ce_grad + (1.0 - beta) * sg_grad

    (pce, pcs), (nce, ncs) = _DISPATCH[variant]
    positive = targets != none_index
    ce_w = np.where(positive, pce, nce).astype(np.float64)
    cs_w = np.where(positive, pcs, ncs).astype(np.float64)
    losses = ce_w * ce_loss + cs_w * cs_loss
    grads = ce_w[:, None] * ce_grad + cs_w[:, None] * cs_grad
    return losses, grads
