"""Training objectives.

Discriminator probabilities are "probability the features came from the
source domain". All logs are clamped at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda1: float = 0.01  # target (pseudo-label) classification
    lambda2: float = 0.001  # classifier-similarity penalty
    per_layer_reg: bool = False  # sum |w1 . w2| per weight matrix instead of one flat product

    def validate(self) -> list[str]:
        return [f"loss.{name} must be >= 0" for name in ("lambda1", "lambda2") if getattr(self, name) < 0]


@dataclass
class LossReport:
    l_d: float = 0.0
    l_adv: float = 0.0
    l_cls_s: float = 0.0
    l_cls_t: float = 0.0
    reg: float = 0.0
    l_overall: float = 0.0

    CSV_HEADER = ("step", "l_d", "l_adv", "l_cls_s", "l_cls_t", "reg", "l_overall")

    def csv_row(self, step: int) -> list:
        return [step, *(repr(getattr(self, f.name)) for f in fields(self))]


def _check_probs(d: Tensor, name: str) -> None:
    if not np.all((d.data > 0.0) & (d.data < 1.0)):
        raise NumericError(f"{name}: discriminator outputs must lie strictly in (0, 1)")


def discriminator_loss(d_src: Tensor, d_trg: Tensor) -> Tensor:
    """Source features labelled 1, target features labelled 0."""
    _check_probs(d_src, "discriminator_loss")
    _check_probs(d_trg, "discriminator_loss")
    return -T.mean(T.log(d_src)) - T.mean(T.log(1.0 - d_trg))


def adversarial_loss(d_src: Tensor, d_trg: Tensor) -> Tensor:
    """Same cross-entropy with the domain labels inverted."""
    _check_probs(d_src, "adversarial_loss")
    _check_probs(d_trg, "adversarial_loss")
    return -T.mean(T.log(1.0 - d_src)) - T.mean(T.log(d_trg))


def pseudo_labels(p_t) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index. Returns constants."""
    data = p_t.data if isinstance(p_t, Tensor) else np.asarray(p_t)
    return np.argmax(data, axis=-1).astype(np.int64)


def target_cls_loss(p_t: Tensor, y_hat) -> Tensor:
    return T.cross_entropy(p_t, np.asarray(y_hat))


def source_cls_loss(p_s: Tensor, y_s) -> Tensor:
    return T.cross_entropy(p_s, np.asarray(y_s))


def classifier_regularizer(theta1: Tensor, theta2: Tensor) -> Tensor:
    """|theta1 . theta2|, zero subgradient at an exact zero."""
    if theta1.shape != theta2.shape:
        raise ShapeError(f"regularizer: length mismatch {theta1.shape} vs {theta2.shape}")
    return T.abs_(T.dot(theta1, theta2))


def per_layer_regularizer(pairs) -> Tensor:
    """Sum over weight matrices of |w1 . w2|; alternative to the flat form."""
    terms = [classifier_regularizer(T.reshape(a, (-1,)), T.reshape(b, (-1,))) for a, b in pairs]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def overall_loss(l_adv, l_cls_s, l_cls_t, reg, w: LossWeights) -> Tensor:
    """l_adv + l_cls_s + lambda1 * l_cls_t + lambda2 * reg.

    Components may be Tensors or plain floats; a non-finite component raises.
    """
    parts = {"l_adv": l_adv, "l_cls_s": l_cls_s, "l_cls_t": l_cls_t, "reg": reg}
    for name, value in parts.items():
        v = value.data if isinstance(value, Tensor) else value
        if not np.all(np.isfinite(v)):
            raise NumericError(f"overall_loss: component {name} is not finite")
    total = T.as_tensor(l_adv) + T.as_tensor(l_cls_s)
    total = total + T.as_tensor(l_cls_t) * w.lambda1
    return total + T.as_tensor(reg) * w.lambda2

