"""Raw/augmented self-distillation at the logit level.

The augmented branch sees zoomed-in discriminative detail, so by default it
acts as the (stop-gradient) teacher and the raw branch is pulled toward it
with a KL divergence. Training this way lets inference run on the raw
branch alone; ``predict`` never touches the augmented path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import Head
from .tensor import Tensor


@dataclass
class LogitPair:
    y_raw: Tensor
    y_aug: Tensor
    temperature: float = 1.0

    def __post_init__(self):
        if self.y_raw.shape != self.y_aug.shape:
            raise ValueError(
                f"LogitPair: logit lengths differ, {self.y_raw.shape} vs {self.y_aug.shape}"
            )
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError(f"LogitPair: temperature must be finite positive, got {self.temperature}")


def ssdt_loss(pair: LogitPair, teacher: str = "aug") -> Tensor:
    """KL(teacher || student) over temperature-softened class distributions.

    The teacher distribution is detached, so gradient flows to the student
    logits only (the raw branch under the default direction).
    """
    if teacher == "aug":
        t_logits, s_logits = pair.y_aug, pair.y_raw
    elif teacher == "raw":
        t_logits, s_logits = pair.y_raw, pair.y_aug
    else:
        raise ValueError(f"ssdt_loss: teacher must be 'aug' or 'raw', got {teacher!r}")

    inv_t = 1.0 / pair.temperature
    z = t_logits.data * inv_t
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    # sum p*log p with the 0*log(0) = 0 convention for saturated teachers
    entropy_term = float(np.sum(np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)))

    log_q = T.log_softmax(T.mul_scalar(s_logits, inv_t))
    cross = T.sum_all(T.mul(log_q, Tensor(p)))
    return T.add_scalar(T.neg(cross), entropy_term)


def predict(e_raw: Tensor, head: Head) -> int:
    """Argmax class of the raw-branch logits; ties go to the smallest index."""
    logits = head.forward(e_raw)
    return int(np.argmax(logits.data))
