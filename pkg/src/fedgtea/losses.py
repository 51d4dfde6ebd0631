"""Classification losses used by client training and server consolidation.

All of these are composites of numkit primitives, so their gradients flow
through the tape.  Class masking restricts softmax support to the classes
seen so far by adding a large negative bias to the rest.
"""

from __future__ import annotations

import numpy as np

from . import numkit as nk
from .errors import ShapeError
from .numkit import Tensor

MASKED_LOGIT_BIAS = -1e9


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def mask_bias(class_mask: np.ndarray) -> np.ndarray:
    """Additive logit bias: 0 on allowed classes, -1e9 elsewhere."""
    return np.where(np.asarray(class_mask, dtype=bool), 0.0, MASKED_LOGIT_BIAS)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits (stable via softplus)."""
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ShapeError(f"bce shapes differ: {logits.shape} vs {targets.shape}")
    return nk.mean(nk.softplus(logits) - logits * nk.constant(targets))


def masked_cross_entropy(logits: Tensor, labels: np.ndarray,
                         class_mask: np.ndarray) -> Tensor:
    """Mean cross-entropy with softmax restricted to unmasked classes."""
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[1]
    if not np.all(np.asarray(class_mask, dtype=bool)[labels]):
        raise ValueError("a target label is masked out")
    logq = nk.log_softmax(logits + nk.constant(mask_bias(class_mask)), axis=1)
    picked = nk.sum(logq * nk.constant(one_hot(labels, num_classes)), axis=1)
    return nk.neg(nk.mean(picked))


def categorical_kl(teacher_probs: np.ndarray, student_logits: Tensor,
                   class_mask: np.ndarray) -> Tensor:
    """Mean KL(teacher || student) over a batch of categorical outputs.

    The teacher side is a constant probability table supported on the
    unmasked classes; only the student's log-softmax is differentiated.
    """
    teacher_probs = np.asarray(teacher_probs, dtype=np.float64)
    if teacher_probs.shape != tuple(student_logits.shape):
        raise ShapeError(
            f"kl shapes differ: {teacher_probs.shape} vs {student_logits.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(teacher_probs > 0,
                         teacher_probs * np.log(teacher_probs), 0.0)
    entropy_term = float(plogp.sum(axis=1).mean())
    logq = nk.log_softmax(student_logits + nk.constant(mask_bias(class_mask)), axis=1)
    cross = nk.mean(nk.sum(logq * nk.constant(teacher_probs), axis=1))
    return nk.constant(entropy_term) - cross


def masked_softmax_probs(logits: np.ndarray, class_mask: np.ndarray) -> np.ndarray:
    """Plain-array softmax over the unmasked classes (teacher side)."""
    biased = logits + mask_bias(class_mask)
    shifted = biased - biased.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
