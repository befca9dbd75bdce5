import numpy as np
from scipy.special import log_softmax


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Per-example ``-log softmax(logits)[label]`` and its logits gradient.

    Accepts a single rank-1 logit vector with an int label, or a batch
    ``(N, C)`` with an int array of labels.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels))
    n_classes = z.shape[-1]
    if y.shape[0] != z.shape[0]:
        raise ValueError("one label per logit row is required")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    logp = log_softmax(z, axis=-1)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, y]
    grad = np.exp(logp)
    grad[rows, y] -= 1
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def soft_cross_entropy(logits, targets):
    """Cross-entropy against soft target distributions (rows sum to one)."""
    logp = log_softmax(logits, axis=-1)
    return -(targets * logp).sum(axis=-1), np.exp(logp) - targets


def margin(logits, labels):
    """Largest wrong-class logit minus the true-class logit (> 0 means wrong)."""
    rows = np.arange(logits.shape[0])
    true = logits[rows, labels]
    others = logits.copy()
    others[rows, labels] = -np.inf
    return others.max(axis=-1) - true


def targeted_margin(logits, labels, targets):
    """``logit[target] - logit[label]`` and its logits gradient."""
    rows = np.arange(logits.shape[0])
    value = logits[rows, targets] - logits[rows, labels]
    grad = np.zeros_like(logits)
    grad[rows, targets] += 1
    grad[rows, labels] -= 1
    return value, grad
