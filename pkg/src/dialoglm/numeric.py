"""Dense numeric kernel shared by every model.

All arrays are float64 numpy arrays: matrices are 2-d row-major, vectors
are 1-d. Gradients travel in plain dicts keyed by parameter name, with one
buffer per parameter array; a fresh dict from :func:`zero_grads` plays the
role of a gradient tape for a single training step.
"""

import numpy as np

from .errors import NumericalError

INIT_HALF_WIDTH = 0.08


def softmax(scores):
    """Probability distribution over ``scores``, stabilized by max subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise NumericalError("softmax of an empty score vector")
    if not np.all(np.isfinite(s)):
        raise NumericalError("softmax input contains non-finite entries")
    e = np.exp(s - s.max())
    return e / e.sum()


def log_softmax(scores):
    """log(softmax(scores)) without forming small intermediate probabilities."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise NumericalError("log_softmax of an empty score vector")
    if not np.all(np.isfinite(s)):
        raise NumericalError("log_softmax input contains non-finite entries")
    shifted = s - s.max()
    return shifted - np.log(np.exp(shifted).sum())


def affine_tanh(Hm, h, Pm, e):
    """tanh(Hm @ h + Pm @ e), the shared recurrence nonlinearity."""
    Hm = np.asarray(Hm)
    Pm = np.asarray(Pm)
    h = np.asarray(h)
    e = np.asarray(e)
    if Hm.ndim != 2 or Pm.ndim != 2 or h.ndim != 1 or e.ndim != 1:
        raise NumericalError("affine_tanh expects two matrices and two vectors")
    if Hm.shape[1] != h.shape[0] or Pm.shape[1] != e.shape[0] or Hm.shape[0] != Pm.shape[0]:
        raise NumericalError(
            f"affine_tanh shape mismatch: {Hm.shape}@{h.shape} + {Pm.shape}@{e.shape}"
        )
    return np.tanh(Hm @ h + Pm @ e)


def uniform_init(shape, rng):
    """Uniform init in [-0.08, 0.08], the toolkit-wide parameter scheme."""
    return rng.uniform(-INIT_HALF_WIDTH, INIT_HALF_WIDTH, size=shape)


def zero_grads(params):
    """One zeroed gradient buffer per parameter array, same shapes."""
    return {name: np.zeros_like(p) for name, p in params.items()}


def check_finite(params, what="parameters"):
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite values in {what} '{name}'")


def global_norm(grads):
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return np.sqrt(total)


def clip_global_norm(grads, max_norm):
    """Scale all gradients in place so the global norm is at most ``max_norm``.

    Only the magnitude changes; the direction is preserved. Returns the
    pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def grad_check(loss_fn, params, analytic, eps=1e-5, samples_per_array=24, rng=None):
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` re-evaluates the scalar loss at the current (temporarily
    perturbed) parameter values; ``analytic`` holds gradient buffers computed
    at the unperturbed point. For each parameter array a random coordinate
    subset of size ``samples_per_array`` is probed. The relative error per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = analytic[name].reshape(-1)
        if flat.size <= samples_per_array:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=samples_per_array, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite loss while probing '{name}'")
            numeric = (up - down) / (2.0 * eps)
            rel = abs(g[i] - numeric) / max(1e-8, abs(g[i]) + abs(numeric))
            worst = max(worst, rel)
    return worst
