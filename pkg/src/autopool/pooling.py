"""Pooling operators that aggregate instance likelihoods into bag likelihoods.

All operators accept an ``(m, C)`` matrix of instance likelihoods (one
column per class) or a stacked ``(B, m, C)`` batch of equal-sized bags, and
return the pooled ``(C,)`` / ``(B, C)`` likelihoods together with the
pooling weights, which have the same shape as the input.

The auto-pool operator weights instance ``j`` of class ``c`` proportionally
to ``exp(alpha_c * p_j)``: ``alpha = 0`` is mean pooling, ``alpha = 1``
soft-max pooling, and ``alpha -> +inf`` / ``-inf`` approach max / min
pooling.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import as_batch, kernels
from .exceptions import InvalidInputError, InvalidParameterError

UNCONSTRAINED = "unconstrained"
CAPPED = "capped"
REGULARIZED = "regularized"

OPERATOR_KINDS = ("max", "mean", "softmax", "auto", "cap", "rap", "strong")


@dataclass(frozen=True)
class AlphaVector:
    """Per-class auto-pool parameters and the constraint attached to them."""

    alpha: np.ndarray
    constraint: str = UNCONSTRAINED
    upper: float | None = None
    lam: float | None = None

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "alpha", alpha)
        if alpha.size < 1:
            raise InvalidParameterError("alpha must have at least one entry")
        if self.constraint == CAPPED:
            if self.upper is None or math.isnan(self.upper):
                raise InvalidParameterError("capped alpha requires an upper bound")
        elif self.constraint == REGULARIZED:
            if self.lam is None or not self.lam >= 0:
                raise InvalidParameterError(f"lambda must be >= 0, got {self.lam}")
        elif self.constraint != UNCONSTRAINED:
            raise InvalidParameterError(f"unknown constraint {self.constraint!r}")

    def __len__(self):
        return self.alpha.size

    def with_values(self, values):
        return AlphaVector(values, self.constraint, self.upper, self.lam)


@dataclass(frozen=True)
class WeightBounds:
    lower: float
    upper: float


@dataclass(frozen=True)
class PoolingGradients:
    d_instances: np.ndarray
    d_alpha: np.ndarray


@dataclass(frozen=True)
class PoolingOperator:
    """Which pooling rule to train with.

    ``kind`` is one of ``max``, ``mean``, ``softmax``, ``auto``, ``cap``,
    ``rap`` or ``strong`` (no pooling; the loss is taken per instance).
    ``lam`` is the RAP penalty weight and ``phi_plus`` the CAP maximum
    single-instance weight.  ``phi_minus`` optionally adds the matching
    lower bound for CAP; it is off by default.
    """

    kind: str
    lam: float = 0.0
    phi_plus: float = 0.5
    phi_minus: float | None = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise InvalidParameterError(f"unknown pooling operator {self.kind!r}")
        if self.kind == "rap" and not self.lam >= 0:
            raise InvalidParameterError(f"RAP lambda must be >= 0, got {self.lam}")

    @property
    def learns_alpha(self):
        return self.kind in ("auto", "cap", "rap")

    @property
    def fixed_alpha(self):
        """Effective alpha of the non-adaptive operators, used for reporting."""
        return {"mean": 0.0, "softmax": 1.0, "max": math.inf, "strong": math.nan}.get(self.kind)

    @classmethod
    def parse(cls, text):
        """Parse ``"auto"``, ``"cap"``, ``"cap:0.4"``, ``"rap:1e-3"`` and friends."""
        text = str(text).strip().lower()
        kind, _, arg = text.partition(":")
        if kind not in OPERATOR_KINDS:
            raise InvalidParameterError(f"unknown pooling operator {text!r}")
        try:
            if kind == "rap":
                if not arg:
                    raise InvalidParameterError("rap requires a lambda, e.g. 'rap:1e-3'")
                return cls("rap", lam=float(arg))
            if kind == "cap" and arg:
                return cls("cap", phi_plus=float(arg))
        except ValueError as err:
            raise InvalidParameterError(f"bad operator argument in {text!r}") from err
        if arg:
            raise InvalidParameterError(f"operator {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        if self.kind == "rap":
            return f"rap:{self.lam:g}"
        if self.kind == "cap" and self.phi_plus != 0.5:
            return f"cap:{self.phi_plus:g}"
        return self.kind


def validate_likelihoods(p):
    """Check the instance-likelihood contract and return a float64 batch view."""
    batch, squeeze = as_batch(p)
    if batch.ndim != 3:
        raise InvalidInputError(f"expected an (m, C) or (B, m, C) array, got shape {np.shape(p)}")
    if batch.shape[1] < 1 or batch.shape[2] < 1:
        raise InvalidInputError(f"empty bag or class axis: shape {np.shape(p)}")
    if not np.all((batch >= 0.0) & (batch <= 1.0)):
        raise InvalidInputError("instance likelihoods must lie in [0, 1]")
    return batch, squeeze


def _alpha_values(alpha, n_classes):
    values = alpha.alpha if isinstance(alpha, AlphaVector) else np.asarray(alpha, dtype=np.float64)
    values = np.broadcast_to(values, (n_classes,)) if values.ndim == 0 else values
    if values.shape != (n_classes,):
        raise InvalidParameterError(f"alpha has {values.size} entries for {n_classes} classes")
    if not np.all(np.isfinite(values)):
        raise InvalidParameterError("alpha entries must be finite")
    return np.ascontiguousarray(values, dtype=np.float64)


def _unbatch(squeeze, *arrays):
    if squeeze:
        return tuple(a[0] for a in arrays)
    return arrays


def pool_max(p, rng=None):
    """Max pooling with one-hot (sub-gradient) weights.

    Ties are broken uniformly at random with ``rng``; the generator is only
    consumed when a column actually has several maximizers.
    """
    batch, squeeze = validate_likelihoods(p)
    n_bags, m, n_classes = batch.shape
    top = batch.max(axis=1)
    is_max = batch == top[:, None, :]
    idx = np.argmax(is_max, axis=1)
    n_ties = is_max.sum(axis=1)
    if np.any(n_ties > 1):
        if rng is None:
            rng = np.random.default_rng(0)
        for b, c in zip(*np.nonzero(n_ties > 1)):
            idx[b, c] = rng.choice(np.flatnonzero(is_max[b, :, c]))
    weights = np.zeros_like(batch)
    np.put_along_axis(weights, idx[:, None, :], 1.0, axis=1)
    return _unbatch(squeeze, top, weights)


def pool_mean(p):
    batch, squeeze = validate_likelihoods(p)
    weights = np.full_like(batch, 1.0 / batch.shape[1])
    return _unbatch(squeeze, kernels.weighted_sum(weights, batch), weights)


def pool_softmax(p):
    """Soft-max weighted average, evaluated directly from its definition."""
    batch, squeeze = validate_likelihoods(p)
    e = np.exp(batch)
    weights = e / e.sum(axis=1, keepdims=True)
    return _unbatch(squeeze, np.sum(weights * batch, axis=1), weights)


def pool_auto(p, alpha):
    """Auto-pool each class column with its own ``alpha_c``.

    Exponents are shifted by their column maximum, so any finite alpha is
    safe.
    """
    batch, squeeze = validate_likelihoods(p)
    values = _alpha_values(alpha, batch.shape[2])
    pooled, weights = kernels.autopool_forward(batch, values)
    return _unbatch(squeeze, pooled, weights)


def pool_auto_backward(p, alpha, upstream):
    """Exact gradients of auto-pooling, scaled by ``upstream``.

    ``upstream`` holds dLoss/dPooled per class (``(C,)``, or ``(B, C)`` for
    a batch).  Returns dLoss/dp per instance and dLoss/dalpha per class; for
    a batch, ``d_alpha`` is per bag, ``(B, C)``.
    """
    batch, squeeze = validate_likelihoods(p)
    values = _alpha_values(alpha, batch.shape[2])
    up = np.ascontiguousarray(np.broadcast_to(
        np.asarray(upstream, dtype=np.float64), (batch.shape[0], batch.shape[2])))
    pooled, weights = kernels.autopool_forward(batch, values)
    d_p, d_alpha = kernels.autopool_backward(batch, values, weights, pooled, up)
    d_p, d_alpha = _unbatch(squeeze, d_p, d_alpha)
    return PoolingGradients(d_p, d_alpha)


def weight_bounds(alpha, m):
    """Range of any single auto-pool weight in a bag of ``m`` likelihoods."""
    if m < 1:
        raise InvalidParameterError(f"bag size must be >= 1, got {m}")
    if not math.isfinite(alpha):
        raise InvalidParameterError("alpha must be finite")
    if m == 1:
        return WeightBounds(1.0, 1.0)
    # the interval depends on |alpha| only; e^-|alpha| keeps it finite
    t = math.exp(-abs(alpha))
    return WeightBounds(t / (t + (m - 1)), 1.0 / (1.0 + (m - 1) * t))


def _check_phi_m(m):
    if m < 2:
        raise InvalidParameterError(f"alpha bounds need a bag size >= 2, got {m}")


def cap_alpha_bound(phi_plus, m):
    """Largest alpha whose maximal weight does not exceed ``phi_plus``."""
    _check_phi_m(m)
    if not (1.0 / m <= phi_plus < 1.0):
        raise InvalidParameterError(f"phi_plus must lie in [1/m, 1) = [{1.0 / m:g}, 1), got {phi_plus}")
    return math.log(phi_plus / (1.0 - phi_plus)) + math.log(m - 1)


def min_weight_alpha_bound(phi_minus, m):
    """Smallest alpha whose minimal weight is at least ``phi_minus``."""
    _check_phi_m(m)
    if not (0.0 < phi_minus <= 1.0 / m):
        raise InvalidParameterError(f"phi_minus must lie in (0, 1/m], got {phi_minus}")
    return math.log(phi_minus / (1.0 - phi_minus)) + math.log(m - 1)


def project_alpha(a, lower=None):
    """Clamp a capped AlphaVector to its upper bound (and optional lower bound)."""
    if a.constraint != CAPPED:
        raise InvalidParameterError("project_alpha requires a capped AlphaVector")
    values = np.minimum(a.alpha, a.upper)
    if lower is not None:
        values = np.maximum(values, lower)
    return a.with_values(values)


def rap_penalty(a):
    """Quadratic penalty ``lam * ||alpha||^2`` and its gradient."""
    if a.constraint != REGULARIZED:
        raise InvalidParameterError("rap_penalty requires a regularized AlphaVector")
    return float(a.lam * np.dot(a.alpha, a.alpha)), 2.0 * a.lam * a.alpha
