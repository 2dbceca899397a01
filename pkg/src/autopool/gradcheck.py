"""Finite-difference checks of the analytic gradients.

Two suites: the auto-pool backward pass on random columns, and the full
model -> pooling -> loss chain on a toy problem of two bags with three
instances and two classes.  Errors are entrywise relative errors
``|a - n| / max(|a|, |n|, floor)`` against central differences.
"""
import numpy as np

from . import pooling
from .model import init_params
from .objective import compute_gradients
from .synthdata import Bag

STEP = 1e-5
FLOOR = 1e-9


def rel_error(analytic, numeric, floor=FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def central_difference(f, x, step=STEP):
    """Numerical gradient of scalar ``f`` at array ``x`` (``x`` is restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def random_pool_case(rng):
    m = int(rng.integers(2, 13))
    n_classes = int(rng.integers(1, 5))
    p = rng.uniform(0.0, 1.0, size=(m, n_classes))
    alpha = rng.uniform(-5.0, 5.0, size=n_classes)
    upstream = rng.normal(size=n_classes)
    return p, alpha, upstream


def check_pooling(rng):
    """Max relative errors (d_instances, d_alpha) for one random case."""
    p, alpha, up = random_pool_case(rng)
    # perturbed entries must stay inside [0, 1]
    p = np.clip(p, 2 * STEP, 1.0 - 2 * STEP)
    grads = pooling.pool_auto_backward(p, alpha, up)

    def f():
        return float(np.dot(up, pooling.pool_auto(p, alpha)[0]))

    num_p = central_difference(f, p)
    num_a = central_difference(f, alpha)
    return rel_error(grads.d_instances, num_p), rel_error(grads.d_alpha, num_a)


TOY_OPERATORS = ("auto", "rap", "softmax", "mean", "strong")


def toy_problem(rng, operator_kind, architecture):
    d, n_classes, m = 4, 2, 3
    bags = []
    for i in range(2):
        strong = rng.integers(0, 2, size=(m, n_classes)).astype(np.int8)
        bags.append(Bag(rng.normal(size=(m, d)), strong.max(axis=0), strong, f"toy-{i}"))
    params = init_params(architecture, d, n_classes, int(rng.integers(2**31)), hidden=5)
    for v in params.arrays.values():
        v += rng.normal(scale=0.3, size=v.shape)
    values = rng.uniform(-3.0, 3.0, size=n_classes)
    if operator_kind == "rap":
        lam = float(10.0 ** rng.uniform(-3, 0))
        op = pooling.PoolingOperator("rap", lam=lam)
        alpha = pooling.AlphaVector(values, pooling.REGULARIZED, lam=lam)
    else:
        op = pooling.PoolingOperator(operator_kind)
        alpha = pooling.AlphaVector(values)
    return params, alpha, bags, op


def check_end_to_end(rng, operator_kind, architecture):
    """Max relative errors (theta, alpha) of the assembled batch gradient."""
    params, alpha, bags, op = toy_problem(rng, operator_kind, architecture)
    _, grads, alpha_grad = compute_gradients(params, alpha, bags, op)
    theta_err = 0.0
    for key, arr in params.arrays.items():
        num = central_difference(lambda: compute_gradients(params, alpha, bags, op)[0].total, arr)
        theta_err = max(theta_err, rel_error(grads[key], num))
    if alpha_grad is None:
        return theta_err, None
    a = alpha.alpha

    def f():
        return compute_gradients(params, alpha.with_values(a), bags, op)[0].total

    return theta_err, rel_error(alpha_grad, central_difference(f, a))


def run(seed=0, trials=200):
    """Run both suites; returns ``{component: max relative error}``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    errors = {"pooling.d_instances": 0.0, "pooling.d_alpha": 0.0,
              "end_to_end.theta": 0.0, "end_to_end.alpha": 0.0}
    for _ in range(trials):
        e_p, e_a = check_pooling(rng)
        errors["pooling.d_instances"] = max(errors["pooling.d_instances"], e_p)
        errors["pooling.d_alpha"] = max(errors["pooling.d_alpha"], e_a)
    for t in range(trials):
        kind = TOY_OPERATORS[t % len(TOY_OPERATORS)]
        arch = ("linear", "mlp")[(t // len(TOY_OPERATORS)) % 2]
        e_t, e_a = check_end_to_end(rng, kind, arch)
        errors["end_to_end.theta"] = max(errors["end_to_end.theta"], e_t)
        if e_a is not None:
            errors["end_to_end.alpha"] = max(errors["end_to_end.alpha"], e_a)
    return errors
