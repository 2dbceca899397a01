"""Training objectives and the joint model/alpha training loop."""
import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import pooling
from .evaluation import static_metrics, static_prediction, threshold_predictions
from .exceptions import InvalidConfigError, InvalidInputError, MissingStrongLabelsError, \
    TrainingDivergenceError
from .model import init_params, model_backward, model_forward

EPS = 1e-7


@dataclass(frozen=True)
class LossReport:
    bce: float
    penalty: float = 0.0

    @property
    def total(self):
        return self.bce + self.penalty


@dataclass
class TrainConfig:
    operator: pooling.PoolingOperator = field(default_factory=lambda: pooling.PoolingOperator("auto"))
    learning_rate: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 100
    early_stop_patience: int = 30
    lr_reduce_patience: int = 10
    lr_reduce_factor: float = 0.5
    alpha_init: float = 1.0
    seed: int = 0
    architecture: str = "linear"
    hidden: int = 16
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.operator, str):
            self.operator = pooling.PoolingOperator.parse(self.operator)
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise InvalidConfigError("max_epochs must be >= 0")
        if self.early_stop_patience < 1 or self.lr_reduce_patience < 1:
            raise InvalidConfigError("patience values must be >= 1")
        if not 0.0 < self.lr_reduce_factor < 1.0:
            raise InvalidConfigError("lr_reduce_factor must lie in (0, 1)")
        if not math.isfinite(self.alpha_init):
            raise InvalidConfigError("alpha_init must be finite")


@dataclass
class Adam:
    """Adaptive-moment optimizer over a dict of named arrays."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return replace(self, m={k: a.copy() for k, a in self.m.items()},
                       v={k: a.copy() for k, a in self.v.items()})

    def step(self, params, grads, lr):
        """Return updated copies of ``params``; moments are updated in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            out[k] = params[k] - lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
        return out


@dataclass
class TrainState:
    params: object
    alpha: pooling.AlphaVector
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    best_validation_score: float = -math.inf
    epochs_since_improvement: int = 0
    lr_wait: int = 0
    current_lr: float = 1e-2
    alpha_floor: float | None = None

    def snapshot(self):
        """Deep copy of everything except the random generator, which is shared."""
        return replace(self, params=self.params.copy(), alpha=self.alpha.with_values(self.alpha.alpha),
                       optimizer=self.optimizer.copy())


def _bce(p, y):
    pc = np.clip(p, EPS, 1.0 - EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    # clipping is flat outside [EPS, 1 - EPS], so the gradient vanishes there
    inside = (p > EPS) & (p < 1.0 - EPS)
    grad = np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0)
    return loss, grad


def mil_loss(pooled, labels):
    """Mean binary cross-entropy over bags and classes, and d(loss)/d(pooled)."""
    pooled = np.asarray(pooled, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pooled.shape != labels.shape:
        raise InvalidInputError(f"pooled {pooled.shape} and labels {labels.shape} differ in shape")
    loss, grad = _bce(pooled, labels)
    return LossReport(float(loss.mean())), grad / loss.size


def strong_loss(instances, strong_labels):
    """Mean instance-wise binary cross-entropy, with no pooling."""
    if strong_labels is None or any(s is None for s in strong_labels):
        raise MissingStrongLabelsError("strong-label training needs instance labels on every bag")
    probs = [np.asarray(p, dtype=np.float64) for p in instances]
    total = sum(p.size for p in probs)
    bce, grads = 0.0, []
    for p, s in zip(probs, strong_labels):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != p.shape:
            raise InvalidInputError(f"strong labels {s.shape} do not match predictions {p.shape}")
        loss, grad = _bce(p, s)
        bce += float(loss.sum())
        grads.append(grad / total)
    return LossReport(bce / total), grads


def _groups(batch):
    """Indices of equal-sized bags, in first-appearance order."""
    groups = {}
    for i, bag in enumerate(batch):
        groups.setdefault(bag.size, []).append(i)
    return list(groups.values())


def _pool(operator, probs, alpha, rng):
    kind = operator.kind
    if kind == "max":
        return pooling.pool_max(probs, rng)
    if kind == "mean":
        return pooling.pool_mean(probs)
    if kind == "softmax":
        return pooling.pool_softmax(probs)
    return pooling.pool_auto(probs, alpha)


def _pool_backward(operator, probs, alpha, weights, upstream):
    kind = operator.kind
    if kind in ("max", "mean"):
        return upstream[:, None, :] * weights, None
    values = np.ones(probs.shape[2]) if kind == "softmax" else alpha
    g = pooling.pool_auto_backward(probs, values, upstream)
    return g.d_instances, g.d_alpha.sum(axis=0)


def compute_gradients(params, alpha, batch, operator, rng=None):
    """Loss and exact gradients for one batch.

    Returns ``(LossReport, param_grads, alpha_grad)``; ``alpha_grad`` is None
    unless the operator learns alpha.  ``alpha`` is an AlphaVector (its
    constraint decides whether a penalty is added).
    """
    forward = {}
    for idx in _groups(batch):
        feats = np.stack([batch[i].features for i in idx])
        forward[tuple(idx)] = model_forward(params, feats)
    if not all(np.all(np.isfinite(pr)) for pr, _ in forward.values()):
        # diverged parameters; let the caller report it
        return LossReport(math.nan), None, None

    param_grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    alpha_grad = np.zeros(len(alpha)) if operator.learns_alpha else None

    if operator.kind == "strong":
        order = [i for idx in forward for i in idx]
        probs = [p for idx, (pr, _) in forward.items() for p in pr]
        report, grads = strong_loss(probs, [batch[i].strong_labels for i in order])
        pos = 0
        for idx, (pr, cache) in forward.items():
            up = np.stack(grads[pos:pos + len(idx)])
            pos += len(idx)
            for k, g in model_backward(params, cache, up).items():
                param_grads[k] += g
        return report, param_grads, None

    pooled = np.empty((len(batch), len(alpha)))
    pool_state = {}
    for idx, (probs, _) in forward.items():
        bag_pooled, weights = _pool(operator, probs, alpha, rng)
        pooled[list(idx)] = bag_pooled
        pool_state[idx] = weights
    labels = np.stack([bag.weak_labels for bag in batch])
    report, d_pooled = mil_loss(pooled, labels)

    for idx, (probs, cache) in forward.items():
        d_probs, d_alpha = _pool_backward(operator, probs, alpha, pool_state[idx], d_pooled[list(idx)])
        for k, g in model_backward(params, cache, d_probs).items():
            param_grads[k] += g
        if alpha_grad is not None:
            alpha_grad += d_alpha

    if alpha.constraint == pooling.REGULARIZED:
        penalty, d_pen = pooling.rap_penalty(alpha)
        report = LossReport(report.bce, penalty)
        alpha_grad = alpha_grad + d_pen
    return report, param_grads, alpha_grad


def make_alpha(config, n_classes, bag_size):
    op = config.operator
    if not op.learns_alpha:
        # placeholder; fixed operators never read it
        return pooling.AlphaVector(np.zeros(n_classes))
    values = np.full(n_classes, config.alpha_init)
    if op.kind == "cap":
        upper = pooling.cap_alpha_bound(op.phi_plus, bag_size)
        return pooling.project_alpha(pooling.AlphaVector(values, pooling.CAPPED, upper=upper),
                                     lower=_alpha_floor(op, bag_size))
    if op.kind == "rap":
        return pooling.AlphaVector(values, pooling.REGULARIZED, lam=op.lam)
    return pooling.AlphaVector(values)


def _alpha_floor(operator, bag_size):
    if operator.kind == "cap" and operator.phi_minus is not None:
        return pooling.min_weight_alpha_bound(operator.phi_minus, bag_size)
    return None


def init_state(config, input_dim, n_classes, bag_size):
    """Fresh parameters and optimizer.  ``bag_size`` sets the CAP bound.

    Seeds derive from ``config.seed``: one stream for parameters, one for
    shuffling and max-pooling ties.
    """
    param_seed, loop_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(config.architecture, input_dim, n_classes, param_seed, hidden=config.hidden)
    return TrainState(params=params, alpha=make_alpha(config, n_classes, bag_size),
                      optimizer=Adam(config.beta1, config.beta2, config.adam_eps),
                      rng=np.random.default_rng(loop_seed), current_lr=config.learning_rate,
                      alpha_floor=_alpha_floor(config.operator, bag_size))


def train_step(state, batch, config, batch_index=None):
    """One adaptive-moment update of the model (and alpha, for adaptive operators).

    Returns a new state and the batch LossReport.  Raises
    TrainingDivergenceError if the loss is not finite.
    """
    if not batch:
        raise InvalidInputError("empty batch")
    report, grads, alpha_grad = compute_gradients(state.params, state.alpha, batch,
                                                  config.operator, state.rng)
    if not math.isfinite(report.total):
        raise TrainingDivergenceError(f"non-finite loss {report.total} in batch {batch_index}",
                                      batch_index=batch_index, epoch=state.epoch)
    new = state.snapshot()
    values = dict(new.params.arrays)
    if alpha_grad is not None:
        values["alpha"] = new.alpha.alpha
        grads = dict(grads, alpha=alpha_grad)
    updated = new.optimizer.step(values, grads, new.current_lr)
    new.params.arrays = {k: updated[k] for k in new.params.arrays}
    if alpha_grad is not None:
        new.alpha = new.alpha.with_values(updated["alpha"])
        if new.alpha.constraint == pooling.CAPPED:
            new.alpha = pooling.project_alpha(new.alpha, lower=new.alpha_floor)
    return new, report


def predict_instances(params, bags):
    """Instance likelihoods for each bag (list of ``(m, C)`` arrays)."""
    out = [None] * len(bags)
    for idx in _groups(bags):
        probs, _ = model_forward(params, np.stack([bags[i].features for i in idx]))
        for i, p in zip(idx, probs):
            out[i] = p
    return out


def validation_score(params, bags, threshold=0.5):
    """Static macro-F1 of max-over-instances predictions against weak labels."""
    probs = predict_instances(params, bags)
    pred = threshold_predictions(np.stack([static_prediction(p) for p in probs]), threshold)
    return static_metrics(pred, np.stack([b.weak_labels for b in bags])).macro_f1


def dataset_loss(state, bags, config):
    """Mean total loss over ``bags`` in batch-sized chunks, without updating."""
    tie_rng = np.random.default_rng(config.seed)
    total = 0.0
    for start in range(0, len(bags), config.batch_size):
        batch = bags[start:start + config.batch_size]
        report, _, _ = compute_gradients(state.params, state.alpha, batch, config.operator, tie_rng)
        total += report.total * len(batch)
    return total / len(bags)


def _alpha_for_history(state, operator):
    if operator.learns_alpha:
        return [float(v) for v in state.alpha.alpha]
    return [operator.fixed_alpha] * len(state.alpha)


def train(train_bags, validation_bags, config, state=None, log=None):
    """Train with early stopping and learning-rate reduction.

    Returns ``(best_state, history)``.  ``history`` is a list of dict rows:
    a row for epoch 0 (the initial state) followed by one row per trained
    epoch, each with the mean training loss, validation macro-F1, the
    learning rate used, the alpha vector at the end of the epoch, and a
    ``best`` flag marking the epoch whose state is returned.  With
    ``max_epochs = 0`` the initial state and an empty history are returned.

    The early-stopping and learning-rate counters are independent; reducing
    the learning rate does not reset the early-stopping counter.
    """
    if not train_bags or not validation_bags:
        raise InvalidInputError("training and validation splits must be non-empty")
    if config.operator.kind == "strong" and any(b.strong_labels is None for b in train_bags):
        raise MissingStrongLabelsError("operator 'strong' needs strong labels on the training split")
    n_classes = len(train_bags[0].weak_labels)
    if state is None:
        bag_size = min(b.size for b in train_bags)
        state = init_state(config, train_bags[0].features.shape[1], n_classes, bag_size)
    history = []
    if config.max_epochs == 0:
        return state, history

    history.append({"epoch": 0, "operator": str(config.operator),
                    "train_loss": dataset_loss(state, train_bags, config),
                    "val_f1": validation_score(state.params, validation_bags, config.threshold),
                    "lr": state.current_lr, "alpha": _alpha_for_history(state, config.operator),
                    "best": 0})
    best = state.snapshot()
    best_row = None
    for epoch in range(1, config.max_epochs + 1):
        order = state.rng.permutation(len(train_bags))
        lr_used = state.current_lr
        loss_sum = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_bags[i] for i in order[start:start + config.batch_size]]
            try:
                state, report = train_step(state, batch, config, batch_index=b)
            except TrainingDivergenceError as err:
                err.epoch = epoch
                raise
            loss_sum += report.total * len(batch)
        state.epoch = epoch
        score = validation_score(state.params, validation_bags, config.threshold)
        row = {"epoch": epoch, "operator": str(config.operator), "train_loss": loss_sum / len(order),
               "val_f1": score, "lr": lr_used, "alpha": _alpha_for_history(state, config.operator),
               "best": 0}
        history.append(row)
        if log is not None:
            log(row)
        if score > state.best_validation_score:
            state.best_validation_score = score
            state.epochs_since_improvement = 0
            state.lr_wait = 0
            best = state.snapshot()
            best_row = row
        else:
            state.epochs_since_improvement += 1
            state.lr_wait += 1
            if state.lr_wait >= config.lr_reduce_patience:
                state.current_lr *= config.lr_reduce_factor
                state.lr_wait = 0
            if state.epochs_since_improvement >= config.early_stop_patience:
                break
    if best_row is not None:
        best_row["best"] = 1
    return best, history


def write_history_csv(path, history, class_names):
    """Per-epoch rows: epoch, operator, loss, validation F1, lr, best flag, alpha per class."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "operator", "train_loss", "val_f1", "lr", "best"]
                   + [f"alpha:{name}" for name in class_names])
        for row in history:
            w.writerow([row["epoch"], row["operator"], repr(float(row["train_loss"])),
                        repr(float(row["val_f1"])), repr(float(row["lr"])), row["best"]]
                       + [repr(float(a)) for a in row["alpha"]])


def read_history_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = [h.split(":", 1)[1] for h in header[6:]]
        rows = []
        for rec in reader:
            rows.append({"epoch": int(rec[0]), "operator": rec[1], "train_loss": float(rec[2]),
                         "val_f1": float(rec[3]), "lr": float(rec[4]), "best": int(rec[5]),
                         "alpha": [float(a) for a in rec[6:]]})
    return rows, names
