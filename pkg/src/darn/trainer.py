"""Multi-source adversarial training with per-step domain weights.

Each step scores every source domain with ``g_i = task_loss_i + disc_i``,
turns the scores into simplex weights ``alpha`` and minimises

    <g, alpha> + tau * ||alpha||_2

over the feature extractor and label head while the per-domain classifiers
play the adversary (their gradient passes through a reversal layer into the
feature extractor).
"""
import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import discrepancy as disc_mod
from .data import batch_indices
from .errors import DivergenceError, InvalidInputError
from .nn import (
    GradReversal,
    forward as model_forward,
    init_model,
    logistic_loss,
    make_optimizer,
    optimizer_step,
    softmax_cross_entropy,
    squared_loss,
)
from .simplex import aggregate_objective, darn_jvp, darn_project, softmax

AGGREGATORS = ("darn", "uniform", "softmax_gamma", "onehot")


@dataclass
class TrainConfig:
    tau: float = 1.0
    aggregator: str = "darn"
    gamma: float = 1.0
    epochs: int = 30
    batch_size: int = 20
    optimizer: str = "sgd_momentum"
    lr: float = 0.01
    momentum: float = 0.9
    rho: float = 0.95
    eps: float = 1e-6
    dropout: float = 0.0
    seed: int = 0
    task: str = "classification"
    gradient_path: str = "jacobian"
    feature_sizes: list = field(default_factory=lambda: [32, 32])
    domain_hidden: list = field(default_factory=lambda: [16])
    power_iters: int = disc_mod.POWER_MAX_ITERS
    power_tol: float = disc_mod.POWER_TOL
    ema_decay: float = 0.9

    def validate(self):
        problems = []
        if not self.tau > 0:
            problems.append(("tau", "must be > 0"))
        if self.aggregator not in AGGREGATORS:
            problems.append(("aggregator", f"must be one of {AGGREGATORS}"))
        if self.aggregator == "softmax_gamma" and not self.gamma > 0:
            problems.append(("gamma", "must be > 0 for the softmax_gamma aggregator"))
        if self.task not in ("classification", "regression"):
            problems.append(("task", "must be classification or regression"))
        if self.gradient_path not in ("jacobian", "envelope"):
            problems.append(("gradient_path", "must be jacobian or envelope"))
        if self.optimizer not in ("sgd_momentum", "adadelta"):
            problems.append(("optimizer", "must be sgd_momentum or adadelta"))
        if self.epochs < 1:
            problems.append(("epochs", "must be >= 1"))
        if self.batch_size < 1:
            problems.append(("batch_size", "must be >= 1"))
        if not 0 <= self.dropout < 1:
            problems.append(("dropout", "must be in [0, 1)"))
        if problems:
            field_name, msg = problems[0]
            raise InvalidInputError(f"{field_name}: {msg}")
        return self


@dataclass
class GVector:
    task_losses: np.ndarray
    discs: np.ndarray

    @property
    def g(self):
        return self.task_losses + self.discs

    def z(self, tau):
        return -self.g / tau


def compute_g(task_losses, disc_estimates):
    t = np.asarray(task_losses, dtype=np.float64)
    d = np.asarray(disc_estimates, dtype=np.float64)
    if t.shape != d.shape:
        raise InvalidInputError("task losses and disc estimates differ in length")
    bad = np.flatnonzero(~np.isfinite(t + d))
    if bad.size:
        raise DivergenceError(f"non-finite score for source domain {bad[0]}", domain=int(bad[0]))
    return GVector(t, d)


def _aggregate(gvec, config):
    g = gvec.g
    k = g.size
    if config.aggregator == "darn":
        res = darn_project(gvec.z(config.tau))
        return res.alpha, res
    if config.aggregator == "uniform":
        return np.full(k, 1.0 / k), None
    if config.aggregator == "softmax_gamma":
        return softmax(-config.gamma * g), None
    alpha = np.zeros(k)
    alpha[int(np.argmin(g))] = 1.0
    return alpha, None


def aggregate(gvec, config):
    """Domain weights for the scores in ``gvec`` under ``config.aggregator``."""
    return _aggregate(gvec, config)[0]


def objective_grad_wrt_g(gvec, alpha, result, config):
    """d/dg of ``<g, alpha(g)> + tau ||alpha(g)||``.

    Through the projection this is ``alpha + J (z - alpha/||alpha||)``; the
    second term vanishes at the exact optimum (envelope theorem), so the
    ``envelope`` path returns ``alpha`` alone. Baseline aggregators treat
    alpha as constant.
    """
    if result is None or config.gradient_path == "envelope":
        return alpha.copy()
    z = gvec.z(config.tau)
    return alpha + darn_jvp(z, result, (z - z.max()) - alpha / np.linalg.norm(alpha))


@dataclass
class StepMetrics:
    alpha: np.ndarray
    task_losses: np.ndarray
    discs: np.ndarray
    objective: float

    @property
    def g(self):
        return self.task_losses + self.discs


def step_gradients(model, source_batches, target_x, config, step_seed):
    """Gradients (congruent with ``model.arrays()``) and metrics for one step.

    Parameter gradients for the feature extractor and label head are those of
    the objective; domain heads receive the gradient that decreases their
    classification loss.
    """
    k = len(source_batches)
    rng = np.random.default_rng(step_seed)
    fe, head = model.feature_extractor, model.label_head
    classification = config.task == "classification"

    feats, fe_caches, head_caches, dlogits = [], [], [], []
    task = np.empty(k)
    for i, (X, y) in enumerate(source_batches):
        F, c = fe.forward(X, train=True, rng=rng)
        out, ch = head.forward(F, train=True, rng=rng)
        if classification:
            task[i], dl = softmax_cross_entropy(out, y)
        else:
            task[i], dl = squared_loss(out, y)
        feats.append(F)
        fe_caches.append(c)
        head_caches.append(ch)
        dlogits.append(dl)
    F_t, c_t = fe.forward(target_x, train=True, rng=rng)
    n_t = F_t.shape[0]

    discs = np.empty(k)
    dom = []  # per-domain data needed for the backward pass
    for i in range(k):
        if classification:
            H = GradReversal.forward(np.vstack([feats[i], F_t]))
            logits, cd = model.domain_heads[i].forward(H, train=True, rng=rng)
            is_target = np.r_[np.zeros(feats[i].shape[0]), np.ones(n_t)]
            eps_hat, dl = logistic_loss(logits, is_target)
            discs[i] = disc_mod.disc_classification(eps_hat)
            dom.append((cd, dl))
        else:
            value, d_t, d_s = disc_mod.disc_regression_with_grad(
                F_t, feats[i], config.power_iters, config.power_tol, seed=[*np.atleast_1d(step_seed), i]
            )
            discs[i] = value
            dom.append((d_t, d_s))

    for i in range(k):
        if not np.isfinite(task[i]) or not np.isfinite(discs[i]):
            raise DivergenceError(f"non-finite loss on source domain {i}", domain=i)
    gvec = compute_g(task, discs)
    alpha, result = _aggregate(gvec, config)
    objective = aggregate_objective(gvec.g, alpha, config.tau)
    w = objective_grad_wrt_g(gvec, alpha, result, config)

    grads = model.zero_grads()
    offs = model.offsets()

    def add(stack_idx, gs):
        for j, g in enumerate(gs):
            grads[offs[stack_idx] + j] += g

    dF = [None] * k
    dF_t = np.zeros_like(F_t)
    for i in range(k):
        g_head, dF[i] = head.backward(head_caches[i], w[i] * dlogits[i])
        add(1, g_head)
    for i in range(k):
        if classification:
            cd, dl = dom[i]
            # disc = 2 (1 - eps_hat): the head descends on 2 w_i eps_hat; the
            # reversal hands the feature extractor the opposite direction
            g_dom, dH = model.domain_heads[i].backward(cd, 2.0 * w[i] * dl)
            add(2 + i, g_dom)
            dH = GradReversal.backward(dH)
            n_i = feats[i].shape[0]
            dF[i] = dF[i] + dH[:n_i]
            dF_t += dH[n_i:]
        else:
            d_t, d_s = dom[i]
            dF[i] = dF[i] + w[i] * d_s
            dF_t += w[i] * d_t
    for i in range(k):
        g_fe, _ = fe.backward(fe_caches[i], dF[i], need_dx=False)
        add(0, g_fe)
    g_fe, _ = fe.backward(c_t, dF_t, need_dx=False)
    add(0, g_fe)

    return grads, StepMetrics(alpha, task, discs, objective)


def train_step(model, opt_state, source_batches, target_x, config, step_seed):
    grads, metrics = step_gradients(model, source_batches, target_x, config, step_seed)
    try:
        optimizer_step(opt_state, model.arrays(), grads)
    except DivergenceError as e:
        raise DivergenceError(f"{e} after step with alpha={metrics.alpha.tolist()}") from e
    model.bump()
    return model, metrics


def evaluate(model, dataset, task="classification"):
    if not dataset.labelled:
        raise InvalidInputError("evaluation needs a labelled dataset")
    out, _ = model_forward(model, dataset.features, mode="eval")
    y = np.asarray(dataset.labels)
    if task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == y))
    r = out.ravel() - y.ravel()
    return float(np.mean(r * r))


# -- logging -----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    alpha: np.ndarray
    alpha_ema: np.ndarray
    task_loss: np.ndarray
    disc: np.ndarray
    objective: float
    eval_metric: float


@dataclass
class TrainLog:
    domain_names: list
    task: str
    config: dict
    records: list = field(default_factory=list)

    @property
    def eval_metric(self):
        return [r.eval_metric for r in self.records]

    def alpha_ema(self):
        return np.array([r.alpha_ema for r in self.records])

    def write_trainlog_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "domain", "alpha", "alpha_ema", "task_loss", "disc"])
            for r in self.records:
                for i, name in enumerate(self.domain_names):
                    w.writerow([r.epoch, name, *(repr(float(a[i])) for a in (r.alpha, r.alpha_ema, r.task_loss, r.disc))])

    def write_eval_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "eval_metric"])
            for r in self.records:
                w.writerow([r.epoch, repr(float(r.eval_metric))])

    def summary(self):
        last = self.records[-1]
        metric = "accuracy" if self.task == "classification" else "mse"
        return {
            "epochs": len(self.records),
            "final_eval_metric": float(last.eval_metric),
            "eval_metric_name": metric,
            "final_alpha": dict(zip(self.domain_names, map(float, last.alpha))),
            "final_alpha_ema": dict(zip(self.domain_names, map(float, last.alpha_ema))),
            "final_task_loss": dict(zip(self.domain_names, map(float, last.task_loss))),
            "final_disc": dict(zip(self.domain_names, map(float, last.disc))),
            "final_objective": float(last.objective),
            "config": self.config,
        }


def _epoch_batches(n, batch_size, n_steps, seed):
    """``n_steps`` index batches, reshuffling whenever the domain runs out."""
    out = []
    rep = 0
    while len(out) < n_steps:
        out += batch_indices(n, batch_size, [*seed, rep])
        rep += 1
    return out[:n_steps]


def train(dataset, config, model=None):
    config.validate()
    k = dataset.k
    classification = config.task == "classification"
    if classification:
        n_out = max(2, int(max(np.max(s.labels) for s in dataset.sources)) + 1)
    else:
        n_out = 1
    if model is None:
        model = init_model(
            dataset.dim,
            config.feature_sizes,
            n_out,
            k if classification else 0,
            domain_hidden=config.domain_hidden,
            dropout=config.dropout,
            seed=[config.seed, 1],
        )
    hyper = {"lr": config.lr}
    if config.optimizer == "sgd_momentum":
        hyper["momentum"] = config.momentum
    else:
        hyper.update(rho=config.rho, eps=config.eps)
    opt = make_optimizer(config.optimizer, model.arrays(), **hyper)

    log = TrainLog([s.name for s in dataset.sources], config.task, asdict(config))
    n_steps = math.ceil(max(len(s) for s in dataset.sources) / config.batch_size)
    ema = None
    for epoch in range(config.epochs):
        plans = [_epoch_batches(len(s), config.batch_size, n_steps, [config.seed, 2, epoch, i]) for i, s in enumerate(dataset.sources)]
        tplan = _epoch_batches(len(dataset.target_train), config.batch_size, n_steps, [config.seed, 3, epoch])
        sums = np.zeros((3, k))
        obj = 0.0
        for step in range(n_steps):
            batches = [dataset.sources[i].take(plans[i][step]) for i in range(k)]
            xt, _ = dataset.target_train.take(tplan[step])
            _, m = train_step(model, opt, batches, xt, config, [config.seed, 4, epoch, step])
            ema = m.alpha.copy() if ema is None else config.ema_decay * ema + (1 - config.ema_decay) * m.alpha
            sums += [m.alpha, m.task_losses, m.discs]
            obj += m.objective
        sums /= n_steps
        log.records.append(
            EpochRecord(epoch + 1, sums[0], ema.copy(), sums[1], sums[2], obj / n_steps, evaluate(model, dataset.target_eval, config.task))
        )
    return model, log


def refit_discs(model, dataset, steps=2000, lr=0.1, seed=0):
    """Classification disc per source with the feature extractor frozen.

    Fresh copies of the domain heads are fitted by full-batch SGD on all
    source and target-train rows, so the returned values approximate the
    minimum over domain classifiers rather than the in-training estimate.
    """
    if not model.domain_heads:
        raise InvalidInputError("model has no domain heads")
    F_t, _ = model.feature_extractor.forward(dataset.target_train.features)
    out = np.empty(dataset.k)
    for i, src in enumerate(dataset.sources):
        F_s, _ = model.feature_extractor.forward(src.features)
        H = np.vstack([F_s, F_t])
        is_target = np.r_[np.zeros(len(F_s)), np.ones(len(F_t))]
        head = init_model(1, [H.shape[1]], 1, 1, domain_hidden=model.domain_heads[i].sizes[1:-1], seed=[seed, i]).domain_heads[0]
        opt = make_optimizer("sgd_momentum", head.arrays(), lr=lr, momentum=0.9)
        for _ in range(steps):
            logits, cache = head.forward(H)
            _, dl = logistic_loss(logits, is_target)
            grads, _ = head.backward(cache, dl, need_dx=False)
            optimizer_step(opt, head.arrays(), grads)
            head.version += 1
        eps_hat = disc_mod.domain_classifier_error(head.forward(H)[0], is_target)
        out[i] = disc_mod.disc_classification(eps_hat)
    return out
