"""Adam, parameter initialisation, identification metrics and the training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalRangeError, TrainingDivergedError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr: float = 1e-3
    seed: int = 0
    lti_init_range: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # mini-batching over windows of the training series; None keeps full batch
    batch_size: int | None = None
    seq_len: int | None = None
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if (self.batch_size is None) != (self.seq_len is None):
            raise ValueError("batch_size and seq_len must be given together")


@dataclass
class MetricsReport:
    fit: float
    rmse: float

    def as_dict(self):
        return {"fit": self.fit, "rmse": self.rmse}


def fit_index(y_meas, y_sim) -> float:
    """``100 (1 - ||y_meas - y_sim|| / ||y_meas - mean(y_meas)||)`` in percent.

    Worked by hand: ``y_meas = [1, 2, 3, 4]`` has deviation norm ``sqrt(5)``,
    so ``y_sim = [1, 2, 3, 5]`` (error norm 1) scores ``100 (1 - 1/sqrt(5))``
    = 55.27864045000421; predicting zeros for ``[0, 2]`` scores
    ``100 (1 - sqrt(2))`` = -41.42135623730952.
    """
    y_meas = np.asarray(y_meas, dtype=np.float64)
    y_sim = np.asarray(y_sim, dtype=np.float64)
    if y_meas.shape != y_sim.shape:
        raise ValueError(f"shape mismatch {y_meas.shape} vs {y_sim.shape}")
    spread = np.linalg.norm(y_meas - y_meas.mean(axis=0))
    if spread == 0.0:
        raise ValueError("fit index undefined for a constant measured output")
    return float(100.0 * (1.0 - np.linalg.norm(y_meas - y_sim) / spread))


def rmse(y_meas, y_sim) -> float:
    """Root mean square error over all samples and channels.

    By hand: ``rmse([1, 2, 3, 4], [1, 2, 3, 5])`` = sqrt(1/4) = 0.5 and
    ``rmse([1, 2], [0, 0])`` = sqrt(5/2) = 1.5811388300841898.
    """
    y_meas = np.asarray(y_meas, dtype=np.float64)
    y_sim = np.asarray(y_sim, dtype=np.float64)
    if y_meas.shape != y_sim.shape:
        raise ValueError(f"shape mismatch {y_meas.shape} vs {y_sim.shape}")
    return float(np.sqrt(np.mean((y_meas - y_sim) ** 2)))


def metrics(y_meas, y_sim) -> MetricsReport:
    return MetricsReport(fit=fit_index(y_meas, y_sim), rmse=rmse(y_meas, y_sim))


def init_params(graph, cfg: TrainConfig | None = None, seed=None):
    """Draw every parameter that carries an init group; frozen or explicit values stay.

    LTI coefficients (or their reparametrisation variables) are uniform in
    ``±lti_init_range``; static-layer weights and biases uniform in
    ``±1/sqrt(fan_in)``.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    for p in graph.all_params.values():
        if p.group == "lti":
            p.value = rng.uniform(-cfg.lti_init_range, cfg.lti_init_range, p.value.shape)
        elif p.group == "static":
            bound = 1.0 / np.sqrt(p.fan_in)
            p.value = rng.uniform(-bound, bound, p.value.shape)
    return graph.param_values()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    ``params`` and ``grads`` are dicts of arrays keyed by parameter name.
    A non-finite gradient raises before anything is modified.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = theta
            continue
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = theta - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new, state


@dataclass
class TrainResult:
    params: dict
    loss_trace: np.ndarray
    train_metrics: MetricsReport
    test_metrics: MetricsReport | None = None


def _windows(T, seq_len, batch_size, rng):
    starts = rng.integers(0, T - seq_len + 1, size=batch_size)
    return [slice(s, s + seq_len) for s in starts]


def train(model, u, y, cfg: TrainConfig, test=None, init=True) -> TrainResult:
    """Fit ``model`` to ``(u, y)`` by Adam on the simulation MSE.

    ``test`` is an optional ``(u_test, y_test)`` pair evaluated after training.
    Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    u = np.asarray(u, dtype=np.float64).reshape(len(u), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    if init:
        init_params(model.graph, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    params = model.graph.param_values()
    trace = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        model.graph.set_param_values(params)
        try:
            if cfg.batch_size is None:
                loss, grads = model.loss_and_grads(u, y)
            else:
                loss, grads = 0.0, {k: np.zeros_like(v) for k, v in params.items()}
                for sl in _windows(len(u), cfg.seq_len, cfg.batch_size, rng):
                    lw, gw = model.loss_and_grads(u[sl], y[sl])
                    loss += lw / cfg.batch_size
                    for k, g in gw.items():
                        grads[k] += g / cfg.batch_size
        except NumericalRangeError as exc:
            raise TrainingDivergedError(it, str(exc)) from exc
        if not np.isfinite(loss):
            raise TrainingDivergedError(it)
        trace[it] = loss
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.6g", it, loss)
        try:
            params, state = adam_step(params, grads, state)
        except FloatingPointError as exc:
            raise TrainingDivergedError(it, str(exc)) from exc
    model.graph.set_param_values(params)
    try:
        train_metrics = metrics(y, model.simulate(u))
        test_metrics = None
        if test is not None:
            ut, yt = (np.asarray(x, dtype=np.float64) for x in test)
            test_metrics = metrics(yt.reshape(len(yt), -1), model.simulate(ut))
    except NumericalRangeError as exc:
        raise TrainingDivergedError(cfg.iterations, str(exc)) from exc
    return TrainResult(params=params, loss_trace=trace, train_metrics=train_metrics, test_metrics=test_metrics)


def smoothed(trace, window=100):
    """Trailing moving average (first ``window-1`` entries average what is available)."""
    trace = np.asarray(trace, dtype=np.float64)
    c = np.cumsum(np.insert(trace, 0, 0.0))
    idx = np.arange(1, trace.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
