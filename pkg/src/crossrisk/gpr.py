"""Gaussian-process velocity-field regression and iterative trajectory rollout.

Each maneuver/direction cluster gets a pair of GPs mapping planar position to
one velocity component each. Kernels are the unit-amplitude radial basis
function and rational quadratic over Euclidean distance; targets are
standardized per cluster so a zero prior mean is appropriate. Hyperparameters
(log length scale, log shape for RQ, log noise variance) are optimized by
Adam on the negated log marginal likelihood with analytic gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import InputError, NumericalError
from .trajectory import Dataset, Direction, Maneuver, SUPPORTED_MANEUVERS

KERNEL_KINDS = ("rbf", "rq")

#: Hard ceiling for jitter escalation when a covariance resists factorization.
MAX_JITTER = 1e-4

MODEL_FILE_VERSION = 1


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "rq"
    length_scale: float = 1.0
    rq_alpha: float = 1.0
    noise_variance: float = 0.1
    jitter: float = 1e-6

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise InputError(f"unknown kernel kind: {self.kind!r}")
        if self.length_scale <= 0 or self.rq_alpha <= 0:
            raise InputError("length_scale and rq_alpha must be positive")
        if self.noise_variance < 0:
            raise InputError("noise_variance must be nonnegative")


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


def kernel_matrix(cfg: KernelConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = _sq_dists(a, b)
    if cfg.kind == "rbf":
        return np.exp(-d2 / (2.0 * cfg.length_scale**2))
    base = 1.0 + d2 / (2.0 * cfg.rq_alpha * cfg.length_scale**2)
    return base ** (-cfg.rq_alpha)


def kernel_eval(cfg: KernelConfig, a: Sequence[float], b: Sequence[float]) -> float:
    """Covariance between two positions; 1.0 at zero distance."""
    return float(kernel_matrix(cfg, np.asarray(a)[None, :], np.asarray(b)[None, :])[0, 0])


@dataclass
class GprModel:
    """A fitted single-output GP: position -> one velocity component.

    ``train_y`` holds raw targets; the factorization and ``alpha_vec`` are in
    standardized target space (``y_mean``/``y_std``). Instances are immutable
    after construction and safe to share across threads.
    """

    kernel: KernelConfig
    train_x: np.ndarray
    train_y: np.ndarray
    y_mean: float
    y_std: float
    chol: np.ndarray
    alpha_vec: np.ndarray
    jitter_used: float
    loss_trace: list = field(default_factory=list)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]


def _factorize(cfg: KernelConfig, x: np.ndarray, y_standardized: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray, float]:
    """Cholesky of K + (noise + jitter) I, escalating jitter up to MAX_JITTER."""
    k = kernel_matrix(cfg, x, x)
    jitter = cfg.jitter
    while True:
        try:
            chol = cholesky(
                k + (cfg.noise_variance + jitter) * np.eye(len(x)), lower=True
            )
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER:
                raise NumericalError(
                    "covariance matrix is not positive definite even at "
                    f"jitter={MAX_JITTER}"
                )
    alpha_vec = cho_solve((chol, True), y_standardized)
    return chol, alpha_vec, jitter


def build_gpr_model(inputs: np.ndarray, targets: np.ndarray, cfg: KernelConfig,
                    standardize: bool = True) -> GprModel:
    """Condition a GP with fixed hyperparameters on (position, velocity) data."""
    x = np.asarray(inputs, dtype=float).reshape(-1, 2)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree in length")
    if x.shape[0] < 1:
        raise ValueError("need at least one training point")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("training data must be finite")
    if standardize:
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if y_std < 1e-12:
            y_std = 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    ys = (y - y_mean) / y_std
    chol, alpha_vec, jitter = _factorize(cfg, x, ys)
    return GprModel(kernel=cfg, train_x=x, train_y=y, y_mean=y_mean, y_std=y_std,
                    chol=chol, alpha_vec=alpha_vec, jitter_used=jitter)


def log_marginal_likelihood(model: GprModel) -> float:
    """Closed-form Gaussian log evidence of the standardized targets."""
    ys = (model.train_y - model.y_mean) / model.y_std
    n = model.n_train
    quad = float(ys @ model.alpha_vec)
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.chol))))
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)


def posterior_predict(model: GprModel, query: Sequence[float]) -> tuple[float, float]:
    """Predictive mean and variance (including observation noise) at one position."""
    means, variances = posterior_predict_batch(model, np.asarray(query, dtype=float)[None, :])
    return float(means[0]), float(variances[0])


def posterior_predict_batch(model: GprModel, queries: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    k_star = kernel_matrix(model.kernel, model.train_x, q)  # (n, m)
    mean_std = k_star.T @ model.alpha_vec
    v = solve_triangular(model.chol, k_star, lower=True)
    var_std = 1.0 - np.sum(v * v, axis=0) + model.kernel.noise_variance
    var_std = np.maximum(var_std, 0.0)
    return model.y_mean + model.y_std * mean_std, (model.y_std**2) * var_std


# ---------------------------------------------------------------------------
# Hyperparameter optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSettings:
    learning_rate: float = 0.1
    iterations: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    early_stop_tol: float = 1e-4
    early_stop_window: int = 10
    init_noise: float = 0.1
    seed: int = 0


def _theta_to_config(theta: np.ndarray, kind: str, jitter: float) -> KernelConfig:
    if kind == "rq":
        log_ls, log_alpha, log_noise = theta
        return KernelConfig(kind=kind, length_scale=math.exp(log_ls),
                            rq_alpha=math.exp(log_alpha),
                            noise_variance=math.exp(log_noise), jitter=jitter)
    log_ls, log_noise = theta
    return KernelConfig(kind=kind, length_scale=math.exp(log_ls),
                        noise_variance=math.exp(log_noise), jitter=jitter)


def gpr_loss_and_grad(theta: np.ndarray, x: np.ndarray, ys: np.ndarray,
                      kind: str, jitter: float) -> tuple[float, np.ndarray]:
    """Negated log marginal likelihood and its gradient in log-parameter space.

    Parameters are ``(log length_scale, [log rq_alpha,] log noise_variance)``.
    """
    cfg = _theta_to_config(theta, kind, jitter)
    n = x.shape[0]
    d2 = _sq_dists(x, x)
    ls2 = cfg.length_scale**2
    if kind == "rbf":
        k_f = np.exp(-d2 / (2.0 * ls2))
        dk = [k_f * d2 / ls2]  # d/d log length_scale
    else:
        base = 1.0 + d2 / (2.0 * cfg.rq_alpha * ls2)
        k_f = base ** (-cfg.rq_alpha)
        d_ls = base ** (-cfg.rq_alpha - 1.0) * d2 / ls2
        inner = -np.log(base) + d2 / (2.0 * cfg.rq_alpha * ls2 * base)
        d_alpha = k_f * cfg.rq_alpha * inner
        dk = [d_ls, d_alpha]

    level = jitter
    while True:
        try:
            chol = cholesky(k_f + (cfg.noise_variance + level) * np.eye(n), lower=True)
            break
        except np.linalg.LinAlgError:
            level *= 10.0
            if level > MAX_JITTER:
                raise NumericalError(
                    "covariance factorization failed during optimization even "
                    f"at jitter={MAX_JITTER}"
                )
    alpha_vec = cho_solve((chol, True), ys)
    lml = (
        -0.5 * float(ys @ alpha_vec)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    k_inv = cho_solve((chol, True), np.eye(n))
    w = np.outer(alpha_vec, alpha_vec) - k_inv
    dk.append(cfg.noise_variance * np.eye(n))  # d/d log noise_variance
    grad_lml = np.array([0.5 * float(np.sum(w * dk_j)) for dk_j in dk])
    return -lml, -grad_lml


def _adam_minimize(fun, theta0: np.ndarray, opt: OptimizerSettings
                   ) -> tuple[np.ndarray, list]:
    """Adam with early stopping; returns the best iterate and the loss trace."""
    theta = theta0.astype(float).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace: list[float] = []
    best_theta = theta.copy()
    best_loss = math.inf
    last_improvement = 0
    for it in range(1, opt.iterations + 1):
        loss, grad = fun(theta)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite loss during hyperparameter optimization")
        trace.append(loss)
        if loss < best_loss - opt.early_stop_tol:
            last_improvement = it
        if loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
        if it - last_improvement >= opt.early_stop_window:
            break
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
        m_hat = m / (1.0 - opt.beta1**it)
        v_hat = v / (1.0 - opt.beta2**it)
        theta = theta - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return best_theta, trace


def _initial_length_scale(x: np.ndarray, seed: int) -> float:
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    sub = x if n <= 200 else x[np.sort(rng.choice(n, 200, replace=False))]
    d2 = _sq_dists(sub, sub)
    upper = d2[np.triu_indices(len(sub), k=1)]
    med = float(np.sqrt(np.median(upper))) if upper.size else 1.0
    return med if med > 1e-9 else 1.0


def fit_gpr(inputs: np.ndarray, targets: np.ndarray, kind: str = "rq",
            opt: OptimizerSettings = OptimizerSettings(),
            jitter: float = 1e-6) -> GprModel:
    """Standardize targets, optimize hyperparameters with Adam, and return the
    conditioned model at the best loss seen."""
    x = np.asarray(inputs, dtype=float).reshape(-1, 2)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] < 2:
        raise ValueError("fitting needs at least two training points")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")

    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std < 1e-12:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    ls0 = _initial_length_scale(x, opt.seed)
    if kind == "rq":
        theta0 = np.array([math.log(ls0), 0.0, math.log(opt.init_noise)])
    elif kind == "rbf":
        theta0 = np.array([math.log(ls0), math.log(opt.init_noise)])
    else:
        raise InputError(f"unknown kernel kind: {kind!r}")

    best_theta, trace = _adam_minimize(
        lambda th: gpr_loss_and_grad(th, x, ys, kind, jitter), theta0, opt
    )
    cfg = _theta_to_config(best_theta, kind, jitter)
    chol, alpha_vec, jitter_used = _factorize(cfg, x, ys)
    return GprModel(kernel=cfg, train_x=x, train_y=y, y_mean=y_mean, y_std=y_std,
                    chol=chol, alpha_vec=alpha_vec, jitter_used=jitter_used,
                    loss_trace=trace)


# ---------------------------------------------------------------------------
# Paired models and rollout
# ---------------------------------------------------------------------------


@dataclass
class GprModelPair:
    """Velocity-field model for one (entering direction, maneuver) cluster."""

    gp_x: GprModel
    gp_y: GprModel
    cluster: tuple  # (Direction, Maneuver)

    def __post_init__(self) -> None:
        if self.gp_x.train_x.shape != self.gp_y.train_x.shape or not np.array_equal(
            self.gp_x.train_x, self.gp_y.train_x
        ):
            raise ValueError("paired models must share training inputs")


@dataclass(frozen=True)
class RolloutConfig:
    steps: int
    dt: float = 0.1
    mode: str = "mean"  # "mean" | "sample"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise InputError("rollout dt must be positive")
        if self.steps < 1:
            raise InputError("rollout needs at least one step")
        if self.mode not in ("mean", "sample"):
            raise InputError(f"unknown rollout mode: {self.mode!r}")


def _predict_mean(model: GprModel, pos: np.ndarray) -> float:
    """Posterior mean only; skips the variance solve on the rollout hot path."""
    k_star = kernel_matrix(model.kernel, model.train_x, pos[None, :])[:, 0]
    return model.y_mean + model.y_std * float(k_star @ model.alpha_vec)


def rollout(pair: GprModelPair, start: Sequence[float], cfg: RolloutConfig
            ) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the predicted velocity field forward from ``start``.

    Each step queries both component GPs at the current position and Euler
    steps by ``dt``. Returns ``(times, positions)`` of the ``steps`` predicted
    points, with times relative to the start. Mean mode is deterministic;
    sample mode draws each component from its predictive normal.
    """
    pos = np.asarray(start, dtype=float).copy()
    if pos.shape != (2,) or not np.all(np.isfinite(pos)):
        raise ValueError("start must be a finite (x, y) position")
    rng = np.random.default_rng(cfg.seed) if cfg.mode == "sample" else None
    times = np.arange(1, cfg.steps + 1, dtype=float) * cfg.dt
    out = np.empty((cfg.steps, 2), dtype=float)
    for i in range(cfg.steps):
        if rng is None:
            vx = _predict_mean(pair.gp_x, pos)
            vy = _predict_mean(pair.gp_y, pos)
        else:
            mx, vx_var = posterior_predict(pair.gp_x, pos)
            my, vy_var = posterior_predict(pair.gp_y, pos)
            vx = rng.normal(mx, math.sqrt(max(vx_var, 0.0)))
            vy = rng.normal(my, math.sqrt(max(vy_var, 0.0)))
        pos = pos + np.array([vx, vy]) * cfg.dt
        out[i] = pos
    return times, out


# ---------------------------------------------------------------------------
# Cluster training and persistence
# ---------------------------------------------------------------------------


def cluster_key(direction: Direction, maneuver: Maneuver) -> str:
    return f"{direction.value}:{maneuver.value}"


def train_cluster_models(
    dataset: Dataset,
    kind: str = "rq",
    max_points: int = 2000,
    opt: OptimizerSettings = OptimizerSettings(),
    jitter: float = 1e-6,
    seed: int = 0,
) -> dict:
    """Fit one model pair per non-empty (direction, maneuver) cluster.

    Clusters larger than ``max_points`` are uniformly subsampled with a seed
    derived from the cluster's fixed index, so retraining is reproducible.
    Empty clusters are simply absent from the returned mapping.
    """
    buckets: dict[tuple, list] = {}
    for traj in dataset.vehicles:
        if traj.entering_direction is None or traj.maneuver is None:
            continue
        if traj.maneuver not in SUPPORTED_MANEUVERS:
            continue
        rows = buckets.setdefault((traj.entering_direction, traj.maneuver), [])
        for p in traj.valid_points():
            rows.append((p.x, p.y, p.vx, p.vy))

    models: dict = {}
    cells = [(d, m) for d in Direction for m in SUPPORTED_MANEUVERS]
    for idx, cell in enumerate(cells):
        rows = buckets.get(cell)
        if not rows or len(rows) < 2:
            continue
        data = np.asarray(rows, dtype=float)
        if len(data) > max_points:
            rng = np.random.default_rng(seed + idx)
            pick = np.sort(rng.choice(len(data), max_points, replace=False))
            data = data[pick]
        gp_x = fit_gpr(data[:, :2], data[:, 2], kind=kind, opt=opt, jitter=jitter)
        gp_y = fit_gpr(data[:, :2], data[:, 3], kind=kind, opt=opt, jitter=jitter)
        models[cell] = GprModelPair(gp_x=gp_x, gp_y=gp_y, cluster=cell)
    return models


def _model_to_dict(model: GprModel) -> dict:
    return {
        "kind": model.kernel.kind,
        "length_scale": model.kernel.length_scale,
        "rq_alpha": model.kernel.rq_alpha,
        "noise_variance": model.kernel.noise_variance,
        "jitter": model.jitter_used,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "train_x": model.train_x.tolist(),
        "train_y": model.train_y.tolist(),
        "loss_trace": list(model.loss_trace),
    }


def _model_from_dict(data: dict) -> GprModel:
    cfg = KernelConfig(
        kind=data["kind"],
        length_scale=data["length_scale"],
        rq_alpha=data.get("rq_alpha", 1.0),
        noise_variance=data["noise_variance"],
        jitter=data["jitter"],
    )
    x = np.asarray(data["train_x"], dtype=float)
    y = np.asarray(data["train_y"], dtype=float)
    ys = (y - data["y_mean"]) / data["y_std"]
    chol, alpha_vec, jitter_used = _factorize(cfg, x, ys)
    return GprModel(kernel=cfg, train_x=x, train_y=y, y_mean=data["y_mean"],
                    y_std=data["y_std"], chol=chol, alpha_vec=alpha_vec,
                    jitter_used=jitter_used, loss_trace=list(data.get("loss_trace", [])))


def save_cluster_models(models: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": MODEL_FILE_VERSION,
        "clusters": {
            cluster_key(d, m): {
                "gp_x": _model_to_dict(pair.gp_x),
                "gp_y": _model_to_dict(pair.gp_y),
            }
            for (d, m), pair in sorted(
                models.items(), key=lambda kv: cluster_key(kv[0][0], kv[0][1])
            )
        },
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_cluster_models(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"model file not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("version") != MODEL_FILE_VERSION:
        raise InputError(
            f"unsupported model file version: {payload.get('version')!r}"
        )
    models = {}
    for key, entry in payload["clusters"].items():
        d_str, m_str = key.split(":")
        cell = (Direction(d_str), Maneuver(m_str))
        models[cell] = GprModelPair(
            gp_x=_model_from_dict(entry["gp_x"]),
            gp_y=_model_from_dict(entry["gp_y"]),
            cluster=cell,
        )
    return models
