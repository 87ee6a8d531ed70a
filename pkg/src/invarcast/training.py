"""Multi-environment training, evaluation, and replicate aggregation.

The loop draws one mini-batch from every training environment per step,
sums per-environment MSE risks, and (in invariance mode) adds the scheduled
lambda times the summed head-gradient penalties. Two conventions from
practice are kept: when lambda exceeds 1 the whole objective is divided by
lambda so the risk term does not vanish numerically next to the penalty,
and the Adam state is reset at the warm-up switch because the gradient
magnitudes jump there.

Plain empirical risk minimization is the same loop with lambda pinned to 0,
which makes ERM/IRM trajectory comparisons exact rather than approximate.

Normalization is per-variable z-scoring fitted on the training environments
only; reported metrics live in that normalized space. Replicates re-train
with seeds derived from the master seed and aggregate per-environment
metrics as mean and population standard deviation.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .exceptions import ConfigError, ContractError, DimensionError, DivergenceError, NonFiniteError
from .invariance import LambdaSchedule, irm_objective
from .semgen import generate_env_suite

__all__ = [
    "mse",
    "mae",
    "FeatureScaler",
    "make_windows",
    "Adam",
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "train",
    "predict_batch",
    "evaluate_windows",
    "fit_linear_irm",
    "SuiteData",
    "suite_from_env_specs",
    "suite_from_series_lists",
    "MetricRow",
    "EvalReport",
    "run_replicates",
    "write_report_csv",
    "write_curve_csv",
    "replicate_seed",
    "thread_count",
]

THREADS_ENV_VAR = "INVARCAST_THREADS"


# ---------------------------------------------------------------------------
# Metrics


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise ContractError("metrics need at least one element")
    if not (np.isfinite(pred).all() and np.isfinite(truth).all()):
        raise ContractError("metrics need finite inputs")
    return pred, truth


def mse(pred, truth) -> float:
    """Mean squared error over all elements."""
    pred, truth = _paired(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    """Mean absolute error over all elements."""
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


# ---------------------------------------------------------------------------
# Normalization


class FeatureScaler:
    """Per-variable z-scoring fitted on training environments only.

    ``fit`` consumes (d, T) arrays; ``transform`` accepts a (d, T) series or
    a (B, d, k) target batch and ``inverse_transform`` undoes either.
    """

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    def fit(self, arrays) -> "FeatureScaler":
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        if not arrays:
            raise ContractError("FeatureScaler.fit needs at least one series")
        d = arrays[0].shape[0]
        for a in arrays:
            if a.ndim != 2 or a.shape[0] != d:
                raise DimensionError(f"expected (d, T) series with d={d}, got {a.shape}")
        stacked = np.concatenate(arrays, axis=1)
        self.mean_ = stacked.mean(axis=1)
        self.scale_ = np.maximum(stacked.std(axis=1), 1e-12)
        return self

    def _require_fit(self):
        if self.mean_ is None:
            raise ContractError("FeatureScaler used before fit")

    def transform(self, arr: np.ndarray) -> np.ndarray:
        self._require_fit()
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            return (arr - self.mean_[:, None]) / self.scale_[:, None]
        if arr.ndim == 3:
            return (arr - self.mean_[None, :, None]) / self.scale_[None, :, None]
        raise DimensionError(f"transform expects (d, T) or (B, d, k), got {arr.shape}")

    def inverse_transform(self, arr: np.ndarray) -> np.ndarray:
        self._require_fit()
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            return arr * self.scale_[:, None] + self.mean_[:, None]
        if arr.ndim == 3:
            return arr * self.scale_[None, :, None] + self.mean_[None, :, None]
        raise DimensionError(f"inverse_transform expects (d, T) or (B, d, k), got {arr.shape}")


# ---------------------------------------------------------------------------
# Windowing


def make_windows(series, t_in: int, horizon: int, stride: int = 1,
                 env_id: str | None = None) -> list[models.Window]:
    """Cut a (d, T) series into sliding input/target windows.

    Targets immediately follow their inputs. A series shorter than
    ``t_in + horizon`` yields no windows and a warning rather than an error,
    so callers can skip short segments uniformly.
    """
    if t_in < 1 or horizon < 1 or stride < 1:
        raise ConfigError(
            f"t_in, horizon and stride must be >= 1, got {t_in}, {horizon}, {stride}"
        )
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"expected a (d, T) series, got shape {values.shape}")
    if env_id is None:
        env_id = getattr(series, "env_id", "")
    total = values.shape[1]
    if total < t_in + horizon:
        warnings.warn(
            f"series of length {total} is shorter than t_in + horizon = "
            f"{t_in + horizon}; produced no windows",
            stacklevel=2,
        )
        return []
    out = []
    for start in range(0, total - t_in - horizon + 1, stride):
        out.append(models.Window(
            inputs=values[:, start:start + t_in],
            targets=values[:, start + t_in:start + t_in + horizon],
            env_id=env_id,
        ))
    return out


def _stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise ContractError("need at least one window")
    inputs = np.stack([w.inputs.T for w in windows])       # (N, t_in, d)
    targets = np.stack([w.targets for w in windows])       # (N, d, k)
    return inputs, targets


def _evenly_spaced(windows, cap: int | None):
    """At most ``cap`` windows, spread uniformly over the list."""
    if cap is None or len(windows) <= cap:
        return windows
    positions = np.linspace(0, len(windows) - 1, num=cap)
    return [windows[int(p)] for p in positions]


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {learning_rate}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict = {}

    def step(self, name: str, value: np.ndarray, grad: np.ndarray) -> np.ndarray:
        m, v, t = self._state.get(name, (np.zeros_like(value), np.zeros_like(value), 0))
        t += 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self._state[name] = (m, v, t)
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        return value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset(self) -> None:
        """Drop all moment state (used at the lambda switch)."""
        self._state.clear()


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on, seed included."""

    architecture: str = "recurrent"        # "recurrent" | "transformer"
    mode: str = "irm"                      # "irm" | "erm"
    t_in: int = 20
    horizon: int = 1
    stride: int = 1
    batch_size: int = 48
    epochs: int = 16
    steps_per_epoch: int | None = 30
    learning_rate: float = 2e-3
    lambda_pre: float = 1.0
    lambda_main: float = 1.5
    warmup_epochs: int = 4
    seed: int = 0
    hidden_size: int = 64
    recurrent_gated: bool = True
    recurrent_activation: str = "tanh"
    width: int = 32
    head_count: int = 2
    layer_count: int = 1
    ffn_width: int = 64
    use_residual: bool = True
    use_layer_norm: bool = True
    normalize: bool = True
    rescale_large_lambda: bool = True
    adam_reset_at_switch: bool = True
    # Cap on windows scored for the per-epoch curve; None scores every
    # window each epoch.
    curve_eval_max: int | None = 500
    # Cap on windows per environment scored for the final report rows. The
    # subset is evenly spaced and identical across modes and seeds, so
    # comparisons stay paired; None scores every window.
    report_eval_max: int | None = 4000

    def __post_init__(self):
        if self.architecture not in ("recurrent", "transformer"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.mode not in ("irm", "erm"):
            raise ConfigError(f"mode must be 'irm' or 'erm', got {self.mode!r}")
        for name in ("t_in", "horizon", "stride", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError(f"steps_per_epoch must be >= 1 or None, got {self.steps_per_epoch}")
        if self.curve_eval_max is not None and self.curve_eval_max < 1:
            raise ConfigError(f"curve_eval_max must be >= 1 or None, got {self.curve_eval_max}")
        if self.report_eval_max is not None and self.report_eval_max < 1:
            raise ConfigError(f"report_eval_max must be >= 1 or None, got {self.report_eval_max}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        # Delegates range checks for the lambda schedule.
        LambdaSchedule(self.lambda_pre, self.lambda_main, self.warmup_epochs)

    def model_config(self, input_dim: int):
        if self.architecture == "recurrent":
            return models.RecurrentConfig(
                input_dim=input_dim,
                horizon=self.horizon,
                hidden_size=self.hidden_size,
                gated=self.recurrent_gated,
                activation=self.recurrent_activation,
            )
        return models.TransformerConfig(
            input_dim=input_dim,
            horizon=self.horizon,
            width=self.width,
            head_count=self.head_count,
            layer_count=self.layer_count,
            ffn_width=self.ffn_width,
            use_residual=self.use_residual,
            use_layer_norm=self.use_layer_norm,
        )


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    train_loss: float
    test_mse: float | None = None
    test_mae: float | None = None


@dataclass
class TrainResult:
    params: object
    model_config: object
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def curve(self) -> list[float]:
        return [r.test_mse for r in self.history]


# ---------------------------------------------------------------------------
# Inference helpers


def predict_batch(params, model_config, inputs: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Forward a (N, t_in, d) batch without recording; returns (N, d, k)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    outs = []
    for start in range(0, inputs.shape[0], chunk):
        outs.append(models.forward_batch(params, inputs[start:start + chunk], model_config).data)
    return np.concatenate(outs, axis=0)


def evaluate_windows(params, model_config, windows, chunk: int = 256) -> tuple[float, float]:
    """(MSE, MAE) of a model over a window list."""
    inputs, targets = _stack_windows(windows)
    preds = predict_batch(params, model_config, inputs, chunk=chunk)
    return mse(preds, targets), mae(preds, targets)


# ---------------------------------------------------------------------------
# The training loop


def _derived_streams(seed: int) -> tuple[int, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    init_seq, batch_seq = root.spawn(2)
    init_seed = int(init_seq.generate_state(1, dtype=np.uint64)[0])
    return init_seed, np.random.Generator(np.random.PCG64(batch_seq))


def train(config: TrainConfig, train_windows: dict, test_windows=None) -> TrainResult:
    """Train one forecaster on per-environment window lists.

    Parameters
    ----------
    config : TrainConfig
    train_windows : mapping env_id -> non-empty list of Window
    test_windows : optional list of Window scored after every epoch; when
        longer than ``config.curve_eval_max`` an evenly spaced subset of that
        size is scored instead

    Identical inputs and seed give a bitwise-identical parameter trajectory.
    Raises DivergenceError, naming the epoch and learning rate, if the loss
    stops being finite.
    """
    if not train_windows:
        raise ContractError("train needs at least one training environment")
    env_ids = sorted(train_windows)
    stacks = {}
    input_dim = None
    for env in env_ids:
        inputs, targets = _stack_windows(train_windows[env])
        if input_dim is None:
            input_dim = inputs.shape[2]
        elif inputs.shape[2] != input_dim:
            raise DimensionError("environments disagree on the variable count")
        if targets.shape[2] != config.horizon:
            raise DimensionError(
                f"window horizon {targets.shape[2]} != config horizon {config.horizon}"
            )
        stacks[env] = (inputs, targets)

    model_config = config.model_config(input_dim)
    init_seed, batch_rng = _derived_streams(config.seed)
    params = models.init_model(model_config, seed=init_seed)
    names = [n for n, _ in models.named_arrays(params)]
    optimizer = Adam(learning_rate=config.learning_rate)
    schedule = LambdaSchedule(config.lambda_pre, config.lambda_main, config.warmup_epochs)

    counts = {env: stacks[env][0].shape[0] for env in env_ids}
    batch_sizes = {env: min(config.batch_size, counts[env]) for env in env_ids}
    steps = min(max(1, counts[env] // batch_sizes[env]) for env in env_ids)
    if config.steps_per_epoch is not None:
        steps = min(steps, config.steps_per_epoch)

    test_stack = (_stack_windows(_evenly_spaced(test_windows, config.curve_eval_max))
                  if test_windows else None)
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        lam = schedule.value(epoch) if config.mode == "irm" else 0.0
        if (config.mode == "irm" and config.adam_reset_at_switch
                and epoch == config.warmup_epochs and config.lambda_main != config.lambda_pre):
            optimizer.reset()
        perms = {env: batch_rng.permutation(counts[env]) for env in env_ids}
        losses = []
        for step in range(steps):
            tape = ad.GradientTape()
            bound = models.bind_params(params, tape)
            try:
                batches = []
                for env in env_ids:
                    b = batch_sizes[env]
                    idx = perms[env][np.arange(step * b, (step + 1) * b) % counts[env]]
                    logits = models.forward_batch(bound, stacks[env][0][idx], model_config)
                    batches.append((logits, stacks[env][1][idx]))
                loss = irm_objective(batches, lam)
                if config.rescale_large_lambda and lam > 1.0:
                    loss = ad.scale(loss, 1.0 / lam)
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise NonFiniteError("loss is not finite")
                grads = ad.backward(loss, tape)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch} "
                    f"(learning rate {config.learning_rate}): {exc}"
                ) from exc
            bound_leaves = [t for _, t in models.named_arrays(bound)]
            new_values = {
                name: optimizer.step(name, leaf.data, grads[leaf])
                for name, leaf in zip(names, bound_leaves)
            }
            params = models.rebuild_like(params, new_values)
            losses.append(loss_value)
        record = EpochRecord(epoch=epoch, lam=lam,
                             train_loss=float(np.mean(losses)) if losses else float("nan"))
        if test_stack is not None:
            preds = predict_batch(params, model_config, test_stack[0])
            record.test_mse = mse(preds, test_stack[1])
            record.test_mae = mae(preds, test_stack[1])
        history.append(record)
    return TrainResult(params=params, model_config=model_config, history=history)


# ---------------------------------------------------------------------------
# Linear recovery of invariant coefficients


def fit_linear_irm(env_data, mode: str = "irm", steps: int = 2000, warmup_steps: int = 400,
                   learning_rate: float = 0.02, lambda_pre: float = 1.0,
                   lambda_main: float = 1e4, seed: int = 0) -> np.ndarray:
    """Fit a linear featurizer across environments with the penalty objective.

    ``env_data`` is a list of (design (n, p), target (n,)) pairs. Each step
    is full batch. Returns the fitted (p,) coefficient vector. With
    ``mode="erm"`` the penalty is off and the fit converges to pooled least
    squares.
    """
    if mode not in ("irm", "erm"):
        raise ConfigError(f"mode must be 'irm' or 'erm', got {mode!r}")
    env_data = [(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
                for x, y in env_data]
    if not env_data:
        raise ContractError("fit_linear_irm needs at least one environment")
    p = env_data[0][0].shape[1]
    for x, y in env_data:
        if x.ndim != 2 or x.shape[1] != p or y.shape != (x.shape[0],):
            raise DimensionError("every environment needs (n, p) design and (n,) target")

    rng = np.random.Generator(np.random.PCG64(seed))
    weights = rng.uniform(-0.1, 0.1, (p, 1))
    optimizer = Adam(learning_rate=learning_rate)
    schedule = LambdaSchedule(lambda_pre, lambda_main, warmup_steps)
    targets3 = [y.reshape(-1, 1, 1) for _, y in env_data]
    for step in range(steps):
        lam = schedule.value(step) if mode == "irm" else 0.0
        if mode == "irm" and step == warmup_steps and lambda_main != lambda_pre:
            optimizer.reset()
        tape = ad.GradientTape()
        w = Tensor(weights, tape)
        batches = []
        for (x, _), t3 in zip(env_data, targets3):
            logits = ad.reshape(ad.matmul(Tensor(x), w), (x.shape[0], 1, 1))
            batches.append((logits, t3))
        loss = irm_objective(batches, lam)
        if lam > 1.0:
            loss = ad.scale(loss, 1.0 / lam)
        grads = ad.backward(loss, tape)
        weights = optimizer.step("w", weights, grads[w])
    return weights.reshape(-1)


# ---------------------------------------------------------------------------
# Suites, replicates, reports


@dataclass
class SuiteData:
    """Raw per-environment series, already split into train and test roles.

    Each environment maps to a list of (d, T) segments; synthetic suites
    have one segment per environment, while ingested real data may carry
    several gap-split segments.
    """

    train_series: dict[str, list[np.ndarray]]
    test_series: dict[str, list[np.ndarray]]

    def __post_init__(self):
        if not self.train_series:
            raise ConfigError("a suite needs at least one training environment")
        overlap = set(self.train_series) & set(self.test_series)
        if overlap:
            raise ConfigError(f"env ids appear in both roles: {sorted(overlap)}")
        for role in (self.train_series, self.test_series):
            for env, segments in role.items():
                if not isinstance(segments, list):
                    raise ConfigError(f"environment {env!r} must map to a list of segments")
                if not segments:
                    raise ConfigError(f"environment {env!r} has no segments")


def suite_from_env_specs(specs) -> SuiteData:
    """Generate every environment described by ``specs`` and split by role."""
    specs = list(specs)
    samples = generate_env_suite(specs)
    train = {s.env_id: [samples[s.env_id].values] for s in specs if s.role == "train"}
    test = {s.env_id: [samples[s.env_id].values] for s in specs if s.role == "test"}
    return SuiteData(train_series=train, test_series=test)


def suite_from_series_lists(series_by_env: dict, train_envs, test_envs) -> SuiteData:
    """Assemble a suite from named groups of series or segments.

    ``series_by_env`` maps env ids to lists of (d, T) arrays or objects with
    a ``values`` attribute (ingested location segments qualify). Groups not
    named in either role are ignored.
    """
    train_envs, test_envs = list(train_envs), list(test_envs)
    missing = [e for e in train_envs + test_envs if e not in series_by_env]
    if missing:
        raise ConfigError(
            f"unknown environments {missing}; available: {sorted(series_by_env)}"
        )

    def arrays(env):
        return [np.asarray(getattr(s, "values", s), dtype=np.float64)
                for s in series_by_env[env]]

    return SuiteData(
        train_series={e: arrays(e) for e in train_envs},
        test_series={e: arrays(e) for e in test_envs},
    )


@dataclass(frozen=True)
class MetricRow:
    mode: str
    env_id: str
    metric: str
    mean: float
    std: float


@dataclass
class EvalReport:
    """Aggregated outcome of one (architecture, mode) replicate set.

    ``rows`` hold per-environment mean and population standard deviation
    over seeds; ``curves`` holds one per-epoch test-MSE list per seed.
    Metrics are in the normalized target space when normalization is on.
    """

    architecture: str
    mode: str
    n_seeds: int
    rows: list[MetricRow] = field(default_factory=list)
    curves: list[list[float]] = field(default_factory=list)
    example_result: TrainResult | None = None

    def mean_curve(self) -> list[float]:
        if not self.curves:
            return []
        return [float(np.mean(col)) for col in zip(*self.curves)]

    def row(self, env_id: str, metric: str) -> MetricRow:
        for r in self.rows:
            if r.env_id == env_id and r.metric == metric:
                return r
        raise KeyError((env_id, metric))


def replicate_seed(master_seed: int, index: int) -> int:
    """Derived per-replicate seed; stable across processes."""
    seq = np.random.SeedSequence(entropy=[int(master_seed), int(index)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def thread_count() -> int:
    """Replicate parallelism cap from the environment, default 1."""
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {n}")
    return n


def _prepare_suite_windows(config: TrainConfig, suite: SuiteData):
    scaler = FeatureScaler()
    env_ids = sorted(suite.train_series)
    if config.normalize:
        scaler.fit([seg for env in env_ids for seg in suite.train_series[env]])
        norm = scaler.transform
    else:
        norm = lambda arr: np.asarray(arr, dtype=np.float64)

    def env_windows(env, segments):
        wins = []
        for segment in segments:
            wins.extend(make_windows(norm(segment), config.t_in, config.horizon,
                                     config.stride, env_id=env))
        return wins

    train_windows = {env: env_windows(env, suite.train_series[env]) for env in env_ids}
    empty = [env for env, wins in train_windows.items() if not wins]
    if empty:
        raise ContractError(f"training environments produced no windows: {empty}")
    test_windows = {
        env: env_windows(env, segments)
        for env, segments in sorted(suite.test_series.items())
    }
    return scaler, train_windows, test_windows


def run_replicates(config: TrainConfig, suite: SuiteData, n_seeds: int = 5) -> EvalReport:
    """Train ``n_seeds`` replicates of one configuration and aggregate.

    Replicate seeds derive from ``config.seed``; window construction happens
    once since the data do not depend on the training seed. Parallelism is
    capped by the INVARCAST_THREADS environment variable and never changes
    the aggregated numbers because results are merged in replicate order.
    """
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    scaler, train_windows, test_windows = _prepare_suite_windows(config, suite)
    primary_test = sorted(test_windows)[0] if test_windows else None

    def one(index: int) -> TrainResult:
        cfg = replace(config, seed=replicate_seed(config.seed, index))
        curve_windows = test_windows[primary_test] if primary_test else None
        return train(cfg, train_windows, curve_windows)

    workers = min(thread_count(), n_seeds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_seeds)))
    else:
        results = [one(i) for i in range(n_seeds)]

    finals: dict[tuple[str, str], list[float]] = {}
    all_windows = dict(train_windows)
    all_windows.update(test_windows)
    scored = {env: _evenly_spaced(wins, config.report_eval_max)
              for env, wins in all_windows.items()}
    for result in results:
        for env, wins in sorted(scored.items()):
            if not wins:
                continue
            env_mse, env_mae = evaluate_windows(result.params, result.model_config, wins)
            finals.setdefault((env, "mse"), []).append(env_mse)
            finals.setdefault((env, "mae"), []).append(env_mae)
    rows = [
        MetricRow(mode=config.mode, env_id=env, metric=metric,
                  mean=float(np.mean(vals)), std=float(np.std(vals)))
        for (env, metric), vals in sorted(finals.items())
    ]
    return EvalReport(
        architecture=config.architecture,
        mode=config.mode,
        n_seeds=n_seeds,
        rows=rows,
        curves=[result.curve for result in results if result.history
                and result.history[0].test_mse is not None],
        example_result=results[0],
    )


# ---------------------------------------------------------------------------
# Report files (no timestamps anywhere, so repeated runs match byte for byte)

REPORT_HEADER = "mode,env_id,metric,mean,std"
CURVE_HEADER = "epoch,mode,test_mse"


def write_report_csv(reports, path) -> None:
    """Write per-environment metric rows for one or more reports."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    lines = [REPORT_HEADER]
    for report in reports:
        for r in report.rows:
            lines.append(f"{r.mode},{r.env_id},{r.metric},{r.mean!r},{r.std!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_curve_csv(reports, path) -> None:
    """Write seed-averaged per-epoch test error for one or more reports."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    lines = [CURVE_HEADER]
    for report in reports:
        for epoch, value in enumerate(report.mean_curve()):
            lines.append(f"{epoch},{report.mode},{value!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
