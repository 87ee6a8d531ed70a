"""Synthetic data from a three-variable structural equation model.

Environments differ only in one noise-scale knob ``sigma2``. In temporal
mode the variables form coupled random walks

    X_t = X_{t-1} + eps_x,   eps_x ~ N(0, sigma2)
    Y_t = Y_{t-1} + X_{t-1} + eps_y,   eps_y ~ N(0, sigma2)
    Z_t = Z_{t-1} + Y_{t-1} + eps_z,   eps_z ~ N(0, 1)

so X causes Y one step ahead and Z is a downstream consequence of Y. In
static mode the same wiring collapses to independent draws

    X = eps_1,  Y = X + eps_2,  Z = Y + eps_3

with eps_1, eps_2 ~ N(0, sigma2) and eps_3 ~ N(0, 1).

Randomness: numpy's PCG64 generator with ziggurat ``standard_normal``; the
X/Y/Z noises come from separate SeedSequence substreams so adding a variable
never perturbs the others. Per-environment streams are derived by mixing the
master seed with a sha256 digest of the environment id (the builtin ``hash``
is salted per process and would break reproducibility).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, IngestError

__all__ = [
    "SemConfig",
    "SeriesSample",
    "EnvironmentSpec",
    "generate_temporal",
    "generate_static",
    "generate_env_suite",
    "env_type_suite",
    "ENV_TYPE_PRESETS",
    "DEFAULT_TEMPORAL_LENGTH",
    "DEFAULT_STATIC_LENGTH",
    "write_series_csv",
    "read_series_csv",
]

VARIABLES = ("x", "y", "z")

DEFAULT_TEMPORAL_LENGTH = 10_000
DEFAULT_STATIC_LENGTH = 100_000

# Env-Type presets: (train sigma2 values, test sigma2 values).
ENV_TYPE_PRESETS = {
    "2": ((0.1, 1.0), (2.0,)),
    "3-1B": ((0.1, 1.0, 0.01), (2.0,)),
    "3-2G": ((0.1, 1.0, 2.0), (2.0,)),
}


@dataclass(frozen=True)
class SemConfig:
    """Knobs for one generated sample.

    ``length`` counts emitted columns; in temporal mode the first column is
    the initial state and the remaining ``length - 1`` are sampled
    transitions.
    """

    sigma2: float
    length: int
    seed: int
    mode: str = "temporal"
    initial_state: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ConfigError(f"sigma2 must be finite and >= 0, got {self.sigma2}")
        if int(self.length) < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must fit in an unsigned 64-bit int, got {self.seed}")
        if self.mode not in ("temporal", "static"):
            raise ConfigError(f"mode must be 'temporal' or 'static', got {self.mode!r}")
        if len(self.initial_state) != 3 or not all(np.isfinite(v) for v in self.initial_state):
            raise ConfigError("initial_state must be three finite values")


@dataclass
class SeriesSample:
    """One generated sample: rows are (x, y, z), columns are timesteps."""

    values: np.ndarray
    env_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != 3:
            raise ConfigError(f"values must have shape (3, T), got {self.values.shape}")

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EnvironmentSpec:
    """Declares one environment of a suite and its role in an experiment."""

    env_id: str
    config: SemConfig
    role: str = "train"

    def __post_init__(self):
        if not self.env_id:
            raise ConfigError("env_id must be non-empty")
        if self.role not in ("train", "test"):
            raise ConfigError(f"role must be 'train' or 'test', got {self.role!r}")


def _env_entropy(env_id: str) -> int:
    digest = hashlib.sha256(env_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _noise_streams(seed: int, env_id: str) -> list[np.random.Generator]:
    root = np.random.SeedSequence(entropy=[int(seed), _env_entropy(env_id)])
    return [np.random.Generator(np.random.PCG64(child)) for child in root.spawn(3)]


def generate_temporal(config: SemConfig, env_id: str = "") -> SeriesSample:
    """Sample one temporal-mode series of shape (3, length)."""
    if config.mode != "temporal":
        raise ConfigError(f"generate_temporal got mode {config.mode!r}")
    gx, gy, gz = _noise_streams(config.seed, env_id)
    n = int(config.length)
    sig = float(np.sqrt(config.sigma2))
    x0, y0, z0 = (float(v) for v in config.initial_state)

    values = np.empty((3, n))
    values[:, 0] = (x0, y0, z0)
    if n > 1:
        eps_x = gx.standard_normal(n - 1) * sig
        eps_y = gy.standard_normal(n - 1) * sig
        eps_z = gz.standard_normal(n - 1)
        x = values[0]
        x[1:] = x0 + np.cumsum(eps_x)
        # Y_t depends on X_{t-1}, Z_t on Y_{t-1}: drive each cumsum with the
        # previous row shifted by one step.
        values[1, 1:] = y0 + np.cumsum(x[:-1] + eps_y)
        values[2, 1:] = z0 + np.cumsum(values[1, :-1] + eps_z)
    return SeriesSample(values=values, env_id=env_id)


def generate_static(config: SemConfig, env_id: str = "") -> SeriesSample:
    """Sample one static-mode batch of shape (3, length) of iid columns."""
    if config.mode != "static":
        raise ConfigError(f"generate_static got mode {config.mode!r}")
    gx, gy, gz = _noise_streams(config.seed, env_id)
    n = int(config.length)
    sig = float(np.sqrt(config.sigma2))
    x = gx.standard_normal(n) * sig
    y = x + gy.standard_normal(n) * sig
    z = y + gz.standard_normal(n)
    return SeriesSample(values=np.stack([x, y, z]), env_id=env_id)


def generate_env_suite(specs) -> dict[str, SeriesSample]:
    """Generate every environment of a suite, keyed by env_id.

    Environment ids must be unique; each environment draws from its own
    derived random stream, so the suite is order-independent.
    """
    specs = list(specs)
    ids = [s.env_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate env_id in suite: {sorted(ids)}")
    out: dict[str, SeriesSample] = {}
    for spec in specs:
        gen = generate_temporal if spec.config.mode == "temporal" else generate_static
        out[spec.env_id] = gen(spec.config, env_id=spec.env_id)
    return out


def env_type_suite(env_type: str, length: int | None = None, seed: int = 0,
                   mode: str = "temporal") -> list[EnvironmentSpec]:
    """Build the named multi-environment preset.

    Presets "2", "3-1B" and "3-2G" fix the train/test noise-scale mix; the
    test environment always uses sigma2 = 2.0.
    """
    if env_type not in ENV_TYPE_PRESETS:
        raise ConfigError(
            f"unknown env_type {env_type!r}; choose from {sorted(ENV_TYPE_PRESETS)}"
        )
    if length is None:
        length = DEFAULT_TEMPORAL_LENGTH if mode == "temporal" else DEFAULT_STATIC_LENGTH
    train_sigmas, test_sigmas = ENV_TYPE_PRESETS[env_type]
    specs = []
    for i, s2 in enumerate(train_sigmas):
        specs.append(EnvironmentSpec(
            env_id=f"train-{i}",
            config=SemConfig(sigma2=s2, length=length, seed=seed, mode=mode),
            role="train",
        ))
    for i, s2 in enumerate(test_sigmas):
        specs.append(EnvironmentSpec(
            env_id="test" if len(test_sigmas) == 1 else f"test-{i}",
            config=SemConfig(sigma2=s2, length=length, seed=seed, mode=mode),
            role="test",
        ))
    return specs


# ---------------------------------------------------------------------------
# Flat CSV round trip (header: env_id,t,x,y,z)

_SERIES_HEADER = ["env_id", "t", "x", "y", "z"]


def write_series_csv(sample: SeriesSample, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SERIES_HEADER)
        for t in range(sample.length):
            writer.writerow([sample.env_id, t] + [repr(float(v)) for v in sample.values[:, t]])


def read_series_csv(path) -> SeriesSample:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _SERIES_HEADER:
            raise IngestError(f"{path}: expected header {_SERIES_HEADER}, got {header}")
        env_ids, rows = set(), []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise IngestError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                t = int(row[1])
                xyz = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            env_ids.add(row[0])
            rows.append((t, xyz))
        if not rows:
            raise IngestError(f"{path}: no data rows")
        if len(env_ids) != 1:
            raise IngestError(f"{path}: mixed env_ids {sorted(env_ids)}")
        rows.sort(key=lambda r: r[0])
        if [t for t, _ in rows] != list(range(len(rows))):
            raise IngestError(f"{path}: timesteps are not 0..{len(rows) - 1}")
        values = np.array([xyz for _, xyz in rows]).T
    return SeriesSample(values=values, env_id=env_ids.pop())
