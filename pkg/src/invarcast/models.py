"""Forecaster architectures built on the tape engine.

Two families share one calling convention. A window of ``t_in`` past
timesteps of a ``d``-variate series goes in; a (d, k) block of logits for
the next ``k`` steps comes out (no output bias, so an invariance head can
scale the logits directly).

Recurrent family: the plain variant applies the literal recurrence
``h_t = act(W_input x_t + W_hidden h_{t-1} + b)``; the gated (LSTM) variant
reuses exactly those three arrays as its candidate/cell path and adds
input, forget, and output gates with their own parameters.

Transformer family: learned input embedding, fixed sinusoidal position
codes, encoder layers of per-head scaled dot-product attention plus a ReLU
feed-forward block, pre-norm residual wiring (both the residual adds and
the layer norms can be disabled), last-token pooling into the logit map.

Parameters live in plain dataclasses of float64 arrays. ``bind_params``
wraps every leaf in tape-attached tensors for one training step;
``named_arrays`` walks the same leaves in a stable order for optimizers and
serialization. Checkpoints are flat binary files: magic, format version, a
JSON config blob, a shape table, then raw row-major float64 payloads.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, ContractError, DimensionError

__all__ = [
    "Window",
    "RecurrentConfig",
    "TransformerConfig",
    "GateParams",
    "RecurrentParams",
    "AttentionHeadParams",
    "EncoderLayerParams",
    "TransformerParams",
    "init_recurrent",
    "init_transformer",
    "init_model",
    "bind_params",
    "named_arrays",
    "rebuild_like",
    "rebind",
    "positional_encoding",
    "attention",
    "recurrent_forward",
    "recurrent_forward_batch",
    "transformer_forward",
    "transformer_forward_batch",
    "forward_batch",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class Window:
    """One training example: ``inputs`` (d, t_in) and ``targets`` (d, k)."""

    inputs: np.ndarray
    targets: np.ndarray
    env_id: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise DimensionError("window inputs and targets must be 2-d")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionError(
                f"window variable counts disagree: {self.inputs.shape} vs {self.targets.shape}"
            )


# ---------------------------------------------------------------------------
# Configs


@dataclass(frozen=True)
class RecurrentConfig:
    input_dim: int
    horizon: int
    hidden_size: int = 64
    gated: bool = True
    activation: str = "tanh"   # plain variant only

    def __post_init__(self):
        for name in ("input_dim", "horizon", "hidden_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.activation not in ("tanh", "identity"):
            raise ConfigError(f"activation must be 'tanh' or 'identity', got {self.activation!r}")


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int
    horizon: int
    width: int = 32
    head_count: int = 2
    layer_count: int = 1
    ffn_width: int = 64
    use_residual: bool = True
    use_layer_norm: bool = True

    def __post_init__(self):
        for name in ("input_dim", "horizon", "width", "head_count", "layer_count", "ffn_width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.width % self.head_count != 0:
            raise ConfigError(
                f"width {self.width} must be divisible by head_count {self.head_count}"
            )

    @property
    def key_dim(self) -> int:
        return self.width // self.head_count


# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class GateParams:
    """One gate's affine maps: w_x (h, d), w_h (h, h), bias (h,)."""

    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray


@dataclass
class RecurrentParams:
    """Recurrent forecaster parameters.

    ``w_input``/``w_hidden``/``bias`` drive the plain recurrence and double
    as the candidate (cell) path of the gated variant; the three gates are
    present only when the configuration is gated.
    """

    w_input: np.ndarray             # (h, d)
    w_hidden: np.ndarray            # (h, h)
    bias: np.ndarray                # (h,)
    w_logit: np.ndarray             # (d * k, h)
    gate_input: GateParams | None = None
    gate_forget: GateParams | None = None
    gate_output: GateParams | None = None


@dataclass
class AttentionHeadParams:
    """Per-head projections, each (width, key_dim)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class EncoderLayerParams:
    heads: list[AttentionHeadParams] = field(default_factory=list)
    w_o: np.ndarray = None          # (width, width)
    w1: np.ndarray = None           # (width, ffn)
    b1: np.ndarray = None           # (ffn,)
    w2: np.ndarray = None           # (ffn, width)
    b2: np.ndarray = None           # (width,)


@dataclass
class TransformerParams:
    w_embed: np.ndarray             # (d, width)
    layers: list[EncoderLayerParams] = field(default_factory=list)
    w_logit: np.ndarray = None      # (d * k, width)

    @property
    def head_count(self) -> int:
        return len(self.layers[0].heads) if self.layers else 0

    @property
    def key_dim(self) -> int:
        return self.layers[0].heads[0].w_q.shape[1] if self.layers else 0


# ---------------------------------------------------------------------------
# Initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per matrix,
# where fan_in is the dimension the matrix consumes; biases start at zero.


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_recurrent(config: RecurrentConfig, seed: int) -> RecurrentParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    d, h, k = config.input_dim, config.hidden_size, config.horizon

    def gate() -> GateParams:
        return GateParams(
            w_x=_uniform(rng, (h, d), d),
            w_h=_uniform(rng, (h, h), h),
            bias=np.zeros(h),
        )

    params = RecurrentParams(
        w_input=_uniform(rng, (h, d), d),
        w_hidden=_uniform(rng, (h, h), h),
        bias=np.zeros(h),
        w_logit=_uniform(rng, (d * k, h), h),
    )
    if config.gated:
        params.gate_input = gate()
        params.gate_forget = gate()
        params.gate_output = gate()
    return params


def init_transformer(config: TransformerConfig, seed: int) -> TransformerParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    d, w, dk = config.input_dim, config.width, config.key_dim
    layers = []
    for _ in range(config.layer_count):
        heads = [
            AttentionHeadParams(
                w_q=_uniform(rng, (w, dk), w),
                w_k=_uniform(rng, (w, dk), w),
                w_v=_uniform(rng, (w, dk), w),
            )
            for _ in range(config.head_count)
        ]
        layers.append(EncoderLayerParams(
            heads=heads,
            w_o=_uniform(rng, (w, w), w),
            w1=_uniform(rng, (w, config.ffn_width), w),
            b1=np.zeros(config.ffn_width),
            w2=_uniform(rng, (config.ffn_width, w), config.ffn_width),
            b2=np.zeros(w),
        ))
    return TransformerParams(
        w_embed=_uniform(rng, (d, w), d),
        layers=layers,
        w_logit=_uniform(rng, (d * config.horizon, w), w),
    )


def init_model(config, seed: int):
    if isinstance(config, RecurrentConfig):
        return init_recurrent(config, seed)
    if isinstance(config, TransformerConfig):
        return init_transformer(config, seed)
    raise ContractError(f"unknown model config type {type(config).__name__}")


# ---------------------------------------------------------------------------
# Generic parameter walking


def _is_leaf(value) -> bool:
    return isinstance(value, (np.ndarray, Tensor))


def _walk(obj, prefix: str, out: list) -> None:
    if obj is None:
        return
    if _is_leaf(obj):
        out.append((prefix, obj))
        return
    if isinstance(obj, list):
        for i, item in enumerate(obj):
            _walk(item, f"{prefix}.{i}", out)
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            _walk(getattr(obj, f.name), name, out)
        return
    raise ContractError(f"cannot walk parameter field {prefix!r} of type {type(obj).__name__}")


def named_arrays(params, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Flatten a parameter container to (dotted name, leaf) pairs.

    The order is the dataclass field order, depth-first, so it is stable
    across processes and releases of this package.
    """
    out: list = []
    _walk(params, prefix, out)
    return out


def _map_leaves(obj, fn):
    if obj is None:
        return None
    if _is_leaf(obj):
        return fn(obj)
    if isinstance(obj, list):
        return [_map_leaves(item, fn) for item in obj]
    if dataclasses.is_dataclass(obj):
        kwargs = {f.name: _map_leaves(getattr(obj, f.name), fn) for f in dataclasses.fields(obj)}
        return type(obj)(**kwargs)
    raise ContractError(f"cannot map parameter field of type {type(obj).__name__}")


def bind_params(params, tape: ad.GradientTape | None):
    """Wrap every array leaf in a Tensor attached to ``tape``.

    With ``tape=None`` the result computes forward passes without recording,
    which is the inference path.
    """
    return _map_leaves(params, lambda leaf: Tensor(leaf.data if isinstance(leaf, Tensor) else leaf, tape))


def rebuild_like(params, named_values: dict[str, np.ndarray]):
    """Build a new container like ``params`` with leaves taken by name."""
    pairs = named_arrays(params)
    missing = [name for name, _ in pairs if name not in named_values]
    if missing:
        raise ContractError(f"missing parameter values for {missing}")
    it = iter(pairs)

    def fn(template_leaf):
        name, _ = next(it)
        arr = np.asarray(named_values[name], dtype=np.float64)
        want = _value(template_leaf).shape
        if arr.shape != want:
            raise ContractError(f"parameter {name!r} has shape {arr.shape}, expected {want}")
        return arr

    return _map_leaves(params, fn)


def rebind(params, leaves):
    """Build a container like ``params`` with leaves taken in walk order.

    Accepts arrays or tensors; tensors keep their tape attachment, which is
    how gradient checks route tracked parameters into a forward pass.
    """
    leaves = list(leaves)
    want = len(named_arrays(params))
    if len(leaves) != want:
        raise ContractError(f"expected {want} leaves, got {len(leaves)}")
    it = iter(leaves)

    def fn(template_leaf):
        leaf = next(it)
        if _value(leaf).shape != _value(template_leaf).shape:
            raise ContractError(
                f"leaf shape {_value(leaf).shape} does not match template "
                f"{_value(template_leaf).shape}"
            )
        return leaf

    return _map_leaves(params, fn)


def _value(leaf) -> np.ndarray:
    return leaf.data if isinstance(leaf, Tensor) else leaf


def _as_bound(leaf) -> Tensor:
    return leaf if isinstance(leaf, Tensor) else Tensor(leaf)


# ---------------------------------------------------------------------------
# Recurrent forward


def _stacked_gate_maps(params: RecurrentParams):
    """Concatenate the three gate maps once per forward pass.

    Returns (d, 3h) and (h, 3h) projections plus the (3h,) bias so every
    timestep needs just two matrix products for all gates.
    """
    gates = [params.gate_input, params.gate_forget, params.gate_output]
    wx = ad.concat_last([ad.transpose_last2(_as_bound(g.w_x)) for g in gates])
    wh = ad.concat_last([ad.transpose_last2(_as_bound(g.w_h)) for g in gates])
    b = ad.concat_last([_as_bound(g.bias) for g in gates])
    return wx, wh, b


def recurrent_forward_batch(params: RecurrentParams, inputs: np.ndarray,
                            config: RecurrentConfig) -> Tensor:
    """Run the recurrent forecaster over a batch.

    Parameters
    ----------
    params : RecurrentParams with array or bound-tensor leaves
    inputs : (B, t_in, d) array, treated as constants
    config : RecurrentConfig

    Returns a (B, d, horizon) logits tensor.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != config.input_dim:
        raise DimensionError(
            f"inputs must be (batch, t_in, {config.input_dim}), got {inputs.shape}"
        )
    batch, t_in, d = inputs.shape
    h = config.hidden_size

    w_in = ad.transpose_last2(_as_bound(params.w_input))      # (d, h)
    w_hid = ad.transpose_last2(_as_bound(params.w_hidden))    # (h, h)
    bias = _as_bound(params.bias)
    gated = config.gated
    if gated:
        if params.gate_input is None or params.gate_forget is None or params.gate_output is None:
            raise ContractError("gated config but gate parameters are missing")
        gx, gh, gb = _stacked_gate_maps(params)

    state = Tensor(np.zeros((batch, h)))
    cell = Tensor(np.zeros((batch, h)))
    for t in range(t_in):
        x_t = Tensor(inputs[:, t, :])
        pre = ad.add_bias(ad.add(ad.matmul(x_t, w_in), ad.matmul(state, w_hid)), bias)
        if gated:
            cand = ad.tanh(pre)
            gates = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x_t, gx), ad.matmul(state, gh)), gb))
            g_in = ad.slice_last(gates, 0, h)
            g_forget = ad.slice_last(gates, h, 2 * h)
            g_out = ad.slice_last(gates, 2 * h, 3 * h)
            cell = ad.add(ad.hadamard(g_forget, cell), ad.hadamard(g_in, cand))
            state = ad.hadamard(g_out, ad.tanh(cell))
        else:
            state = ad.tanh(pre) if config.activation == "tanh" else pre
    logits = ad.matmul(state, ad.transpose_last2(_as_bound(params.w_logit)))
    return ad.reshape(logits, (batch, d, config.horizon))


def recurrent_forward(params: RecurrentParams, window: Window,
                      config: RecurrentConfig) -> Tensor:
    """Single-window convenience wrapper; returns (d, horizon) logits."""
    batch = window.inputs.T[None, :, :]
    out = recurrent_forward_batch(params, batch, config)
    return ad.reshape(out, (config.input_dim, config.horizon))


# ---------------------------------------------------------------------------
# Transformer forward


def positional_encoding(length: int, width: int) -> np.ndarray:
    """Sinusoidal position codes: sin at even indices, cos at odd.

    Frequency of index i is 1 / 10000**(2 * (i // 2) / width).
    """
    if length < 1 or width < 1:
        raise DimensionError("positional encoding needs length >= 1 and width >= 1")
    positions = np.arange(length)[:, None]
    idx = np.arange(width)[None, :]
    omega = 1.0 / np.power(10000.0, 2.0 * (idx // 2) / width)
    angles = positions * omega
    pe = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(dk)) v.

    Accepts (T, dk) tensors or (B, T, dk) batches.
    """
    dk = q.shape[-1]
    if k.shape[-1] != dk:
        raise DimensionError(f"query/key widths disagree: {q.shape} vs {k.shape}")
    if k.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"key/value lengths disagree: {k.shape} vs {v.shape}")
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(dk))
    return ad.matmul(ad.softmax_rows(scores), v)


def _encoder_layer(x: Tensor, layer: EncoderLayerParams, config: TransformerConfig) -> Tensor:
    def maybe_norm(t: Tensor) -> Tensor:
        return ad.layer_norm_rows(t) if config.use_layer_norm else t

    attn_in = maybe_norm(x)
    head_outs = []
    for head in layer.heads:
        q = ad.matmul(attn_in, _as_bound(head.w_q))
        k = ad.matmul(attn_in, _as_bound(head.w_k))
        v = ad.matmul(attn_in, _as_bound(head.w_v))
        head_outs.append(attention(q, k, v))
    mixed = ad.matmul(ad.concat_last(head_outs), _as_bound(layer.w_o))
    x = ad.add(x, mixed) if config.use_residual else mixed

    ffn_in = maybe_norm(x)
    hidden = ad.relu(ad.add_bias(ad.matmul(ffn_in, _as_bound(layer.w1)), _as_bound(layer.b1)))
    out = ad.add_bias(ad.matmul(hidden, _as_bound(layer.w2)), _as_bound(layer.b2))
    return ad.add(x, out) if config.use_residual else out


def transformer_forward_batch(params: TransformerParams, inputs: np.ndarray,
                              config: TransformerConfig) -> Tensor:
    """Run the transformer forecaster over a batch.

    Parameters
    ----------
    params : TransformerParams with array or bound-tensor leaves
    inputs : (B, t_in, d) array, treated as constants
    config : TransformerConfig

    Returns a (B, d, horizon) logits tensor.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != config.input_dim:
        raise DimensionError(
            f"inputs must be (batch, t_in, {config.input_dim}), got {inputs.shape}"
        )
    batch, t_in, d = inputs.shape
    tokens = ad.matmul(Tensor(inputs), _as_bound(params.w_embed))
    tokens = ad.add_bias(tokens, Tensor(positional_encoding(t_in, config.width)))
    for layer in params.layers:
        tokens = _encoder_layer(tokens, layer, config)
    pooled = ad.select_step(tokens, -1)
    logits = ad.matmul(pooled, ad.transpose_last2(_as_bound(params.w_logit)))
    return ad.reshape(logits, (batch, d, config.horizon))


def transformer_forward(params: TransformerParams, window: Window,
                        config: TransformerConfig) -> Tensor:
    """Single-window convenience wrapper; returns (d, horizon) logits."""
    batch = window.inputs.T[None, :, :]
    out = transformer_forward_batch(params, batch, config)
    return ad.reshape(out, (config.input_dim, config.horizon))


def forward_batch(params, inputs: np.ndarray, config) -> Tensor:
    if isinstance(config, RecurrentConfig):
        return recurrent_forward_batch(params, inputs, config)
    if isinstance(config, TransformerConfig):
        return transformer_forward_batch(params, inputs, config)
    raise ContractError(f"unknown model config type {type(config).__name__}")


# ---------------------------------------------------------------------------
# Checkpoint serialization

_MAGIC = b"IVCP"
_VERSION = 1


def _config_blob(config) -> dict:
    kind = "recurrent" if isinstance(config, RecurrentConfig) else "transformer"
    return {"kind": kind, **dataclasses.asdict(config)}


def _config_from_blob(blob: dict):
    kind = blob.pop("kind")
    if kind == "recurrent":
        return RecurrentConfig(**blob)
    if kind == "transformer":
        return TransformerConfig(**blob)
    raise ContractError(f"unknown checkpoint model kind {kind!r}")


def save_checkpoint(path, config, params) -> None:
    """Write a model to a flat, versioned binary file."""
    pairs = named_arrays(params)
    blob = json.dumps(_config_blob(config), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(pairs)))
        for name, leaf in pairs:
            arr = _value(leaf)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        for _, leaf in pairs:
            fh.write(np.ascontiguousarray(_value(leaf), dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (config, params)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ContractError(f"{path} is not a model checkpoint")
        version, blob_len = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        config = _config_from_blob(json.loads(fh.read(blob_len).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            entries.append((name, shape))
        values: dict[str, np.ndarray] = {}
        for name, shape in entries:
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ContractError(f"{path} is truncated at parameter {name!r}")
            values[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    template = init_model(config, seed=0)
    return config, rebuild_like(template, values)
