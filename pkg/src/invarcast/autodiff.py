"""Dense float64 tensors with tape-based reverse-mode differentiation.

The forecaster architectures in this package only need a small vocabulary of
operations: (optionally batched) matrix products, same-shape elementwise
arithmetic, the usual activations, row softmax, row layer normalization,
light shape surgery, and two reductions. Every operation checks its output
for NaN/Inf immediately, so numerical blowups fail loudly at the op that
produced them instead of poisoning a training run.

Usage: create a ``GradientTape``, attach parameters to it with
``Tensor(values, tape)``, run the forward computation with the functions
below, then call ``backward(loss, tape)`` to obtain a gradient lookup.
Replaying the tape visits operations in exact reverse order of the forward
pass. Tensors without a tape are constants: they participate in forward
computation, record nothing, and receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "GradientTape",
    "Gradients",
    "backward",
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scale",
    "add_bias",
    "sigmoid",
    "tanh",
    "relu",
    "softmax_rows",
    "layer_norm_rows",
    "reshape",
    "transpose_last2",
    "concat_last",
    "slice_last",
    "select_step",
    "sum_all",
    "sum_axis0",
    "finite_diff_check",
    "FiniteDiffReport",
]


class Tensor:
    """Immutable float64 array, optionally attached to a GradientTape.

    Treat ``data`` as read-only after construction; optimizers produce new
    arrays rather than mutating old ones, which keeps recorded forward values
    valid for the backward pass and makes tensors safe to share between
    threads.
    """

    __slots__ = ("data", "tape")

    def __init__(self, data, tape: "GradientTape | None" = None, _check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise DimensionError("tensor must not be empty, got shape %s" % (arr.shape,))
        if _check and not np.isfinite(arr).all():
            raise NonFiniteError("tensor construction received NaN or Inf")
        self.data = arr
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = "tracked" if self.tape is not None else "constant"
        return f"Tensor(shape={self.data.shape}, {tag})"

    # Operator sugar so model code stays readable.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class GradientTape:
    """Ordered record of primitive operations.

    ``backward`` replays the record in exact reverse order. A tape may be
    replayed more than once; each call uses a fresh gradient accumulator.
    """

    def __init__(self):
        self._records: list = []

    def _record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)


class Gradients:
    """Gradient lookup returned by ``backward``.

    Indexing with a tensor that the loss never touched returns zeros of the
    tensor's shape; gradients are only readable through this object, i.e.
    after the backward pass has completed.
    """

    def __init__(self, buf: dict):
        self._buf = buf

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._buf.get(id(t))
        if g is None:
            return np.zeros(t.data.shape)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._buf


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _merged_tape(*tensors: Tensor) -> GradientTape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands belong to different gradient tapes")
    return tape


def _result(data: np.ndarray, tape: GradientTape | None, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    return Tensor(data, tape, _check=False)


def _record(tape: GradientTape | None, out: Tensor, pairs) -> None:
    """Register vector-Jacobian products for ``out`` on ``tape``.

    ``pairs`` is a list of (input tensor, vjp) where vjp maps the output
    gradient to that input's gradient contribution. Inputs without a tape
    are constants and are skipped.
    """
    if tape is None:
        return

    def _bw(buf: dict) -> None:
        g = buf.get(id(out))
        if g is None:
            return
        for t, vjp in pairs:
            if t.tape is None:
                continue
            gi = vjp(g)
            prev = buf.get(id(t))
            buf[id(t)] = gi if prev is None else prev + gi

    tape._record(_bw)


def backward(loss: Tensor, tape: GradientTape) -> Gradients:
    """Replay ``tape`` in reverse and return gradients of ``loss``.

    ``loss`` must be a scalar tensor computed on ``tape``. Every parameter
    reachable from the loss gets its analytic derivative; unreachable
    parameters read as zero from the returned ``Gradients``.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.ndim != 0:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not computed on the given tape")
    buf: dict = {id(loss): np.ones(())}
    for fn in reversed(tape._records):
        fn(buf)
    return Gradients(buf)


# ---------------------------------------------------------------------------
# Matrix products


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported shapes: (m,n)@(n,p), (B,m,n)@(n,p), and (B,m,n)@(B,n,p).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    va, vb = a.data, b.data
    if va.ndim == 2 and vb.ndim == 2:
        ok = va.shape[1] == vb.shape[0]
    elif va.ndim == 3 and vb.ndim == 2:
        ok = va.shape[2] == vb.shape[0]
    elif va.ndim == 3 and vb.ndim == 3:
        ok = va.shape[0] == vb.shape[0] and va.shape[2] == vb.shape[1]
    else:
        raise DimensionError(f"matmul does not support shapes {va.shape} and {vb.shape}")
    if not ok:
        raise DimensionError(f"matmul shapes do not align: {va.shape} and {vb.shape}")
    tape = _merged_tape(a, b)
    out = _result(va @ vb, tape, "matmul")

    def vjp_a(g):
        if vb.ndim == 2:
            return g @ vb.T
        return g @ np.swapaxes(vb, -1, -2)

    def vjp_b(g):
        if va.ndim == 2:
            return va.T @ g
        if vb.ndim == 2:
            return np.tensordot(va, g, axes=([0, 1], [0, 1]))
        return np.swapaxes(va, -1, -2) @ g

    _record(tape, out, [(a, vjp_a), (b, vjp_b)])
    return out


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op} requires equal shapes, got {a.data.shape} and {b.data.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    tape = _merged_tape(a, b)
    out = _result(a.data + b.data, tape, "add")
    _record(tape, out, [(a, lambda g: g), (b, lambda g: g)])
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    tape = _merged_tape(a, b)
    out = _result(a.data - b.data, tape, "sub")
    _record(tape, out, [(a, lambda g: g), (b, lambda g: -g)])
    return out


def hadamard(a, b) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "hadamard")
    tape = _merged_tape(a, b)
    va, vb = a.data, b.data
    out = _result(va * vb, tape, "hadamard")
    _record(tape, out, [(a, lambda g: g * vb), (b, lambda g: g * va)])
    return out


def scale(x, c: float) -> Tensor:
    """Multiply a tensor by a python scalar constant."""
    x = _as_tensor(x)
    c = float(c)
    if not np.isfinite(c):
        raise NonFiniteError("scale factor must be finite")
    out = _result(x.data * c, x.tape, "scale")
    _record(x.tape, out, [(x, lambda g: g * c)])
    return out


def add_bias(x, b) -> Tensor:
    """Add a bias whose shape matches the trailing axes of ``x``."""
    x, b = _as_tensor(x), _as_tensor(b)
    vx, vb = x.data, b.data
    if vb.ndim > vx.ndim or vx.shape[vx.ndim - vb.ndim:] != vb.shape:
        raise DimensionError(
            f"add_bias: bias shape {vb.shape} does not match trailing axes of {vx.shape}"
        )
    lead = tuple(range(vx.ndim - vb.ndim))
    tape = _merged_tape(x, b)
    out = _result(vx + vb, tape, "add_bias")
    _record(tape, out, [(x, lambda g: g), (b, lambda g: g.sum(axis=lead) if lead else g)])
    return out


# ---------------------------------------------------------------------------
# Activations


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    out_data = np.empty_like(v)
    pos = v >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_data[~pos] = ev / (1.0 + ev)
    out = _result(out_data, x.tape, "sigmoid")
    _record(x.tape, out, [(x, lambda g: g * out_data * (1.0 - out_data))])
    return out


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.tanh(x.data)
    out = _result(out_data, x.tape, "tanh")
    _record(x.tape, out, [(x, lambda g: g * (1.0 - out_data * out_data))])
    return out


def relu(x) -> Tensor:
    # Subgradient at exactly zero is taken to be zero.
    x = _as_tensor(x)
    v = x.data
    out = _result(np.maximum(v, 0.0), x.tape, "relu")
    _record(x.tape, out, [(x, lambda g: g * (v > 0.0))])
    return out


def softmax_rows(x) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction."""
    x = _as_tensor(x)
    v = x.data
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _result(y, x.tape, "softmax_rows")

    def vjp(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    _record(x.tape, out, [(x, vjp)])
    return out


def layer_norm_rows(x, eps: float = 1e-5) -> Tensor:
    """Parameter-free layer normalization along the last axis.

    Each row is centered by its mean and divided by sqrt(variance + eps),
    with the population (1/n) variance.
    """
    x = _as_tensor(x)
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = _result(y, x.tape, "layer_norm_rows")

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gy)

    _record(x.tape, out, [(x, vjp)])
    return out


# ---------------------------------------------------------------------------
# Shape surgery


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.data.shape} to {shape}")
    out = _result(x.data.reshape(shape), x.tape, "reshape")
    src = x.data.shape
    _record(x.tape, out, [(x, lambda g: g.reshape(src))])
    return out


def transpose_last2(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise DimensionError(f"transpose_last2 needs ndim >= 2, got shape {x.data.shape}")
    out = _result(np.swapaxes(x.data, -1, -2), x.tape, "transpose_last2")
    _record(x.tape, out, [(x, lambda g: np.swapaxes(g, -1, -2))])
    return out


def concat_last(tensors) -> Tensor:
    """Concatenate tensors along their last axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat_last needs at least one tensor")
    lead = ts[0].data.shape[:-1]
    for t in ts:
        if t.data.ndim != ts[0].data.ndim or t.data.shape[:-1] != lead:
            raise DimensionError(
                "concat_last requires matching leading axes, got "
                + ", ".join(str(t.data.shape) for t in ts)
            )
    tape = _merged_tape(*ts)
    out = _result(np.concatenate([t.data for t in ts], axis=-1), tape, "concat_last")
    pairs = []
    offset = 0
    for t in ts:
        w = t.data.shape[-1]
        start, stop = offset, offset + w

        def vjp(g, start=start, stop=stop):
            return g[..., start:stop]

        pairs.append((t, vjp))
        offset = stop
    _record(tape, out, pairs)
    return out


def slice_last(x, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` along the last axis."""
    x = _as_tensor(x)
    width = x.data.shape[-1]
    start, stop = int(start), int(stop)
    if not (0 <= start < stop <= width):
        raise DimensionError(f"slice_last bounds [{start}:{stop}] invalid for width {width}")
    out = _result(x.data[..., start:stop], x.tape, "slice_last")
    src = x.data.shape

    def vjp(g):
        full = np.zeros(src)
        full[..., start:stop] = g
        return full

    _record(x.tape, out, [(x, vjp)])
    return out


def select_step(x, index: int) -> Tensor:
    """Select one position along axis -2 (the timestep axis), dropping it."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise DimensionError(f"select_step needs ndim >= 2, got shape {x.data.shape}")
    steps = x.data.shape[-2]
    index = int(index)
    if not (-steps <= index < steps):
        raise DimensionError(f"select_step index {index} out of range for {steps} steps")
    out = _result(x.data[..., index, :], x.tape, "select_step")
    src = x.data.shape

    def vjp(g):
        full = np.zeros(src)
        full[..., index, :] = g
        return full

    _record(x.tape, out, [(x, vjp)])
    return out


# ---------------------------------------------------------------------------
# Reductions


def sum_all(x) -> Tensor:
    """Sum every element down to a scalar."""
    x = _as_tensor(x)
    out = _result(np.asarray(x.data.sum()), x.tape, "sum_all")
    src = x.data.shape
    _record(x.tape, out, [(x, lambda g: np.full(src, float(g)))])
    return out


def sum_axis0(x) -> Tensor:
    """Sum over the leading axis."""
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise DimensionError("sum_axis0 needs ndim >= 1")
    out = _result(x.data.sum(axis=0), x.tape, "sum_axis0")
    src = x.data.shape
    _record(x.tape, out, [(x, lambda g: np.broadcast_to(g, src).copy())])
    return out


# ---------------------------------------------------------------------------
# Finite-difference checking


@dataclass(frozen=True)
class FiniteDiffReport:
    """Outcome of a finite-difference gradient check.

    ``per_param`` holds the max relative error for each checked parameter in
    input order. The check reports and never aborts; callers decide what to
    do with a failing report.
    """

    max_rel_error: float
    per_param: tuple[float, ...]
    eps: float
    tol: float
    passed: bool


def finite_diff_check(fn, params, eps: float = 1e-5, tol: float = 1e-5,
                      floor: float = 1e-6) -> FiniteDiffReport:
    """Compare tape gradients of ``fn`` against central finite differences.

    Parameters
    ----------
    fn : callable(tape, params) -> Tensor
        Builds a scalar loss from a list of parameter tensors. It is called
        once with a recording tape and then repeatedly with constant tensors
        for the numeric probes, so it must not rely on the tape argument.
    params : sequence of array-like
        Parameter values to check, perturbed one entry at a time.
    eps : float
        Central difference step.
    tol : float
        Relative error threshold for ``passed``.
    floor : float
        Denominator floor so roundoff in the difference quotient does not
        dominate vanishing gradients.
    """
    values = [np.asarray(p, dtype=np.float64) for p in params]
    tape = GradientTape()
    tracked = [Tensor(v, tape) for v in values]
    loss = fn(tape, tracked)
    grads = backward(loss, tape)
    analytic = [grads[t] for t in tracked]

    def eval_at(probe_values) -> float:
        consts = [Tensor(v) for v in probe_values]
        return float(fn(None, consts).data)

    per_param = []
    for i, base in enumerate(values):
        worst = 0.0
        flat = base.reshape(-1)
        for j in range(flat.size):
            plus = [v.copy() if k == i else v for k, v in enumerate(values)]
            minus = [v.copy() if k == i else v for k, v in enumerate(values)]
            plus[i].reshape(-1)[j] += eps
            minus[i].reshape(-1)[j] -= eps
            numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * eps)
            a = float(analytic[i].reshape(-1)[j])
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
        per_param.append(worst)
    max_err = max(per_param) if per_param else 0.0
    return FiniteDiffReport(
        max_rel_error=max_err,
        per_param=tuple(per_param),
        eps=eps,
        tol=tol,
        passed=max_err < tol,
    )
