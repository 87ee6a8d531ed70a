"""Invariance gradient penalty for mean-squared-error forecasting.

The forecaster's (d, k) output logits H pass through a frozen all-ones
elementwise head; the head is never trained. Instead, each environment
contributes the squared gradient of its risk with respect to that head,
evaluated at all-ones: for MSE risk over a batch of B windows,

    risk = mean over (B, d, k) of (w * H - T)^2
    g_ij = d risk / d w_ij |_{w=1} = (2 / (B d k)) * sum_b (H_bij - T_bij) H_bij
    penalty = sum_ij g_ij^2

``irm_penalty_mse`` evaluates that closed form with tape operations, so the
penalty stays differentiable with respect to whatever produced H without any
second-order machinery. The training objective sums risks over environments
and adds ``lambda`` times the summed penalties; a small schedule object flips
``lambda`` from a warm-up value to its main value at a fixed epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, ContractError, DimensionError

__all__ = [
    "InvariantHead",
    "apply_head",
    "mse_risk",
    "irm_penalty_mse",
    "irm_objective",
    "LambdaSchedule",
]


@dataclass(frozen=True)
class InvariantHead:
    """The frozen elementwise scaling head; its weights are all ones.

    It exists as an explicit object so the objective reads the way it is
    defined, but it carries no trainable state and no optimizer ever sees
    it.
    """

    input_dim: int
    horizon: int

    def __post_init__(self):
        if self.input_dim < 1 or self.horizon < 1:
            raise ConfigError("head dimensions must be >= 1")

    @property
    def w_inv(self) -> np.ndarray:
        w = np.ones((self.input_dim, self.horizon))
        w.setflags(write=False)
        return w


def apply_head(logits: Tensor) -> Tensor:
    """Scale logits elementwise by the frozen all-ones head.

    Accepts (d, k) logits or a (B, d, k) batch; the multiplication is by a
    constant, so no gradient ever flows into the head itself.
    """
    if logits.ndim not in (2, 3):
        raise DimensionError(f"logits must be (d, k) or (B, d, k), got {logits.shape}")
    return ad.hadamard(logits, Tensor(np.ones(logits.shape)))


def _check_batch(logits: Tensor, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 3:
        raise DimensionError(f"expected a (B, d, k) logits batch, got shape {logits.shape}")
    if targets.shape != logits.shape:
        raise DimensionError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    if not np.isfinite(targets).all():
        raise ContractError("targets must be finite")
    return targets


def mse_risk(logits: Tensor, targets) -> Tensor:
    """Mean squared error over a (B, d, k) batch, as a tape scalar."""
    targets = _check_batch(logits, targets)
    resid = ad.sub(logits, Tensor(targets))
    return ad.scale(ad.sum_all(ad.hadamard(resid, resid)), 1.0 / logits.data.size)


def irm_penalty_mse(logits: Tensor, targets) -> Tensor:
    """Squared gradient of the MSE risk in the frozen head, at all-ones.

    Returns a scalar tensor that is differentiable with respect to the
    logits (and hence the featurizer parameters behind them).
    """
    targets = _check_batch(logits, targets)
    coeff = 2.0 / logits.data.size
    # g = coeff * sum_b (H - T) * H, elementwise over the (d, k) head.
    prod = ad.hadamard(ad.sub(logits, Tensor(targets)), logits)
    head_grad = ad.scale(ad.sum_axis0(prod), coeff)
    return ad.sum_all(ad.hadamard(head_grad, head_grad))


def irm_objective(env_batches, lam: float) -> Tensor:
    """Sum of per-environment risks plus ``lam`` times summed penalties.

    ``env_batches`` is a non-empty list of (logits, targets) pairs, one per
    environment. With ``lam == 0`` the penalty branch is skipped entirely,
    so the objective (and its gradients) are bit-identical to plain pooled
    risk minimization over the same batches.
    """
    env_batches = list(env_batches)
    if not env_batches:
        raise ContractError("irm_objective needs at least one environment batch")
    lam = float(lam)
    if not (np.isfinite(lam) and lam >= 0):
        raise ConfigError(f"lambda must be finite and >= 0, got {lam}")
    total = None
    for logits, targets in env_batches:
        risk = mse_risk(logits, targets)
        total = risk if total is None else ad.add(total, risk)
    if lam != 0.0:
        pen_total = None
        for logits, targets in env_batches:
            pen = irm_penalty_mse(logits, targets)
            pen_total = pen if pen_total is None else ad.add(pen_total, pen)
        total = ad.add(total, ad.scale(pen_total, lam))
    return total


@dataclass(frozen=True)
class LambdaSchedule:
    """Step schedule: ``lambda_pre`` for the warm-up epochs, then ``lambda_main``."""

    lambda_pre: float = 1.0
    lambda_main: float = 1e4
    warmup_epochs: int = 10

    def __post_init__(self):
        for name in ("lambda_pre", "lambda_main"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")

    def value(self, epoch: int) -> float:
        if epoch < 0:
            raise ContractError(f"epoch must be >= 0, got {epoch}")
        return float(self.lambda_pre if epoch < self.warmup_epochs else self.lambda_main)
