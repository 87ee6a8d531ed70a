"""Closed-form regression coefficients for the static structural model.

With X = e1, Y = X + e2, Z = Y + e3, e1, e2 ~ N(0, s2), e3 ~ N(0, 1), the
population least-squares solutions follow from the second moments

    Var(X) = s2        Cov(X, Y) = s2      Cov(X, Z) = s2
    Var(Y) = 2 s2      Cov(Y, Z) = 2 s2
    Var(Z) = 2 s2 + 1

Regressing Y on X alone gives exactly 1; on Z alone gives s2 / (s2 + 0.5);
jointly on (X, Z) gives (1 / (s2 + 1), s2 / (s2 + 1)), whose entries sum to
one for every noise scale. These closed forms anchor the empirical sanity
check behind the ``oracle-check`` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractError, SingularDesignError
from .semgen import SemConfig, generate_static

__all__ = [
    "OracleCoefficients",
    "alpha1_only",
    "alpha2_only",
    "joint",
    "ols_fit",
    "empirical_coefficients",
    "oracle_check_rows",
    "DEFAULT_SIGMA2_GRID",
]

DEFAULT_SIGMA2_GRID = (0.1, 0.5, 1.0, 2.0)


def _check_sigma2(sigma2: float) -> float:
    s2 = float(sigma2)
    if not (np.isfinite(s2) and s2 >= 0):
        raise ConfigError(f"sigma2 must be finite and >= 0, got {sigma2}")
    return s2


@dataclass(frozen=True)
class OracleCoefficients:
    """Population coefficients for the joint regression of Y on (X, Z)."""

    alpha1: float
    alpha2: float


def alpha1_only(sigma2: float) -> float:
    """Population coefficient for Y ~ X alone; identically 1."""
    _check_sigma2(sigma2)
    return 1.0


def alpha2_only(sigma2: float) -> float:
    """Population coefficient for Y ~ Z alone: s2 / (s2 + 0.5)."""
    s2 = _check_sigma2(sigma2)
    return s2 / (s2 + 0.5)


def joint(sigma2: float) -> OracleCoefficients:
    """Population coefficients for Y ~ X + Z; they always sum to 1."""
    s2 = _check_sigma2(sigma2)
    return OracleCoefficients(alpha1=1.0 / (s2 + 1.0), alpha2=s2 / (s2 + 1.0))


def ols_fit(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Ordinary least squares through the normal equations.

    Parameters
    ----------
    design : (n, p) array with n > p >= 1
    target : (n,) array

    Returns the (p,) coefficient vector; raises SingularDesignError when the
    Gram matrix is rank deficient.
    """
    design = np.asarray(design, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if design.ndim != 2:
        raise ContractError(f"design must be 2-d, got shape {design.shape}")
    n, p = design.shape
    if target.shape != (n,):
        raise ContractError(f"target shape {target.shape} does not match design rows {n}")
    if not (n > p >= 1):
        raise ContractError(f"need n > p >= 1, got n={n}, p={p}")
    if not (np.isfinite(design).all() and np.isfinite(target).all()):
        raise ContractError("design and target must be finite")
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < p:
        raise SingularDesignError(f"design matrix of shape {design.shape} is rank deficient")
    return np.linalg.solve(gram, design.T @ target)


def empirical_coefficients(sigma2: float, n_samples: int = 100_000,
                           seed: int = 0) -> dict[str, np.ndarray]:
    """Fit the three regressions on one fresh static sample.

    Returns arrays keyed "x_only", "z_only", "joint" (the joint fit is
    ordered (alpha1, alpha2)).
    """
    s2 = _check_sigma2(sigma2)
    sample = generate_static(SemConfig(sigma2=s2, length=int(n_samples), seed=seed,
                                       mode="static"))
    x, y, z = sample.values
    return {
        "x_only": ols_fit(x[:, None], y),
        "z_only": ols_fit(z[:, None], y),
        "joint": ols_fit(np.stack([x, z], axis=1), y),
    }


def oracle_check_rows(sigma2_values=DEFAULT_SIGMA2_GRID, n_samples: int = 100_000,
                      seed: int = 0, tol: float = 0.02) -> tuple[list[dict], bool]:
    """Compare empirical fits against the closed forms over a sigma2 grid.

    Returns (rows, all_ok); each row carries the regression name, noise
    scale, expected and fitted values, and the absolute gap.
    """
    rows: list[dict] = []
    ok = True
    for s2 in sigma2_values:
        fits = empirical_coefficients(s2, n_samples=n_samples, seed=seed)
        expected = {
            "x_only": (alpha1_only(s2),),
            "z_only": (alpha2_only(s2),),
            "joint": (joint(s2).alpha1, joint(s2).alpha2),
        }
        for name, exp in expected.items():
            for i, (e, f) in enumerate(zip(exp, fits[name])):
                gap = abs(e - float(f))
                ok = ok and gap <= tol
                rows.append({
                    "regression": name,
                    "coefficient": f"alpha{i + 1}" if name == "joint" else "alpha",
                    "sigma2": float(s2),
                    "expected": float(e),
                    "fitted": float(f),
                    "abs_gap": gap,
                    "within_tol": gap <= tol,
                })
    return rows, ok
