r"""Channel importance by group-sparse self-reconstruction.

Solves

    minimize   1/2 ||D - D U||_F^2 + lambda * sum_i ||u^i||_2
    subject to 1^T U = 1^T

with ADMM on the split U = Z. The U-update solves the equality-constrained
quadratic exactly (KKT system), the Z-update is the row-wise group
soft-threshold and Y is the scaled dual. Everything runs on the C x C Gram
matrix of the row-centered data; on the affine set that leaves the
reconstruction term unchanged and makes the problem invariant to adding the
same vector to every column of D.
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

from src import config
from src.core.ops import DTYPE
from src.errors import DivergenceError, DomainError, SingularityError
from src.utils.logging import log_debug, log_info


@dataclass(frozen=True)
class SolverConfig:
    lambda_rel: float = config.LAMBDA_REL
    rho: float = config.RHO
    max_iters: int = config.MAX_ITERS
    tol_primal: float = config.TOL
    tol_dual: float = config.TOL

    def __post_init__(self):
        if not 0 < self.lambda_rel <= 1:
            raise DomainError(f"lambda_rel must be in (0, 1], got {self.lambda_rel}")
        if self.rho <= 0:
            raise DomainError(f"rho must be > 0, got {self.rho}")
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise DomainError("tolerances must be > 0")


@dataclass
class ReconstructionCoefficients:
    U: np.ndarray
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    iters_used: int = 0
    lam: float = 0.0


@dataclass
class ImportanceReport:
    layer: str
    factors: np.ndarray
    ranking: np.ndarray

    def to_frame(self):
        """One row per channel in rank order (rank 1 = most important)"""
        return pd.DataFrame(
            {
                "channel": self.ranking,
                "factor": self.factors[self.ranking],
                "rank": np.arange(1, self.ranking.size + 1),
            }
        )


def translation_free_gram(values):
    """Gram matrix of D with each row's mean over channels removed"""
    d = np.asarray(values, dtype=np.float64)
    centered = d - d.mean(axis=1, keepdims=True)
    return centered.T @ centered


def group_soft_threshold(v, kappa):
    """Shrink every row of ``v`` toward zero by ``kappa`` in l2 norm"""
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, np.maximum(0.0, 1.0 - kappa / norms), 0.0)
    return scale * v


def objective(gram, u, lam):
    """1/2 ||D - DU||_F^2 + lam * sum of row norms, in Gram form"""
    fit = 0.5 * (np.trace(gram) - 2.0 * np.sum(gram * u.T) + np.sum(u * (gram @ u)))
    return max(fit, 0.0) + lam * np.linalg.norm(u, axis=1).sum()


def reference_lambda(gram):
    """Largest row norm of the Gram matrix (the row-centered one the solver runs on)"""
    return float(np.linalg.norm(gram, axis=1).max())


def solve_group_sparse(data, cfg=None):
    """Run ADMM on ``data`` (a DataMatrix) and return the coefficients"""
    cfg = cfg or SolverConfig()
    rows, cols = data.values.shape
    if rows < cols:
        raise DomainError(f"data matrix for {data.layer} has {rows} rows < {cols} channels; sample more images")

    gram = translation_free_gram(data.values)
    if not np.all(np.isfinite(gram)):
        raise DivergenceError(f"{data.layer}: data matrix contains non-finite values")
    lam = cfg.lambda_rel * reference_lambda(gram)
    scale = np.trace(gram) / cols
    rho = cfg.rho * (scale if scale > 0 else 1.0)
    log_debug(f"Solving {cols}x{cols} group-sparse system for {data.layer}: lambda={lam:.4g}, rho={rho:.4g}")

    try:
        factor = linalg.cho_factor(gram + rho * np.eye(cols), check_finite=False)
    except linalg.LinAlgError as e:
        raise SingularityError(f"{data.layer}: KKT system is singular ({e})") from e
    ones_solve = linalg.cho_solve(factor, np.ones(cols), check_finite=False)
    denom = ones_solve.sum()

    u = np.eye(cols)
    z = u.copy()
    y = np.zeros_like(u)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        # U-update: minimize the quadratic subject to 1^T U = 1^T
        p = linalg.cho_solve(factor, gram + rho * (z - y), check_finite=False)
        nu = (p.sum(axis=0) - 1.0) / denom
        u = p - np.outer(ones_solve, nu)

        # Z-update and scaled dual ascent
        z_old = z
        z = group_soft_threshold(u + y, lam / rho)
        y = y + u - z

        value = objective(gram, u, lam)
        if not (np.isfinite(value) and np.all(np.isfinite(z))):
            raise DivergenceError(
                f"{data.layer}: solver diverged at iteration {it}; try a larger rho (now {cfg.rho})"
            )
        trace.append(float(value))

        r_norm = np.linalg.norm(u - z) / max(1.0, np.linalg.norm(u), np.linalg.norm(z))
        s_norm = rho * np.linalg.norm(z - z_old) / max(1.0, rho * np.linalg.norm(y))
        if r_norm < cfg.tol_primal and s_norm < cfg.tol_dual:
            converged = True
            break

    log_info(f"{data.layer}: solver {'converged' if converged else 'stopped'} after {it} iterations")
    return ReconstructionCoefficients(u.astype(DTYPE), trace, converged, it, lam)


def importance_report(coefficients, layer):
    """Rank channels by the l2 norm of their row of U"""
    u = np.asarray(getattr(coefficients, "U", coefficients), dtype=np.float64)
    factors = np.linalg.norm(u, axis=1)
    # lexsort: last key is primary; ties keep the lower channel index first
    ranking = np.lexsort((np.arange(factors.size), -factors))
    return ImportanceReport(layer, factors, ranking)
