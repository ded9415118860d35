"""Parameter maps, spatially varying log-parameter fields and priors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.stats import norm

from .errors import InvalidQuantiles, NonPositiveParameter
from .mesh import Mesh, eval_basis_matrix

LOG_2PI = math.log(2.0 * math.pi)


def smoothness_for(dimension: int, alpha: float = 2.0) -> float:
    """Matern smoothness implied by the SPDE exponent: ``nu = alpha - d/2``."""
    return alpha - dimension / 2.0


@dataclass(frozen=True)
class InterpretableParams:
    log_sigma: float
    log_rho: float
    nu: float = 1.0


def natural_from_interpretable(p: InterpretableParams, dimension: int = 2):
    """Map ``(log sigma, log rho)`` to ``(log tau, log kappa)``.

    With ``alpha = nu + d/2``::

        log kappa = 0.5 log(8 nu) - log rho
        log tau   = 0.5 log(Gamma(nu) / (Gamma(alpha) (4 pi)^(d/2)))
                    - log sigma - nu log kappa

    For ``d = 2`` this is ``0.5 log(Gamma(nu) / (4 pi Gamma(alpha)))``.
    """
    nu = p.nu
    alpha = nu + dimension / 2.0
    log_kappa = 0.5 * math.log(8.0 * nu) - p.log_rho
    log_tau = (0.5 * (gammaln(nu) - gammaln(alpha) - 0.5 * dimension * math.log(4.0 * math.pi))
               - p.log_sigma - nu * log_kappa)
    return log_tau, log_kappa


def interpretable_from_natural(log_tau: float, log_kappa: float, nu: float = 1.0,
                               dimension: int = 2) -> InterpretableParams:
    alpha = nu + dimension / 2.0
    log_rho = 0.5 * math.log(8.0 * nu) - log_kappa
    log_sigma = (0.5 * (gammaln(nu) - gammaln(alpha) - 0.5 * dimension * math.log(4.0 * math.pi))
                 - log_tau - nu * log_kappa)
    return InterpretableParams(log_sigma, log_rho, nu)


def natural_fields(log_sigma, log_rho, nu: float, dimension: int):
    """Vectorised version of :func:`natural_from_interpretable` returning ``(tau, kappa)``."""
    alpha = nu + dimension / 2.0
    const = 0.5 * (gammaln(nu) - gammaln(alpha) - 0.5 * dimension * math.log(4.0 * math.pi))
    log_kappa = 0.5 * math.log(8.0 * nu) - np.asarray(log_rho, dtype=float)
    log_tau = const - np.asarray(log_sigma, dtype=float) - nu * log_kappa
    return np.exp(log_tau), np.exp(log_kappa)


@dataclass(frozen=True)
class ParamField:
    """A log-parameter field ``b(s)^T theta`` over a parameter basis."""

    basis: sp.csr_matrix
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        b = sp.csr_matrix(self.basis)
        if b.shape[1] != coef.size:
            raise ValueError(f"{coef.size} coefficients for a basis with {b.shape[1]} columns")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "coefficients", coef)


def eval_log_field(f: ParamField, locations=None, mesh: Mesh | None = None) -> np.ndarray:
    """Evaluate ``b(s)^T theta``.

    ``locations`` may be an index array selecting rows of ``f.basis`` (e.g.
    parameter-mesh vertices the basis was built on), or points when ``mesh``
    is given, in which case the basis is re-evaluated at those points.
    """
    if mesh is not None:
        b = eval_basis_matrix(mesh, locations)
        return b @ f.coefficients
    vals = f.basis @ f.coefficients
    if locations is None:
        return vals
    return vals[np.asarray(locations, dtype=np.int64)]


@dataclass(frozen=True)
class GaussianPrior:
    omega: float
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise NonPositiveParameter("prior variance must be positive")

    @property
    def sd(self) -> float:
        return math.sqrt(self.lam)

    def sample(self, rng: np.random.Generator, size=None):
        return self.omega + self.sd * rng.standard_normal(size)


def prior_from_quantiles(q_low: float, q_high: float, p_low: float = 0.025,
                         p_high: float = 0.975) -> GaussianPrior:
    """Gaussian prior on ``log X`` so that ``X`` has the given quantiles."""
    if not (0 < q_low < q_high) or not (0 < p_low < p_high < 1):
        raise InvalidQuantiles(f"need 0 < q_low < q_high and 0 < p_low < p_high < 1")
    zl, zh = norm.ppf(p_low), norm.ppf(p_high)
    ll, lh = math.log(q_low), math.log(q_high)
    sd = (lh - ll) / (zh - zl)
    omega = ll - zl * sd
    return GaussianPrior(omega, sd * sd)


def lognormal_quantile(prior: GaussianPrior, p: float) -> float:
    return math.exp(prior.omega + prior.sd * norm.ppf(p))


def log_prior_density(prior: GaussianPrior, theta) -> np.ndarray | float:
    theta = np.asarray(theta, dtype=float)
    out = -0.5 * (LOG_2PI + math.log(prior.lam)) - 0.5 * (theta - prior.omega) ** 2 / prior.lam
    return float(out) if out.ndim == 0 else out
