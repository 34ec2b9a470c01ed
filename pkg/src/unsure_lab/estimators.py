"""MMSE, cross-validation and zero-expected-divergence estimators, and their risks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidMMSE, MissingGroundTruth, MissingMultipliers, ConfigError
from .models import Dataset, NoisyMarginal, SignalPrior, fisher_information
from .multipliers import CovarianceBasis, MultiplierSolution, _derivative
from .score import ScoreField, eval_score


@dataclass
class Estimator:
    """A denoiser ``f``.

    kind: ``"mmse"`` (needs ``sigma``), ``"cv"`` (needs ``prior``), ``"zed"``
    (needs ``multipliers``), ``"combination"`` (``omega`` times an inner MMSE
    estimator plus ``1 - omega`` times the input) or ``"learned"`` (needs ``net``).
    """

    kind: str
    score: Optional[ScoreField] = None
    multipliers: Optional[MultiplierSolution] = None
    family: str = "isotropic"
    sigma: Optional[float] = None
    prior: Optional[SignalPrior] = None
    basis: Optional[CovarianceBasis] = None
    weight_fn: Optional[Callable] = None
    omega: Optional[float] = None
    inner: Optional["Estimator"] = None
    net: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, y):
        return apply(self, y)


def mmse_estimator(marginal: NoisyMarginal, score: Optional[ScoreField] = None) -> Estimator:
    from .score import analytic_field
    return Estimator("mmse", score or analytic_field(marginal), sigma=marginal.sigma, prior=marginal.prior)


def cv_estimator(prior: SignalPrior) -> Estimator:
    return Estimator("cv", prior=prior)


def zed_estimator(score: ScoreField, solution: MultiplierSolution, basis: Optional[CovarianceBasis] = None,
                  weight_fn: Optional[Callable] = None) -> Estimator:
    family = solution.family
    if family == "hudson" and weight_fn is None:
        weight_fn = solution.extras.get("a")
    if family in ("general",) and basis is None:
        raise MissingMultipliers("general family needs its covariance basis")
    return Estimator("zed", score, solution, family, basis=basis, weight_fn=weight_fn)


def circulant_apply(kernel: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``sum_l kernel[l + r] * roll(s, -l)``: applies ``sum_l eta_l T_l`` along the last axis."""
    r = len(kernel) // 2
    out = np.zeros_like(s)
    for j, w in enumerate(kernel):
        out = out + w * np.roll(s, -(j - r), axis=-1)
    return out


def _apply_zed(e: Estimator, y: np.ndarray) -> np.ndarray:
    sol = e.multipliers
    if sol is None:
        raise MissingMultipliers("ZED estimator has no multipliers")
    eta = np.atleast_1d(sol.eta)
    fam = e.family
    if fam == "hudson":
        a = e.weight_fn
        if a is None:
            raise MissingMultipliers("Hudson estimator needs its weight function a(y)")
        return y + eta[0] * (a(y) * eval_score(e.score, y) + _derivative(a, y))
    s = eval_score(e.score, y)
    if fam == "isotropic":
        return y + eta[0] * s
    if fam == "diagonal":
        return y + eta * s
    if fam == "circulant" and e.basis is None:
        return y + circulant_apply(eta, s)
    if fam == "poisson_gaussian":
        eta0, gamma = sol.pg_pair if sol.pg_pair is not None else eta[:2]
        return y + (eta0 + gamma * y) * s + gamma
    if e.basis is not None:
        S = e.basis.covariance(eta)
        return y + s @ S.T
    raise ConfigError(f"unknown ZED family {fam!r}")


def apply(e: Estimator, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if e.kind == "mmse":
        if e.sigma is None:
            raise MissingMultipliers("MMSE estimator needs the noise level")
        return y + e.sigma**2 * eval_score(e.score, y)
    if e.kind == "cv":
        return np.full_like(y, e.prior.mean())
    if e.kind == "zed":
        return _apply_zed(e, y)
    if e.kind == "combination":
        return e.omega * apply(e.inner, y) + (1.0 - e.omega) * y
    if e.kind == "learned":
        return np.asarray(e.net(y))
    raise ConfigError(f"unknown estimator kind {e.kind!r}")


# ---------------------------------------------------------------------------
# MMSE -> ZED

def combination_weight(mmse: Estimator, data: Optional[Dataset] = None,
                       marginal: Optional[NoisyMarginal] = None) -> float:
    """``omega = n sigma^2 / E||mmse(y) - y||^2``, from data or from quadrature."""
    s2 = mmse.sigma**2
    if marginal is not None:
        # mmse(y) - y = sigma^2 s(y) per pixel
        return s2 / (s2**2 * fisher_information(marginal))
    if data is None:
        raise ValueError("need data or an analytic marginal")
    Y = data.samples
    return Y.shape[1] * s2 / float(np.mean(np.sum((apply(mmse, Y) - Y) ** 2, axis=1)))


def zed_from_mmse(mmse: Estimator, omega: float) -> Estimator:
    return Estimator("combination", omega=float(omega), inner=mmse, sigma=mmse.sigma)


def zed_mse_from_mmse(sigma2: float, mmse: float) -> float:
    if mmse < 0 or mmse >= sigma2:
        raise InvalidMMSE(f"need 0 <= MMSE < sigma^2, got {mmse!r} vs {sigma2!r}")
    ratio = mmse / sigma2
    # sigma^2 (1/(1-r) - 1) written without the cancellation
    return sigma2 * ratio / (1.0 - ratio)


def zed_mse_series(sigma2: float, mmse: float, terms: int) -> float:
    if terms < 2:
        raise ValueError("series needs at least two terms")
    ratio = mmse / sigma2
    return mmse + sigma2 * sum(ratio**j for j in range(2, terms + 1))


def empirical_risk(e: Estimator, data: Dataset) -> float:
    if data.truth is None:
        raise MissingGroundTruth("empirical risk needs ground truth")
    err = apply(e, data.samples) - data.truth
    return float(np.mean(np.sum(err**2, axis=1)) / data.n)


def risk_per_sample(e: Estimator, data: Dataset) -> np.ndarray:
    if data.truth is None:
        raise MissingGroundTruth("empirical risk needs ground truth")
    err = apply(e, data.samples) - data.truth
    return np.sum(err**2, axis=1) / data.n
