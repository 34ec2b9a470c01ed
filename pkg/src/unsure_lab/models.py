"""Separable signal priors, noise models and the exact 1-D noisy marginal.

Priors are finite mixtures of point masses and Gaussians, so convolving with
Gaussian noise gives an exact Gaussian mixture for ``q_y``. Everything here is
closed form except :func:`mmse_value`, which integrates numerically.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import ConfigError, EmptyDataset, InvalidPoissonInput, QuadratureDiverged

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# priors

@dataclass(frozen=True)
class Component:
    weight: float
    kind: str  # "delta" | "gauss"
    loc: float
    var: float = 0.0

    def __post_init__(self):
        if self.kind not in ("delta", "gauss"):
            raise ConfigError(f"unknown component kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigError("component weights must be nonnegative")
        if self.kind == "gauss" and not self.var > 0:
            raise ConfigError("Gaussian component variance must be positive")
        if self.kind == "delta" and self.var != 0.0:
            raise ConfigError("point masses carry no variance")


@dataclass(frozen=True)
class SignalPrior:
    """Per-pixel prior ``q_x``; the full prior is the product over pixels."""

    components: tuple[Component, ...]
    name: str = ""

    def __post_init__(self):
        if not self.components:
            raise ConfigError("prior needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"prior weights sum to {total!r}, expected 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def locs(self) -> np.ndarray:
        return np.array([c.loc for c in self.components])

    @property
    def vars(self) -> np.ndarray:
        return np.array([c.var for c in self.components])

    def mean(self) -> float:
        return float(np.dot(self.weights, self.locs))

    def variance(self) -> float:
        second = np.dot(self.weights, self.vars + self.locs**2)
        return float(second - self.mean() ** 2)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        idx = rng.choice(len(self.components), size=shape, p=self.weights)
        z = rng.standard_normal(shape)
        return self.locs[idx] + np.sqrt(self.vars[idx]) * z

    def to_dict(self) -> dict:
        comps = []
        for c in self.components:
            d = {"w": c.weight, "kind": c.kind, "loc": c.loc}
            if c.kind == "gauss":
                d["var"] = c.var
            comps.append(d)
        out = {"components": comps}
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SignalPrior":
        if "name" in d and "components" not in d:
            return named_prior(d["name"])
        comps = tuple(
            Component(float(c["w"]), c["kind"], float(c.get("loc", c.get("mean", 0.0))),
                      float(c.get("var", 0.0)))
            for c in d["components"]
        )
        return cls(comps, d.get("name", ""))


def two_deltas(a: float = 0.5) -> SignalPrior:
    return SignalPrior((Component(0.5, "delta", -a), Component(0.5, "delta", a)), "two_deltas")


def gaussian(var: float = 1.0, mean: float = 0.0) -> SignalPrior:
    return SignalPrior((Component(1.0, "gauss", mean, var),), "gaussian")


def spike_slab(slab_var: float = 1.0, spike_weight: float = 0.5) -> SignalPrior:
    return SignalPrior(
        (Component(1.0 - spike_weight, "gauss", 0.0, slab_var), Component(spike_weight, "delta", 0.0)),
        "spike_slab",
    )


PRIORS = {"two_deltas": two_deltas, "gaussian": gaussian, "spike_slab": spike_slab}


def named_prior(name: str) -> SignalPrior:
    try:
        return PRIORS[name]()
    except KeyError:
        raise ConfigError(f"unknown prior {name!r}; choose from {sorted(PRIORS)}") from None


# ---------------------------------------------------------------------------
# noise models

@dataclass(frozen=True)
class WeightFunction:
    """Polynomial weight ``a(y) = sum_k c_k y^k`` used by exponential-family noise.

    Kept polynomial so it round-trips through JSON; arbitrary callables can be
    passed directly to the solvers and losses instead.
    """

    coeffs: tuple[float, ...] = (1.0,)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for c in reversed(self.coeffs):
            out = out * y + c
        return out

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for k in range(len(self.coeffs) - 1, 0, -1):
            out = out * y + k * self.coeffs[k]
        return out


@dataclass(frozen=True)
class IsotropicGaussian:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")


@dataclass(frozen=True)
class DiagonalGaussian:
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.sigmas):
            raise ConfigError("per-pixel sigmas must be positive")


@dataclass(frozen=True)
class CirculantGaussian:
    """Noise ``kernel * eps`` with circular wraparound; the kernel is centred at ``len//2``."""

    kernel: tuple[float, ...]

    def __post_init__(self):
        if len(self.kernel) == 0 or not any(self.kernel):
            raise ConfigError("circulant kernel must be nonzero")

    def matrix(self, n: int) -> np.ndarray:
        p = len(self.kernel)
        if p > n:
            raise ConfigError(f"kernel length {p} exceeds signal length {n}")
        c = p // 2
        C = np.zeros((n, n))
        for i in range(n):
            for k, w in enumerate(self.kernel):
                C[i, (i + k - c) % n] += w
        return C

    def covariance(self, n: int) -> np.ndarray:
        C = self.matrix(n)
        return C @ C.T


@dataclass(frozen=True)
class PoissonGaussian:
    gamma: float
    sigma: float

    def __post_init__(self):
        if self.gamma <= 0 or self.sigma < 0:
            raise ConfigError("Poisson-Gaussian needs gamma > 0 and sigma >= 0")


@dataclass(frozen=True)
class ExponentialFamily:
    a: Union[WeightFunction, Callable] = field(default_factory=WeightFunction)
    variance_scale: float = 1.0


NoiseModel = Union[IsotropicGaussian, DiagonalGaussian, CirculantGaussian, PoissonGaussian, ExponentialFamily]


def noise_to_dict(noise) -> dict:
    if isinstance(noise, IsotropicGaussian):
        return {"variant": "isotropic", "sigma": noise.sigma}
    if isinstance(noise, DiagonalGaussian):
        return {"variant": "diagonal", "sigmas": list(noise.sigmas)}
    if isinstance(noise, CirculantGaussian):
        return {"variant": "circulant", "kernel": list(noise.kernel)}
    if isinstance(noise, PoissonGaussian):
        return {"variant": "poisson_gaussian", "gamma": noise.gamma, "sigma": noise.sigma}
    if isinstance(noise, ExponentialFamily):
        if not isinstance(noise.a, WeightFunction):
            raise ConfigError("only polynomial weight functions are serializable")
        return {"variant": "exponential_family", "a": list(noise.a.coeffs),
                "variance_scale": noise.variance_scale}
    raise ConfigError(f"unknown noise model {noise!r}")


def noise_from_dict(d: dict):
    v = d.get("variant")
    if v == "isotropic":
        return IsotropicGaussian(float(d["sigma"]))
    if v == "diagonal":
        return DiagonalGaussian(tuple(float(s) for s in d["sigmas"]))
    if v == "circulant":
        return CirculantGaussian(tuple(float(s) for s in d["kernel"]))
    if v == "poisson_gaussian":
        return PoissonGaussian(float(d["gamma"]), float(d["sigma"]))
    if v == "exponential_family":
        return ExponentialFamily(WeightFunction(tuple(float(c) for c in d.get("a", [1.0]))),
                                 float(d.get("variance_scale", 1.0)))
    raise ConfigError(f"unknown noise variant {v!r}")


def dumps_model(prior: SignalPrior, noise) -> str:
    return json.dumps({"prior": prior.to_dict(), "noise": noise_to_dict(noise)}, sort_keys=True)


def loads_model(text: str):
    d = json.loads(text)
    return SignalPrior.from_dict(d["prior"]), noise_from_dict(d["noise"])


# ---------------------------------------------------------------------------
# noisy marginal q_y = q_x * N(0, sigma^2)

@dataclass(frozen=True)
class NoisyMarginal:
    prior: SignalPrior
    sigma: float

    @property
    def weights(self):
        return self.prior.weights

    @property
    def means(self):
        return self.prior.locs

    @property
    def variances(self):
        return self.prior.vars + self.sigma**2

    def _log_components(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        v = self.variances
        return np.log(self.weights) - 0.5 * (LOG_2PI + np.log(v)) - 0.5 * (y - self.means) ** 2 / v

    def responsibilities(self, y):
        lc = self._log_components(y)
        return np.exp(lc - logsumexp(lc, axis=-1, keepdims=True))

    def log_pdf(self, y):
        return logsumexp(self._log_components(y), axis=-1)

    def pdf(self, y):
        return np.exp(self.log_pdf(y))

    def score(self, y):
        y = np.asarray(y, dtype=float)
        r = self.responsibilities(y)
        u = -(y[..., None] - self.means) / self.variances
        return np.sum(r * u, axis=-1)

    def score_derivative(self, y):
        """d/dy of the score (second derivative of log q_y), closed form."""
        y = np.asarray(y, dtype=float)
        r = self.responsibilities(y)
        u = -(y[..., None] - self.means) / self.variances
        first = np.sum(r * u, axis=-1)
        return np.sum(r * (u**2 - 1.0 / self.variances), axis=-1) - first**2

    def posterior_mean(self, y):
        y = np.asarray(y, dtype=float)
        return y + self.sigma**2 * self.score(y)


def marginal_pdf(m: NoisyMarginal, y):
    return m.pdf(y)


def marginal_score(m: NoisyMarginal, y):
    return m.score(y)


def posterior_mean(m: NoisyMarginal, y):
    return m.posterior_mean(y)


# ---------------------------------------------------------------------------
# quadrature

def _quad(func, lo, hi, points=None, tol=1e-10):
    pts = None
    if points is not None:
        pts = sorted({float(p) for p in points if lo < p < hi}) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(func, lo, hi, points=pts, epsabs=tol, epsrel=1e-12, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureDiverged(str(exc)) from exc
    return val


def expect_y(m: NoisyMarginal, g: Callable, tol: float = 1e-10) -> float:
    """E_y[g(y)] under q_y, integrating each mixture component over +-10 sd."""
    total = 0.0
    for w, mu, v in zip(m.weights, m.means, m.variances):
        sd = math.sqrt(v)
        norm = 1.0 / math.sqrt(2 * math.pi * v)
        f = lambda y, mu=mu, v=v, norm=norm: norm * math.exp(-0.5 * (y - mu) ** 2 / v) * float(g(y))
        total += w * _quad(f, mu - 10 * sd, mu + 10 * sd, points=m.means, tol=tol)
    return total


def total_mass(m: NoisyMarginal) -> float:
    return expect_y(m, lambda y: 1.0)


def fisher_information(m: NoisyMarginal) -> float:
    """E[s(y)^2] per pixel."""
    return expect_y(m, lambda y: m.score(y) ** 2)


def risk_quadrature(m: NoisyMarginal, estimator: Callable, tol: float = 1e-10) -> float:
    """Per-pixel E_{x,y}(g(y) - x)^2 for a scalar estimator g, by quadrature.

    Outer sum over prior components, inner integral over y. For a Gaussian
    component the conditional law of x given (y, component) is Gaussian, so the
    inner integrand is the closed-form conditional second moment.
    """
    s2 = m.sigma**2
    total = 0.0
    for c in m.prior.components:
        v = c.var + s2
        sd = math.sqrt(v)
        norm = 1.0 / math.sqrt(2 * math.pi * v)
        if c.kind == "delta":
            def f(y, c=c, v=v, norm=norm):
                return norm * math.exp(-0.5 * (y - c.loc) ** 2 / v) * (float(estimator(y)) - c.loc) ** 2
        else:
            gain = c.var / v
            post_var = c.var * s2 / v

            def f(y, c=c, v=v, norm=norm, gain=gain, post_var=post_var):
                mean = c.loc + gain * (y - c.loc)
                return norm * math.exp(-0.5 * (y - c.loc) ** 2 / v) * ((float(estimator(y)) - mean) ** 2 + post_var)
        total += c.weight * _quad(f, c.loc - 10 * sd, c.loc + 10 * sd, points=m.means, tol=tol)
    return total


def mmse_value(m: NoisyMarginal, check: bool = True) -> float:
    """Per-pixel MMSE by 2-D quadrature; cross-checked against sigma^2 - sigma^4 E[s^2]."""
    val = risk_quadrature(m, lambda y: m.posterior_mean(y))
    if check:
        alt = m.sigma**2 - m.sigma**4 * fisher_information(m)
        if abs(val - alt) > 1e-6:
            raise QuadratureDiverged(f"MMSE paths disagree: {val!r} vs {alt!r}")
    return val


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    samples: np.ndarray  # (count, n)
    truth: Optional[np.ndarray] = None
    generator_seed: Optional[int] = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.size == 0:
            raise EmptyDataset("dataset has no samples")
        if self.truth is not None:
            self.truth = np.atleast_2d(np.asarray(self.truth, dtype=float))
            if self.truth.shape != self.samples.shape:
                raise ConfigError("ground truth must align with samples")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def split(self, count: int) -> tuple["Dataset", "Dataset"]:
        t = self.truth
        return (Dataset(self.samples[:count], None if t is None else t[:count], self.generator_seed),
                Dataset(self.samples[count:], None if t is None else t[count:], self.generator_seed))


def add_noise(x: np.ndarray, noise, rng: np.random.Generator) -> np.ndarray:
    count, n = x.shape
    if isinstance(noise, IsotropicGaussian):
        if noise.sigma == 0:
            return x.copy()
        return x + noise.sigma * rng.standard_normal(x.shape)
    if isinstance(noise, DiagonalGaussian):
        if len(noise.sigmas) != n:
            raise ConfigError("diagonal sigmas must have one entry per pixel")
        return x + np.asarray(noise.sigmas) * rng.standard_normal(x.shape)
    if isinstance(noise, CirculantGaussian):
        C = noise.matrix(n)
        return x + rng.standard_normal(x.shape) @ C.T
    if isinstance(noise, PoissonGaussian):
        if np.any(x < 0):
            raise InvalidPoissonInput("Poisson-Gaussian noise needs a nonnegative signal")
        return noise.gamma * rng.poisson(x / noise.gamma) + noise.sigma * rng.standard_normal(x.shape)
    if isinstance(noise, ExponentialFamily):
        raise ConfigError("exponential-family noise has no generic sampler; supply measurements directly")
    raise ConfigError(f"unknown noise model {noise!r}")


def sample_measurements(prior: SignalPrior, noise, n: int, count: int, seed: int) -> Dataset:
    if n < 1 or count < 1:
        raise ConfigError("need n >= 1 and count >= 1")
    rng = np.random.default_rng(seed)
    x = prior.sample(rng, (count, n))
    y = add_noise(x, noise, rng)
    return Dataset(y, x, seed)
