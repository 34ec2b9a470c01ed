"""Closed-form Lagrange multipliers for the zero-expected-divergence constraints.

Each solver maximizes a concave quadratic in the multipliers whose
coefficients are score moments. The matching ``*_objective`` functions
evaluate that quadratic so solutions can be checked against brute force.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import (DegenerateDenominator, DegenerateMoments, DegenerateScore,
                     SingularGram, SpectralZero)
from .models import Dataset
from .score import ScoreField, ScoreMoments, eval_score


@dataclass
class CovarianceBasis:
    basis: np.ndarray  # (s, n, n)
    tag: str = "general"
    r: Optional[int] = None

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    def covariance(self, eta) -> np.ndarray:
        return np.tensordot(np.atleast_1d(eta), self.basis, axes=1)

    @classmethod
    def isotropic(cls, n: int) -> "CovarianceBasis":
        return cls(np.eye(n)[None], "isotropic")

    @classmethod
    def diagonal(cls, n: int) -> "CovarianceBasis":
        B = np.zeros((n, n, n))
        B[np.arange(n), np.arange(n), np.arange(n)] = 1.0
        return cls(B, "diagonal")

    @classmethod
    def circulant(cls, n: int, r: int) -> "CovarianceBasis":
        return cls(np.stack([shift_matrix(n, lag) for lag in range(-r, r + 1)]), "circulant", r)


def shift_matrix(n: int, lag: int) -> np.ndarray:
    """``T[i, (i + lag) mod n] = 1`` so ``(T s)_i = s_{i+lag}``."""
    T = np.zeros((n, n))
    T[np.arange(n), (np.arange(n) + lag) % n] = 1.0
    return T


@dataclass
class MultiplierSolution:
    eta: np.ndarray
    family: str = "isotropic"
    pg_pair: Optional[tuple[float, float]] = None
    objective_value: float = float("nan")
    condition_number: float = 1.0
    extras: dict = field(default_factory=dict)

    @property
    def scalar(self) -> float:
        if np.size(self.eta) != 1:
            raise ValueError(f"{self.family} solution has {np.size(self.eta)} multipliers")
        return float(np.ravel(self.eta)[0])

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "eta": np.atleast_1d(self.eta).tolist(),
            "objective_value": self.objective_value,
            "condition_number": self.condition_number,
        }
        if self.pg_pair is not None:
            d["pg_pair"] = {"eta": self.pg_pair[0], "gamma": self.pg_pair[1]}
        d.update({k: v for k, v in self.extras.items() if isinstance(v, (int, float, str, list))})
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MultiplierSolution":
        d = dict(d)
        pair = d.pop("pg_pair", None)
        sol = cls(np.array(d.pop("eta"), dtype=float), d.pop("family"),
                  None if pair is None else (float(pair["eta"]), float(pair["gamma"])),
                  float(d.pop("objective_value")), float(d.pop("condition_number")))
        sol.extras = d
        return sol


# ---------------------------------------------------------------------------
# objectives (the dual functions being maximized)

def isotropic_objective(eta: float, trace_H: float, n: int) -> float:
    return -eta**2 * trace_H + 2 * eta * n


def general_objective(eta, H: np.ndarray, basis: CovarianceBasis) -> float:
    S = basis.covariance(eta)
    return float(-np.trace(S @ H @ S.T) + 2 * np.trace(S))


def pg_objective(eta: float, gamma: float, moments: ScoreMoments, n: int,
                 convention: str = "derived") -> float:
    h = moments.pg_moments
    sgn = 1.0 if convention == "derived" else -1.0
    return float(-(eta**2 * h[0, 2] + gamma**2 * h[2, 2] + n * gamma**2 + 2 * eta * gamma * h[1, 2]
                   + sgn * 2 * eta * gamma * h[0, 1] + sgn * 2 * gamma**2 * h[1, 1])
                 + 2 * n * eta + 2 * gamma * h[1, 0])


# ---------------------------------------------------------------------------
# solvers

def solve_isotropic(moments: ScoreMoments, n: Optional[int] = None) -> MultiplierSolution:
    n = moments.n if n is None else n
    if not moments.trace_H > 0:
        raise DegenerateScore(f"trace of score covariance is {moments.trace_H!r}")
    eta = n / moments.trace_H
    return MultiplierSolution(np.array([eta]), "isotropic",
                              objective_value=isotropic_objective(eta, moments.trace_H, n))


def gram_system(H: np.ndarray, basis: CovarianceBasis) -> tuple[np.ndarray, np.ndarray]:
    """``Q[i, j] = tr(Psi_i H Psi_j^T)`` and ``v[i] = tr(Psi_i)``."""
    P = basis.basis
    Q = np.einsum("iab,bc,jac->ij", P, H, P)
    v = np.einsum("iaa->i", P)
    return Q, v


def solve_general(moments: ScoreMoments, basis: CovarianceBasis) -> MultiplierSolution:
    Q, v = gram_system(moments.H, basis)
    cond = float(np.linalg.cond(Q))
    if not np.isfinite(cond) or cond > 1e10:
        raise SingularGram(f"Gram matrix condition number {cond:.3g}")
    eta = linalg.lu_solve(linalg.lu_factor(Q), v)
    obj = float(-eta @ Q @ eta + 2 * v @ eta)
    return MultiplierSolution(eta, basis.tag, objective_value=obj, condition_number=cond,
                              extras={"r": basis.r} if basis.r is not None else {})


def solve_diagonal(moments: ScoreMoments) -> MultiplierSolution:
    d = np.diag(moments.H)
    if np.any(d <= 0):
        raise DegenerateScore("a pixel has zero score energy")
    eta = 1.0 / d
    obj = float(np.sum(-eta**2 * d + 2 * eta))
    return MultiplierSolution(eta, "diagonal", objective_value=obj,
                              condition_number=float(d.max() / d.min()))


def dft_matrix(L: int) -> np.ndarray:
    k = np.arange(L)
    return np.exp(-2j * np.pi * np.outer(k, k) / L)


def circ(h: np.ndarray) -> np.ndarray:
    """Lag-indexed circulant: ``circ(h)[a, b] = h[(b - a + r) mod L]`` with centre ``r``."""
    L = len(h)
    r = L // 2
    a = np.arange(L)
    return h[(a[None, :] - a[:, None] + r) % L]


def solve_circulant(moments: ScoreMoments, r: Optional[int] = None) -> MultiplierSolution:
    h = np.asarray(moments.autocorr_h, dtype=float)
    if r is not None and len(h) != 2 * r + 1:
        raise ValueError(f"moments carry {len(h)} lags, expected {2 * r + 1}")
    L = len(h)
    r = L // 2
    F = dft_matrix(L)
    # circ(h) eta = e_r is a circular convolution of eta with the lag-reversed kernel
    g = np.roll(h, -r)
    G = F @ g[(-np.arange(L)) % L]
    if np.any(np.abs(G) < 1e-12):
        raise SpectralZero("score autocorrelation has a zero DFT bin")
    rhs = F @ np.eye(L)[r]
    eta = np.real(np.conj(F) @ (rhs / G)) / L
    n = moments.n
    Qc = circ(h)
    obj = float(n * (-eta @ Qc @ eta + 2 * eta[r]))
    return MultiplierSolution(eta, "circulant", objective_value=obj,
                              condition_number=float(np.abs(G).max() / np.abs(G).min()),
                              extras={"r": r})


def solve_poisson_gaussian(moments: ScoreMoments, n: Optional[int] = None,
                           convention: str = "derived") -> MultiplierSolution:
    """Multipliers ``(eta, gamma)`` for the Poisson-Gaussian constraints.

    ``convention="derived"`` uses the stationarity conditions of the dual
    obtained by integrating ``E (eta + y gamma) df/dy`` by parts, which gives
    ``h12 + h01`` and ``+2 h11``. ``"printed"`` reproduces the alternative sign
    pattern (``h12 - h01``, ``-2 h11``) for comparison.
    """
    n = moments.n if n is None else n
    h = moments.pg_moments
    if not h[0, 2] > 0:
        raise DegenerateMoments("h_{0,2} must be positive")
    sgn = 1.0 if convention == "derived" else -1.0
    c = h[1, 2] + sgn * h[0, 1]
    den = h[0, 2] * (h[2, 2] + n + sgn * 2 * h[1, 1]) - c**2
    if abs(den) < 1e-12 * max(1.0, abs(h[0, 2] * h[2, 2])):
        raise DegenerateMoments("gamma denominator vanishes")
    gamma = (h[1, 0] * h[0, 2] - n * c) / den
    eta = n / h[0, 2] - gamma * c / h[0, 2]
    obj = pg_objective(eta, gamma, moments, n, convention)
    return MultiplierSolution(np.array([eta, gamma]), "poisson_gaussian", pg_pair=(float(eta), float(gamma)),
                              objective_value=obj, extras={"convention": convention})


def _derivative(a: Callable, y, step=1e-5):
    if hasattr(a, "derivative"):
        return a.derivative(y)
    return (a(y + step) - a(y - step)) / (2 * step)


def hudson_direction(field: ScoreField, a: Callable, y) -> np.ndarray:
    """``a(y) * score(y) + a'(y)`` elementwise."""
    y = np.asarray(y, dtype=float)
    return a(y) * eval_score(field, y) + _derivative(a, y)


def hudson_statistics(field: ScoreField, data: Dataset, a: Callable, step: float = 1e-4):
    """Sums over pixels of E a(y_i), E s_i^2 and E a(y_i) ds_i/dy_i."""
    Y = data.samples
    n = Y.shape[1]
    s = hudson_direction(field, a, Y)
    ds = np.zeros_like(Y)
    h = step * max(1.0, float(np.max(np.abs(Y))))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        ds[:, i] = (hudson_direction(field, a, Y + e)[:, i] - hudson_direction(field, a, Y - e)[:, i]) / (2 * h)
    mean_a = float(np.sum(np.mean(a(Y), axis=0)))
    mean_s2 = float(np.sum(np.mean(s**2, axis=0)))
    mean_ads = float(np.sum(np.mean(a(Y) * ds, axis=0)))
    return mean_a, mean_s2, mean_ads


def hudson_objective(eta: float, stats) -> float:
    mean_a, mean_s2, mean_ads = stats
    return eta**2 * mean_s2 + 2 * eta * mean_a + 2 * eta**2 * mean_ads


def solve_hudson(field: ScoreField, data: Dataset, a: Callable, step: float = 1e-4) -> MultiplierSolution:
    stats = hudson_statistics(field, data, a, step)
    mean_a, mean_s2, mean_ads = stats
    den = -mean_s2 - 2 * mean_ads
    if abs(den) < 1e-14 * max(1.0, mean_s2):
        raise DegenerateDenominator("Hudson denominator vanishes")
    eta = mean_a / den
    return MultiplierSolution(np.array([eta]), "hudson", objective_value=hudson_objective(eta, stats),
                              extras={"mean_a": mean_a, "mean_s2": mean_s2, "mean_a_ds": mean_ads, "a": a})
