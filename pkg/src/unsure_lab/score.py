"""Score fields over measurement space and the moment statistics built from them."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptyDataset, ConfigError
from .models import Dataset, NoisyMarginal, SignalPrior

_CHUNK = 8192


@dataclass
class ScoreField:
    """Map ``y -> grad log p_y(y)`` acting on the last axis of an array.

    ``provenance`` is one of ``"analytic"``, ``"learned"`` or ``"tabulated"``;
    ``source`` holds the marginal, network or grid it was built from.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    provenance: str = "analytic"
    source: object = None
    n: Optional[int] = None

    def __call__(self, y):
        return eval_score(self, y)


def analytic_field(marginal: NoisyMarginal) -> ScoreField:
    return ScoreField(marginal.score, "analytic", marginal)


def learned_field(net) -> ScoreField:
    return ScoreField(net, "learned", net, getattr(net, "n_in", None))


def tabulated_field(grid: np.ndarray, values: np.ndarray) -> ScoreField:
    """Pixelwise score from a 1-D table, linearly interpolated."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)

    def ev(y):
        return np.interp(y, grid, values)

    return ScoreField(ev, "tabulated", (grid, values))


def eval_score(field: ScoreField, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if field.n is not None and y.shape[-1] != field.n:
        raise DimensionMismatch(f"score field expects length {field.n}, got {y.shape[-1]}")
    s = np.asarray(field.evaluator(y), dtype=float)
    if s.shape != y.shape:
        raise DimensionMismatch(f"score output shape {s.shape} != input shape {y.shape}")
    return s


class CorrelatedMarginal:
    """Exact ``p_y = p_x * N(0, Sigma)`` for a separable finite-mixture prior.

    Enumerates every assignment of pixels to prior components, so it is only
    meant for small ``n`` (``K**n`` Gaussians). Used as an analytic score when
    the noise is correlated.
    """

    def __init__(self, prior: SignalPrior, cov: np.ndarray):
        cov = np.asarray(cov, dtype=float)
        n = cov.shape[0]
        K = len(prior.components)
        if K**n > 4096:
            raise ConfigError(f"{K}**{n} mixture components is too many to enumerate")
        self.n = n
        self.cov = cov
        combos = np.array(list(itertools.product(range(K), repeat=n)))
        w = prior.weights[combos].prod(axis=1)
        keep = w > 0
        combos = combos[keep]
        self.log_w = np.log(w[keep])
        self.means = prior.locs[combos]
        covs = cov[None] + np.einsum("ci,ij->cij", prior.vars[combos], np.eye(n))
        self.prec = np.linalg.inv(covs)
        _, logdet = np.linalg.slogdet(covs)
        self.log_norm = -0.5 * (n * np.log(2 * np.pi) + logdet)

    def _log_components(self, y):
        d = y[..., None, :] - self.means
        q = np.einsum("...ci,cij,...cj->...c", d, self.prec, d)
        return self.log_w + self.log_norm - 0.5 * q, d

    def log_pdf(self, y):
        y = np.asarray(y, dtype=float)
        lc, _ = self._log_components(y)
        return logsumexp(lc, axis=-1)

    def score(self, y):
        y = np.asarray(y, dtype=float)
        lc, d = self._log_components(y)
        r = np.exp(lc - logsumexp(lc, axis=-1, keepdims=True))
        return -np.einsum("...c,cij,...cj->...i", r, self.prec, d)

    def field(self) -> ScoreField:
        return ScoreField(self.score, "analytic", self, self.n)


@dataclass
class ScoreMoments:
    H: np.ndarray
    trace_H: float
    autocorr_h: np.ndarray
    pg_moments: np.ndarray  # pg_moments[a, b] = h_{a,b}
    sample_count: int

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def h(self, a: int, b: int) -> float:
        return float(self.pg_moments[a, b])

    def to_dict(self) -> dict:
        return {
            "H": self.H.tolist(),
            "trace_H": self.trace_H,
            "autocorr_h": self.autocorr_h.tolist(),
            "pg_moments": self.pg_moments.tolist(),
            "sample_count": self.sample_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreMoments":
        return cls(np.array(d["H"]), float(d["trace_H"]), np.array(d["autocorr_h"]),
                   np.array(d["pg_moments"]), int(d["sample_count"]))


def autocorrelation(H: np.ndarray, r: int) -> np.ndarray:
    """Lag sums ``h[l + r] = (1/n) sum_i H[i, (i + l) mod n]`` for ``l = -r..r``."""
    n = H.shape[0]
    idx = np.arange(n)
    return np.array([H[idx, (idx + lag) % n].mean() for lag in range(-r, r + 1)])


def accumulate_moments(field: ScoreField, data: Dataset, r: int = 0) -> ScoreMoments:
    Y = data.samples
    count, n = Y.shape
    if count == 0:
        raise EmptyDataset("no samples to accumulate")
    if r < 0 or 2 * r + 1 > n:
        raise ConfigError(f"lag radius {r} incompatible with n={n}")
    H = np.zeros((n, n))
    pg = np.zeros((3, 3))
    # fixed chunking keeps the reduction order independent of anything but count
    for start in range(0, count, _CHUNK):
        y = Y[start:start + _CHUNK]
        s = eval_score(field, y)
        H += s.T @ s
        for a in range(3):
            ya = y**a
            for b in range(3):
                pg[a, b] += np.sum(ya * s**b)
    H /= count
    pg /= count
    return ScoreMoments(H, float(np.trace(H)), autocorrelation(H, r), pg, count)


def fd_divergence(f: Callable, y, step: float = 1e-4) -> np.ndarray:
    """Central-difference divergence ``sum_i df_i/dy_i``; batched over leading axes."""
    if step <= 0:
        raise ValueError("step must be positive")
    y = np.asarray(y, dtype=float)
    h = step * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    n = y.shape[-1]
    total = np.zeros(y.shape[:-1])
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        total = total + (np.asarray(f(y + e))[..., i] - np.asarray(f(y - e))[..., i]) / (2 * h)
    return total


def fd_jacobian(f: Callable, y, step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at a single point ``y``."""
    y = np.asarray(y, dtype=float)
    h = step * max(1.0, float(np.max(np.abs(y))))
    cols = []
    for i in range(y.shape[-1]):
        e = np.zeros_like(y)
        e[i] = h
        cols.append((np.asarray(f(y + e)) - np.asarray(f(y - e))) / (2 * h))
    return np.stack(cols, axis=-1)
