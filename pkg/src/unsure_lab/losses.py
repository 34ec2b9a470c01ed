"""SURE / UNSURE losses with a one-probe Monte-Carlo divergence.

All divergence terms share one form: for a probe ``b`` and step ``tau`` the
weighted trace ``tr(M df/dy)`` is estimated by ``(M^T b) . (f(y + tau b) - f(y)) / tau``.
Each loss only differs in the weight vector ``M^T b`` and in which map is
differenced, so the degenerate parameterizations reduce to ``unsure_loss``
operation for operation.

Losses accept ``y`` of shape ``(n,)`` or ``(batch, n)`` and report batch means
of per-sample sums over pixels. The additive constants of SURE (``-n sigma^2``,
``-tr Sigma``) are left out of ``total`` and carried in ``constant``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NotPSD, OperatorMismatch
from .estimators import circulant_apply

TAU = 0.01


@dataclass
class DivergenceProbe:
    b: np.ndarray
    tau: float = TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("probe step tau must be positive")
        self.b = np.asarray(self.b, dtype=float)


def draw_probe(rng: np.random.Generator, shape, tau: float = TAU) -> DivergenceProbe:
    return DivergenceProbe(rng.standard_normal(shape), tau)


@dataclass
class LossValue:
    total: float
    residual: float
    divergence_term: float
    divergence_raw: float
    per_sample: dict = field(default_factory=dict)
    eta_grad: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constant: float = 0.0


def _batch(y):
    y = np.asarray(y, dtype=float)
    return y[None] if y.ndim == 1 else y


def _assemble(residual_ps, weight, grad_weights, b, delta, tau, constant=0.0) -> LossValue:
    div_ps = 2.0 * np.sum(weight * delta, axis=-1) / tau
    raw_ps = np.sum(b * delta, axis=-1) / tau
    total_ps = residual_ps + div_ps
    grads = np.array([2.0 * np.mean(np.sum(g * delta, axis=-1)) / tau for g in grad_weights])
    return LossValue(
        total=float(np.mean(total_ps)),
        residual=float(np.mean(residual_ps)),
        divergence_term=float(np.mean(div_ps)),
        divergence_raw=float(np.mean(raw_ps)),
        per_sample={"total": total_ps, "residual": residual_ps, "divergence_term": div_ps,
                    "divergence_raw": raw_ps},
        eta_grad=grads,
        constant=constant,
    )


def _weighted_loss(f, y, probe, weight, grad_weights, constant=0.0) -> LossValue:
    y = _batch(y)
    b = _batch(probe.b)
    fy = np.asarray(f(y))
    delta = np.asarray(f(y + probe.tau * b)) - fy
    residual = np.sum((fy - y) ** 2, axis=-1)
    return _assemble(residual, weight, grad_weights, b, delta, probe.tau, constant)


def mc_divergence(f: Callable, y, probe: DivergenceProbe, M=None):
    """One-probe estimate of ``tr(M df/dy)``.

    ``M`` may be ``None`` (identity), a vector (diagonal) or a matrix.
    Returns one value per sample (a scalar for 1-D ``y``).
    """
    y0 = np.asarray(y, dtype=float)
    y = _batch(y0)
    b = _batch(probe.b)
    if M is None:
        w = b
    else:
        M = np.asarray(M, dtype=float)
        w = M * b if M.ndim == 1 else b @ M
    delta = np.asarray(f(y + probe.tau * b)) - np.asarray(f(y))
    out = np.sum(w * delta, axis=-1) / probe.tau
    return float(out[0]) if y0.ndim == 1 else out


def probe_weights(family: str, y, b, eta, a: Optional[Callable] = None, pinv=None):
    """Weight vector ``M^T b`` and its partial derivatives in each multiplier.

    ``family`` is ``"unsure"``, ``"cunsure"``, ``"pg"``, ``"hudson"`` or ``"general"``.
    ``eta`` is a scalar, a circulant kernel (``cunsure``) or ``(eta, gamma)`` (``pg``).
    """
    b = _batch(b)
    if family == "unsure":
        return eta * b, [b]
    if family == "cunsure":
        eta = np.asarray(eta, dtype=float)
        r = len(eta) // 2
        return circulant_apply(eta, b), [np.roll(b, -lag, axis=-1) for lag in range(-r, r + 1)]
    if family == "pg":
        yb = _batch(y)
        eta0, gamma = eta
        return (eta0 + gamma * yb) * b, [b, yb * b]
    if family == "hudson":
        ab = a(_batch(y)) * b
        return eta * ab, [ab]
    if family == "general":
        Wb = _gram_apply(pinv, b)
        return eta * Wb, [Wb]
    raise ValueError(f"unknown loss family {family!r}")


def sure_loss(f, y, sigma2: float, probe: DivergenceProbe) -> LossValue:
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    b = _batch(probe.b)
    n = b.shape[-1]
    w, grads = probe_weights("unsure", y, b, sigma2)
    return _weighted_loss(f, y, probe, w, grads, constant=-n * sigma2)


def unsure_loss(f, y, eta: float, probe: DivergenceProbe) -> LossValue:
    w, grads = probe_weights("unsure", y, probe.b, eta)
    return _weighted_loss(f, y, probe, w, grads)


def _check_psd(S):
    if not np.allclose(S, S.T, atol=1e-12):
        raise NotPSD("covariance is not symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-10 * max(1.0, np.abs(S).max()):
        raise NotPSD("covariance has a negative eigenvalue")


def circulant_covariance(taps, n: int) -> np.ndarray:
    """Dense ``sum_l taps[l + r] T_l`` for centred lag taps."""
    taps = np.asarray(taps, dtype=float)
    return circulant_apply(taps, np.eye(n))


def correlated_sure_loss(f, y, Sigma, probe: DivergenceProbe) -> LossValue:
    """``Sigma`` is an ``n x n`` matrix or an odd-length vector of centred circulant taps."""
    b = _batch(probe.b)
    n = b.shape[-1]
    Sigma = np.asarray(Sigma, dtype=float)
    S = circulant_covariance(Sigma, n) if Sigma.ndim == 1 else Sigma
    _check_psd(S)
    return _weighted_loss(f, y, probe, b @ S, [b], constant=-float(np.trace(S)))


def c_unsure_loss(f, y, eta_kernel, probe: DivergenceProbe) -> LossValue:
    eta_kernel = np.asarray(eta_kernel, dtype=float)
    if len(eta_kernel) % 2 != 1:
        raise ValueError("kernel length must be odd")
    w, grads = probe_weights("cunsure", y, probe.b, eta_kernel)
    return _weighted_loss(f, y, probe, w, grads)


def pg_unsure_loss(f, y, eta: float, gamma: float, probe: DivergenceProbe) -> LossValue:
    w, grads = probe_weights("pg", y, probe.b, (eta, gamma))
    return _weighted_loss(f, y, probe, w, grads)


def hudson_loss(f, y, eta: float, a: Callable, probe: DivergenceProbe) -> LossValue:
    w, grads = probe_weights("hudson", y, probe.b, eta, a=a)
    return _weighted_loss(f, y, probe, w, grads)


def general_unsure_loss(f, y, op, eta: float, probe: DivergenceProbe, pinv=None) -> LossValue:
    """Range-space UNSURE for ``y = A x + noise``; ``f`` maps measurements to images.

    Residual ``||A^+(A f(y) - y)||^2``; the divergence of ``W A f`` with
    ``W = (A^+)^T A^+`` is probed in measurement space with weight ``W b``.
    """
    from .inverse import Pseudoinverse
    P = pinv if pinv is not None else Pseudoinverse(op)
    yb = _batch(y)
    b = _batch(probe.b)
    m, n = op.shape
    if yb.shape[-1] != m or b.shape[-1] != m:
        raise OperatorMismatch(f"measurements have length {yb.shape[-1]}, operator expects {m}")
    fy = np.asarray(f(yb))
    if fy.shape[-1] != n:
        raise OperatorMismatch(f"estimator returns length {fy.shape[-1]}, operator expects {n}")
    w, grads = probe_weights("general", yb, b, eta, pinv=P)
    delta = op.apply(np.asarray(f(yb + probe.tau * b))) - op.apply(fy)
    residual = np.sum(P.apply(op.apply(fy) - yb) ** 2, axis=-1)
    return _assemble(residual, w, grads, b, delta, probe.tau)


def _gram_apply(P, u):
    """``(A^+)^T A^+ u``."""
    Pm = P.matrix()
    return (u @ Pm.T) @ Pm


def ar_dae_residual(s: Callable, y, b, tau) -> np.ndarray:
    """Per-sample ``||b + tau s(y + tau b)||^2`` with per-sample ``tau``."""
    yb = _batch(y)
    b = _batch(b)
    tau = np.asarray(tau, dtype=float).reshape(-1, 1)
    return np.sum((b + tau * np.asarray(s(yb + tau * b))) ** 2, axis=-1)


def ar_dae_loss(s: Callable, y, delta: float, rng: np.random.Generator) -> float:
    if not delta > 0:
        raise ValueError("delta must be positive")
    yb = _batch(y)
    b = rng.standard_normal(yb.shape)
    tau = delta * rng.standard_normal(yb.shape[0])
    return float(np.mean(ar_dae_residual(s, yb, b, tau)))
