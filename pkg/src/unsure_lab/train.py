"""Saddle-point UNSURE training, AR-DAE score training and score plug-in inference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, EmptyDataset, NonFiniteLoss
from .estimators import Estimator, zed_estimator
from .inverse import LinearOperator, Pseudoinverse
from .losses import TAU, _assemble, probe_weights
from .models import Dataset
from .multipliers import (CovarianceBasis, solve_circulant, solve_diagonal, solve_general,
                          solve_hudson, solve_isotropic, solve_poisson_gaussian)
from .nn import MLP, Adam
from .score import ScoreField, accumulate_moments, learned_field

FAMILIES = ("unsure", "cunsure", "pg", "hudson", "general")


@dataclass
class Family:
    """Which loss variant drives training, plus its fixed ingredients."""

    name: str = "unsure"
    r: int = 0
    a: Optional[Callable] = None
    op: Optional[LinearOperator] = None

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ConfigError(f"unknown family {self.name!r}; choose from {FAMILIES}")
        if self.name == "hudson" and self.a is None:
            raise ConfigError("hudson family needs a weight function a(y)")
        if self.name == "general" and self.op is None:
            raise ConfigError("general family needs a forward operator")
        self._pinv = Pseudoinverse(self.op) if self.op is not None else None

    @property
    def pinv(self):
        return self._pinv

    def initial_eta(self, variance: float) -> np.ndarray:
        if self.name == "cunsure":
            eta = np.zeros(2 * self.r + 1)
            eta[self.r] = variance
            return eta
        if self.name == "pg":
            return np.array([variance, 0.0])
        return np.array([variance])

    def weights(self, y, b, eta):
        if self.name in ("unsure", "hudson", "general"):
            e = float(eta[0])
        elif self.name == "pg":
            e = (float(eta[0]), float(eta[1]))
        else:
            e = eta
        return probe_weights(self.name, y, b, e, a=self.a, pinv=self._pinv)


@dataclass
class SaddleState:
    net: MLP
    eta: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    alpha: float = 0.01
    mu: float = 0.9
    tau: float = TAU
    lr: float = 5e-4
    batch_size: int = 32
    seed: int = 0
    step: int = 0
    epoch: int = 0
    optimizer: Optional[Adam] = None

    def snapshot(self) -> dict:
        return {"theta": self.net.get_flat().copy(), "eta": None if self.eta is None else self.eta.copy(),
                "g": None if self.g is None else self.g.copy(), "step": self.step, "epoch": self.epoch}


@dataclass
class AnnealSchedule:
    delta_max: float = 0.1
    delta_min: float = 0.001
    total_steps: int = 1000

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_max:
            raise ConfigError("need 0 < delta_min <= delta_max")

    def delta(self, step: int) -> float:
        if self.total_steps <= 1:
            return self.delta_min
        t = min(max(step, 0), self.total_steps - 1) / (self.total_steps - 1)
        return math.exp((1 - t) * math.log(self.delta_max) + t * math.log(self.delta_min))


@dataclass
class TrainTrace:
    eta: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"eta": [np.atleast_1d(e).tolist() for e in self.eta], "loss": self.loss,
                "divergence": self.divergence, "test_mse": self.test_mse}


def denoiser_for(family: Family, n: int, hidden=(64, 64), seed: int = 0, pixelwise: bool = False) -> MLP:
    """Residual MLP in image space; for the general family the input is ``A^+ y``."""
    n_img = family.op.n if family.name == "general" else n
    return MLP(n_img, n_img, hidden, residual=True, seed=seed, pixelwise=pixelwise)


def _estimate(net: MLP, family: Family, y):
    if family.name == "general":
        return net(family.pinv.apply(y))
    return net(y)


def saddle_loss_grad(net: MLP, family: Family, y: np.ndarray, b: np.ndarray, eta, tau: float = TAU):
    """Loss on a batch and its reverse-mode gradient in the network weights.

    Returns ``(lv, grads, scale)``; ``lv.total * B * scale`` is the loss that
    ``grads`` differentiates (per sample and per image pixel).
    """
    B = y.shape[0]
    yp = y + tau * b
    if family.name == "general":
        P, A = family.pinv, family.op
        f0, c0 = net.forward(P.apply(y))
        f1, c1 = net.forward(P.apply(yp))
        h0, h1 = A.apply(f0), A.apply(f1)
        residual = np.sum(P.apply(h0 - y) ** 2, axis=-1)
        w, gw = family.weights(y, b, eta)
        lv = _assemble(residual, w, gw, b, h1 - h0, tau)
        scale = 1.0 / (B * A.n)
        # d/dh0 of ||P(h0 - y)||^2 is 2 P^T P (h0 - y)
        dh0 = (2 * P.apply(h0 - y) @ P.matrix() - 2 * w / tau) * scale
        dh1 = (2 * w / tau) * scale
        d0, d1 = A.adjoint(dh0), A.adjoint(dh1)
    else:
        f0, c0 = net.forward(y)
        f1, c1 = net.forward(yp)
        residual = np.sum((f0 - y) ** 2, axis=-1)
        w, gw = family.weights(y, b, eta)
        lv = _assemble(residual, w, gw, b, f1 - f0, tau)
        scale = 1.0 / (B * y.shape[1])
        d0 = (2 * (f0 - y) - 2 * w / tau) * scale
        d1 = (2 * w / tau) * scale
    g0, _ = net.backward(c0, d0)
    g1, _ = net.backward(c1, d1)
    return lv, [a + c for a, c in zip(g0, g1)], scale


def unsure_step(state: SaddleState, family: Family, y: np.ndarray, b: np.ndarray):
    """One saddle step on a batch: descent on the weights, then momentum ascent on eta.

    Returns the loss value evaluated before the update.
    """
    lv, grads, scale = saddle_loss_grad(state.net, family, y, b, state.eta, state.tau)
    if not np.isfinite(lv.total):
        raise NonFiniteLoss(f"non-finite loss at step {state.step}", state.snapshot())
    state.optimizer.step(state.net.params, grads)
    eta_grad = lv.eta_grad * scale * y.shape[0]
    state.g = state.mu * state.g + (1 - state.mu) * eta_grad
    state.eta = state.eta + state.alpha * state.g
    state.step += 1
    return lv


def train_unsure(data: Dataset, family: Family, state: SaddleState, epochs: int,
                 test: Optional[Dataset] = None, callback: Optional[Callable] = None):
    """Alternate descent on the network and ascent on the multipliers.

    Returns ``(net, trace)`` where ``trace.eta`` holds the multipliers at the end
    of every epoch (entry 0 is the initialization).
    """
    if data.count == 0:
        raise EmptyDataset("no training data")
    Y = data.samples
    rng = np.random.default_rng(state.seed)
    if state.optimizer is None:
        state.optimizer = Adam(state.lr)
    if state.eta is None:
        state.eta = family.initial_eta(max(float(np.mean(np.var(Y, axis=0))), 1e-6))
    state.eta = np.asarray(state.eta, dtype=float).copy()
    if state.g is None:
        state.g = np.zeros_like(state.eta)
    trace = TrainTrace()
    trace.eta.append(state.eta.copy())
    if test is not None:
        trace.test_mse.append(_test_mse(state.net, family, test))
    for _ in range(epochs):
        order = rng.permutation(data.count)
        losses, divs = [], []
        for start in range(0, data.count, state.batch_size):
            idx = order[start:start + state.batch_size]
            y = Y[idx]
            b = rng.standard_normal(y.shape)
            lv = unsure_step(state, family, y, b)
            losses.append(lv.total)
            divs.append(lv.divergence_raw)
        state.epoch += 1
        trace.eta.append(state.eta.copy())
        trace.loss.append(float(np.mean(losses)))
        trace.divergence.append(float(np.mean(divs)))
        if test is not None:
            trace.test_mse.append(_test_mse(state.net, family, test))
        if callback is not None:
            callback(state, trace)
    return state.net, trace


def _test_mse(net, family, test: Dataset) -> float:
    est = _estimate(net, family, test.samples)
    return float(np.mean((est - test.truth) ** 2))


def learned_estimator(net: MLP, family: Optional[Family] = None) -> Estimator:
    fam = family or Family()
    return Estimator("learned", net=lambda y: _estimate(net, fam, np.asarray(y, dtype=float)))


# ---------------------------------------------------------------------------
# AR-DAE score learning

def score_step(net: MLP, opt: Adam, y: np.ndarray, b: np.ndarray, tau: np.ndarray, delta: float) -> float:
    """AR-DAE step with antithetic ``+-tau`` pairs, loss scaled by ``1/delta^2``."""
    t = tau[:, None]
    losses = 0.0
    grads = None
    for sgn in (1.0, -1.0):
        ts = sgn * t
        s, cache = net.forward(y + ts * b)
        r = b + ts * s
        losses += float(np.mean(np.sum(r**2, axis=-1)))
        dout = 2 * r * ts / (2 * delta**2 * y.shape[0])
        g, _ = net.backward(cache, dout)
        grads = g if grads is None else [a + c for a, c in zip(grads, g)]
    opt.step(net.params, grads)
    return losses / 2


def train_score(data: Dataset, schedule: AnnealSchedule, epochs: int, hidden=(64, 64), seed: int = 0,
                lr: float = 1e-3, batch_size: int = 128, net: Optional[MLP] = None,
                lr_final: Optional[float] = None, pixelwise: bool = False) -> ScoreField:
    """Fit ``s_theta ~ grad log p_y`` with the AR-DAE loss and annealed probe scale.

    ``schedule.total_steps`` is overridden by the actual number of steps. The
    step size decays log-linearly from ``lr`` to ``lr_final`` (default ``lr / 30``)
    because the small-``delta`` end of the schedule has high-variance gradients.
    """
    if data.count == 0:
        raise EmptyDataset("no training data")
    Y = data.samples
    n = Y.shape[1]
    rng = np.random.default_rng(seed)
    if net is None:
        net = MLP(n, n, hidden, residual=False, seed=seed, pixelwise=pixelwise)
    opt = Adam(lr)
    steps_per_epoch = -(-data.count // batch_size)
    sched = AnnealSchedule(schedule.delta_max, schedule.delta_min, epochs * steps_per_epoch)
    lr_sched = AnnealSchedule(lr, lr / 30 if lr_final is None else lr_final, epochs * steps_per_epoch)
    step = 0
    history = []
    for _ in range(epochs):
        order = rng.permutation(data.count)
        acc = []
        for start in range(0, data.count, batch_size):
            y = Y[order[start:start + batch_size]]
            delta = sched.delta(step)
            opt.lr = lr_sched.delta(step)
            b = rng.standard_normal(y.shape)
            tau = delta * rng.standard_normal(y.shape[0])
            loss = score_step(net, opt, y, b, tau, delta)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite AR-DAE loss at step {step}", {"theta": net.get_flat()})
            acc.append(loss)
            step += 1
        history.append(float(np.mean(acc)))
    field_ = learned_field(net)
    field_.n = n
    net.history = history
    return field_


# ---------------------------------------------------------------------------
# plug-in inference

def plugin_inference(score, data: Dataset, family: str = "isotropic", r: int = 0,
                     per_image: Optional[int] = None, basis: Optional[CovarianceBasis] = None,
                     a: Optional[Callable] = None) -> Estimator:
    """Estimate moments of ``score`` on ``data`` (or on the single sample ``per_image``),
    solve the family's multipliers and return the ZED estimator built on ``score``."""
    field_ = score if isinstance(score, ScoreField) else learned_field(score)
    if per_image is not None:
        data = Dataset(data.samples[per_image:per_image + 1], None, data.generator_seed)
    if family == "hudson":
        sol = solve_hudson(field_, data, a)
        return zed_estimator(field_, sol, weight_fn=a)
    moments = accumulate_moments(field_, data, r)
    if family == "isotropic":
        sol = solve_isotropic(moments)
    elif family == "diagonal":
        sol = solve_diagonal(moments)
    elif family == "circulant":
        sol = solve_circulant(moments, r)
    elif family == "poisson_gaussian":
        sol = solve_poisson_gaussian(moments)
    elif family == "general":
        if basis is None:
            raise ConfigError("general family needs a covariance basis")
        sol = solve_general(moments, basis)
        return zed_estimator(field_, sol, basis=basis)
    else:
        raise ConfigError(f"unknown family {family!r}")
    est = zed_estimator(field_, sol)
    est.meta["moments"] = moments
    return est
