"""Linear forward operators and their pseudoinverses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator as _ScipyOp, cg

from .errors import ConfigError, ShapeMismatch

RIDGE = 1e-8


@dataclass
class LinearOperator:
    """``kind`` is ``"explicit"`` (``matrix``), ``"mask"`` (``kept`` of ``n``) or ``"blur"`` (``kernel``, length-``n`` circular)."""

    kind: str
    n: int
    matrix_: Optional[np.ndarray] = None
    kept: Optional[tuple[int, ...]] = None
    kernel: Optional[tuple[float, ...]] = None

    @property
    def shape(self) -> tuple[int, int]:
        if self.kind == "explicit":
            return self.matrix_.shape
        if self.kind == "mask":
            return (len(self.kept), self.n)
        return (self.n, self.n)

    @property
    def m(self) -> int:
        return self.shape[0]

    def _check(self, v, axis_len, what):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != axis_len:
            raise ShapeMismatch(f"{what} expects trailing length {axis_len}, got {v.shape[-1]}")
        return v

    def _spectrum(self):
        k = np.zeros(self.n)
        c = len(self.kernel) // 2
        for j, w in enumerate(self.kernel):
            k[(j - c) % self.n] += w
        return np.fft.fft(k)

    def apply(self, x):
        x = self._check(x, self.n, "apply")
        if self.kind == "explicit":
            return x @ self.matrix_.T
        if self.kind == "mask":
            return x[..., list(self.kept)]
        return np.real(np.fft.ifft(np.fft.fft(x, axis=-1) * self._spectrum(), axis=-1))

    def adjoint(self, u):
        u = self._check(u, self.m, "adjoint")
        if self.kind == "explicit":
            return u @ self.matrix_
        if self.kind == "mask":
            out = np.zeros(u.shape[:-1] + (self.n,))
            out[..., list(self.kept)] = u
            return out
        return np.real(np.fft.ifft(np.fft.fft(u, axis=-1) * np.conj(self._spectrum()), axis=-1))

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.n)).T

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == "explicit":
            d["matrix"] = self.matrix_.tolist()
        elif self.kind == "mask":
            d["kept"] = list(self.kept)
        else:
            d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearOperator":
        kind = d.get("kind")
        if kind == "explicit":
            return explicit(np.array(d["matrix"], dtype=float))
        if kind == "mask":
            return mask(d["kept"], int(d["n"]))
        if kind == "blur":
            return blur(d["kernel"], int(d["n"]))
        raise ConfigError(f"unknown operator kind {kind!r}")


def explicit(A) -> LinearOperator:
    A = np.asarray(A, dtype=float)
    return LinearOperator("explicit", A.shape[1], matrix_=A)


def mask(kept, n: int) -> LinearOperator:
    kept = tuple(int(i) for i in kept)
    if len(set(kept)) != len(kept) or any(not 0 <= i < n for i in kept):
        raise ConfigError("mask indices must be distinct and inside [0, n)")
    return LinearOperator("mask", n, kept=kept)


def blur(kernel, n: int) -> LinearOperator:
    if len(kernel) > n:
        raise ConfigError("blur kernel longer than the signal")
    return LinearOperator("blur", n, kernel=tuple(float(k) for k in kernel))


class Pseudoinverse:
    """Stable approximation of ``A^+``.

    Masks use the adjoint, blurs a ridge-regularized spectral inverse, small
    explicit matrices a direct least-squares pseudoinverse and larger ones
    conjugate gradients on ``(A^T A + ridge I) x = A^T u``.
    """

    def __init__(self, op: LinearOperator, ridge: float = RIDGE, solver: Optional[str] = None):
        self.op = op
        self.ridge = ridge
        if solver is None:
            solver = "direct" if max(op.shape) <= 256 else "cg"
        self.solver = solver
        self._pinv = None
        if op.kind == "explicit" and solver == "direct":
            self._pinv = np.linalg.pinv(op.matrix_)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.op.n, self.op.m)

    def apply(self, u):
        op = self.op
        u = op._check(u, op.m, "pinv_apply")
        if op.kind == "mask":
            return op.adjoint(u)
        if op.kind == "blur":
            K = op._spectrum()
            inv = np.conj(K) / (np.abs(K) ** 2 + self.ridge)
            return np.real(np.fft.ifft(np.fft.fft(u, axis=-1) * inv, axis=-1))
        if self._pinv is not None:
            return u @ self._pinv.T
        return self._cg(u)

    def _cg(self, u):
        A = self.op.matrix_
        n = self.op.n
        normal = _ScipyOp((n, n), matvec=lambda x: A.T @ (A @ x) + self.ridge * x, dtype=float)
        flat = np.atleast_2d(u)
        out = np.empty((flat.shape[0], n))
        for k, row in enumerate(flat):
            out[k], info = cg(normal, A.T @ row, rtol=1e-12, atol=0.0, maxiter=10 * n)
            if info != 0:
                raise ConfigError(f"CG did not converge (info={info})")
        return out.reshape(np.shape(u)[:-1] + (n,))

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.op.m)).T


def pinv(op: LinearOperator, **kw) -> Pseudoinverse:
    return Pseudoinverse(op, **kw)


def apply(op: LinearOperator, x):
    return op.apply(x)


def adjoint(op: LinearOperator, u):
    return op.adjoint(u)


def pinv_apply(p: Pseudoinverse, u):
    return p.apply(u)
