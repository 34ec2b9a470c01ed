import json

import numpy as np
import pytest

from unsure_lab.errors import ConfigError, ShapeMismatch
from unsure_lab.inverse import LinearOperator, Pseudoinverse, adjoint, apply, blur, explicit, mask, pinv, pinv_apply


@pytest.mark.parametrize("op", [mask([0, 3, 4], 6), explicit(np.random.default_rng(0).standard_normal((4, 6))),
                                blur([0.2, 0.6, 0.2], 6)])
def test_adjoint_identity(op, rng):
    x = rng.standard_normal((5, op.n))
    u = rng.standard_normal((5, op.m))
    np.testing.assert_allclose(np.sum(apply(op, x) * u, 1), np.sum(x * adjoint(op, u), 1), atol=1e-12)
    np.testing.assert_allclose(op.matrix() @ x[0], op.apply(x[0]), atol=1e-12)


@pytest.mark.parametrize("op", [mask([1, 2, 5], 6), explicit(np.random.default_rng(1).standard_normal((3, 6)))])
def test_projector_property(op, rng):
    P = pinv(op)
    x = rng.standard_normal((10, op.n))
    proj = lambda v: pinv_apply(P, op.apply(v))
    np.testing.assert_allclose(proj(proj(x)), proj(x), atol=1e-8)


def test_pinv_of_identity_is_exact():
    P = Pseudoinverse(explicit(np.eye(5)))
    np.testing.assert_array_equal(P.matrix(), np.eye(5))


def test_blur_pinv_inverts_well_conditioned_blur(rng):
    op = blur([0.1, 0.8, 0.1], 8)
    x = rng.standard_normal(8)
    np.testing.assert_allclose(Pseudoinverse(op).apply(op.apply(x)), x, atol=1e-6)


def test_cg_path_matches_direct(rng):
    A = rng.standard_normal((20, 30))
    u = rng.standard_normal((2, 20))
    direct = Pseudoinverse(explicit(A)).apply(u)
    cg = Pseudoinverse(explicit(A), ridge=1e-12, solver="cg").apply(u)
    np.testing.assert_allclose(cg, direct, atol=1e-6)


def test_operator_validation_and_json():
    with pytest.raises(ConfigError):
        mask([0, 0], 3)
    with pytest.raises(ConfigError):
        blur([1.0] * 5, 3)
    with pytest.raises(ShapeMismatch):
        mask([0], 3).apply(np.zeros(4))
    for op in (mask([0, 2], 4), blur([0.5, 0.5, 0.0], 4), explicit(np.arange(6.0).reshape(2, 3))):
        back = LinearOperator.from_dict(json.loads(json.dumps(op.to_dict())))
        np.testing.assert_array_equal(back.matrix(), op.matrix())
    with pytest.raises(ConfigError):
        LinearOperator.from_dict({"kind": "radon"})
