"""The compiled kernels and the numpy fallback must agree exactly."""

import numpy as np
import pytest

from bdekit import _kernels
from bdekit._kernels import _fallback

try:
    from bdekit._kernels import _core
except ImportError:  # extension not built
    _core = None

backends = [pytest.param(_fallback, id="python")]
if _core is not None:
    backends.append(pytest.param(_core, id="compiled"))


@pytest.fixture(params=[np.float32, np.float64], ids=["f32", "f64"])
def dtype(request):
    return request.param


@pytest.mark.parametrize("impl", backends)
@pytest.mark.parametrize("k,pad", [(3, 1), (1, 0), (3, 0), (5, 2)])
def test_im2col_col2im_adjoint(impl, k, pad, dtype, rng):
    x = rng.standard_normal((2, 3, 6, 7)).astype(dtype)
    cols = impl.im2col(x, k, pad)
    ho, wo = 6 + 2 * pad - k + 1, 7 + 2 * pad - k + 1
    assert cols.shape == (3 * k * k, 2 * ho * wo)
    y = rng.standard_normal(cols.shape).astype(dtype)
    back = impl.col2im(np.ascontiguousarray(y), 2, 3, 6, 7, k, pad)
    # <im2col(x), y> == <x, col2im(y)>
    lhs = float(np.sum(cols.astype(np.float64) * y))
    rhs = float(np.sum(x.astype(np.float64) * back))
    assert lhs == pytest.approx(rhs, rel=1e-4 if dtype == np.float32 else 1e-12)


@pytest.mark.skipif(_core is None, reason="compiled extension not built")
@pytest.mark.parametrize("k,pad", [(3, 1), (3, 0), (5, 2)])
def test_compiled_matches_fallback(k, pad, dtype, rng):
    x = rng.standard_normal((3, 4, 8, 10)).astype(dtype)
    c1, c2 = _core.im2col(x, k, pad), _fallback.im2col(x, k, pad)
    assert np.array_equal(c1, c2)
    g = rng.standard_normal(c1.shape).astype(dtype)
    np.testing.assert_allclose(_core.col2im(g, 3, 4, 8, 10, k, pad),
                               _fallback.col2im(g, 3, 4, 8, 10, k, pad), rtol=1e-5, atol=1e-6)
    o1, a1 = _core.maxpool2_forward(x)
    o2, a2 = _fallback.maxpool2_forward(x)
    assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
    assert np.array_equal(_core.maxpool2_backward(o1, a1), _fallback.maxpool2_backward(o1, a1))


@pytest.mark.parametrize("impl", backends)
def test_maxpool_ties_pick_first(impl):
    x = np.ones((1, 1, 2, 2))
    out, arg = impl.maxpool2_forward(x)
    assert out[0, 0, 0, 0] == 1 and arg[0, 0, 0, 0] == 0
    dx = impl.maxpool2_backward(np.full((1, 1, 1, 1), 3.0), arg)
    assert dx.tolist() == [[[[3.0, 0.0], [0.0, 0.0]]]]


def test_backend_flag_is_known():
    assert _kernels.BACKEND in ("compiled", "python")
