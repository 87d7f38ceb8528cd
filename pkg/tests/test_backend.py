import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_transform import _backend, _kernels_py
from poisson_transform.quadrature import default_rule

ckernels = pytest.importorskip("poisson_transform._ckernels")


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 200), st.lists(st.floats(-1, 1), min_size=1, max_size=20))
def test_moments_parity(t1, t2, anc):
    rule = default_rule()
    a = ckernels.toy_moments((t1, t2), np.array(anc), rule.nodes, rule.weights)
    b = _kernels_py.toy_moments((t1, t2), np.array(anc), rule.nodes, rule.weights)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 200), st.floats(-1, 1), st.integers(0, 2 ** 32 - 1))
def test_sampler_parity(t1, t2, y0, seed):
    u = np.random.default_rng(seed).random(50)
    a = ckernels.sample_toy_chain((t1, t2), y0, u, -1.0, 1.0, 400)
    b = _kernels_py.sample_toy_chain((t1, t2), y0, u, -1.0, 1.0, 400)
    np.testing.assert_allclose(a, b, atol=1e-10)
    assert np.all(np.abs(a) <= 1)


def test_compiled_backend_selected():
    assert _backend.BACKEND == "cython"


def test_pure_switch():
    code = "from poisson_transform import _backend; print(_backend.BACKEND)"
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"POISSON_TRANSFORM_PURE": "1", "PATH": ""})
    assert res.stdout.strip() == "python", res.stderr
