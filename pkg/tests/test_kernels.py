import itertools
import os
import subprocess
import sys

import numpy as np
import pytest

import oracles
from tprrnn import kernels
from tprrnn import tensor_core as tc
from tprrnn.model import AblationConfig, memory_delta

BACKENDS = kernels.available_backends()
FLAGS = [c for c in itertools.product((True, False), repeat=3) if any(c)]


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


def _inputs(seed, B=3, E=4, R=3):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(B, E, R, E))
    vecs = [rng.normal(size=(B, n)) for n in (E, E, R, R, R)]
    return F, vecs, rng


def test_compiled_backend_built():
    # the extension is part of the install; a missing build is a packaging bug
    assert "cython" in BACKENDS, "compiled kernels missing; run pip install -e ."


def test_unbind3_matches_loop(backend):
    F, (e, _, r, _, _), _ = _inputs(0)
    out = backend.unbind3(F, e, r)
    for b in range(len(F)):
        np.testing.assert_allclose(out[b], oracles.unbind3(F[b], e[b], r[b]), rtol=1e-12)


def test_outer3_matches_loop(backend):
    _, (a, _, b, _, _), rng = _inputs(1)
    c = rng.normal(size=a.shape)
    out = backend.outer3(a, b, c)
    for i in range(len(a)):
        np.testing.assert_array_equal(out[i], oracles.outer3(a[i], b[i], c[i]))


@pytest.mark.parametrize("flags", FLAGS)
def test_tpr_step_matches_single_sample_reference(backend, flags):
    F, (e1, e2, r1, r2, r3), _ = _inputs(2)
    mask = np.array([1.0, 0.0, 1.0])
    F_new, *_ = backend.tpr_step(F, e1, e2, r1, r2, r3, mask, *flags)
    for b in range(len(F)):
        reps = (e1[b], e2[b], r1[b], r2[b], r3[b])
        delta = memory_delta(tc.Tensor(F[b]), reps, AblationConfig(*flags)).array
        np.testing.assert_allclose(F_new[b], F[b] + mask[b] * delta, rtol=1e-12, atol=1e-12)


def test_masked_step_is_exact_identity(backend):
    F, vecs, _ = _inputs(3)
    F_new, *_ = backend.tpr_step(F, *vecs, np.zeros(3), True, True, True)
    assert np.array_equal(F_new, F)


@pytest.mark.parametrize("flags", FLAGS)
def test_tpr_step_backward_finite_differences(backend, flags):
    F, vecs, rng = _inputs(4, B=2, E=3, R=2)
    mask = np.array([1.0, 0.5])
    G = rng.normal(size=F.shape)

    def f(F_, *v):
        return float((backend.tpr_step(F_, *v, mask, *flags)[0] * G).sum())

    _, w, m, b = backend.tpr_step(F, *vecs, mask, *flags)
    grads = backend.tpr_step_backward(G, F, *vecs, w, m, b, mask, *flags)
    args = [F, *vecs]
    eps = 1e-6
    for idx, (x, g) in enumerate(zip(args, grads)):
        num = np.zeros_like(x)
        for pos in np.ndindex(x.shape):
            orig = x[pos]
            x[pos] = orig + eps
            hi = f(*args)
            x[pos] = orig - eps
            lo = f(*args)
            x[pos] = orig
            num[pos] = (hi - lo) / (2 * eps)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8, err_msg=f"input {idx}")


@pytest.mark.skipif(len(BACKENDS) < 2, reason="needs both backends")
@pytest.mark.parametrize("flags", FLAGS)
def test_backends_agree(flags):
    F, vecs, rng = _inputs(5, B=8, E=15, R=10)
    mask = (rng.random(8) > 0.3).astype(float)
    G = rng.normal(size=F.shape)
    out = {}
    for name, mod in BACKENDS.items():
        step = mod.tpr_step(F, *vecs, mask, *flags)
        out[name] = step + tuple(mod.tpr_step_backward(G, F, *vecs, *step[1:], mask, *flags))
    for a, b in zip(out["numpy"], out["cython"]):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def test_pure_python_fallback_selected_by_env():
    env = dict(os.environ, TPRRNN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import tprrnn.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
