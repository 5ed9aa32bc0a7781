import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lur.errors import InvalidInputError
from lur.numerics import cross_entropy_with_grad, make_rng, softmax, sym_eigh
from oracles import central_difference, rel_error


def test_softmax_symmetric():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])


def test_softmax_large_logits_do_not_overflow():
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_known_value():
    e = math.e
    np.testing.assert_allclose(softmax([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], atol=1e-12)
    np.testing.assert_allclose(softmax([1.0, 0.0]), [0.73106, 0.26894], atol=1e-5)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 0.0])
    with pytest.raises(InvalidInputError):
        softmax([np.inf, 0.0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(x):
    p = softmax(x)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)
    assert np.all(p <= 1)


@pytest.mark.parametrize(
    "logits, label, loss",
    [([0.0, 0.0], 0, math.log(2)), ([1.0, 0.0], 0, math.log1p(math.exp(-1))), ([0.0, 1.0], 0, math.log1p(math.e))],
)
def test_cross_entropy_values(logits, label, loss):
    value, _ = cross_entropy_with_grad(logits, label)
    assert value == pytest.approx(loss, abs=1e-12)


def test_cross_entropy_frozen_examples():
    loss, grad = cross_entropy_with_grad([0.0, 0.0], 0)
    assert loss == pytest.approx(0.69315, abs=1e-5)
    np.testing.assert_allclose(grad, [-0.5, 0.5])
    assert cross_entropy_with_grad([1.0, 0.0], 0)[0] == pytest.approx(0.31326, abs=1e-5)
    assert cross_entropy_with_grad([0.0, 1.0], 0)[0] == pytest.approx(1.31326, abs=1e-5)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy_with_grad([0.0, 1.0], 2)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = make_rng(123)
    for _ in range(50):
        c = int(rng.integers(2, 8))
        logits = rng.uniform(-5, 5, c)
        label = int(rng.integers(c))
        _, grad = cross_entropy_with_grad(logits, label)
        fd = central_difference(lambda: cross_entropy_with_grad(logits, label)[0], logits)
        assert rel_error(grad, fd) < 1e-6


def test_sym_eigh_diagonal():
    w, v = sym_eigh([[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(w, [2.0, 1.0])
    np.testing.assert_allclose(np.abs(v), np.eye(2))


def test_sym_eigh_swap_matrix():
    w, v = sym_eigh([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-14)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(np.abs(v[:, 0]), [s, s], atol=1e-12)
    np.testing.assert_allclose(v[0, 1] * v[1, 1], -0.5, atol=1e-12)


def test_sym_eigh_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        sym_eigh([[1.0, 2.0], [0.0, 1.0]])


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
@pytest.mark.parametrize("size", [1, 2, 5, 17, 64])
def test_sym_eigh_residual_and_orthogonality(method, size):
    rng = make_rng(size)
    a = rng.normal(size=(size, size))
    a = a + a.T
    w, v = sym_eigh(a, method=method)
    norm = np.linalg.norm(a, 2)
    assert np.all(np.diff(w) <= 0)
    assert np.abs(a @ v - v * w).max() < 1e-8 * max(norm, 1.0)
    assert np.abs(v.T @ v - np.eye(size)).max() < 1e-8
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-8 * max(norm, 1.0))


def test_sym_eigh_jacobi_agrees_with_lapack():
    a = make_rng(5).normal(size=(30, 30))
    a = a @ a.T
    wj, _ = sym_eigh(a, method="jacobi")
    wl, _ = sym_eigh(a, method="lapack")
    np.testing.assert_allclose(wj, wl, rtol=1e-10, atol=1e-10)


def test_rng_reproducible_within_process():
    a = make_rng(42).normal(size=100)
    b = make_rng(42).normal(size=100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(make_rng(42, 1).normal(size=100), a)


def test_rng_reproducible_across_processes():
    code = "from lur.numerics import make_rng; print(make_rng(2024).normal(size=5).tobytes().hex())"
    out = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
           for _ in range(2)]
    assert out[0] == out[1]
    assert out[0].strip() == make_rng(2024).normal(size=5).tobytes().hex()


def test_rng_rejects_negative_seed():
    with pytest.raises(InvalidInputError):
        make_rng(-1)
