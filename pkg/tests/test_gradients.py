"""Central-difference checks, float64, five seeds per case."""
import numpy as np
import pytest

from coadnet.gradcheck import TOLERANCE, check_gradients, module_cases, numerical_grad, op_cases, relative_error, run_case
from coadnet.tensor import Tensor
from coadnet import ops

CASES = {**op_cases(), **module_cases()}


@pytest.mark.parametrize("name", sorted(CASES))
def test_case_within_tolerance(name):
    worst = max(run_case(CASES[name], seed) for seed in range(5))
    assert worst <= TOLERANCE, f"{name}: {worst:.2e}"


def test_numerical_grad_of_cubic():
    x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
    g = numerical_grad(lambda: ops.sum_all(x * x * x), x)
    np.testing.assert_allclose(g, 3 * x.data ** 2, rtol=1e-7)


def test_check_gradients_requires_float64():
    x = Tensor(np.ones(2, np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        check_gradients(lambda: ops.sum_all(x), [x])


def test_relative_error_detects_wrong_gradient():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
    assert relative_error(np.zeros(3), np.full(3, 1e-9)) < 1e-2
