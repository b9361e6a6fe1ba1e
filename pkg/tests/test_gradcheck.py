import numpy as np

from dan.afn import LossWeights
from dan.gradcheck import check, check_dan_loss, check_primitives, numerical_grad, relative_error
from dan.tensor import Tensor, parameter


def test_numerical_grad_of_a_quadratic():
    a = np.array([1.0, -2.0, 0.5])
    g = numerical_grad(lambda: float((a**2).sum()), a)
    assert np.allclose(g, 2 * a, atol=1e-8)
    assert np.array_equal(a, [1.0, -2.0, 0.5])  # perturbations are undone


def test_relative_error_edges():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(2), -np.ones(2)) == 2.0


def test_check_catches_a_wrong_backward():
    x = parameter(np.array([0.3, -1.2]))

    def broken() -> Tensor:
        return Tensor._make(np.array((x.data**2).sum()), (x,), lambda g: (g * x.data,), "half_square_grad")

    (result,) = check(broken, [("x", x)])
    assert not result.ok and result.error > 0.3


def test_every_primitive_passes():
    results = check_primitives(seed=3)
    bad = [(r.name, r.error) for r in results if not r.ok]
    assert not bad
    names = {r.name.split(".")[0] for r in results}
    assert {"conv2d", "batch_norm", "affinity_loss", "partition_loss", "max_pool2d"} <= names


def test_joint_objective_without_partition_term():
    results = check_dan_loss(seed=1, weights=LossWeights(1.0, 0.0))
    assert results and all(r.ok for r in results)
