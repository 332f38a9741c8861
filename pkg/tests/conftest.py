import numpy as np
import pytest

from overlapreg import diffcore as dc


def finite_difference(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f() w.r.t. a list of arrays
    perturbed in place. Independent of the autodiff engine."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_op_gradients(build, arrays, h=1e-5, tol=1e-6):
    """`build(tensors) -> scalar Tensor`; verifies backward against central
    differences for every entry of every input array."""
    tensors = [dc.parameter(a) for a in arrays]
    out = build(tensors)
    dc.backward(out)
    analytic = [t.grad_or_zero() for t in tensors]

    def value():
        fresh = [dc.parameter(a) for a in arrays]
        return float(build(fresh).data)

    numeric = finite_difference(value, arrays, h=h)
    for a, n in zip(analytic, numeric):
        assert rel_error(a, n).max() < tol, f"gradient mismatch:\nanalytic={a}\nnumeric={n}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
