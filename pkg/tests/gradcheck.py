"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np


def finite_difference(fn, arrays, h=1e-6):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric, floor=1e-12):
    """Norm-wise relative error ``||a - n|| / max(||a||, ||n||)`` of one tensor."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def check_module_gradients(loss_fn, params, h=1e-6):
    """Compare backprop and finite differences for ``loss_fn()`` -> scalar Tensor.

    Returns the worst norm-wise relative error over the parameter tensors.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = finite_difference(lambda: float(loss_fn().data), [p.data for p in params], h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))
