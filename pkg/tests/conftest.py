import numpy as np

from dmmv import autodiff as ad


def gradcheck(params, build, h=1e-5, rtol=1e-4, atol=1e-6):
    """Check analytic gradients of a scalar graph against central finite
    differences over every entry of every parameter.

    `build` must rebuild the graph from the parameters' current values.
    Returns the worst relative error observed.
    """
    for p in params:
        p.grad[...] = 0.0
    ad.backward(build())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        fd = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_fd = fd.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(build().data)
            flat_v[i] = orig - h
            f_minus = float(build().data)
            flat_v[i] = orig
            flat_fd[i] = (f_plus - f_minus) / (2.0 * h)
        np.testing.assert_allclose(analytic, fd, rtol=rtol, atol=atol,
                                   err_msg=f"gradient mismatch for {p.name}")
        denom = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float((np.abs(analytic - fd) / denom).max()))
    return worst


def rand_params(store, rng, specs, group="numerical"):
    """Register small random parameters: specs is a list of (name, shape)."""
    return [store.add(name, rng.standard_normal(shape), group)
            for name, shape in specs]
