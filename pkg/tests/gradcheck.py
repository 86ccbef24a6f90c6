"""Tape gradients versus central differences over every field parameter."""

import numpy as np

from dissipative.numerics import Tape, backward, finite_difference_gradient
from dissipative.numerics import autodiff as ad


def relative_error(f, loss, x0, h=1e-6, wrt_x=True):
    """``||g - fd|| / ||fd||`` over all parameters (and ``x`` when ``wrt_x``).

    ``loss(binding, x)`` must return a scalar; it is evaluated on tape leaves
    for the analytic gradient and on perturbed plain arrays for differences.
    """
    params = f.params()
    tape = Tape()
    leaves = {k: tape.var(v) for k, v in params.items()}
    xv = tape.var(x0) if wrt_x else x0
    g = backward(loss(f.bind(leaves), xv))
    got, ref = [], []
    for name, p in params.items():
        def fn(q, name=name):
            vals = dict(params)
            vals[name] = q
            return float(ad.value(loss(f.bind(vals), x0)))
        got.append(np.ravel(g[leaves[name]]))
        ref.append(np.ravel(finite_difference_gradient(fn, p, h)))
    if wrt_x:
        got.append(np.ravel(g[xv]))
        ref.append(np.ravel(finite_difference_gradient(lambda xx: float(ad.value(loss(f.bind(params), xx))), x0, h)))
    got, ref = np.concatenate(got), np.concatenate(ref)
    return float(np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-12))
