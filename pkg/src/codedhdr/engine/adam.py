"""Bias-corrected Adam with per-parameter moment tensors."""

import numpy as np

from ..errors import NumericError


class AdamState:
    """Optimizer state: step count plus first/second moments per parameter.

    Defaults beta1=0.9, beta2=0.999, eps=1e-8; the learning rate is the only
    externally tuned knob.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def state_arrays(self):
        """Flat name -> array map of both moments, for checkpointing."""
        out = {}
        for name, arr in self.m.items():
            out["m." + name] = arr
        for name, arr in self.v.items():
            out["v." + name] = arr
        return out

    def load_state_arrays(self, arrays, step):
        for name in self.m:
            self.m[name] = arrays["m." + name].reshape(self.m[name].shape)
            self.v[name] = arrays["v." + name].reshape(self.v[name].shape)
        self.step = step


def adam_step(params, grads, state):
    """One in-place Adam update over `params` given matching `grads`.

    Rejects the whole step if any gradient is non-finite, leaving parameters
    and moments untouched.
    """
    for name in params:
        if name not in grads:
            raise ValueError(f"missing gradient for parameter '{name}'")
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for parameter '{name}'; "
                               "step rejected")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / np.float32(corr1)
        vhat = v / np.float32(corr2)
        p.data -= np.float32(state.lr) * mhat / (np.sqrt(vhat) + np.float32(state.eps))
    return params
