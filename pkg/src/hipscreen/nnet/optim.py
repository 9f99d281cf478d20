import numpy as np


class Adam:
    """ADAM with bias-corrected moments, updating parameter arrays in place."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        adam_step(params, grads, self.m, self.v, self.t,
                  self.learning_rate, self.beta1, self.beta2, self.eps)

    def state_arrays(self):
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, t, arrays):
        self.t = t
        self.m = {k[len("adam.m."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}


def adam_step(params, grads, m, v, t, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One ADAM update at step ``t`` (1-based).

    ``m`` and ``v`` are dicts of first/second moment arrays; missing entries
    start at zero.  ``params``, ``m`` and ``v`` are modified in place.
    """
    if t < 1:
        raise ValueError("ADAM step counter starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        mk, vk = m[name], v[name]
        mk *= beta1
        mk += (1.0 - beta1) * g
        vk *= beta2
        vk += (1.0 - beta2) * (g * g)
        update = learning_rate * (mk / c1) / (np.sqrt(vk / c2) + eps)
        p -= update.astype(p.dtype, copy=False)
