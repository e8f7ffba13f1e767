"""Adam optimizer with bias-corrected moments, one instance per network."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor


class Adam:
    """Tracks first/second moments per named parameter and applies the
    update rule m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2,
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    """

    def __init__(self, net, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.net = net
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in net.named_parameters()}
        self.v = {name: np.zeros_like(p.data) for name, p in net.named_parameters()}

    def step(self, grads):
        """Apply one update; ``grads`` must match the network's parameter
        order (as returned by ``net.parameters()``)."""
        named = self.net.named_parameters()
        if len(grads) != len(named):
            raise ShapeError(f"expected {len(named)} gradients, got {len(grads)}")
        arrays = []
        for (name, p), g in zip(named, grads):
            arr = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"gradient for {name} has shape {arr.shape}, expected {p.data.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite gradient for {name}")
            arrays.append(arr)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for (name, p), g in zip(named, arrays):
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
