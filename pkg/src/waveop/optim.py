"""Adam with classical (gradient-added) weight decay and step-decay scheduling."""

import numpy as np


def step_lr_schedule(epoch, base_lr, step_size, gamma):
    """lr = base_lr * gamma ** floor(epoch / step_size)."""
    if step_size < 1:
        raise ValueError("step_size must be >= 1")
    return base_lr * gamma ** (epoch // step_size)


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state):
    """One bias-corrected Adam update; weight decay is added to the gradient."""
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return params


class Adam:
    """Optimizer facade binding a parameter list to its AdamState."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, clip_norm=None):
        self.params = list(params)
        self.state = AdamState(self.params, lr, beta1, beta2, eps, weight_decay)
        self.clip_norm = clip_norm

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad for p in self.params]
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = [None if g is None else g * scale for g in grads]
        adam_step(self.params, grads, self.state)
