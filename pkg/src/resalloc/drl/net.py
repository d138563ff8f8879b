"""Actor-critic MLP with a masked softmax action head, in plain numpy.

Actor and critic have separate trunks of the same shape. All parameters
live in one flat float64 vector; layer weights are views into it, so an
optimizer step on the flat vector updates the network in place.
"""

from __future__ import annotations

import numpy as np

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
    "relu": (lambda z: np.maximum(z, 0.0), lambda h: (h > 0).astype(h.dtype)),
}


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over entries where ``mask`` is true; masked entries are exactly 0."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)  # exp(-inf) == 0.0 exactly
    return e / e.sum(axis=-1, keepdims=True)


class PolicyNet:
    def __init__(self, obs_dim: int, n_actions: int, hidden: tuple[int, ...] = (128, 128),
                 activation: str = "tanh", seed: int | None = 0, params: np.ndarray | None = None):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.activation = activation
        self._act, self._dact = _ACTIVATIONS[activation]
        sizes = [obs_dim, *self.hidden]
        self.shapes: list[tuple[str, tuple[int, ...]]] = []
        for trunk, head in (("pi", n_actions), ("vf", 1)):
            for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
                self.shapes += [(f"{trunk}.W{i}", (a, b)), (f"{trunk}.b{i}", (b,))]
            self.shapes += [(f"{trunk}.Wout", (sizes[-1], head)), (f"{trunk}.bout", (head,))]
        self.size = sum(int(np.prod(s)) for _, s in self.shapes)
        if params is None:
            self.params = np.zeros(self.size)
            self._bind()
            if seed is not None:
                self._init(np.random.default_rng(seed))
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (self.size,):
                raise ValueError(f"expected {self.size} parameters, got {params.shape}")
            self.params = params.copy()
            self._bind()

    def _bind(self) -> None:
        self.p: dict[str, np.ndarray] = {}
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self.p[name] = self.params[off:off + n].reshape(shape)
            off += n

    def _init(self, rng: np.random.Generator) -> None:
        """Orthogonal weights (gain sqrt(2) hidden, 0.01 policy head, 1 value
        head), zero biases."""
        for name, shape in self.shapes:
            if len(shape) != 2:
                continue
            gain = np.sqrt(2.0)
            if name == "pi.Wout":
                gain = 0.01
            elif name == "vf.Wout":
                gain = 1.0
            a = rng.standard_normal(shape)
            q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
            q = q * np.sign(np.diag(r))
            self.p[name][...] = gain * (q if shape[0] >= shape[1] else q.T)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.obs_dim, self.n_actions, self.hidden, self.activation, params=self.params)

    # ------------------------------------------------------------------
    def _trunk(self, name: str, x: np.ndarray):
        hs = [x]
        h = x
        for i in range(len(self.hidden)):
            h = self._act(h @ self.p[f"{name}.W{i}"] + self.p[f"{name}.b{i}"])
            hs.append(h)
        out = h @ self.p[f"{name}.Wout"] + self.p[f"{name}.bout"]
        return out, hs

    def forward(self, obs: np.ndarray, mask: np.ndarray):
        """Batched forward pass.

        Returns ``(probs, values, cache)``; ``probs`` is ``(n, n_actions)``
        and zero wherever ``mask`` is false, ``values`` is ``(n,)``.
        """
        obs = np.atleast_2d(obs)
        mask = np.atleast_2d(mask)
        logits, hs_pi = self._trunk("pi", obs)
        v, hs_vf = self._trunk("vf", obs)
        probs = masked_softmax(logits, mask)
        return probs, v[:, 0], (hs_pi, hs_vf, mask)

    def act_probs(self, obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        logits, _ = self._trunk("pi", obs[None, :])
        return masked_softmax(logits, mask[None, :])[0]

    def value(self, obs: np.ndarray) -> float:
        v, _ = self._trunk("vf", np.atleast_2d(obs))
        return float(v[0, 0])

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. the flat parameters, given the
        loss gradient w.r.t. the logits ``(n, n_actions)`` and values ``(n,)``."""
        hs_pi, hs_vf, _ = cache
        grad = np.zeros(self.size)
        g = dict(self._grad_views(grad))
        self._trunk_backward("pi", hs_pi, dlogits, g)
        self._trunk_backward("vf", hs_vf, dvalues.reshape(-1, 1), g)
        return grad

    def _grad_views(self, grad: np.ndarray):
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            yield name, grad[off:off + n].reshape(shape)
            off += n

    def _trunk_backward(self, name: str, hs: list[np.ndarray], dout: np.ndarray, g: dict) -> None:
        L = len(self.hidden)
        g[f"{name}.Wout"][...] = hs[L].T @ dout
        g[f"{name}.bout"][...] = dout.sum(axis=0)
        dh = dout @ self.p[f"{name}.Wout"].T
        for i in range(L - 1, -1, -1):
            dz = dh * self._dact(hs[i + 1])
            g[f"{name}.W{i}"][...] = hs[i].T @ dz
            g[f"{name}.b{i}"][...] = dz.sum(axis=0)
            if i:
                dh = dz @ self.p[f"{name}.W{i}"].T


def log_prob_grad_logits(probs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """d log p(action) / d logits for a masked softmax: onehot - probs."""
    d = -probs.copy()
    d[np.arange(len(actions)), actions] += 1.0
    return d


def entropy(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -plogp.sum(axis=-1)


def entropy_grad_logits(probs: np.ndarray) -> np.ndarray:
    """d H / d logits = -p * (log p + H), zero on masked entries."""
    H = entropy(probs)
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return -probs * (logp + H[:, None])
