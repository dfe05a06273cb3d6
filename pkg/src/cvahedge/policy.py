"""Diagonal-Gaussian MLP policy with hand-rolled numpy autodiff.

The network is tiny (two tanh hidden layers of 10 units), so explicit
forward/backward/forward-tangent passes in numpy are simpler and faster
than pulling in an autodiff framework, and they make the Fisher-vector
products used by the trust-region step exact.

The mean head reads standardized features (a running normalizer frozen
early in training); the log standard deviations are free state-independent
parameters, one per action dimension.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import InconsistentInputError

LOG_2PI = math.log(2.0 * math.pi)


class FeatureNormalizer:
    """Running feature standardizer: z = (x - mean) / std, freezable."""

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.count = 0.0
        self._sum = np.zeros(n_features)
        self._sumsq = np.zeros(n_features)
        self.frozen = False

    def update(self, states: np.ndarray) -> None:
        if self.frozen:
            return
        states = np.asarray(states, dtype=float).reshape(-1, self.n_features)
        self.count += len(states)
        self._sum += states.sum(axis=0)
        self._sumsq += (states * states).sum(axis=0)

    def freeze(self) -> None:
        self.frozen = True

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.n_features)
        return self._sum / self.count

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.n_features)
        var = np.maximum(self._sumsq / self.count - self.mean ** 2, 0.0)
        return np.sqrt(var) + 1e-8

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return (states - self.mean) / self.std

    def to_arrays(self) -> dict:
        return {"norm_count": np.array(self.count), "norm_sum": self._sum,
                "norm_sumsq": self._sumsq,
                "norm_frozen": np.array(self.frozen)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "FeatureNormalizer":
        out = cls(len(arrays["norm_sum"]))
        out.count = float(arrays["norm_count"])
        out._sum = np.asarray(arrays["norm_sum"], dtype=float)
        out._sumsq = np.asarray(arrays["norm_sumsq"], dtype=float)
        out.frozen = bool(arrays["norm_frozen"])
        return out


class GaussianPolicy:
    """MLP mean + per-dimension log-std diagonal Gaussian policy."""

    def __init__(self, n_features: int, n_actions: int,
                 hidden: Sequence[int] = (10, 10),
                 log_std_init=-2.3, mean_scale: float = 1e-2,
                 seed: int = 0):
        self.n_features = n_features
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.normalizer = FeatureNormalizer(n_features)
        rng = np.random.default_rng(seed)
        sizes = [n_features, *self.hidden, n_actions]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for k in range(len(sizes) - 1):
            scale = 1.0 / math.sqrt(sizes[k])
            if k == len(sizes) - 2:
                scale *= mean_scale          # start close to the zero action
            self.weights.append(scale * rng.standard_normal(
                (sizes[k + 1], sizes[k])))
            self.biases.append(np.zeros(sizes[k + 1]))
        self.log_std = np.broadcast_to(
            np.asarray(log_std_init, dtype=float), (n_actions,)).copy()
        self._segments = self._build_segments()

    # ------------------------------------------------------ flat parameters

    def _build_segments(self):
        sizes, offset = [], 0
        for arr in [*self.weights, *self.biases, self.log_std]:
            sizes.append((offset, offset + arr.size, arr.shape))
            offset += arr.size
        return sizes

    @property
    def n_params(self) -> int:
        return self._segments[-1][1]

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [a.ravel() for a in [*self.weights, *self.biases, self.log_std]])

    def set_flat(self, theta: np.ndarray) -> None:
        if not np.all(np.isfinite(theta)):
            raise InconsistentInputError("non-finite policy parameters")
        arrays = [*self.weights, *self.biases, self.log_std]
        for arr, (lo, hi, shape) in zip(arrays, self._segments):
            arr[...] = theta[lo:hi].reshape(shape)

    def _pack(self, weights, biases, log_std) -> np.ndarray:
        return np.concatenate(
            [a.ravel() for a in [*weights, *biases, log_std]])

    def _unpack(self, theta: np.ndarray):
        arrays = []
        for lo, hi, shape in self._segments:
            arrays.append(theta[lo:hi].reshape(shape))
        n = len(self.weights)
        return arrays[:n], arrays[n:2 * n], arrays[2 * n]

    # -------------------------------------------------------------- forward

    def _forward(self, states: np.ndarray):
        x = self.normalizer(np.asarray(states, dtype=float))
        hs = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            hs.append(np.tanh(hs[-1] @ w.T + b))
        mu = hs[-1] @ self.weights[-1].T + self.biases[-1]
        return mu, hs

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        return self._forward(states)[0]

    def mean_std(self, states: np.ndarray):
        mu, _ = self._forward(states)
        return mu, np.exp(self.log_std)

    def sample(self, states: np.ndarray, rng: np.random.Generator):
        """(actions, log_probs) drawn from the Gaussian at each state."""
        mu, _ = self._forward(states)
        std = np.exp(self.log_std)
        eps = rng.standard_normal(mu.shape)
        actions = mu + std * eps
        logp = (-0.5 * np.sum(eps * eps, axis=-1)
                - np.sum(self.log_std) - 0.5 * self.n_actions * LOG_2PI)
        return actions, logp

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mu, _ = self._forward(states)
        z = (actions - mu) * np.exp(-self.log_std)
        return (-0.5 * np.sum(z * z, axis=-1)
                - np.sum(self.log_std) - 0.5 * self.n_actions * LOG_2PI)

    def as_sampler(self, rng: np.random.Generator):
        """Callable (states -> actions) for environment rollouts."""
        return lambda states: self.sample(states, rng)[0]

    def as_mean(self):
        """Deterministic callable (states -> mean actions)."""
        return lambda states: self.mean_action(states)

    # ------------------------------------------------------------- backward

    def _backprop(self, hs, g_mu):
        """Gradients of sum(g_mu * mu) w.r.t. weights/biases."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = g_mu
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = g.T @ hs[k]
            grads_b[k] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k]) * (1.0 - hs[k] * hs[k])
        return grads_w, grads_b

    def weighted_logp_grad(self, states, actions, step_weights) -> np.ndarray:
        """Gradient of sum_i w_i log pi(a_i | s_i) as one flat vector."""
        mu, hs = self._forward(states)
        inv_var = np.exp(-2.0 * self.log_std)
        resid = (actions - mu) * inv_var
        g_mu = step_weights[:, None] * resid
        grads_w, grads_b = self._backprop(hs, g_mu)
        z2 = (actions - mu) ** 2 * inv_var
        g_log_std = np.sum(step_weights[:, None] * (z2 - 1.0), axis=0)
        return self._pack(grads_w, grads_b, g_log_std)

    # ---------------------------------------------------------------- Fisher

    def _jvp(self, hs, v_weights, v_biases) -> np.ndarray:
        """Directional derivative of mu along (v_weights, v_biases)."""
        d = np.zeros_like(hs[0])
        for k in range(len(self.weights) - 1):
            d = hs[k] @ v_weights[k].T + d @ self.weights[k].T + v_biases[k]
            d = d * (1.0 - hs[k + 1] * hs[k + 1])
        return (hs[-1] @ v_weights[-1].T + d @ self.weights[-1].T
                + v_biases[-1])

    def fisher_operator(self, states, step_weights, damping: float = 0.0):
        """Callable v -> F v for the Fisher averaged with step_weights.

        step_weights must sum to one. The mean-parameter block is
        J^T diag(1/sigma^2) J via a forward tangent then a backward pass;
        the log-std block is exactly 2 per dimension; cross terms vanish.
        The forward activations are computed once here and shared by every
        product, which is what makes conjugate-gradient solves cheap.
        """
        _, hs = self._forward(states)
        inv_var = np.exp(-2.0 * self.log_std)
        scale = step_weights[:, None] * inv_var

        def matvec(v: np.ndarray) -> np.ndarray:
            v_w, v_b, v_log_std = self._unpack(v)
            d_mu = self._jvp(hs, v_w, v_b)
            grads_w, grads_b = self._backprop(hs, scale * d_mu)
            out = self._pack(grads_w, grads_b, 2.0 * v_log_std)
            return out + damping * v

        return matvec

    def fisher_vector_product(self, states, v, step_weights,
                              damping: float = 0.0) -> np.ndarray:
        """One-shot F v (see fisher_operator for the batched form)."""
        return self.fisher_operator(states, step_weights, damping)(v)

    def kl_mean(self, states, mu_old, log_std_old, step_weights) -> float:
        """Weighted mean KL(old || new) over the given states."""
        mu, _ = self._forward(states)
        var_ratio = np.exp(2.0 * (log_std_old - self.log_std))
        delta = (mu_old - mu) * np.exp(-self.log_std)
        per_state = np.sum(
            self.log_std - log_std_old + 0.5 * (var_ratio + delta * delta)
            - 0.5, axis=-1)
        return float(np.sum(step_weights * per_state))

    # ----------------------------------------------------------- checkpoints

    def to_arrays(self) -> dict:
        out = {"hidden": np.array(self.hidden),
               "n_features": np.array(self.n_features),
               "n_actions": np.array(self.n_actions),
               "log_std": self.log_std}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{k}"] = w
            out[f"b{k}"] = b
        out.update(self.normalizer.to_arrays())
        return out

    @classmethod
    def from_arrays(cls, arrays: dict) -> "GaussianPolicy":
        policy = cls(int(arrays["n_features"]), int(arrays["n_actions"]),
                     hidden=tuple(int(h) for h in arrays["hidden"]))
        policy.log_std = np.asarray(arrays["log_std"], dtype=float)
        for k in range(len(policy.weights)):
            policy.weights[k] = np.asarray(arrays[f"w{k}"], dtype=float)
            policy.biases[k] = np.asarray(arrays[f"b{k}"], dtype=float)
        policy.normalizer = FeatureNormalizer.from_arrays(arrays)
        policy._segments = policy._build_segments()
        return policy

    def save(self, path) -> None:
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "GaussianPolicy":
        with np.load(path) as data:
            return cls.from_arrays(dict(data))


def policy_sample(policy: GaussianPolicy, state: np.ndarray,
                  rng: np.random.Generator):
    """(action, log_prob) for a single state vector."""
    actions, logp = policy.sample(np.atleast_2d(state), rng)
    return actions[0], float(logp[0])
