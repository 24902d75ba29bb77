"""Parameterized proxy reward functions with exact parameter gradients.

Three kinds share one flat parameter vector interface:

* ``tabular`` - one parameter per (state, action) pair, index ``s * A + a``.
* ``linear``  - ``features[s, a] @ params``.
* ``mlp``     - feed-forward network over ``features[s, a]`` with tanh (or
  ReLU) hidden layers and a scalar identity output.

MLP parameters are packed layer by layer as the row-major ``(fan_in, fan_out)``
weight matrix followed by the ``fan_out`` bias vector.

Losses never need full Jacobians: :func:`reward_vjp` backpropagates a vector
of per-sample upstream weights straight to a parameter-space gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import ActionId, RngStream, StateId

KINDS = ("tabular", "linear", "mlp")
ACTIVATIONS = ("tanh", "relu")
DEFAULT_ADAM_LR = 3e-4
DEFAULT_HIDDEN = (32, 32)


@dataclass(frozen=True, eq=False)
class RewardModel:
    kind: str
    params: np.ndarray
    state_count: int
    action_count: int
    features: Optional[np.ndarray] = None
    layer_sizes: tuple = ()
    activation: str = "tanh"
    _shapes: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        params = np.array(self.params, dtype=float).ravel()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        S, A = self.state_count, self.action_count
        if S < 1 or A < 1:
            raise ValueError("state_count and action_count must be positive")
        if self.kind == "tabular":
            if params.size != S * A:
                raise ValueError(f"tabular model needs {S * A} params, got {params.size}")
            return
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 3 or feats.shape[:2] != (S, A):
            raise ValueError(f"features must have shape ({S}, {A}, d)")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        d = feats.shape[2]
        if self.kind == "linear":
            if params.size != d:
                raise ValueError(f"linear model needs {d} params, got {params.size}")
            return
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or sizes[0] != d or sizes[-1] != 1 or min(sizes) < 1:
            raise ValueError(f"mlp layer sizes must run from {d} to 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        if params.size != mlp_param_count(sizes):
            raise ValueError(f"mlp needs {mlp_param_count(sizes)} params, got {params.size}")
        object.__setattr__(self, "_shapes", tuple(zip(sizes[:-1], sizes[1:])))

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params) -> "RewardModel":
        return replace(self, params=np.asarray(params, dtype=float))

    def table(self) -> np.ndarray:
        """Proxy reward for every (state, action), shape ``(S, A)``."""
        S, A = self.state_count, self.action_count
        s = np.repeat(np.arange(S), A)
        a = np.tile(np.arange(A), S)
        return evaluate(self, s, a).reshape(S, A)


def mlp_param_count(layer_sizes: Sequence[int]) -> int:
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def one_hot_pair_features(state_count: int, action_count: int) -> np.ndarray:
    """Feature map with a single 1 at position ``s * A + a``."""
    d = state_count * action_count
    return np.eye(d).reshape(state_count, action_count, d)


def init_params(kind: str, dims: dict, rng: Optional[RngStream] = None) -> RewardModel:
    """Create a freshly initialized model.

    ``dims`` holds ``state_count`` and ``action_count``, plus ``features``
    for linear/mlp (one-hot pairs when omitted), ``hidden`` sizes for mlp and
    an optional ``activation``. Tabular and linear parameters start at zero;
    mlp weights are uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with zero
    biases.
    """
    try:
        S, A = int(dims["state_count"]), int(dims["action_count"])
    except KeyError as exc:
        raise ValueError(f"dims missing {exc.args[0]}") from None
    if kind == "tabular":
        return RewardModel("tabular", np.zeros(S * A), S, A)
    feats = dims.get("features")
    if feats is None:
        feats = one_hot_pair_features(S, A)
    feats = np.asarray(feats, dtype=float)
    if feats.ndim != 3 or feats.shape[:2] != (S, A):
        raise ValueError(f"features must have shape ({S}, {A}, d)")
    d = feats.shape[2]
    if kind == "linear":
        return RewardModel("linear", np.zeros(d), S, A, features=feats)
    if kind != "mlp":
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if rng is None:
        raise ValueError("mlp initialization needs an rng")
    sizes = (d, *[int(h) for h in dims.get("hidden", DEFAULT_HIDDEN)], 1)
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return RewardModel("mlp", np.concatenate(chunks), S, A, features=feats,
                       layer_sizes=sizes, activation=dims.get("activation", "tanh"))


def _check_indices(model: RewardModel, s: np.ndarray, a: np.ndarray) -> None:
    if s.size and (s.min() < 0 or s.max() >= model.state_count):
        raise IndexError(f"state index out of range [0, {model.state_count})")
    if a.size and (a.min() < 0 or a.max() >= model.action_count):
        raise IndexError(f"action index out of range [0, {model.action_count})")


def _unpack(model: RewardModel):
    layers, off = [], 0
    for fan_in, fan_out in model._shapes:
        W = model.params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = model.params[off:off + fan_out]
        off += fan_out
        layers.append((W, b))
    return layers


def _act(model: RewardModel, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if model.activation == "tanh" else np.maximum(z, 0.0)


def _act_deriv(model: RewardModel, h: np.ndarray) -> np.ndarray:
    # expressed in terms of the post-activation output
    return 1.0 - h * h if model.activation == "tanh" else (h > 0).astype(float)


def _mlp_forward(model: RewardModel, x: np.ndarray):
    acts = [x]
    layers = _unpack(model)
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else _act(model, z)
        acts.append(h)
    return layers, acts


def evaluate(model: RewardModel, states, actions) -> np.ndarray:
    """Vectorized proxy rewards for matching arrays of states and actions."""
    s = np.asarray(states, dtype=np.int64)
    a = np.asarray(actions, dtype=np.int64)
    _check_indices(model, s, a)
    if model.kind == "tabular":
        return model.params[s * model.action_count + a]
    x = model.features[s, a]
    if model.kind == "linear":
        return x @ model.params
    _, acts = _mlp_forward(model, x)
    return acts[-1][..., 0]


def reward_vjp(model: RewardModel, states, actions, upstream) -> np.ndarray:
    """Return ``sum_i upstream[i] * d reward(s_i, a_i) / d params``."""
    s = np.asarray(states, dtype=np.int64)
    a = np.asarray(actions, dtype=np.int64)
    w = np.asarray(upstream, dtype=float)
    _check_indices(model, s, a)
    if model.kind == "tabular":
        g = np.zeros(model.n_params)
        np.add.at(g, s * model.action_count + a, w)
        return g
    x = model.features[s, a]
    if model.kind == "linear":
        return w @ x
    layers, acts = _mlp_forward(model, x)
    grads = []
    delta = w[:, None]
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = acts[i]
        grads.append((delta.sum(axis=0), h_in.T @ delta))
        if i:
            delta = (delta @ W.T) * _act_deriv(model, h_in)
    out = []
    for gb, gW in reversed(grads):
        out.append(gW.ravel())
        out.append(gb)
    return np.concatenate(out)


def reward_eval(model: RewardModel, s: StateId, a: ActionId) -> float:
    return float(evaluate(model, [s], [a])[0])


def reward_grad(model: RewardModel, s: StateId, a: ActionId) -> np.ndarray:
    """Exact gradient of ``reward_eval(model, s, a)`` with respect to params."""
    return reward_vjp(model, [s], [a], [1.0])


def apply_gradient_step(model: RewardModel, grad, alpha: float) -> RewardModel:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != model.params.shape:
        raise ValueError(f"gradient length {grad.size} != params length {model.n_params}")
    return model.with_params(model.params - alpha * grad)


class Adam:
    """Adam update rule over a flat parameter vector."""

    def __init__(self, lr: float = DEFAULT_ADAM_LR, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, model: RewardModel, grad) -> RewardModel:
        grad = np.asarray(grad, dtype=float)
        if grad.shape != model.params.shape:
            raise ValueError("gradient length does not match params")
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return model.with_params(model.params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, model: RewardModel, grad) -> RewardModel:
        return apply_gradient_step(model, grad, self.lr)


def save_model(model: RewardModel, path) -> None:
    """JSON checkpoint: kind and dims header plus the flat parameter array."""
    data = {
        "kind": model.kind,
        "dims": {"state_count": model.state_count, "action_count": model.action_count},
        "params": model.params.tolist(),
    }
    if model.kind != "tabular":
        data["dims"]["features"] = model.features.tolist()
    if model.kind == "mlp":
        data["dims"]["layer_sizes"] = list(model.layer_sizes)
        data["dims"]["activation"] = model.activation
    with open(path, "w") as fh:
        json.dump(data, fh)


def load_model(path) -> RewardModel:
    with open(path) as fh:
        data = json.load(fh)
    dims = data["dims"]
    return RewardModel(
        data["kind"], np.asarray(data["params"], dtype=float),
        dims["state_count"], dims["action_count"],
        features=None if data["kind"] == "tabular" else np.asarray(dims["features"]),
        layer_sizes=tuple(dims.get("layer_sizes", ())),
        activation=dims.get("activation", "tanh"),
    )
