"""Synchronous advantage actor-critic shared by innovators and imitators."""
from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .errors import ArityError, ConfigError, NumericalFault
from .nn import ConvSpec, Network, RMSProp


@dataclasses.dataclass
class LearnerConfig:
    discount: float = 0.99
    learning_rate: float = 5e-4
    entropy_weight: float = 0.003
    value_weight: float = 0.5
    unroll_length: int = 50
    num_envs: int = 16
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-5
    max_grad_norm: float | None = 40.0
    hidden_sizes: list = dataclasses.field(default_factory=lambda: [32, 32])
    conv_channels: int = 0  # 0 disables the 3x3 convolutional front-end

    def validate(self) -> None:
        if not 0.0 < self.discount < 1.0:
            raise ConfigError(f"discount must be in (0, 1), got {self.discount}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.entropy_weight < 0 or self.value_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.unroll_length < 1 or self.num_envs < 1:
            raise ConfigError("unroll_length and num_envs must be positive")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits) -> np.ndarray:
    """Shannon entropy (nats) of softmax(logits) along the last axis."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -(np.exp(logp) * logp).sum(axis=-1)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse-CDF sampling."""
    probs = softmax(logits)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1]) * cdf[..., -1]
    return np.minimum((cdf <= u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


class PolicyNetwork:
    """``observation -> (action logits, state value)``: one network, two linear heads."""

    def __init__(self, input_size: int, num_actions: int, hidden_sizes=(32, 32),
                 conv: ConvSpec | None = None, rng: np.random.Generator | None = None):
        self.num_actions = num_actions
        self.net = Network(input_size, num_actions + 1, hidden_sizes, conv, rng)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def forward(self, obs: np.ndarray):
        out, cache = self.net.forward(obs)
        return out[:, :self.num_actions], out[:, self.num_actions], cache

    def __call__(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logits, values, _ = self.forward(obs)
        return logits, values


def act(policy: PolicyNetwork, observation: np.ndarray, rng: np.random.Generator):
    """Sample actions for a batch of observations; returns ``(actions, logits, values)``."""
    obs = np.atleast_2d(observation)
    logits, values = policy(obs)
    return sample_actions(logits, rng), logits, values


def compute_returns_and_advantages(rewards, values, bootstrap_value, discount: float):
    """n-step discounted returns bootstrapped from the unroll end, and ``returns - values``.

    ``rewards`` and ``values`` have time as their leading axis; ``bootstrap_value``
    matches one time slice (use 0 after a terminal step).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ArityError(f"rewards {rewards.shape} and values {values.shape} differ")
    if len(rewards) == 0:
        raise ArityError("empty trajectory")
    returns = np.empty_like(rewards)
    running = np.asarray(bootstrap_value, dtype=np.float64)
    for t in reversed(range(len(rewards))):
        running = rewards[t] + discount * running
        returns[t] = running
    return returns, returns - values


LogitLoss = Callable[[np.ndarray], tuple[float, np.ndarray]]


def a2c_loss(policy: PolicyNetwork, obs, actions, returns, advantages, entropy_weight: float,
             value_weight: float = 0.5, extra_logit_loss: LogitLoss | None = None):
    """Batch-mean actor-critic loss and its parameter gradients.

    ``loss = -A * log pi(a) + value_weight * (R - v)^2 - entropy_weight * H(pi) + extra``,
    with the advantage held constant.  ``extra_logit_loss(logits)`` returns an
    additional scalar loss and its gradient with respect to the logits.
    """
    logits, values, cache = policy.forward(obs)
    n = logits.shape[0]
    actions = np.asarray(actions, dtype=np.int64)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    rows = np.arange(n)
    chosen = logp[rows, actions]
    ent = -(probs * logp).sum(axis=1)

    pg_loss = -np.mean(advantages * chosen)
    value_loss = value_weight * np.mean((returns - values) ** 2)
    entropy_loss = -entropy_weight * np.mean(ent)

    one_hot = np.zeros_like(logits)
    one_hot[rows, actions] = 1.0
    d_logits = -(advantages[:, None] * (one_hot - probs)) / n
    # dH/dz_j = -p_j (log p_j + H)
    d_logits += entropy_weight * probs * (logp + ent[:, None]) / n
    report = {"policy_loss": float(pg_loss), "value_loss": float(value_loss),
              "entropy_loss": float(entropy_loss), "entropy": float(np.mean(ent))}
    total = pg_loss + value_loss + entropy_loss
    if extra_logit_loss is not None:
        extra, d_extra = extra_logit_loss(logits)
        d_logits += d_extra
        total += extra
        report["extra_loss"] = float(extra)
    d_values = 2.0 * value_weight * (values - returns) / n
    dout = np.concatenate([d_logits, d_values[:, None]], axis=1)
    grads = policy.net.backward(cache, dout)
    report["loss"] = float(total)
    if not np.isfinite(total):
        raise NumericalFault("non-finite loss")
    return report, grads


class Learner:
    """A policy network plus its optimiser."""

    def __init__(self, policy: PolicyNetwork, config: LearnerConfig, learning_rate: float | None = None):
        self.policy = policy
        self.config = config
        self.optimizer = RMSProp(
            policy.params,
            learning_rate or config.learning_rate,
            decay=config.rmsprop_decay,
            epsilon=config.rmsprop_epsilon,
            max_grad_norm=config.max_grad_norm,
        )

    def update(self, obs, actions, returns, advantages, extra_logit_loss: LogitLoss | None = None) -> dict:
        """One gradient step; a non-finite gradient raises before any parameter changes."""
        report, grads = a2c_loss(
            self.policy, obs, actions, returns, advantages,
            self.config.entropy_weight, self.config.value_weight, extra_logit_loss,
        )
        report["grad_norm"] = self.optimizer.step(self.policy.params, grads)
        return report


def update(learner: Learner, obs, actions, returns, advantages, extra_logit_loss=None):
    """Apply one update and return ``(params, loss_report)``."""
    report = learner.update(obs, actions, returns, advantages, extra_logit_loss)
    return learner.policy.params, report
