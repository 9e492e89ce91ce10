"""Niceness traces, the imitation reward, and the learned niceness network.

An imitator is rewarded for keeping its own discounted niceness close to the
innovator's.  Niceness increments come either from a hand-coded environment
metric or from a network that estimates, from the innovator's states and
actions, how each action changes the imitator's expected return (Q - V).
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ArityError, ConfigError
from .learner import log_softmax
from .nn import ConvSpec, Network, RMSProp

METRIC_MATCHING = "metric_matching"
NICENESS_NETWORK = "niceness_network"
NICENESS_SOURCES = (METRIC_MATCHING, NICENESS_NETWORK)


@dataclasses.dataclass
class ReciprocityConfig:
    c_im: float = 0.1
    decay: float = 0.95  # imitation memory decay
    c_kl: float = 0.0
    nn_discount: float = 0.9
    nn_lambda: float = 0.9
    nn_learning_rate: float = 1e-3
    niceness_source: str = METRIC_MATCHING
    epsilon: float = 1e-8
    # "intrinsic": divide by mean |r_int|;  "total": scale so the intrinsic part is a
    # c_im share of the batch's total absolute reward
    normalization: str = "intrinsic"
    # append (own trace, innovator trace) to the imitator's policy input
    trace_features: bool = True
    # decay traces only on steps that carry a niceness event (Harvest per-apple variant)
    decay_on_events_only: bool = False

    def validate(self) -> None:
        if min(self.c_im, self.c_kl, self.nn_learning_rate) < 0:
            raise ConfigError("reciprocity weights must be non-negative")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("imitation memory decay must lie in (0, 1)")
        if not (0.0 < self.nn_discount <= 1.0 and 0.0 < self.nn_lambda <= 1.0):
            raise ConfigError("niceness-network discount and lambda must lie in (0, 1]")
        if self.niceness_source not in NICENESS_SOURCES:
            raise ConfigError(f"niceness_source must be one of {NICENESS_SOURCES}")
        if self.normalization not in ("intrinsic", "total"):
            raise ConfigError("normalization must be 'intrinsic' or 'total'")
        if self.normalization == "total" and self.c_im >= 1.0:
            raise ConfigError("'total' normalization needs c_im < 1")


# ---------------------------------------------------------------- traces
@dataclasses.dataclass(frozen=True)
class NicenessTrace:
    value: float = 0.0
    decay: float = 0.95

    def update(self, increment: float) -> "NicenessTrace":
        return update_trace(self, increment)


def update_trace(trace: NicenessTrace, increment: float) -> NicenessTrace:
    if not np.isfinite(increment):
        raise ValueError("niceness increment must be finite")
    return NicenessTrace(trace.decay * trace.value + increment, trace.decay)


def decay_traces(values: np.ndarray, increments: np.ndarray, decay: float,
                 events: np.ndarray | None = None) -> np.ndarray:
    """Vectorised trace update; with ``events`` only flagged entries decay and accumulate."""
    updated = decay * values + increments
    if events is None:
        return updated
    return np.where(events, updated, values)


def trajectory_niceness(trajectory, decay: float, source: str = METRIC_MATCHING,
                        model: "NicenessNetwork | None" = None, events=None) -> np.ndarray:
    """Running discounted niceness after every step of a trajectory (time on axis 0).

    With the metric source ``trajectory`` holds the per-step environment
    increments.  With the network source it is a ``(features, actions)`` pair
    and each increment is ``Q[action] - V`` from ``model``.
    """
    if source == NICENESS_NETWORK:
        if model is None:
            raise ConfigError("network-sourced niceness needs a niceness network")
        features, actions = trajectory
        features = np.asarray(features, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        lead = actions.shape
        inc = niceness_increments(model, features.reshape(actions.size, -1), actions.reshape(-1))
        increments = inc.reshape(lead)
    elif source == METRIC_MATCHING:
        increments = np.asarray(trajectory, dtype=np.float64)
    else:
        raise ConfigError(f"unknown niceness source {source!r}")
    out = np.empty_like(increments)
    value = np.zeros(increments.shape[1:])
    for t in range(len(increments)):
        value = decay_traces(value, increments[t], decay, None if events is None else events[t])
        out[t] = value
    return out


def intrinsic_reward(n_im, n_inv):
    """Squared niceness mismatch, negated: 0 for perfect imitation, never positive."""
    diff = np.asarray(n_im, dtype=np.float64) - np.asarray(n_inv, dtype=np.float64)
    return -(diff ** 2)


def normalize_intrinsic(r_env, r_int, c_im: float, epsilon: float = 1e-8,
                        mode: str = "intrinsic") -> np.ndarray:
    """Total per-step reward with the intrinsic term rescaled over the batch.

    ``intrinsic`` mode: ``r_env + c_im * r_int / mean|r_int|``, so the scaled
    intrinsic term has mean magnitude ``c_im``.  ``total`` mode picks the scale
    so that the intrinsic term is a ``c_im`` share of the batch's total absolute
    reward.
    """
    r_env = np.asarray(r_env, dtype=np.float64)
    r_int = np.asarray(r_int, dtype=np.float64)
    mu = max(float(np.mean(np.abs(r_int))), epsilon)
    if mode == "intrinsic":
        return r_env + c_im * r_int / mu
    if mode == "total":
        env_mass = float(np.mean(np.abs(r_env)))
        scale = c_im * env_mass / ((1.0 - c_im) * mu)
        return r_env + scale * r_int
    raise ConfigError(f"unknown normalization mode {mode!r}")


# ------------------------------------------------------- niceness network
class NicenessNetwork:
    """``state features -> (V, Q per action, policy-estimate logits)``."""

    def __init__(self, input_size: int, num_actions: int, hidden_sizes=(32, 32),
                 conv: ConvSpec | None = None, rng: np.random.Generator | None = None):
        self.num_actions = num_actions
        self.net = Network(input_size, 1 + 2 * num_actions, hidden_sizes, conv, rng)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def split(self, out: np.ndarray):
        A = self.num_actions
        return out[:, 0], out[:, 1:1 + A], out[:, 1 + A:]

    def forward(self, features: np.ndarray):
        out, _ = self.net.forward(np.atleast_2d(features))
        return self.split(out)

    def __call__(self, features):
        return self.forward(features)


def niceness_net_forward(model: NicenessNetwork, features):
    """``(V, Q, policy-estimate logits)`` for a batch of state features."""
    return model.forward(features)


def action_niceness(V, Q, action):
    """Estimated change in the imitator's return caused by ``action``: ``Q[action] - V``."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim == 1:
        return float(Q[int(action)] - V)
    action = np.asarray(action, dtype=np.int64)
    return Q[np.arange(len(Q)), action] - np.asarray(V)


def niceness_increments(model: NicenessNetwork, features, actions) -> np.ndarray:
    V, Q, _ = model.forward(features)
    return action_niceness(V, Q, actions)


def lambda_returns(rewards, values, bootstrap_value, discount: float, lam: float) -> np.ndarray:
    """``G_t = r_t + discount * ((1 - lam) * V_{t+1} + lam * G_{t+1})``, time on axis 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(rewards)
    next_g = np.asarray(bootstrap_value, dtype=np.float64)
    next_v = next_g
    for t in reversed(range(len(rewards))):
        next_g = rewards[t] + discount * ((1.0 - lam) * next_v + lam * next_g)
        out[t] = next_g
        next_v = values[t]
    return out


def niceness_loss(model: NicenessNetwork, features, actions, targets, policy_weight: float = 1.0):
    """Regression of V and the taken action's Q onto ``targets`` plus policy-estimate cross-entropy.

    Returns ``(report, grads)``; all terms are batch means.
    """
    out, cache = model.net.forward(features)
    V, Q, logits = model.split(out)
    n = len(V)
    rows = np.arange(n)
    actions = np.asarray(actions, dtype=np.int64)
    q_taken = Q[rows, actions]
    logp = log_softmax(logits)
    v_loss = 0.5 * np.mean((V - targets) ** 2)
    q_loss = 0.5 * np.mean((q_taken - targets) ** 2)
    ce = -np.mean(logp[rows, actions])

    dout = np.zeros_like(out)
    A = model.num_actions
    dout[:, 0] = (V - targets) / n
    dout[rows, 1 + actions] = (q_taken - targets) / n
    d_logits = np.exp(logp)
    d_logits[rows, actions] -= 1.0
    dout[:, 1 + A:] = policy_weight * d_logits / n
    grads = model.net.backward(cache, dout)
    report = {"v_loss": float(v_loss), "q_loss": float(q_loss), "policy_ce": float(ce),
              "loss": float(v_loss + q_loss + policy_weight * ce)}
    return report, grads


class NicenessLearner:
    """A niceness network with its own RMSProp optimiser."""

    def __init__(self, model: NicenessNetwork, learning_rate: float, decay: float = 0.99,
                 epsilon: float = 1e-5, max_grad_norm: float | None = 40.0):
        self.model = model
        self.optimizer = RMSProp(model.params, learning_rate, decay, epsilon, max_grad_norm)

    def td_lambda_update(self, features, actions, rewards, bootstrap_value, discount: float, lam: float):
        """One TD(lambda) step on a time-major innovator unroll.

        ``features`` is (T, B, D) innovator state features, ``actions`` (T, B) the
        innovator's actions, ``rewards`` (T, B) the imitator's environment rewards
        and ``bootstrap_value`` (B,) the value after the last step (0 if terminal).
        """
        features = np.asarray(features, dtype=np.float64)
        actions = np.asarray(actions)
        rewards = np.asarray(rewards, dtype=np.float64)
        if features.shape[:2] != actions.shape or actions.shape != rewards.shape:
            raise ArityError(
                f"misaligned unroll: features {features.shape}, actions {actions.shape}, rewards {rewards.shape}"
            )
        T, B = actions.shape
        flat = features.reshape(T * B, -1)
        V, _, _ = self.model.forward(flat)
        targets = lambda_returns(rewards, V.reshape(T, B), bootstrap_value, discount, lam)
        report, grads = niceness_loss(self.model, flat, actions.reshape(-1), targets.reshape(-1))
        report["grad_norm"] = self.optimizer.step(self.model.params, grads)
        return report


def td_lambda_update(learner: NicenessLearner, features, actions, rewards, bootstrap_value,
                     discount: float, lam: float):
    report = learner.td_lambda_update(features, actions, rewards, bootstrap_value, discount, lam)
    return learner.model.params, report


def kl_imitation_loss(im_logits, inv_logits, c_kl: float):
    """``c_kl * mean KL(pi_im || pi_inv_hat)`` and its gradient with respect to ``im_logits``.

    ``inv_logits`` is treated as a constant.
    """
    im_logits = np.atleast_2d(np.asarray(im_logits, dtype=np.float64))
    inv_logits = np.atleast_2d(np.asarray(inv_logits, dtype=np.float64))
    if im_logits.shape != inv_logits.shape:
        raise ArityError(f"action counts differ: {im_logits.shape} vs {inv_logits.shape}")
    logp = log_softmax(im_logits)
    logq = log_softmax(inv_logits)
    p = np.exp(logp)
    kl = (p * (logp - logq)).sum(axis=1)
    n = len(kl)
    grad = c_kl * p * (logp - logq - kl[:, None]) / n
    return float(c_kl * kl.mean()), grad
