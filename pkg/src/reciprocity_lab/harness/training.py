"""Single-context, deterministic rollout and training loop for one seed.

``num_envs`` copies of the environment run in lock-step.  Each episode is cut
into unrolls of ``unroll_length`` steps; after every unroll each learning agent
takes one actor-critic step and each niceness network one TD(lambda) step.
"""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from ..envs import make_env
from ..errors import NumericalFault
from ..learner import Learner, PolicyNetwork, compute_returns_and_advantages, entropy, sample_actions
from ..nn import ConvSpec, load_into, save_checkpoint
from ..reciprocity import (
    NICENESS_NETWORK,
    NicenessLearner,
    NicenessNetwork,
    action_niceness,
    decay_traces,
    kl_imitation_loss,
    niceness_increments,
    normalize_intrinsic,
)
from .config import IMITATOR, ExperimentConfig
from .metrics import equality, sustainability

log = logging.getLogger(__name__)


@dataclasses.dataclass
class Agent:
    agent_id: int
    kind: str
    policy: PolicyNetwork
    learner: Learner | None  # None for frozen agents
    source: str | None = None  # niceness source, imitators only
    target: int | None = None  # imitated innovator
    niceness: NicenessLearner | None = None

    @property
    def is_imitator(self) -> bool:
        return self.kind == IMITATOR

    @property
    def uses_network(self) -> bool:
        return self.niceness is not None


class Trainer:
    def __init__(self, config: ExperimentConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = int(seed)
        self.env = make_env(config.environment)
        init_ss, env_ss, act_ss, self._eval_ss = np.random.SeedSequence(self.seed).spawn(4)
        self._env_rng = np.random.default_rng(env_ss)
        self._act_rng = np.random.default_rng(act_ss)
        init_rng = np.random.default_rng(init_ss)
        self.agents = [self._build_agent(i, init_rng) for i in range(len(config.roster))]
        self.episodes_done = 0

    # ------------------------------------------------------------ building
    def _conv(self) -> ConvSpec | None:
        channels = self.config.learner.conv_channels
        if channels <= 0:
            return None
        h, w = self.env.observation_grid
        return ConvSpec(self.env.observation_planes, h, w, channels)

    def _trace_features(self, agent_id: int) -> bool:
        return self.config.roster[agent_id].kind == IMITATOR and self.config.reciprocity.trace_features

    def architecture(self, agent_id: int, head: str = "policy") -> dict:
        """Identity of a network's input/output layout; stored in checkpoints and checked on load."""
        lc = self.config.learner
        size = self.env.observation_size
        if head == "policy" and self._trace_features(agent_id):
            size += 2
        return {
            "env": self.config.env_name,
            "head": head,
            "input_size": size,
            "num_actions": self.env.num_actions,
            "hidden_sizes": list(lc.hidden_sizes),
            "conv_channels": lc.conv_channels,
        }

    def _build_agent(self, i: int, rng: np.random.Generator) -> Agent:
        cfg = self.config
        spec = cfg.roster[i]
        arch = self.architecture(i)
        policy = PolicyNetwork(arch["input_size"], self.env.num_actions, cfg.learner.hidden_sizes,
                               self._conv(), rng)
        if spec.checkpoint:
            load_into(policy.net, spec.checkpoint, arch)
        frozen = not spec.learning or (spec.kind != IMITATOR and cfg.ablation.frozen_innovator_copies)
        learner = None if frozen else Learner(policy, cfg.learner, spec.learning_rate)
        agent = Agent(i, spec.kind, policy, learner)
        if spec.kind == IMITATOR:
            agent.source = cfg.source_of(i)
            agent.target = cfg.target_of(i)
            if agent.source == NICENESS_NETWORK:
                model = NicenessNetwork(self.env.observation_size, self.env.num_actions,
                                        cfg.learner.hidden_sizes, self._conv(), rng)
                lc = cfg.learner
                agent.niceness = NicenessLearner(model, cfg.reciprocity.nn_learning_rate,
                                                 lc.rmsprop_decay, lc.rmsprop_epsilon, lc.max_grad_norm)
        return agent

    # ---------------------------------------------------------- checkpoints
    def save_checkpoints(self, directory) -> list[Path]:
        directory = Path(directory)
        paths = []
        for agent in self.agents:
            meta = {"seed": self.seed, "episodes": self.episodes_done, "kind": agent.kind}
            paths.append(save_checkpoint(directory / f"agent_{agent.agent_id}.npz", agent.policy.params,
                                         self.architecture(agent.agent_id), meta))
            if agent.niceness is not None:
                paths.append(save_checkpoint(directory / f"agent_{agent.agent_id}_niceness.npz",
                                             agent.niceness.model.params,
                                             self.architecture(agent.agent_id, "niceness"), meta))
        return paths

    def load_checkpoints(self, directory) -> None:
        directory = Path(directory)
        for agent in self.agents:
            load_into(agent.policy.net, directory / f"agent_{agent.agent_id}.npz",
                      self.architecture(agent.agent_id))
            if agent.niceness is not None:
                load_into(agent.niceness.model.net, directory / f"agent_{agent.agent_id}_niceness.npz",
                          self.architecture(agent.agent_id, "niceness"))

    # -------------------------------------------------------------- rollout
    def run_batch(self, learn: bool = True, rng: np.random.Generator | None = None,
                  env_seed: int | None = None, record: bool = False, render=None):
        """Play one episode in each of the ``num_envs`` copies.

        Returns ``(episodes, log)``: one summary dict per episode, and (with
        ``record``) per-step arrays for the probes.
        """
        cfg = self.config
        rc = cfg.reciprocity
        env = self.env
        rng = rng if rng is not None else self._act_rng
        if env_seed is None:
            env_seed = int(self._env_rng.integers(2 ** 63))
        B = cfg.learner.num_envs
        n = env.num_agents
        L = cfg.environment.episode_length
        world = env.reset(env_seed, B)
        agents = self.agents
        imitators = [a for a in agents if a.is_imitator]
        networked = [a for a in imitators if a.uses_network]

        metric = np.zeros((B, n))
        nn_im = {a.agent_id: np.zeros(B) for a in networked}
        nn_inv = {a.agent_id: np.zeros(B) for a in networked}
        acc = _Accumulator(B, n, L, [a.agent_id for a in networked])
        steps = {"metric": [], "actions": [], "wrong_pickup": [], "own_pickup": [],
                 "nn_inv": [], "nn_im": [], "nn_inv_q": [], "nn_inv_v": []} if record else None

        base = env.observe_all(world)
        while not world.done:
            T = min(cfg.learner.unroll_length, L - world.step_index)
            buf = _Unroll(T, B, n, base.shape[-1])
            for t in range(T):
                feats = self._trace_feature_block(metric, nn_im, nn_inv)
                actions = np.empty((B, n), dtype=np.int64)
                for a in agents:
                    x = self._policy_input(a.agent_id, base, feats)
                    logits, values = a.policy(x)
                    actions[:, a.agent_id] = sample_actions(logits, rng)
                    buf.values[t, :, a.agent_id] = values
                    acc.entropy[:, a.agent_id] += entropy(logits)
                inc_inv, inc_im, q_inv, v_inv = {}, {}, {}, {}
                for a in networked:
                    model = a.niceness.model
                    v_inv[a.agent_id], q_inv[a.agent_id], _ = model.forward(base[:, a.target])
                    inc_inv[a.agent_id] = action_niceness(v_inv[a.agent_id], q_inv[a.agent_id], actions[:, a.target])
                    inc_im[a.agent_id] = niceness_increments(model, base[:, a.agent_id], actions[:, a.agent_id])
                if render is not None:
                    render(env.render_ascii(world))
                buf.base[t] = base
                buf.feats[t] = feats
                buf.actions[t] = actions
                step_index = world.step_index
                world, rewards, done = env.step(world, actions)
                events = world.events
                increments = events.get("niceness", np.zeros((B, n)))
                mask = events.get("niceness_event") if rc.decay_on_events_only else None
                metric = decay_traces(metric, increments, rc.decay, mask)
                for a in networked:
                    i = a.agent_id
                    nn_inv[i] = decay_traces(nn_inv[i], inc_inv[i], rc.decay)
                    nn_im[i] = decay_traces(nn_im[i], inc_im[i], rc.decay)
                r_int = np.zeros((B, n))
                for a in imitators:
                    i = a.agent_id
                    if a.uses_network:
                        r_int[:, i] = -(nn_im[i] - nn_inv[i]) ** 2
                    else:
                        r_int[:, i] = -(metric[:, i] - metric[:, a.target]) ** 2
                buf.rewards[t] = rewards
                buf.r_int[t] = r_int
                acc.add(step_index, rewards, r_int, metric, events, nn_im, nn_inv)
                if record:
                    steps["metric"].append(increments.copy())
                    steps["actions"].append(actions.copy())
                    steps["wrong_pickup"].append(events.get("wrong_pickup", np.zeros((B, n), bool)).copy())
                    steps["own_pickup"].append(events.get("own_pickup", np.zeros((B, n), bool)).copy())
                    if networked:
                        steps["nn_inv"].append(np.stack([inc_inv[a.agent_id] for a in networked], 1))
                        steps["nn_im"].append(np.stack([inc_im[a.agent_id] for a in networked], 1))
                        steps["nn_inv_q"].append(np.stack([q_inv[a.agent_id] for a in networked], 1))
                        steps["nn_inv_v"].append(np.stack([v_inv[a.agent_id] for a in networked], 1))
                base = env.observe_all(world)
            if learn:
                self._learn(buf, base, metric, nn_im, nn_inv, done)
        if learn:
            self.episodes_done += B
        record_log = None
        if record:
            record_log = {k: np.stack(v, axis=1) for k, v in steps.items() if v}  # (B, L, ...)
            record_log["networked"] = np.array([a.agent_id for a in networked], dtype=np.int64)
        return acc.episodes(self.config, env, imitators), record_log

    def _trace_feature_block(self, metric, nn_im, nn_inv) -> np.ndarray:
        """(B, n, 2) [own trace, imitated innovator's trace] as seen by each imitator."""
        B, n = metric.shape
        feats = np.zeros((B, n, 2))
        for a in self.agents:
            if not a.is_imitator:
                continue
            i = a.agent_id
            if a.uses_network:
                feats[:, i, 0], feats[:, i, 1] = nn_im[i], nn_inv[i]
            else:
                feats[:, i, 0], feats[:, i, 1] = metric[:, i], metric[:, a.target]
        return feats

    def _policy_input(self, agent_id: int, base: np.ndarray, feats: np.ndarray) -> np.ndarray:
        x = base[..., agent_id, :]
        if self._trace_features(agent_id):
            x = np.concatenate([x, feats[..., agent_id, :]], axis=-1)
        return x

    # ------------------------------------------------------------- learning
    def _learn(self, buf: "_Unroll", next_base, metric, nn_im, nn_inv, done: bool) -> None:
        cfg = self.config
        rc, lc, ab = cfg.reciprocity, cfg.learner, cfg.ablation
        T, B = buf.actions.shape[:2]
        next_feats = self._trace_feature_block(metric, nn_im, nn_inv)
        for a in self.agents:
            if a.learner is None:
                continue
            i = a.agent_id
            obs = self._policy_input(i, buf.base, buf.feats).reshape(T * B, -1)
            rewards = buf.rewards[:, :, i]
            if a.is_imitator and not ab.kl_only and rc.c_im > 0:
                rewards = normalize_intrinsic(rewards, buf.r_int[:, :, i], rc.c_im, rc.epsilon, rc.normalization)
            bootstrap = np.zeros(B) if done else a.policy(self._policy_input(i, next_base, next_feats))[1]
            returns, adv = compute_returns_and_advantages(rewards, buf.values[:, :, i], bootstrap, lc.discount)
            extra = None
            if a.uses_network and rc.c_kl > 0 and not ab.intrinsic_only:
                _, _, inv_logits = a.niceness.model.forward(buf.base[:, :, i].reshape(T * B, -1))
                extra = _KLTerm(inv_logits, rc.c_kl)
            try:
                a.learner.update(obs, buf.actions[:, :, i].reshape(-1), returns.reshape(-1), adv.reshape(-1), extra)
            except NumericalFault as exc:
                raise NumericalFault(f"agent {i}, episode {self.episodes_done}: {exc}") from exc
        for a in self.agents:
            if a.niceness is None or a.learner is None:
                continue
            tgt = a.target
            if done:
                boot = np.zeros(B)
            else:
                boot = a.niceness.model.forward(next_base[:, tgt])[0]
            try:
                a.niceness.td_lambda_update(buf.base[:, :, tgt], buf.actions[:, :, tgt],
                                            buf.rewards[:, :, a.agent_id], boot, rc.nn_discount, rc.nn_lambda)
            except NumericalFault as exc:
                raise NumericalFault(f"niceness network of agent {a.agent_id}: {exc}") from exc

    # ------------------------------------------------------------ evaluation
    def evaluate(self, episodes: int, record: bool = False, render=None):
        """Frozen-policy rollouts from a dedicated random stream; returns (episode dicts, logs)."""
        B = self.config.learner.num_envs
        ss = self._eval_ss.spawn(1)[0]
        rng = np.random.default_rng(ss)
        out, logs = [], []
        for _ in range(max(episodes, 0) // B):
            env_seed = int(rng.integers(2 ** 63))
            eps, rec = self.run_batch(learn=False, rng=rng, env_seed=env_seed, record=record, render=render)
            render = None  # only the first batch is drawn
            out.extend(eps)
            if rec is not None:
                logs.append(rec)
        return out, logs


class _KLTerm:
    def __init__(self, inv_logits, c_kl):
        self.inv_logits, self.c_kl = inv_logits, c_kl

    def __call__(self, logits):
        return kl_imitation_loss(logits, self.inv_logits, self.c_kl)


class _Unroll:
    def __init__(self, T, B, n, obs_size):
        self.base = np.empty((T, B, n, obs_size))
        self.feats = np.empty((T, B, n, 2))
        self.actions = np.empty((T, B, n), dtype=np.int64)
        self.values = np.empty((T, B, n))
        self.rewards = np.empty((T, B, n))
        self.r_int = np.empty((T, B, n))


class _Accumulator:
    """Per-episode sums over one batch of episodes."""

    def __init__(self, B, n, L, networked):
        self.L = L
        z = lambda: np.zeros((B, n))  # noqa: E731
        self.returns, self.abs_int, self.trace_sum, self.entropy = z(), z(), z(), z()
        self.own, self.wrong, self.cleaned, self.apples, self.sus_sum = z(), z(), z(), z(), z()
        self.time_sum = np.zeros(B)
        self.time_count = np.zeros(B)
        self.nn_im = {i: np.zeros(B) for i in networked}
        self.nn_inv = {i: np.zeros(B) for i in networked}

    def add(self, step_index, rewards, r_int, metric, events, nn_im, nn_inv):
        self.returns += rewards
        self.abs_int += np.abs(r_int)
        self.trace_sum += metric
        if "own_pickup" in events:
            self.own += events["own_pickup"]
            self.wrong += events["wrong_pickup"]
        if "cleaned" in events:
            self.cleaned += events["cleaned"]
        if "apples_eaten" in events:
            eaten = events["apples_eaten"]
            self.apples += eaten
            count = eaten.sum(axis=1)
            self.time_count += count
            self.time_sum += count * step_index
        if "sus" in events:
            self.sus_sum += events["sus"]
        for i in self.nn_im:
            self.nn_im[i] += nn_im[i]
            self.nn_inv[i] += nn_inv[i]

    def episodes(self, config, env, imitators) -> list[dict]:
        L = self.L
        out = []
        n = self.returns.shape[1]
        for b in range(self.returns.shape[0]):
            eq, eq_flag = equality(self.returns[b]) if n >= 2 else (1.0, False)
            ep = {
                "returns": self.returns[b].copy(),
                "collective_return": float(self.returns[b].sum()),
                "equality": eq,
                "equality_flagged": eq_flag,
                "entropy": self.entropy[b] / L,
                "niceness_mean": self.trace_sum[b] / L,
                "mean_abs_intrinsic": {a.agent_id: self.abs_int[b, a.agent_id] / L for a in imitators},
            }
            if env.name == "coins":
                ep["own_pickups"] = self.own[b].copy()
                ep["wrong_pickups"] = self.wrong[b].copy()
            if env.name == "cleanup":
                ep["contributions"] = self.cleaned[b].copy()
            if env.name in ("cleanup", "harvest"):
                ep["apples"] = self.apples[b].copy()
            if env.name == "harvest":
                if self.time_count[b]:
                    ep["sustainability"] = float(self.time_sum[b] / self.time_count[b] / L)
                    ep["sustainability_empty"] = False
                else:
                    ep["sustainability"], ep["sustainability_empty"] = sustainability([], L)
                ep["sus_total"] = self.sus_sum[b].copy()
            ep["nn_niceness_im"] = {i: self.nn_im[i][b] / L for i in self.nn_im}
            ep["nn_niceness_inv"] = {i: self.nn_inv[i][b] / L for i in self.nn_inv}
            out.append(ep)
        return out


def summarize(episodes: list[dict], n_agents: int) -> dict:
    """Average a window of episode summaries into one metrics row (fixed column order)."""
    if not episodes:
        raise ValueError("summarize needs at least one episode")
    row: dict = {}
    mean = lambda key: float(np.mean([e[key] for e in episodes]))  # noqa: E731
    row["collective_return"] = mean("collective_return")
    returns = np.array([e["returns"] for e in episodes])
    for k in range(n_agents):
        row[f"return_{k}"] = float(returns[:, k].mean())
    row["equality"] = mean("equality")
    row["equality_flagged"] = mean("equality_flagged")
    first = episodes[0]
    if "own_pickups" in first:
        own = np.array([e["own_pickups"] for e in episodes])
        wrong = np.array([e["wrong_pickups"] for e in episodes])
        total = own.sum() + wrong.sum()
        row["own_coin_fraction"] = float(own.sum() / total) if total else 0.0
        for k in range(n_agents):
            row[f"own_pickups_{k}"] = float(own[:, k].mean())
            row[f"wrong_pickups_{k}"] = float(wrong[:, k].mean())
    if "contributions" in first:
        contrib = np.array([e["contributions"] for e in episodes])
        row["contributions_total"] = float(contrib.sum(axis=1).mean())
        for k in range(n_agents):
            row[f"contributions_{k}"] = float(contrib[:, k].mean())
    if "apples" in first:
        apples = np.array([e["apples"] for e in episodes])
        for k in range(n_agents):
            row[f"apples_{k}"] = float(apples[:, k].mean())
    if "sustainability" in first:
        row["sustainability"] = mean("sustainability")
        row["sustainability_empty"] = mean("sustainability_empty")
    ent = np.array([e["entropy"] for e in episodes])
    nice = np.array([e["niceness_mean"] for e in episodes])
    for k in range(n_agents):
        row[f"entropy_{k}"] = float(ent[:, k].mean())
        row[f"niceness_{k}"] = float(nice[:, k].mean())
    for i in first["mean_abs_intrinsic"]:
        row[f"mean_abs_intrinsic_{i}"] = float(np.mean([e["mean_abs_intrinsic"][i] for e in episodes]))
    for i in first["nn_niceness_im"]:
        row[f"nn_niceness_im_{i}"] = float(np.mean([e["nn_niceness_im"][i] for e in episodes]))
        row[f"nn_niceness_inv_{i}"] = float(np.mean([e["nn_niceness_inv"][i] for e in episodes]))
    return row
