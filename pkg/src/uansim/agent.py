"""Learning stack: recurrent Q-network, replay, mixing, TD updates, training.

One parameter set is shared by all agents; each agent evolves its own hidden
state. The network and its reverse-mode gradients are written out explicitly
in numpy so the TD-loss gradient can be checked against finite differences.
Backpropagation is truncated at one step: the hidden state stored with each
transition is treated as a constant input (full-sequence recomputation is
available behind TrainerConfig.recompute_hidden).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .env import PowerAllocationEnv, observation_dim
from .world import WorldConfig

PARAM_NAMES = (
    "w_in", "b_in",
    "w_z", "u_z", "b_z",
    "w_r", "u_r", "b_r",
    "w_n", "u_n", "b_n",
    "w_out", "b_out",
)


@dataclass
class QNetworkParams:
    """Weights of the shared per-agent network: affine, gated recurrent, affine."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_n: np.ndarray
    u_n: np.ndarray
    b_n: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def obs_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_actions(self) -> int:
        return self.w_out.shape[1]

    def as_list(self) -> list:
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "QNetworkParams":
        return QNetworkParams(*[a.copy() for a in self.as_list()])


def init_params(obs_dim: int, hidden_size: int, n_actions: int,
                rng: np.random.Generator) -> QNetworkParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
    def affine(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        return w, b

    w_in, b_in = affine(obs_dim, hidden_size)
    gates = {}
    for gate in "zrn":
        w, b = affine(hidden_size, hidden_size)
        u, _ = affine(hidden_size, hidden_size)
        gates[gate] = (w, u, b)
    w_out, b_out = affine(hidden_size, n_actions)
    return QNetworkParams(
        w_in, b_in,
        *gates["z"], *gates["r"], *gates["n"],
        w_out, b_out,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward(params: QNetworkParams, obs: np.ndarray, hidden: np.ndarray,
            return_cache: bool = False):
    """One recurrent step: q-values and the new hidden state.

    obs (R, D) and hidden (R, H) may carry any number of rows; single
    vectors are promoted to one row and squeezed back on return.
    """
    single = obs.ndim == 1
    o = np.atleast_2d(obs)
    h = np.atleast_2d(hidden)
    x = np.maximum(0.0, o @ params.w_in + params.b_in)
    z = _sigmoid(x @ params.w_z + h @ params.u_z + params.b_z)
    r = _sigmoid(x @ params.w_r + h @ params.u_r + params.b_r)
    hu = h @ params.u_n
    n = np.tanh(x @ params.w_n + r * hu + params.b_n)
    h_new = (1.0 - z) * n + z * h
    q = h_new @ params.w_out + params.b_out
    if single:
        q, h_new = q[0], h_new[0]
    if return_cache:
        return q, h_new, {"o": o, "h": h, "x": x, "z": z, "r": r, "hu": hu, "n": n,
                          "h_new": np.atleast_2d(h_new)}
    return q, h_new


def _backward(params: QNetworkParams, cache: dict, gq: np.ndarray) -> list:
    """Gradients of every parameter given dLoss/dq, truncated at this step."""
    o, h, x = cache["o"], cache["h"], cache["x"]
    z, r, hu, n = cache["z"], cache["r"], cache["hu"], cache["n"]
    h_new = cache["h_new"]

    g_w_out = h_new.T @ gq
    g_b_out = gq.sum(axis=0)
    gh_new = gq @ params.w_out.T

    gz = gh_new * (h - n)
    gn = gh_new * (1.0 - z)
    gn_pre = gn * (1.0 - n * n)
    gr = gn_pre * hu
    gz_pre = gz * z * (1.0 - z)
    gr_pre = gr * r * (1.0 - r)

    g_w_n = x.T @ gn_pre
    g_u_n = h.T @ (gn_pre * r)
    g_b_n = gn_pre.sum(axis=0)
    g_w_z = x.T @ gz_pre
    g_u_z = h.T @ gz_pre
    g_b_z = gz_pre.sum(axis=0)
    g_w_r = x.T @ gr_pre
    g_u_r = h.T @ gr_pre
    g_b_r = gr_pre.sum(axis=0)

    gx = gz_pre @ params.w_z.T + gr_pre @ params.w_r.T + gn_pre @ params.w_n.T
    gx *= x > 0.0
    g_w_in = o.T @ gx
    g_b_in = gx.sum(axis=0)

    return [g_w_in, g_b_in, g_w_z, g_u_z, g_b_z, g_w_r, g_u_r, g_b_r,
            g_w_n, g_u_n, g_b_n, g_w_out, g_b_out]


def act(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy pick; exact argmax breaks ties toward the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def vdn_mix(per_agent_q_chosen) -> float:
    """Team action value: sum of the agents' chosen action values."""
    return float(np.sum(per_agent_q_chosen))


def epsilon_schedule(episodes_done: int, cfg: "TrainerConfig") -> float:
    """Linear decay from eps_start to eps_end over the annealing window."""
    frac = min(1.0, episodes_done / cfg.eps_anneal_episodes)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def sync_target(params: QNetworkParams) -> QNetworkParams:
    return params.copy()


@dataclass
class Transition:
    """One stored step: joint views, executed joint action, shared reward."""

    obs: np.ndarray
    actions: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    hidden: np.ndarray
    next_hidden: np.ndarray
    episode_id: int = 0
    step: int = 0


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform batch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: list = []
        self._pos = 0
        self._episode_index: dict = {}

    def __len__(self) -> int:
        return len(self._data)

    def add(self, tr: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(tr)
        else:
            old = self._data[self._pos]
            steps = self._episode_index.get(old.episode_id)
            if steps is not None:
                steps.pop(old.step, None)
                if not steps:
                    self._episode_index.pop(old.episode_id, None)
            self._data[self._pos] = tr
            self._pos = (self._pos + 1) % self.capacity
        self._episode_index.setdefault(tr.episode_id, {})[tr.step] = tr

    def sample(self, rng: np.random.Generator, batch_size: int) -> list:
        """Uniform sample without replacement within the batch."""
        if batch_size > len(self._data):
            raise ValueError("not enough transitions buffered")
        idx = rng.choice(len(self._data), size=batch_size, replace=False)
        return [self._data[i] for i in idx]

    def episode_prefix(self, episode_id: int, step: int) -> list:
        """Joint observations of the stored steps before `step`, in order."""
        steps = self._episode_index.get(episode_id, {})
        return [steps[s].obs for s in sorted(steps) if s < step]


@dataclass
class TrainerConfig:
    lr: float = 0.0005
    batch: int = 32
    gamma: float = 0.99
    target_sync_episodes: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_episodes: int = 100000
    total_episodes: int = 1000
    buffer_capacity: int = 10000
    hidden_size: int = 64
    updates_per_episode: int = 1
    recompute_hidden: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params: QNetworkParams):
        self.m = [np.zeros_like(a) for a in params.as_list()]
        self.v = [np.zeros_like(a) for a in params.as_list()]
        self.t = 0

    def step(self, params: QNetworkParams, grads: list, cfg: TrainerConfig) -> None:
        self.t += 1
        b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        for i, (name, g) in enumerate(zip(PARAM_NAMES, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            arr = getattr(params, name)
            arr -= cfg.lr * m_hat / (np.sqrt(v_hat) + eps)


def td_targets(target_params: QNetworkParams, batch: list, gamma: float) -> np.ndarray:
    """y_j = r_j for terminal transitions, else r_j + gamma * max_a Q(.;theta-)."""
    n_agents = batch[0].obs.shape[0]
    next_obs = np.concatenate([tr.next_obs for tr in batch])
    next_hidden = np.concatenate([tr.next_hidden for tr in batch])
    qn, _ = forward(target_params, next_obs, next_hidden)
    best = qn.max(axis=1).reshape(len(batch), n_agents).sum(axis=1)
    rewards = np.array([tr.reward for tr in batch])
    done = np.array([tr.done for tr in batch])
    return rewards + gamma * best * ~done


def td_loss_and_grads(params: QNetworkParams, batch: list, targets: np.ndarray):
    """Squared TD error summed over the batch, plus its parameter gradients."""
    n_agents = batch[0].obs.shape[0]
    obs = np.concatenate([tr.obs for tr in batch])
    hidden = np.concatenate([tr.hidden for tr in batch])
    actions = np.concatenate([tr.actions for tr in batch])
    q, _, cache = forward(params, obs, hidden, return_cache=True)
    rows = np.arange(len(batch) * n_agents)
    chosen = q[rows, actions].reshape(len(batch), n_agents)
    q_total = chosen.sum(axis=1)
    diff = targets - q_total
    loss = float(diff @ diff)
    if not np.isfinite(loss):
        return loss, None
    gq = np.zeros_like(q)
    gq[rows, actions] = np.repeat(-2.0 * diff, n_agents)
    return loss, _backward(params, cache, gq)


def td_update(params: QNetworkParams, target_params: QNetworkParams, batch: list,
              cfg: TrainerConfig, opt: AdamState) -> float:
    """One Adam step on the TD loss over a sampled batch; returns the loss."""
    if not batch:
        raise ValueError("empty batch")
    targets = td_targets(target_params, batch, cfg.gamma)
    loss, grads = td_loss_and_grads(params, batch, targets)
    if grads is None:
        raise RuntimeError(f"non-finite TD loss {loss!r}; diverged parameters?")
    opt.step(params, grads, cfg)
    return loss


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: QNetworkParams, meta: dict) -> None:
    """Binary checkpoint with an embedded layout descriptor; round-trips exactly."""
    descriptor = dict(meta)
    descriptor.update(
        version=CHECKPOINT_VERSION,
        obs_dim=params.obs_dim,
        hidden_size=params.hidden_size,
        n_actions=params.n_actions,
    )
    arrays = {name: getattr(params, name) for name in PARAM_NAMES}
    np.savez(path, meta=json.dumps(descriptor, sort_keys=True), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = QNetworkParams(*[data[name] for name in PARAM_NAMES])
    return params, meta


# -- policies and training ----------------------------------------------------

class NetPolicy:
    """Greedy (or epsilon-greedy) execution of a trained network.

    Each agent runs the same parameters but keeps its own hidden state.
    """

    def __init__(self, params: QNetworkParams, epsilon: float = 0.0,
                 rng: np.random.Generator | None = None):
        self.params = params
        self.epsilon = epsilon
        self.rng = rng or np.random.default_rng(0)
        self.hidden = None

    def begin_episode(self, observations, env) -> None:
        self.hidden = np.zeros((len(observations), self.params.hidden_size))

    def act(self, observations, env) -> list:
        q, self.hidden = forward(self.params, np.stack(observations), self.hidden)
        return [act(q[i], self.epsilon, self.rng) for i in range(len(observations))]


@dataclass
class TrainResult:
    best_params: QNetworkParams
    final_params: QNetworkParams
    best_mean_reward: float
    history: list = field(default_factory=list)


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic child seed for (master, path...) streams."""
    ss = np.random.SeedSequence([master_seed, *path])
    return int(ss.generate_state(1, np.uint64)[0])


class Trainer:
    """Episode loop: act epsilon-greedily, buffer transitions, update at episode end.

    The curriculum object owns the malfunction-rate schedule and periodic
    checkpoint evaluation; pass None to train on perfect environments.
    """

    def __init__(self, world_config: WorldConfig, trainer_config: TrainerConfig,
                 reward_kind: str, curriculum=None, seed: int = 0):
        self.world_config = world_config
        self.cfg = trainer_config
        self.reward_kind = reward_kind
        self.curriculum = curriculum
        self.seed = seed
        self.rng = np.random.default_rng(derive_seed(seed, 0))
        self.obs_dim = observation_dim(world_config.n_pairs)
        self.params = init_params(self.obs_dim, trainer_config.hidden_size,
                                  len(world_config.power_levels_w), self.rng)
        self.target_params = sync_target(self.params)
        self.opt = AdamState(self.params)
        self.buffer = ReplayBuffer(trainer_config.buffer_capacity)
        self.best_params = self.params.copy()
        self.best_mean_reward = -np.inf
        self.history: list = []
        self.last_trace: list = []

    def train(self) -> TrainResult:
        for episode in range(1, self.cfg.total_episodes + 1):
            eps_mal = self.curriculum.eps_for_episode(episode) if self.curriculum else 0.0
            eps_greedy = epsilon_schedule(episode - 1, self.cfg)
            episode_reward = self._run_episode(episode, eps_mal, eps_greedy)
            loss = self._learn(episode)
            if episode % self.cfg.target_sync_episodes == 0:
                self.target_params = sync_target(self.params)
            if self.curriculum is not None and self.curriculum.should_eval(episode):
                epoch = self.curriculum.evaluate(episode, self.params)
                if epoch.mean_reward > self.best_mean_reward:
                    self.best_mean_reward = epoch.mean_reward
                    self.best_params = self.params.copy()
            self.history.append(
                (episode, eps_mal, eps_greedy, episode_reward, loss)
            )
        if self.curriculum is not None and self.curriculum.returns_final_params:
            best = self.params.copy()
        elif np.isfinite(self.best_mean_reward):
            best = self.best_params
        else:
            best = self.params.copy()
        return TrainResult(best, self.params.copy(), self.best_mean_reward, self.history)

    def _run_episode(self, episode: int, eps_mal: float, eps_greedy: float) -> float:
        env = PowerAllocationEnv(
            self.world_config.with_malfunction_rate(eps_mal), self.reward_kind,
            collect_trace=episode == self.cfg.total_episodes,
        )
        observations = env.reset(derive_seed(self.seed, 1, episode))
        n = self.world_config.n_pairs
        hidden = np.zeros((n, self.cfg.hidden_size))
        done = False
        step = 0
        total = 0.0
        while not done:
            obs_stack = np.stack(observations)
            q, next_hidden = forward(self.params, obs_stack, hidden)
            chosen = [act(q[i], eps_greedy, self.rng) for i in range(n)]
            outcome = env.step(chosen)
            next_stack = np.stack(outcome.next_observations)
            self.buffer.add(
                Transition(
                    obs=obs_stack,
                    actions=np.array(outcome.info["actions_executed"]),
                    reward=outcome.reward,
                    next_obs=next_stack,
                    done=outcome.done,
                    hidden=hidden,
                    next_hidden=next_hidden,
                    episode_id=episode,
                    step=step,
                )
            )
            observations = outcome.next_observations
            hidden = next_hidden
            done = outcome.done
            step += 1
            total += outcome.reward
        if env.collect_trace:
            self.last_trace = env.trace
        return total

    def _learn(self, episode: int):
        if len(self.buffer) < self.cfg.batch:
            return None
        loss = None
        for _ in range(self.cfg.updates_per_episode):
            batch = self.buffer.sample(self.rng, self.cfg.batch)
            if self.cfg.recompute_hidden:
                batch = [self._with_recomputed_hidden(tr) for tr in batch]
            loss = td_update(self.params, self.target_params, batch, self.cfg, self.opt)
        return loss

    def _with_recomputed_hidden(self, tr: Transition) -> Transition:
        """Rebuild hidden states by replaying the stored episode prefix."""
        prefix = self.buffer.episode_prefix(tr.episode_id, tr.step)
        n = tr.obs.shape[0]
        h = np.zeros((n, self.cfg.hidden_size))
        for obs in prefix:
            _, h = forward(self.params, obs, h)
        ht = np.zeros((n, self.cfg.hidden_size))
        for obs in prefix:
            _, ht = forward(self.target_params, obs, ht)
        _, ht = forward(self.target_params, tr.obs, ht)
        return Transition(tr.obs, tr.actions, tr.reward, tr.next_obs, tr.done,
                          h, ht, tr.episode_id, tr.step)
