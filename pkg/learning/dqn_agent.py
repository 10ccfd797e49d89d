"""
Double-DQN power-boost agent.

The Q-network is a plain numpy MLP (affine + ReLU hidden layers, identity
output) with a hand-written backward pass. Training follows the usual
Double-DQN recipe: uniform replay, Huber TD loss against targets where the
policy network picks the next action and the target network evaluates it,
global-norm gradient clipping and Adam.

Actions: 0 = boost the serving gNB, 1 = do nothing.
"""

import logging
import math
import struct
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import CheckpointError, ConfigError, NumericalError

logger = logging.getLogger(__name__)

ACTION_BOOST = 0
ACTION_NOTHING = 1
N_ACTIONS = 2
STATE_DIM = 10

# (name, lower, upper) in state-vector order
FEATURE_BOUNDS: Tuple[Tuple[str, float, float], ...] = (
    ("rsrp_serv", -120.0, -30.0),
    ("rsrp_targ", -120.0, -30.0),
    ("ue_speed", 0.0, 30.0),
    ("t_exec", 0.0, 2000.0),
    ("t_prep", 0.0, 2000.0),
    ("o_exec", 0.0, 10.0),
    ("o_prep", 0.0, 10.0),
    ("t310", 0.0, 2000.0),
    ("n310", 0.0, 10.0),
    ("rsrp_rlf", -120.0, -30.0),
)

CHECKPOINT_MAGIC = b"CHODQN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<6sHI")
_COUNTERS = struct.Struct("<QQdddd")

# spawn keys of the agent's RNG streams
_STREAM_INIT = 0
_STREAM_EXPLORE = 1
_STREAM_REPLAY = 2


@dataclass(frozen=True)
class RawFeatures:
    """Un-normalized observation handed to the agent on an out-of-sync tick."""
    rsrp_serv: float
    rsrp_targ: float
    ue_speed: float
    t_exec: float
    t_prep: float
    o_exec: float
    o_prep: float
    t310: float
    n310: float
    rsrp_rlf: float


def normalize(raw: RawFeatures) -> np.ndarray:
    """Min-max map every feature to [0, 1] with fixed bounds, clamping outliers."""
    out = np.empty(STATE_DIM)
    for i, (name, lo, hi) in enumerate(FEATURE_BOUNDS):
        value = float(getattr(raw, name))
        if not math.isfinite(value):
            raise NumericalError(f"non-finite state feature {name}={value}")
        out[i] = (value - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class AgentHyperparams:
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.01
    tau_eps: float = 5000.0
    batch: int = 64
    n_start: int = 50
    c_target: int = 100
    g_max: float = 10.0
    huber_delta: float = 1.0
    buffer_capacity: int = 10_000
    hidden: Tuple[int, ...] = (64, 64, 64)
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError(f"need 0 <= eps_end <= eps_start <= 1, got {self.eps_end} / {self.eps_start}")
        if not self.tau_eps > 0:
            raise ConfigError(f"tau_eps must be positive, got {self.tau_eps}")
        for name in ("batch", "c_target", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_start < 0:
            raise ConfigError(f"n_start must be >= 0, got {self.n_start}")
        if self.batch > self.buffer_capacity:
            raise ConfigError("batch cannot exceed buffer_capacity")
        if not self.g_max > 0 or not self.huber_delta > 0 or not self.lr > 0:
            raise ConfigError("g_max, huber_delta and lr must be positive")
        if any(n < 1 for n in self.hidden):
            raise ConfigError(f"hidden layer widths must be >= 1, got {self.hidden}")

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (STATE_DIM,) + tuple(self.hidden) + (N_ACTIONS,)


class ForwardCache(NamedTuple):
    # inputs of every affine layer
    inputs: List[np.ndarray]
    # pre-activations of every affine layer
    pre: List[np.ndarray]


class QNetwork:
    """
    Fully connected network; parameters are kept as [W0, b0, W1, b1, ...]
    with W of shape (fan_in, fan_out) so that z = x @ W + b.
    """

    def __init__(self, layer_dims: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(layer_dims) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims, self.layer_dims[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.params.append(w)
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "QNetwork":
        clone = QNetwork(self.layer_dims)
        clone.params = [p.copy() for p in self.params]
        return clone

    def forward_with_cache(self, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inputs, pre = [], []
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0) if layer < self.n_layers - 1 else z
        return a, ForwardCache(inputs, pre)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values of shape (n_actions,) for one state or (B, n_actions) for a batch."""
        x = np.asarray(x, dtype=np.float64)
        q, _ = self.forward_with_cache(x)
        if not np.all(np.isfinite(q)):
            raise NumericalError("non-finite Q-value, network parameters are corrupted")
        return q[0] if x.ndim == 1 else q

    def backward(self, cache: ForwardCache, dq: np.ndarray) -> List[np.ndarray]:
        """Gradients of the loss w.r.t. params, given dLoss/dQ of shape (B, n_actions)."""
        grads: List[np.ndarray] = [np.empty(0)] * len(self.params)
        dz = dq
        for layer in reversed(range(self.n_layers)):
            grads[2 * layer] = cache.inputs[layer].T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            if layer > 0:
                da = dz @ self.params[2 * layer].T
                dz = da * (cache.pre[layer - 1] > 0)
        return grads


def huber(err, delta: float = 1.0):
    abs_err = np.abs(err)
    return np.where(abs_err <= delta, 0.5 * np.square(err), delta * (abs_err - 0.5 * delta))


def huber_grad(err, delta: float = 1.0):
    return np.clip(err, -delta, delta)


def epsilon(steps_done: int, h: AgentHyperparams) -> float:
    return h.eps_end + (h.eps_start - h.eps_end) * math.exp(-steps_done / h.tau_eps)


def select_action(net: QNetwork, s: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice; argmax ties resolve to action 0."""
    if rng.random() < eps:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(net.forward(s)))


def ddqn_targets(rewards: np.ndarray,
                 next_states: np.ndarray,
                 dones: np.ndarray,
                 policy: QNetwork,
                 target: QNetwork,
                 gamma: float) -> np.ndarray:
    next_actions = np.argmax(policy.forward(next_states), axis=1)
    next_q = target.forward(next_states)[np.arange(len(next_actions)), next_actions]
    return rewards + gamma * (1.0 - dones) * next_q


def ddqn_target(r: float, s_next: np.ndarray, done: bool,
                policy: QNetwork, target: QNetwork, gamma: float) -> float:
    """y = r + gamma (1 - done) Q_target(s', argmax_a Q_policy(s', a))."""
    y = ddqn_targets(np.array([r], dtype=np.float64),
                     np.atleast_2d(s_next),
                     np.array([float(done)]),
                     policy, target, gamma)
    return float(y[0])


def loss_and_grads(net: QNetwork,
                   states: np.ndarray,
                   actions: np.ndarray,
                   targets: np.ndarray,
                   delta: float = 1.0) -> Tuple[float, List[np.ndarray]]:
    """Mean Huber loss of Q(s, a) against fixed targets and its parameter gradients."""
    q, cache = net.forward_with_cache(states)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    loss = float(np.mean(huber(err, delta)))
    dq = np.zeros_like(q)
    dq[rows, actions] = huber_grad(err, delta) / len(actions)
    return loss, net.backward(cache, dq)


def td_loss_and_grads(policy: QNetwork,
                      target: QNetwork,
                      batch: "Batch",
                      gamma: float,
                      delta: float = 1.0) -> Tuple[float, List[np.ndarray]]:
    y = ddqn_targets(batch.rewards, batch.next_states, batch.dones, policy, target, gamma)
    return loss_and_grads(policy, batch.states, batch.actions, y, delta)


def clip_by_global_norm(grads: List[np.ndarray], g_max: float) -> Tuple[List[np.ndarray], float]:
    """Scale all gradients jointly so that their L2 norm is at most g_max."""
    norm = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads))
    if norm > g_max:
        scale = g_max / norm
        return [g * scale for g in grads], norm
    return grads, norm


class AdamOptimizer:
    def __init__(self, params: List[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        """In-place update of params."""
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self):
        if self.a not in (ACTION_BOOST, ACTION_NOTHING):
            raise ValueError(f"action must be 0 or 1, got {self.a}")


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition):
        i = self._next
        self.states[i] = t.s
        self.actions[i] = t.a
        self.rewards[i] = t.r
        self.next_states[i] = t.s_next
        self.dones[i] = float(t.done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def contents(self) -> Batch:
        """Stored transitions, oldest first."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return self._gather(order)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        if batch > self._size:
            raise ValueError(f"cannot sample {batch} transitions from {self._size}")
        return self._gather(rng.choice(self._size, size=batch, replace=False))

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


def train_step(buffer: ReplayBuffer,
               policy: QNetwork,
               target: QNetwork,
               opt: AdamOptimizer,
               h: AgentHyperparams,
               rng: np.random.Generator) -> float:
    """One minibatch update of the policy network; the target network is read only."""
    batch = buffer.sample(h.batch, rng)
    loss, grads = td_loss_and_grads(policy, target, batch, h.gamma, h.huber_delta)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite TD loss {loss}")
    grads, _ = clip_by_global_norm(grads, h.g_max)
    opt.step(policy.params, grads)
    return loss


def sync_target(policy: QNetwork, target: QNetwork):
    for dst, src in zip(target.params, policy.params):
        np.copyto(dst, src)


def agent_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


class DqnAgent:
    """Policy/target networks, replay memory and optimizer of one run."""

    def __init__(self, h: Optional[AgentHyperparams] = None, seed: int = 0):
        self.h = h or AgentHyperparams()
        self.policy = QNetwork(self.h.layer_dims, agent_rng(seed, _STREAM_INIT))
        self.target = self.policy.copy()
        self.optimizer = AdamOptimizer(self.policy.params, self.h.lr,
                                       self.h.adam_beta1, self.h.adam_beta2, self.h.adam_eps)
        self.buffer = ReplayBuffer(self.h.buffer_capacity, self.h.layer_dims[0])
        self.explore_rng = agent_rng(seed, _STREAM_EXPLORE)
        self.replay_rng = agent_rng(seed, _STREAM_REPLAY)
        self.steps_done = 0
        self.losses: List[float] = []

    @property
    def epsilon(self) -> float:
        return epsilon(self.steps_done, self.h)

    def act(self, state: np.ndarray, explore: bool = True) -> int:
        if not explore:
            return select_action(self.policy, state, 0.0, self.explore_rng)
        action = select_action(self.policy, state, self.epsilon, self.explore_rng)
        self.steps_done += 1
        return action

    def remember(self, t: Transition):
        self.buffer.push(t)

    def learn(self) -> Optional[float]:
        """Train and sync on the Double-DQN cadence; returns the loss when a step ran."""
        loss = None
        if self.steps_done > self.h.n_start and len(self.buffer) >= self.h.batch:
            loss = train_step(self.buffer, self.policy, self.target, self.optimizer,
                              self.h, self.replay_rng)
            self.losses.append(loss)
        if self.steps_done > 0 and self.steps_done % self.h.c_target == 0:
            sync_target(self.policy, self.target)
        return loss

    def pop_losses(self) -> List[float]:
        losses, self.losses = self.losses, []
        return losses

    def greedy_policy(self) -> Callable[[np.ndarray], int]:
        """Frozen copy of the current policy network, argmax with ties to 0."""
        net = self.policy.copy()
        return lambda s: int(np.argmax(net.forward(s)))


def _array_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def save_checkpoint(agent: DqnAgent) -> bytes:
    dims = agent.policy.layer_dims
    opt = agent.optimizer
    parts = [
        _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(dims)),
        struct.pack(f"<{len(dims)}I", *dims),
        _COUNTERS.pack(agent.steps_done, opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps),
        _array_bytes(agent.policy.params),
        _array_bytes(agent.target.params),
        _array_bytes(opt.m),
        _array_bytes(opt.v),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {len(self.data)}, need {self.pos + n}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def arrays(self, like: Sequence[np.ndarray]) -> List[np.ndarray]:
        out = []
        for ref in like:
            raw = self.take(ref.size * 8)
            out.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(ref.shape))
        return out


def load_checkpoint(data: bytes, h: Optional[AgentHyperparams] = None, seed: int = 0) -> DqnAgent:
    """
    Rebuild an agent from checkpoint bytes.

    h supplies the non-persisted hyperparameters; its hidden layer widths must
    match the stored dimensions. Without h the stored dimensions are used.
    """
    r = _Reader(data)
    magic, version, n_dims = _HEADER.unpack(r.take(_HEADER.size))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    dims = struct.unpack(f"<{n_dims}I", r.take(4 * n_dims))
    if h is None:
        try:
            h = AgentHyperparams(hidden=tuple(dims[1:-1]))
        except ConfigError as e:
            raise CheckpointError(f"invalid layer dimensions {dims}: {e}") from e
    if tuple(dims) != h.layer_dims:
        raise CheckpointError(f"layer dimension mismatch: checkpoint {dims}, expected {h.layer_dims}")
    steps_done, adam_t, lr, beta1, beta2, eps = _COUNTERS.unpack(r.take(_COUNTERS.size))

    agent = DqnAgent(h, seed)
    agent.policy.params = r.arrays(agent.policy.params)
    agent.target.params = r.arrays(agent.target.params)
    opt = AdamOptimizer(agent.policy.params, lr, beta1, beta2, eps)
    opt.t = adam_t
    opt.m = r.arrays(opt.m)
    opt.v = r.arrays(opt.v)
    agent.optimizer = opt
    agent.steps_done = steps_done
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    logger.debug("loaded checkpoint: dims=%s steps_done=%d", dims, steps_done)
    return agent
