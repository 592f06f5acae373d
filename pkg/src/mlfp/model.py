"""Problem classes, weight certificates and the model zoo.

All model methods are vectorized: a batch of states is an array whose trailing
axes are ``model.state_shape`` and whose leading axes are arbitrary.  Random
draws come from a :class:`~mlfp.rng.StreamHandle` whose shape broadcasts
against the leading axes, so one stream realization of the transition field is
applied to every state in the batch.

Models keep no mutable state; all mutability lives in the stream handle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

ROW_TOL = 1e-12


@dataclass(frozen=True)
class WeightCertificate:
    """Declared growth bound ``lam`` of the weight, driver bound ``kappa``
    and Lipschitz constant ``lipschitz`` (the discount for Bellman drivers)."""

    lam: float
    kappa: float
    lipschitz: float

    def __post_init__(self):
        if min(self.lam, self.kappa, self.lipschitz) < 0:
            raise ValueError("certificate constants must be nonnegative")
        if self.lam * self.lipschitz >= 1:
            raise ValueError(
                f"contraction condition violated: lambda*L = {self.lam * self.lipschitz} >= 1"
            )

    @property
    def cwL(self) -> float:
        return self.lam * self.lipschitz


class _Batched:
    state_shape: tuple = ()
    n_states: int | None = None

    def lead_shape(self, states: np.ndarray) -> tuple:
        return states.shape[: states.ndim - len(self.state_shape)]

    def encode_state(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.int64 if self.n_states is not None else np.float64)
        if arr.shape != self.state_shape:
            raise ValueError(f"state has shape {arr.shape}, expected {self.state_shape}")
        if self.n_states is not None and not 0 <= int(arr) < self.n_states:
            raise ValueError(f"state {int(arr)} outside 0..{self.n_states - 1}")
        return arr

    def weight(self, states: np.ndarray) -> np.ndarray:
        return np.ones(self.lead_shape(states))


class ControlModel(_Batched):
    """Discounted MDP with a finite action set ``range(n_actions)``."""

    name = "control"
    # True only if sample_transition never reads its stream
    deterministic_transitions: bool = False
    discount: float
    n_actions: int
    certificate: WeightCertificate
    unit_sample_cost: float = 1.0

    def reward(self, states: np.ndarray, action: int) -> np.ndarray:
        raise NotImplementedError

    def rewards(self, states: np.ndarray) -> np.ndarray:
        return np.stack([self.reward(states, a) for a in range(self.n_actions)], axis=-1)

    def sample_transition(self, states: np.ndarray, action: int, stream) -> np.ndarray:
        raise NotImplementedError


class GeneralFixedPointModel(_Batched):
    """Fixed-point problem ``v(x, a) = E[f(X^{x,a}, v(X^{x,a}))]``."""

    name = "general"
    n_actions: int
    certificate: WeightCertificate

    def driver(self, states: np.ndarray, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, states: np.ndarray, action: int, stream) -> np.ndarray:
        raise NotImplementedError


class StoppingModel(_Batched):
    """Optimal stopping with running reward g, payoff G, and an uncontrolled chain."""

    name = "stopping"
    discount: float
    bound: float
    unit_sample_cost: float = 1.0

    def running_reward(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def terminal_payoff(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, states: np.ndarray, stream) -> np.ndarray:
        raise NotImplementedError


def bellman_driver(model: ControlModel, state, r) -> float:
    """``delta * max_a (g(state, a) + r(a))`` at a single state."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (model.n_actions,):
        raise ValueError(f"expected {model.n_actions} action values, got shape {r.shape}")
    g = model.rewards(model.encode_state(state))
    return float(model.discount * np.max(g + r))


class BellmanFixedPoint(GeneralFixedPointModel):
    """The Bellman equation for Q - g written as a general fixed-point problem."""

    name = "bellman"

    def __init__(self, control: ControlModel):
        self.control = control
        self.n_actions = control.n_actions
        self.state_shape = control.state_shape
        self.n_states = control.n_states
        self.deterministic_transitions = getattr(control, "deterministic_transitions", False)
        c = control.certificate
        self.certificate = WeightCertificate(c.lam, c.kappa, control.discount)

    def driver(self, states, values):
        return self.control.discount * np.max(self.control.rewards(states) + values, axis=-1)

    def sample_transition(self, states, action, stream):
        return self.control.sample_transition(states, action, stream)

    def weight(self, states):
        return self.control.weight(states)

    def encode_state(self, x):
        return self.control.encode_state(x)


# ---------------------------------------------------------------- finite MDPs


@dataclass
class FiniteModel:
    rewards: np.ndarray
    transitions: np.ndarray
    discount: float

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        S, A = self.rewards.shape
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if self.transitions.shape != (S, A, S):
            raise ValueError(f"transitions must have shape {(S, A, S)}, got {self.transitions.shape}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if np.any(self.transitions < 0) or np.any(self.transitions > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        dev = np.abs(self.transitions.sum(axis=-1) - 1.0)
        if np.any(dev > ROW_TOL):
            s, a = np.unravel_index(np.argmax(dev), dev.shape)
            raise ValueError(f"malformed transition row (state {s}, action {a}): sums to {1 - dev[s, a]:+.3e} off 1")
        if not 0 <= self.discount < 1:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")

    @property
    def state_count(self) -> int:
        return self.rewards.shape[0]

    @property
    def action_count(self) -> int:
        return self.rewards.shape[1]


def _inverse_cdf(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # state j is chosen when cum[j-1] <= u < cum[j]
    # column loop beats a reduction over a short trailing axis
    idx = np.zeros(np.broadcast_shapes(cum.shape[:-1], np.shape(u)), dtype=np.intp)
    for j in range(cum.shape[-1] - 1):
        idx += cum[..., j] <= u
    return idx


class FiniteControlModel(ControlModel):
    """Categorical transitions drawn by inverse CDF from one uniform per call."""

    name = "finite"

    def __init__(self, finite: FiniteModel, certificate: WeightCertificate | None = None,
                 unit_sample_cost: float = 1.0):
        self.finite = finite
        self.discount = finite.discount
        self.n_actions = finite.action_count
        self.n_states = finite.state_count
        if certificate is None:
            certificate = WeightCertificate(1.0, float(np.max(np.abs(finite.rewards))), finite.discount)
        self.certificate = certificate
        self.unit_sample_cost = unit_sample_cost
        self._cum = np.cumsum(finite.transitions, axis=-1)
        # point-mass rows: the sampler never looks at its uniform
        self.deterministic_transitions = bool(np.all(finite.transitions.max(axis=-1) == 1.0))

    def reward(self, states, action):
        return self.finite.rewards[states, action]

    def rewards(self, states):
        # np.take is much faster than fancy indexing on large index arrays
        return np.take(self.finite.rewards, states, axis=0)

    def sample_transition(self, states, action, stream):
        u = stream.uniform()
        return _inverse_cdf(np.take(self._cum[:, action], states, axis=0), u)


def finite_as_control(model: FiniteModel, certificate: WeightCertificate | None = None) -> FiniteControlModel:
    return FiniteControlModel(model, certificate)


def single_state_det(discount: float = 0.5) -> FiniteControlModel:
    fm = FiniteModel([[1.0, 0.0]], [[[1.0], [1.0]]], discount)
    return FiniteControlModel(fm, WeightCertificate(1.0, 1.0, discount))


def chain_finite_model(states: int, actions: int, seed: int, discount: float) -> FiniteModel:
    """Random finite MDP: uniform rewards, rows of normalized uniforms."""
    rng = np.random.default_rng(seed)
    rewards = rng.uniform(0.0, 1.0, size=(states, actions))
    raw = rng.uniform(0.0, 1.0, size=(states, actions, states))
    trans = raw / raw.sum(axis=-1, keepdims=True)
    # push rounding residue into the largest entry so rows sum to 1 tightly
    resid = 1.0 - trans.sum(axis=-1)
    big = np.argmax(trans, axis=-1)
    np.put_along_axis(trans, big[..., None], np.take_along_axis(trans, big[..., None], -1) + resid[..., None], -1)
    return FiniteModel(rewards, trans, discount)


def chain_finite(states: int = 5, actions: int = 2, seed: int = 1, discount: float = 0.1,
                 kappa: float = 1.0) -> FiniteControlModel:
    fm = chain_finite_model(states, actions, seed, discount)
    return FiniteControlModel(fm, WeightCertificate(1.0, kappa, discount))


# -------------------------------------------------------- continuous control


def _rowdot(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit left-to-right sum keeps results independent of batch layout
    acc = x[..., 0] * c[0]
    for j in range(1, c.shape[0]):
        acc = acc + x[..., j] * c[j]
    return acc


class GaussControl(ControlModel):
    """``X' = x/2 + mu_a + N(0, I)`` in R^d with reward ``cos(<c_a, x>)``."""

    name = "gauss_control"

    def __init__(self, d: int = 2, actions: int = 2, discount: float = 0.5):
        if d < 1 or actions < 1:
            raise ValueError("need d >= 1 and at least one action")
        self.d = d
        self.state_shape = (d,)
        self.n_actions = actions
        self.discount = discount
        self.certificate = WeightCertificate(1.0, 1.0, discount)
        self.drift = np.array([np.full(d, 0.5 * a / math.sqrt(d)) for a in range(actions)])
        self.freq = np.array([np.full(d, (a + 1) / math.sqrt(d)) for a in range(actions)])

    def reward(self, states, action):
        return np.cos(_rowdot(states, self.freq[action]))

    def sample_transition(self, states, action, stream):
        return 0.5 * states + self.drift[action] + stream.normal(self.d)


# ------------------------------------------------------------ optimal stopping


class StoppingWalk(StoppingModel):
    """Symmetric +-1 walk in Z^d, payoff = mean coordinate clamped to [-1, 1]."""

    name = "stopping_walk"

    def __init__(self, d: int = 2, discount: float = 0.5, running: float = 0.05):
        self.d = d
        self.state_shape = (d,)
        self.discount = discount
        self.running = running
        self.bound = abs(running) + 1.0

    def running_reward(self, states):
        return np.full(self.lead_shape(states), self.running)

    def terminal_payoff(self, states):
        return np.clip(_rowdot(states, np.full(self.d, 1.0 / self.d)), -1.0, 1.0)

    def sample_transition(self, states, stream):
        return states + stream.sign(self.d)


@dataclass
class FiniteStoppingModel(StoppingModel):
    transitions: np.ndarray
    running: np.ndarray
    payoff: np.ndarray
    discount: float
    name: str = "finite_stopping"

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.running = np.asarray(self.running, dtype=np.float64)
        self.payoff = np.asarray(self.payoff, dtype=np.float64)
        S = self.running.shape[0]
        # reuse the row validation of FiniteModel
        FiniteModel(self.running[:, None], self.transitions[:, None, :], self.discount)
        self.n_states = S
        self.state_shape = ()
        self.bound = float(np.max(np.abs(self.running) + np.abs(self.payoff)))
        self._cum = np.cumsum(self.transitions, axis=-1)

    def running_reward(self, states):
        return self.running[states]

    def terminal_payoff(self, states):
        return self.payoff[states]

    def sample_transition(self, states, stream):
        return _inverse_cdf(np.take(self._cum, states, axis=0), stream.uniform())


def two_state_stopping(discount: float = 0.5) -> FiniteStoppingModel:
    return FiniteStoppingModel([[0.5, 0.5], [0.5, 0.5]], [0.0, 0.0], [1.0, 0.0], discount)


class _Hold:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "HOLD"


HOLD = _Hold()
"""The absorbing hold state of the stopping augmentation; never a member of the base space."""

STOP, CONTINUE = 0, 1


class AugmentedControlModel(ControlModel):
    """Two-action control problem equivalent to a stopping problem.

    States are tagged: ``[tag, payload...]`` with tag 1 for the hold state and
    tag 0 for a base state whose coordinates are the payload.  Stopping (action
    0) collects ``G`` and moves to the hold state; continuing (action 1)
    collects ``g`` and moves with the base chain; the hold state is absorbing
    with zero reward.
    """

    name = "augmented"

    def __init__(self, stopping: StoppingModel):
        self.base = stopping
        self.discount = stopping.discount
        self.n_actions = 2
        self._base_size = int(np.prod(stopping.state_shape, dtype=int))
        self.state_shape = (1 + self._base_size,)
        self.certificate = WeightCertificate(1.0, stopping.bound, stopping.discount)
        self.unit_sample_cost = stopping.unit_sample_cost

    def is_hold(self, states):
        return states[..., 0] == 1.0

    def base_states(self, states):
        payload = states[..., 1:].reshape(states.shape[:-1] + self.base.state_shape)
        if self.base.n_states is not None:
            return payload.astype(np.int64)
        return payload

    def _pack(self, hold, base):
        lead = hold.shape
        payload = np.asarray(base, dtype=np.float64).reshape(lead + (self._base_size,))
        payload = np.where(hold[..., None], 0.0, payload)
        return np.concatenate([hold[..., None].astype(np.float64), payload], axis=-1)

    def encode_state(self, x):
        if x is HOLD:
            return np.concatenate([[1.0], np.zeros(self._base_size)])
        base = self.base.encode_state(x)
        return np.concatenate([[0.0], np.asarray(base, dtype=np.float64).reshape(-1)])

    def decode_state(self, y):
        y = np.asarray(y)
        if y[0] == 1.0:
            return HOLD
        b = self.base_states(y)
        return int(b) if self.base.n_states is not None else b

    def reward(self, states, action):
        hold = self.is_hold(states)
        base = self.base_states(states)
        if action == CONTINUE:
            r = self.base.running_reward(base)
        else:
            r = self.base.terminal_payoff(base)
        return np.where(hold, 0.0, r)

    def sample_transition(self, states, action, stream):
        hold = self.is_hold(states)
        if action == STOP:
            return self._pack(np.ones_like(hold), np.zeros(states.shape[:-1] + (self._base_size,)))
        nxt = self.base.sample_transition(self.base_states(states), stream)
        lead = np.broadcast_shapes(hold.shape, nxt.shape[: nxt.ndim - len(self.base.state_shape)])
        hold = np.broadcast_to(hold, lead)
        return self._pack(hold, nxt)


def augment_stopping(model: StoppingModel) -> AugmentedControlModel:
    return AugmentedControlModel(model)


def augment_finite_stopping(model: FiniteStoppingModel) -> FiniteModel:
    """Exact finite twin of :func:`augment_stopping`; the hold state is index S."""
    S = model.n_states
    rewards = np.zeros((S + 1, 2))
    rewards[:S, STOP] = model.payoff
    rewards[:S, CONTINUE] = model.running
    trans = np.zeros((S + 1, 2, S + 1))
    trans[:, STOP, S] = 1.0
    trans[:S, CONTINUE, :S] = model.transitions
    trans[S, CONTINUE, S] = 1.0
    return FiniteModel(rewards, trans, model.discount)


def spot_check_reward_bound(model: ControlModel, states: np.ndarray) -> bool:
    """``|g(x, a)| <= kappa * w(x)`` on the given states."""
    g = np.abs(model.rewards(states))
    w = model.weight(states)
    return bool(np.all(g <= model.certificate.kappa * w[..., None] + 1e-15))


# ---------------------------------------------------------------- config files


@dataclass
class BuiltModel:
    family: str
    control: ControlModel
    stopping: StoppingModel | None = None
    finite: FiniteModel | None = None
    spec: dict = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        items = dict(self.spec.get("params", {}))
        if "discount" in self.spec:
            items["discount"] = self.spec["discount"]
        params = ";".join(f"{k}={v}" for k, v in sorted(items.items()))
        return f"{self.family}({params})" if params else self.family


def _build_single_state_det(p, discount):
    return BuiltModel("single_state_det", single_state_det(0.5 if discount is None else discount))


def _build_chain_finite(p, discount):
    m = chain_finite(int(p.get("states", 5)), int(p.get("actions", 2)), int(p.get("seed", 1)),
                     0.1 if discount is None else discount)
    return BuiltModel("chain_finite", m)


def _build_gauss_control(p, discount):
    m = GaussControl(int(p.get("d", 2)), int(p.get("actions", 2)), 0.5 if discount is None else discount)
    return BuiltModel("gauss_control", m)


def _build_stopping_walk(p, discount):
    s = StoppingWalk(int(p.get("d", 2)), 0.5 if discount is None else discount,
                     float(p.get("running", 0.05)))
    return BuiltModel("stopping_walk", augment_stopping(s), stopping=s)


def _build_two_state_stopping(p, discount):
    s = two_state_stopping(0.5 if discount is None else discount)
    return BuiltModel("two_state_stopping", augment_stopping(s), stopping=s)


FAMILIES: dict[str, Callable[[dict, float | None], BuiltModel]] = {
    "chain_finite": _build_chain_finite,
    "gauss_control": _build_gauss_control,
    "single_state_det": _build_single_state_det,
    "stopping_walk": _build_stopping_walk,
    "two_state_stopping": _build_two_state_stopping,
}


def build_model(spec: dict[str, Any]) -> BuiltModel:
    """Build a model from a config mapping (see README for the schema)."""
    family = spec.get("family")
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; known families: {', '.join(sorted(FAMILIES))}")
    discount = spec.get("discount")
    built = FAMILIES[family](dict(spec.get("params", {})), None if discount is None else float(discount))
    built.spec = dict(spec)
    ctrl = built.control
    certs = spec.get("certificates")
    if certs:
        ctrl.certificate = WeightCertificate(float(certs.get("lambda", 1.0)),
                                             float(certs.get("kappa", ctrl.certificate.kappa)),
                                             ctrl.discount)
    if "unit_sample_cost" in spec:
        ctrl.unit_sample_cost = float(spec["unit_sample_cost"])
    if isinstance(ctrl, FiniteControlModel):
        built.finite = ctrl.finite
    elif isinstance(built.stopping, FiniteStoppingModel):
        built.finite = augment_finite_stopping(built.stopping)
    return built


def load_model(path: str | Path) -> BuiltModel:
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: model config must be a JSON object")
    return build_model(spec)
