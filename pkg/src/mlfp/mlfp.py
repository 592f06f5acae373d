"""Full-history recursive multilevel fixed-point (MLFP) estimators.

For a node ``theta`` and level ``n`` the estimator is

    V_n(x, a) = offset(x, a) + sum_{l=0}^{n-1} M^{-(n-l)} sum_{i=1}^{M^{n-l}}
                [ term(X, V_l^{(theta,l,i)}(X)) - 1{l>=1} term(X, V_{l-1}^{(theta,-l,i)}(X)) ]

with ``X = X^{(theta,l,i),x,a}`` sampled once per (a, l, i) and shared by both
terms.  Three schemes plug different ``offset``/``term``/level-0 values into
the same recursion: the general driver form, the Q-function form, and the
optimal-stopping form.

Evaluation is vectorized.  A call works on a block of ``R`` replications
(one master seed each) times ``K`` tree nodes at the same level, each node
evaluated at ``P`` points.  The transition field of a node/action pair is
realized once (one stream) and applied to all of that node's points, which is
exactly the random-field semantics of the scheme.  Per-element arithmetic does
not depend on how work is blocked, so the result for one replication at one
point is bit-identical whether it is computed alone or inside a large batch.

Arithmetic order (normative, so that equivalent schemes agree to the last bit):
levels are visited ``l = n-1, ..., 0``; inside a level the ``M^{n-l}`` summands
are added left to right in ``i``; the level sum is divided by ``M^{n-l}`` and
added to the running total; the offset is added last.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    CONTINUE,
    BellmanFixedPoint,
    ControlModel,
    GeneralFixedPointModel,
    StoppingModel,
)
from .rng import ROOT, CostLedger, StreamHandle, _digest_words, action_digests, encode_entries, seed_mix, stream_keys

# soft cap on elements per vectorized step; sibling slots and node blocks are split to fit
CHUNK_ELEMENTS = 1 << 19


@dataclass
class MlfpParams:
    M: int
    n: int
    master_seed: int = 0
    ledger: CostLedger = field(default_factory=CostLedger)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if self.n < 0:
            raise ValueError(f"n must be nonnegative, got {self.n}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")


class _Scheme:
    n_out: int
    actions: Sequence[int]
    n_states: int | None = None
    state_shape: tuple = ()
    deterministic: bool = False

    def base(self, states):  # value at level 0, shape lead + (n_out,)
        raise NotImplementedError

    def term(self, states, values):
        raise NotImplementedError

    def offset(self, states):
        return None

    def sample(self, states, action, stream):
        raise NotImplementedError


class _GeneralScheme(_Scheme):
    def __init__(self, model: GeneralFixedPointModel):
        self.model = model
        self.n_out = model.n_actions
        self.actions = range(model.n_actions)
        self.n_states = model.n_states
        self.state_shape = model.state_shape
        self.deterministic = bool(getattr(model, "deterministic_transitions", False))

    def base(self, states):
        lead = states.shape[: states.ndim - len(self.state_shape)]
        return np.zeros(lead + (self.n_out,))

    def term(self, states, values):
        return self.model.driver(states, values)

    def sample(self, states, action, stream):
        return self.model.sample_transition(states, action, stream)


def _max_last(values):
    out = values[..., 0]
    for k in range(1, values.shape[-1]):
        out = np.maximum(out, values[..., k])
    return out


class _QScheme(_Scheme):
    def __init__(self, model: ControlModel):
        self.model = model
        self.delta = model.discount
        self.n_out = model.n_actions
        self.actions = range(model.n_actions)
        self.n_states = model.n_states
        self.state_shape = model.state_shape
        self.deterministic = bool(getattr(model, "deterministic_transitions", False))

    def base(self, states):
        return self.model.rewards(states)

    def term(self, states, values):
        return self.delta * _max_last(values)

    def offset(self, states):
        return self.model.rewards(states)

    def sample(self, states, action, stream):
        return self.model.sample_transition(states, action, stream)


class _StoppingScheme(_Scheme):
    """Single output; samples come from the node's continue-action sub-stream."""

    def __init__(self, model: StoppingModel):
        self.model = model
        self.delta = model.discount
        self.n_out = 1
        self.actions = (CONTINUE,)
        self.n_states = model.n_states
        self.state_shape = model.state_shape
        self.deterministic = bool(getattr(model, "deterministic_transitions", False))

    def base(self, states):
        return self.model.running_reward(states)[..., None]

    def term(self, states, values):
        return self.delta * np.maximum(self.model.terminal_payoff(states), values[..., 0])

    def offset(self, states):
        return self.model.running_reward(states)[..., None]

    def sample(self, states, action, stream):
        return self.model.sample_transition(states, stream)


class _Engine:
    def __init__(self, scheme: _Scheme, M: int, seedmix: np.ndarray, ledger: CostLedger):
        self.s = scheme
        self.M = M
        self.seedmix = seedmix
        self.ledger = ledger

    # states: (R, K, P, *state_shape) -> values (R, K, P, n_out)
    def node(self, n: int, paths: list[bytes], states: np.ndarray) -> np.ndarray:
        s = self.s
        if n == 0:
            return s.base(states)
        if s.deterministic:
            return self.collapsed_node(n, paths, states, 1)
        R, K, P = states.shape[:3]
        nA = len(s.actions)
        # siblings are processed in chunks; the left-to-right sum over i is unaffected
        per_sibling = R * K * nA * P * (s.n_states or 1)
        mc = max(1, CHUNK_ELEMENTS // per_sibling)
        total = None
        for l in range(n - 1, -1, -1):
            m = self.M ** (n - l)
            acc = None
            for i0 in range(1, m + 1, mc):
                idx = range(i0, min(m, i0 + mc - 1) + 1)
                t = self.slot_terms(l, idx, paths, states)
                c0 = 0
                if acc is None:
                    acc = t[:, :, 0].copy()
                    c0 = 1
                for c in range(c0, len(idx)):
                    acc += t[:, :, c]
            level = acc / float(m)
            total = level if total is None else total + level
        total = np.moveaxis(total, 2, 3)  # (R, K, P, nA)
        off = s.offset(states)
        return total if off is None else off + total

    def slot_terms(self, l: int, idx: range, paths: list[bytes], states: np.ndarray) -> np.ndarray:
        """Summands of level ``l`` for sibling indices ``idx``: (R, K, len(idx), nA, P)."""
        s = self.s
        R, K, P = states.shape[:3]
        tail = states.shape[3:]
        nA = len(s.actions)
        mc = len(idx)
        pos = [p + struct.pack("<qq", l, i) for p in paths for i in idx]
        expanded = np.broadcast_to(states[:, :, None], (R, K, mc) + states.shape[2:])
        nexts = [self.sample_slot(pos, a, expanded, (R, K, mc)) for a in s.actions]
        nxt = np.stack(nexts, axis=3).reshape((R, K * mc, nA * P) + tail)
        if l == 0:
            t = s.term(nxt, s.base(nxt))
        else:
            neg = [p + struct.pack("<qq", -l, i) for p in paths for i in idx]
            t = s.term(nxt, self.evaluate(l, pos, nxt))
            t = t - s.term(nxt, self.evaluate(l - 1, neg, nxt))
        if not np.all(np.isfinite(t)):
            raise FloatingPointError(f"non-finite driver output at level {l}")
        return t.reshape(R, K, mc, nA, P)

    def collapsed_node(self, n: int, paths: list[bytes], states: np.ndarray, mult: int) -> np.ndarray:
        """Node values for models whose transitions ignore the stream.

        Without randomness every sibling term of a level is the same number, so
        the level mean is that number and one representative child per level
        suffices.  ``mult`` is how many nodes of the full tree this call stands
        for; the ledger is charged for all of them.
        """
        s = self.s
        if n == 0:
            return s.base(states)
        R, K, P = states.shape[:3]
        tail = states.shape[3:]
        nA = len(s.actions)
        total = None
        for l in range(n - 1, -1, -1):
            m = self.M ** (n - l)
            pos = [p + struct.pack("<qq", l, 1) for p in paths]
            expanded = states[:, :, None]
            nexts = [self.sample_slot(pos, a, expanded, (R, K, 1), count=mult * m) for a in s.actions]
            nxt = np.stack(nexts, axis=3).reshape((R, K, nA * P) + tail)
            if l == 0:
                t = s.term(nxt, s.base(nxt))
            else:
                neg = [p + struct.pack("<qq", -l, 1) for p in paths]
                t = s.term(nxt, self.collapsed_node(l, pos, nxt, mult * m))
                t = t - s.term(nxt, self.collapsed_node(l - 1, neg, nxt, mult * m))
            if not np.all(np.isfinite(t)):
                raise FloatingPointError(f"non-finite driver output at level {l}")
            level = t.reshape(R, K, nA, P)
            total = level if total is None else total + level
        total = np.moveaxis(total, 2, 3)
        off = s.offset(states)
        return total if off is None else off + total

    def sample_slot(self, paths: list[bytes], action: int, states, shape, count: int = 1) -> np.ndarray:
        w0, w1 = _digest_words(action_digests(paths, action))
        ka, kb = stream_keys(self.seedmix, w0, w1)
        stream = StreamHandle(ka.reshape(shape + (1,)), kb.reshape(shape + (1,)))
        self.ledger.add(ka.size * count)
        return self.s.sample(states, action, stream)

    def evaluate(self, n: int, paths: list[bytes], points: np.ndarray) -> np.ndarray:
        """Values of the ``len(paths)`` nodes at their own points (R, K, Q, *)."""
        R, K, Q = points.shape[:3]
        S = self.s.n_states
        width = Q if S is None else S
        step = max(1, CHUNK_ELEMENTS // max(1, R * width))
        out = []
        for k0 in range(0, K, step):
            k1 = min(K, k0 + step)
            pts = points[:, k0:k1]
            if S is None:
                out.append(self.node(n, paths[k0:k1], pts))
            else:
                # finite state space: evaluate each node on the whole grid, then gather
                grid = np.broadcast_to(np.arange(S), (R, k1 - k0, S))
                vals = self.node(n, paths[k0:k1], grid)
                ri = np.arange(R)[:, None, None]
                ki = np.arange(k1 - k0)[None, :, None]
                out.append(vals[ri, ki, pts])
        return out[0] if len(out) == 1 else np.concatenate(out, axis=1)


def _run(scheme: _Scheme, M: int, n: int, seeds, states: np.ndarray, theta: Sequence[int],
         ledger: CostLedger) -> np.ndarray:
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    R = seeds.shape[0]
    P = states.shape[0]
    eng = _Engine(scheme, M, seed_mix(seeds), ledger)
    batch = np.broadcast_to(states[None, None], (R, 1) + states.shape)
    return eng.node(n, [encode_entries(theta)], batch)[:, 0].reshape(R, P, scheme.n_out)


def _stack_states(model, xs) -> np.ndarray:
    return np.stack([model.encode_state(x) for x in xs])


def estimate_q_batch(model: ControlModel, M: int, n: int, seeds, xs, theta=ROOT,
                     ledger: CostLedger | None = None) -> np.ndarray:
    """Q estimates for every seed (replication) and state: shape (R, P, |A|)."""
    ledger = CostLedger() if ledger is None else ledger
    return _run(_QScheme(model), M, n, seeds, _stack_states(model, xs), theta, ledger)


def estimate_general_batch(model: GeneralFixedPointModel, M: int, n: int, seeds, xs, theta=ROOT,
                           ledger: CostLedger | None = None) -> np.ndarray:
    ledger = CostLedger() if ledger is None else ledger
    return _run(_GeneralScheme(model), M, n, seeds, _stack_states(model, xs), theta, ledger)


def estimate_stopping_batch(model: StoppingModel, M: int, n: int, seeds, xs, theta=ROOT,
                            ledger: CostLedger | None = None) -> np.ndarray:
    ledger = CostLedger() if ledger is None else ledger
    out = _run(_StoppingScheme(model), M, n, seeds, _stack_states(model, xs), theta, ledger)
    return out[..., 0]


def mlfp_general(model: GeneralFixedPointModel, params: MlfpParams, x, theta=ROOT) -> np.ndarray:
    """V_n^theta(x) for a general fixed-point model; V_0 is the zero vector."""
    return estimate_general_batch(model, params.M, params.n, [params.master_seed], [x], theta,
                                  params.ledger)[0, 0]


def mlfp_q(model: ControlModel, params: MlfpParams, x, theta=ROOT) -> np.ndarray:
    """Q_n^theta(x, .) for a control model; Q_0 = g."""
    return estimate_q_batch(model, params.M, params.n, [params.master_seed], [x], theta,
                            params.ledger)[0, 0]


def mlfp_stopping(model: StoppingModel, params: MlfpParams, x, theta=ROOT) -> float:
    """Q_n^theta(x) of the stopping scheme (continuation value)."""
    return float(estimate_stopping_batch(model, params.M, params.n, [params.master_seed], [x],
                                         theta, params.ledger)[0, 0])


def mlfp_bellman_remainder(model: ControlModel, params: MlfpParams, x, theta=ROOT) -> np.ndarray:
    """R_n = Q_n - g computed through the general scheme with the Bellman driver."""
    return mlfp_general(BellmanFixedPoint(model), params, x, theta)


def value_from_q(q) -> float:
    return float(np.max(q))


def greedy_action(q) -> int:
    return int(np.argmax(q))  # argmax returns the first maximizer


def level_summands(model: ControlModel, M: int, level: int, seeds, xs, theta=ROOT,
                   ledger: CostLedger | None = None) -> np.ndarray:
    """One telescoping summand per replication, state and action.

    Samples ``X`` from slot ``(theta, level, 1)`` and returns
    ``max_b Q_level(X, b) - 1{level>=1} max_b Q_{level-1}(X, b)`` with the two
    Q estimates taken from the positive and negative child nodes.
    Shape (R, P, |A|).
    """
    ledger = CostLedger() if ledger is None else ledger
    scheme = _QScheme(model)
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    states = _stack_states(model, xs)
    R, P = seeds.shape[0], states.shape[0]
    eng = _Engine(scheme, M, seed_mix(seeds), ledger)
    root = encode_entries(theta)
    expanded = np.broadcast_to(states[None, None, None], (R, 1, 1) + states.shape)
    pos = [root + struct.pack("<qq", level, 1)]
    nA = model.n_actions
    nxt = np.stack([eng.sample_slot(pos, a, expanded, (R, 1, 1)) for a in range(nA)], axis=3)
    nxt = nxt.reshape((R, 1, nA * P) + states.shape[1:])
    if level == 0:
        out = np.max(scheme.base(nxt), axis=-1)
    else:
        neg = [root + struct.pack("<qq", -level, 1)]
        out = np.max(eng.evaluate(level, pos, nxt), axis=-1) - np.max(eng.evaluate(level - 1, neg, nxt), axis=-1)
    return np.moveaxis(out.reshape(R, nA, P), 1, 2)
