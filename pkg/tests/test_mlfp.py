import numpy as np
import pytest

from mlfp.mlfp import (
    MlfpParams,
    estimate_general_batch,
    estimate_q_batch,
    estimate_stopping_batch,
    greedy_action,
    level_summands,
    mlfp_bellman_remainder,
    mlfp_general,
    mlfp_q,
    mlfp_stopping,
    value_from_q,
)
from mlfp.model import (
    CONTINUE,
    BellmanFixedPoint,
    GaussControl,
    GeneralFixedPointModel,
    StoppingWalk,
    augment_stopping,
    chain_finite,
    single_state_det,
    two_state_stopping,
)
from mlfp.oracle import picard_iterate
from mlfp.rng import ROOT, action_stream
from mlfp.theory import cost_recursion


# ---------------------------------------------------------------- literal reference
def _inverse_cdf(row, u):
    cum = np.cumsum(row)
    return int(min(np.sum(cum[:-1] <= u), len(row) - 1))


class NaiveQ:
    """Direct transcription of the recursion, one point and one node at a time.

    The transition sample of node ``path`` for action ``a`` is the first
    uniform of that node's action stream, so every evaluation of a node sees
    the same random field. ``streams`` records each (node, action) realization.
    """

    def __init__(self, fm, M, seed):
        self.fm, self.M, self.seed = fm, M, seed
        self.streams = set()

    def sample(self, path, a, x):
        self.streams.add((path, a))
        u = float(action_stream(path, a, self.seed).uniform())
        return _inverse_cdf(self.fm.transitions[x, a], u)

    def q(self, n, path, x):
        g = self.fm.rewards[x]
        if n == 0:
            return g.copy()
        nA = g.shape[0]
        d = self.fm.discount
        total = None
        for l in range(n - 1, -1, -1):
            m = self.M ** (n - l)
            acc = None
            for i in range(1, m + 1):
                t = np.empty(nA)
                for a in range(nA):
                    pos = path + (l, i)
                    X = self.sample(pos, a, x)
                    t[a] = d * np.max(self.q(l, pos, X))
                    if l >= 1:
                        t[a] = t[a] - d * np.max(self.q(l - 1, path + (-l, i), X))
                acc = t if acc is None else acc + t
            level = acc / float(m)
            total = level if total is None else total + level
        return g + total


@pytest.mark.parametrize("M, n", [(1, 3), (2, 3), (3, 2), (4, 2)])
def test_matches_literal_recursion(chain, M, n):
    for seed in range(3):
        for x in range(5):
            ref = NaiveQ(chain.finite, M, seed)
            want = ref.q(n, ROOT, x)
            got = mlfp_q(chain, MlfpParams(M, n, seed), x)
            assert np.array_equal(got, want)


@pytest.mark.parametrize("M, n", [(2, 3), (3, 3), (4, 2)])
def test_ledger_equals_enumerated_tree(chain, M, n):
    ref = NaiveQ(chain.finite, M, 0)
    ref.q(n, ROOT, 0)
    p = MlfpParams(M, n, 0)
    mlfp_q(chain, p, 0)
    assert p.ledger.sampler_calls == len(ref.streams) == 2 * cost_recursion(n, M, 1)


# ---------------------------------------------------------------- reference values
def test_single_state_values():
    m = single_state_det()
    for M in (1, 3):
        for seed in (0, 99):
            assert np.array_equal(mlfp_q(m, MlfpParams(M, 0, seed), 0), [1.0, 0.0])
            assert np.array_equal(mlfp_q(m, MlfpParams(M, 1, seed), 0), [1.5, 0.5])
            assert np.array_equal(mlfp_q(m, MlfpParams(M, 2, seed), 0), [1.75, 0.75])


def test_general_examples():
    m = single_state_det()
    f = BellmanFixedPoint(m)
    assert np.array_equal(mlfp_general(f, MlfpParams(4, 0, 1), 0), [0.0, 0.0])
    assert np.array_equal(mlfp_general(f, MlfpParams(4, 2, 1), 0), [0.75, 0.75])


def test_ledger_chain_example(chain):
    p = MlfpParams(4, 3, 7)
    mlfp_q(chain, p, 0)
    assert p.ledger.sampler_calls == 2 * 308


@pytest.mark.parametrize("M, n", [(1, 4), (2, 4), (4, 3)])
def test_ledger_exact_all_schemes(chain, M, n):
    for run, nA in ((lambda L: estimate_q_batch(chain, M, n, [1, 2, 3], [0, 4], ledger=L), 2),
                    (lambda L: estimate_general_batch(BellmanFixedPoint(chain), M, n, [5], [1], ledger=L), 2),
                    (lambda L: estimate_stopping_batch(two_state_stopping(), M, n, [0, 1], [0, 1], ledger=L), 1)):
        from mlfp.rng import CostLedger
        L = CostLedger()
        out = run(L)
        R = out.shape[0]
        assert L.sampler_calls == R * nA * cost_recursion(n, M, 1)


def test_zero_discount_returns_g():
    m = chain_finite(discount=0.0)
    for n in range(4):
        assert np.array_equal(mlfp_q(m, MlfpParams(2, n, 3), 2), m.finite.rewards[2])
    s = StoppingWalk(2, discount=0.0)
    assert mlfp_stopping(s, MlfpParams(2, 3, 0), np.zeros(2)) == 0.05


def test_stopping_n0_is_running_reward():
    assert mlfp_stopping(StoppingWalk(2), MlfpParams(4, 0, 0), np.ones(2)) == 0.05


# ---------------------------------------------------------------- identities
@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_transformation_identity(chain, M):
    seeds = np.arange(50)
    xs = list(range(5))
    for n in range(5 if M <= 2 else 4):
        q = estimate_q_batch(chain, M, n, seeds, xs)
        r = estimate_general_batch(BellmanFixedPoint(chain), M, n, seeds, xs)
        g = chain.finite.rewards[None]
        assert np.array_equal(q, g + r)


def test_transformation_identity_continuous():
    m = GaussControl(2)
    xs = [np.array([0.3, -1.2]), np.array([2.0, 0.5])]
    for n in range(4):
        q = estimate_q_batch(m, 2, n, np.arange(10), xs)
        r = estimate_general_batch(BellmanFixedPoint(m), 2, n, np.arange(10), xs)
        g = np.stack([m.rewards(m.encode_state(x)) for x in xs])[None]
        assert np.array_equal(q, g + r)


@pytest.mark.parametrize("M", [2, 4])
def test_embedding_identity(M):
    for base, xs in ((StoppingWalk(2), [np.zeros(2), np.array([1.0, -2.0])]),
                     (two_state_stopping(), [0, 1])):
        aug = augment_stopping(base)
        for n in range(5):
            a = estimate_stopping_batch(base, M, n, np.arange(50), xs)
            b = estimate_q_batch(aug, M, n, np.arange(50), xs)[..., CONTINUE]
            assert np.array_equal(a, b)


def test_stopping_walk_example():
    base = StoppingWalk(2)
    x = np.array([0.0, 1.0])
    s = mlfp_stopping(base, MlfpParams(4, 3, 7), x)
    q = mlfp_q(augment_stopping(base), MlfpParams(4, 3, 7), x)
    assert s == q[CONTINUE]


def test_degeneracy_deterministic_model():
    m = single_state_det()
    for n in range(7):
        want = picard_iterate(m, n).values[0]
        for M in (1, 2, 4, 26):
            got = estimate_q_batch(m, M, n, np.arange(20), [0])[:, 0]
            assert np.max(np.abs(got - want)) <= 1e-12


# ---------------------------------------------------------------- batching and reproducibility
def test_scalar_equals_batch(chain):
    b = estimate_q_batch(chain, 3, 3, np.arange(6), range(5))
    for j in range(6):
        for x in range(5):
            assert np.array_equal(b[j, x], mlfp_q(chain, MlfpParams(3, 3, j), x))


def test_batch_split_invariance():
    m = GaussControl(2)
    xs = [np.array([0.1, 0.2]), np.array([-1.0, 0.4])]
    whole = estimate_q_batch(m, 2, 3, np.arange(8), xs)
    parts = np.concatenate([estimate_q_batch(m, 2, 3, np.arange(k, k + 2), xs) for k in range(0, 8, 2)])
    assert np.array_equal(whole, parts)


def test_chunking_does_not_change_results(chain, monkeypatch):
    import mlfp.mlfp as mod
    ref = estimate_q_batch(chain, 4, 3, np.arange(4), range(5))
    monkeypatch.setattr(mod, "CHUNK_ELEMENTS", 7)
    assert np.array_equal(estimate_q_batch(chain, 4, 3, np.arange(4), range(5)), ref)


def test_repeat_runs_identical(chain):
    a = mlfp_q(chain, MlfpParams(4, 4, 11), 3)
    b = mlfp_q(chain, MlfpParams(4, 4, 11), 3)
    assert np.array_equal(a, b)


def test_distinct_roots_and_seeds_differ(chain):
    a = mlfp_q(chain, MlfpParams(4, 2, 1), 0)
    b = mlfp_q(chain, MlfpParams(4, 2, 1), 0, theta=(1,))
    c = mlfp_q(chain, MlfpParams(4, 2, 2), 0)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


# ---------------------------------------------------------------- errors and readout
class _BadDriver(GeneralFixedPointModel):
    discount = 0.5
    n_actions = 1
    n_states = 1

    def driver(self, states, values):
        return np.full(values.shape[:-1], np.inf)

    def sample_transition(self, states, action, stream):
        stream.uniform()
        return np.zeros_like(states)


def test_non_finite_driver_rejected():
    with pytest.raises(FloatingPointError):
        mlfp_general(_BadDriver(), MlfpParams(2, 1, 0), 0)


def test_params_validation():
    with pytest.raises(ValueError):
        MlfpParams(0, 1)
    with pytest.raises(ValueError):
        MlfpParams(2, -1)
    with pytest.raises(ValueError):
        MlfpParams(2, 1, -5)


@pytest.mark.parametrize("q, v, a", [((2, 1), 2, 0), ((0, 0), 0, 0), ((-1, -3), -1, 0), ((1, 1), 1, 0),
                                     ((0, 5, 5), 5, 1)])
def test_readout(q, v, a):
    assert value_from_q(np.array(q, float)) == v
    assert greedy_action(np.array(q, float)) == a


def test_level_summands_shape_and_degenerate():
    m = single_state_det()
    s = level_summands(m, 4, 0, np.arange(5), [0])
    assert s.shape == (5, 1, 2) and np.all(s == 1.0)
    s2 = level_summands(chain_finite(discount=0.0), 4, 2, np.arange(5), [0, 1])
    assert np.all(s2 == 0.0)


def test_bellman_remainder_matches(chain):
    p = MlfpParams(2, 3, 4)
    r = mlfp_bellman_remainder(chain, p, 1)
    assert np.array_equal(mlfp_q(chain, MlfpParams(2, 3, 4), 1), chain.finite.rewards[1] + r)


def _deterministic_chain():
    from mlfp.model import FiniteControlModel, FiniteModel
    nxt = np.array([[1, 2], [2, 0], [0, 0]])
    trans = np.zeros((3, 2, 3))
    for x in range(3):
        for a in range(2):
            trans[x, a, nxt[x, a]] = 1.0
    return FiniteControlModel(FiniteModel([[1.0, 0.2], [0.0, 0.5], [0.3, 0.9]], trans, 0.6))


@pytest.mark.parametrize("M, n", [(1, 4), (2, 3), (3, 3), (4, 2)])
def test_collapsed_path_agrees_with_generic(M, n):
    m = _deterministic_chain()
    assert m.deterministic_transitions
    from mlfp.rng import CostLedger
    fast_ledger, slow_ledger = CostLedger(), CostLedger()
    fast = estimate_q_batch(m, M, n, np.arange(3), range(3), ledger=fast_ledger)
    m.deterministic_transitions = False
    slow = estimate_q_batch(m, M, n, np.arange(3), range(3), ledger=slow_ledger)
    assert np.max(np.abs(fast - slow)) <= 1e-13
    assert fast_ledger.sampler_calls == slow_ledger.sampler_calls == 3 * 2 * cost_recursion(n, M, 1)
    assert np.allclose(fast[0], picard_iterate(m, n).values, atol=1e-12, rtol=0)


def test_stochastic_models_never_collapse(chain):
    assert not chain.deterministic_transitions
    assert not GaussControl(2).deterministic_transitions
