import json

import numpy as np
import pytest

from mlfp.model import (
    CONTINUE,
    HOLD,
    STOP,
    BellmanFixedPoint,
    FiniteModel,
    GaussControl,
    StoppingWalk,
    WeightCertificate,
    augment_finite_stopping,
    augment_stopping,
    bellman_driver,
    build_model,
    chain_finite,
    finite_as_control,
    load_model,
    single_state_det,
    spot_check_reward_bound,
    two_state_stopping,
)
from mlfp.rng import stream_for


class FixedUniform:
    """Stream stand-in returning a chosen uniform."""

    def __init__(self, u):
        self.u = u

    def uniform(self, size=None):
        return np.float64(self.u)


@pytest.mark.parametrize("r, expected", [((0.0, 0.0), 0.5), ((1.0, 1.0), 1.0)])
def test_bellman_driver_examples(r, expected):
    assert bellman_driver(single_state_det(), 0, np.array(r)) == expected


def test_bellman_driver_zero_discount():
    m = chain_finite(discount=0.0)
    assert bellman_driver(m, 2, np.array([3.0, -4.0])) == 0.0


def test_bellman_driver_lipschitz(rng):
    m = chain_finite(5, 3, seed=2, discount=0.7)
    f = BellmanFixedPoint(m)
    xs = rng.integers(0, 5, size=10_000)
    r = rng.normal(size=(10_000, 3)) * 3
    s = rng.normal(size=(10_000, 3)) * 3
    lhs = np.abs(f.driver(xs, r) - f.driver(xs, s))
    assert np.all(lhs <= 0.7 * np.max(np.abs(r - s), axis=1) + 1e-12)


@pytest.mark.parametrize("row, u, state", [
    ([1.0, 0.0], 0.999, 0),
    ([0.5, 0.5], 0.25, 0),
    ([0.5, 0.5], 0.75, 1),
    ([0.2, 0.3, 0.5], 0.45, 1),
])
def test_inverse_cdf_examples(row, u, state):
    S = len(row)
    trans = np.tile(np.asarray(row), (S, 1, 1))
    m = finite_as_control(FiniteModel(np.zeros((S, 1)), trans, 0.5))
    assert int(m.sample_transition(np.array(0), 0, FixedUniform(u))) == state


def test_malformed_row_rejected():
    with pytest.raises(ValueError, match="malformed transition row"):
        FiniteModel(np.zeros((2, 1)), [[[0.5, 0.6]], [[0.5, 0.5]]], 0.5)


def test_bad_probability_and_discount_rejected():
    with pytest.raises(ValueError):
        FiniteModel(np.zeros((2, 1)), [[[1.5, -0.5]], [[0.5, 0.5]]], 0.5)
    with pytest.raises(ValueError):
        FiniteModel(np.zeros((1, 1)), [[[1.0]]], 1.0)


def test_certificate_contraction():
    assert WeightCertificate(1.0, 1.0, 0.5).cwL == 0.5
    with pytest.raises(ValueError, match="contraction"):
        WeightCertificate(2.0, 1.0, 0.5)


@pytest.mark.parametrize("make, x", [
    (lambda: chain_finite(), 3),
    (lambda: GaussControl(3), np.zeros(3)),
    (lambda: augment_stopping(StoppingWalk(2)), np.zeros(2)),
    (lambda: augment_stopping(two_state_stopping()), 1),
])
def test_replay_determinism(make, x):
    m = make()
    y = m.encode_state(x)
    for a in range(m.n_actions):
        y1 = m.sample_transition(y, a, stream_for((0, 2, 3), 8))
        y2 = m.sample_transition(y, a, stream_for((0, 2, 3), 8))
        assert np.array_equal(y1, y2)


def test_weight_is_one_and_structural_moment_identity():
    m = chain_finite()
    states = np.arange(5)
    nxt = m.sample_transition(states, 1, stream_for((0,), 1))
    w = m.weight(nxt)
    assert np.sqrt(np.mean(w**2)) == 1.0 == m.certificate.lam * m.weight(states)[0]


def test_reward_bound_spot_check(rng):
    g = GaussControl(2)
    pts = rng.normal(size=(1000, 2)) * 5
    assert spot_check_reward_bound(g, pts)
    assert spot_check_reward_bound(chain_finite(), np.arange(5))


def test_augmentation_rules():
    base = StoppingWalk(2)
    aug = augment_stopping(base)
    x = np.array([0.5, 1.0])
    y = aug.encode_state(x)
    hold = aug.encode_state(HOLD)
    s = stream_for((0, 1), 0)
    stop_next = aug.sample_transition(y, STOP, s)
    assert aug.decode_state(stop_next) is HOLD
    assert aug.reward(y, STOP) == base.terminal_payoff(x)
    assert aug.reward(y, CONTINUE) == base.running_reward(x)
    cont = aug.sample_transition(y, CONTINUE, stream_for((0, 1), 0))
    expected = base.sample_transition(x, stream_for((0, 1), 0))
    assert np.array_equal(aug.decode_state(cont), expected)
    held = aug.sample_transition(hold, CONTINUE, s)
    assert aug.decode_state(held) is HOLD and aug.reward(hold, CONTINUE) == 0.0


def test_hold_state_absorbs():
    aug = augment_stopping(StoppingWalk(3))
    y = aug.encode_state(HOLD)
    s = stream_for((0, 7), 2)
    total = 0.0
    for k in range(1000):
        a = k % 2
        total += float(aug.reward(y, a))
        y = aug.sample_transition(y, a, s)
        assert aug.decode_state(y) is HOLD
    assert total == 0.0


def test_hold_is_not_a_base_state():
    aug = augment_stopping(two_state_stopping())
    assert HOLD not in (aug.decode_state(aug.encode_state(i)) for i in range(2))


def test_augment_finite_stopping_structure():
    fm = augment_finite_stopping(two_state_stopping())
    assert fm.rewards.shape == (3, 2)
    assert np.all(fm.transitions[:, STOP, 2] == 1.0)
    assert fm.transitions[2, CONTINUE, 2] == 1.0


def test_build_model_and_unknown_family(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"family": "chain_finite", "params": {"states": 4, "seed": 3},
                             "discount": 0.2, "certificates": {"lambda": 1.0, "kappa": 2.0},
                             "unit_sample_cost": 3.0}))
    built = load_model(p)
    assert built.finite.state_count == 4
    assert built.control.certificate.kappa == 2.0
    assert built.control.unit_sample_cost == 3.0
    with pytest.raises(ValueError, match="known families: chain_finite"):
        build_model({"family": "nope"})


def test_stopping_family_has_finite_twin():
    built = build_model({"family": "two_state_stopping"})
    assert built.stopping is not None and built.finite.state_count == 3


def test_encode_state_validation():
    with pytest.raises(ValueError):
        chain_finite().encode_state(7)
    with pytest.raises(ValueError):
        GaussControl(2).encode_state([1.0, 2.0, 3.0])
