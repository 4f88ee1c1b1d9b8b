import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physres.features import FEATURE_NAMES, channel_groups
from physres.reservoir import (
    ReservoirConfig,
    ReservoirError,
    ReservoirWeights,
    allocate_nodes,
    collect_states,
    init_reservoir,
    largest_remainder,
    run_reservoir,
    size_reservoir,
    spectral_radius,
)


def test_round_robin_sizing():
    cfg = size_reservoir(5, 7)
    assert cfg.num_nodes == 20
    assert sorted(cfg.node_counts().tolist(), reverse=True) == [3, 3, 3, 3, 3, 3, 2]


def test_single_class_rejected():
    with pytest.raises(ReservoirError):
        size_reservoir(1, 35)


def test_all_mass_on_one_feature():
    w = np.zeros(7)
    w[1] = 1.0
    assert size_reservoir(5, 7, w).node_counts().tolist() == [1, 14, 1, 1, 1, 1, 1]
    # More features than nodes: only weighted features keep a floor.
    w35 = np.zeros(35)
    w35[FEATURE_NAMES.index("torque.var")] = 1.0
    counts = size_reservoir(5, 35, w35).node_counts()
    assert counts[FEATURE_NAMES.index("torque.var")] == 20 and counts.sum() == 20


def test_largest_remainder_ties_to_lower_index():
    assert largest_remainder(5, [1, 1, 1]).tolist() == [2, 2, 1]
    assert largest_remainder(7, [0.5, 0.25, 0.25]).tolist() == [3, 2, 2]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(2, 6),
    st.integers(1, 6),
    st.lists(st.floats(0, 10), min_size=7, max_size=7).filter(lambda w: sum(w) > 0),
)
def test_allocation_covers_every_node(K, per_class, weights):
    if K * per_class < sum(w > 0 for w in weights):
        with pytest.raises(ReservoirError):
            size_reservoir(K, 35, weights, per_class, channel_groups(35))
        return
    cfg = size_reservoir(K, 35, weights, per_class, channel_groups(35))
    counts = cfg.node_counts()
    assert counts.sum() == cfg.num_nodes == K * per_class
    per_channel = np.add.reduceat(counts, np.arange(0, 35, 5))
    if cfg.num_nodes >= 7:
        assert np.all(per_channel >= 1)


def test_uniform_channel_weights_equal_round_robin():
    groups = channel_groups(35)
    a = allocate_nodes(20, 35, np.ones(7), groups)
    b = allocate_nodes(20, 35, None, groups)
    assert sorted(np.bincount(groups[list(a)], minlength=7)) == sorted(np.bincount(groups[list(b)], minlength=7))


def test_priority_orders_features_in_channel():
    groups = channel_groups(35)
    prio = np.zeros(35)
    prio[8] = 5.0  # torque.kurt
    mapping = allocate_nodes(7, 35, None, groups, prio)
    assert mapping[1] == 8


def test_config_validation():
    with pytest.raises(ReservoirError):
        ReservoirConfig(3, 4, (0, 1), seed=0)
    with pytest.raises(ReservoirError):
        ReservoirConfig(2, 4, (0, 1), spectral_radius=1.0)
    with pytest.raises(ReservoirError):
        ReservoirConfig(2, 4, (0, 1), leak_alpha=0.0)
    with pytest.raises(ReservoirError):
        ReservoirConfig(2, 4, (0, 9))


def test_config_dict_round_trip():
    cfg = size_reservoir(4, 35, seed=12)
    assert ReservoirConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("rho", [0.5, 0.9, 0.95])
def test_spectral_radius_hit(rho):
    cfg = size_reservoir(5, 35, spectral_radius=rho, seed=3)
    w = init_reservoir(cfg)
    assert abs(spectral_radius(w.W) - rho) <= 1e-6


def test_spectral_radius_matches_power_iteration_when_real_dominant():
    # Symmetric matrices have a real dominant eigenvalue, where power
    # iteration is a valid independent estimate.
    A = np.random.default_rng(0).standard_normal((15, 15))
    A = A + A.T
    v = np.ones(15)
    for _ in range(2000):
        v = A @ v
        v /= np.linalg.norm(v)
    assert spectral_radius(A) == pytest.approx(abs(v @ A @ v), rel=1e-8)


def test_init_deterministic_and_dominant_entry():
    cfg = size_reservoir(5, 35, seed=7)
    a, b = init_reservoir(cfg), init_reservoir(cfg)
    assert np.array_equal(a.W_in, b.W_in) and np.array_equal(a.W, b.W)
    assert a.W_in.shape == (20, 35)
    primary = np.abs(a.W_in[np.arange(20), list(cfg.node_to_feature)])
    others = np.abs(a.W_in).copy()
    others[np.arange(20), list(cfg.node_to_feature)] = 0
    assert np.all(primary > others.max(axis=1))
    assert np.all(np.abs(others) <= 0.1)


def test_recurrent_density_near_ten_percent():
    cfg = size_reservoir(25, 35, nodes_per_class=8, seed=1)
    w = init_reservoir(cfg)
    assert 0.08 < np.mean(w.W != 0) < 0.12


def test_degenerate_draw_reseeds_or_fails():
    # With a single node the only recurrent weight is nonzero 10% of the time.
    for seed in range(40):
        cfg = ReservoirConfig(1, 1, (0,), density=0.1, seed=seed)
        try:
            w = init_reservoir(cfg)
        except ReservoirError:
            continue
        assert abs(spectral_radius(w.W) - 0.9) <= 1e-6


def test_zero_input_zero_state():
    cfg = size_reservoir(3, 35, seed=2)
    w = init_reservoir(cfg)
    assert np.all(run_reservoir(w, cfg, np.zeros((5, 35))) == 0.0)


def test_single_step_reduces_to_tanh():
    cfg = ReservoirConfig(3, 2, (0, 1, 0), leak_alpha=1.0)
    W_in = np.array([[1.0, 0.1], [-0.05, 0.7], [0.3, 0.0]])
    w = ReservoirWeights(W_in, np.zeros((3, 3)))
    x = np.array([0.4, -1.2])
    assert np.allclose(run_reservoir(w, cfg, [x]), np.tanh(W_in @ x))


def test_contraction_at_09_alpha_1():
    cfg = size_reservoir(5, 35, leak_alpha=1.0, spectral_radius=0.9, seed=4)
    w = init_reservoir(cfg)
    rng = np.random.default_rng(0)
    s0, s1 = rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20)
    a = run_reservoir(w, cfg, np.zeros((100, 35)), s0)
    b = run_reservoir(w, cfg, np.zeros((100, 35)), s1)
    assert np.linalg.norm(a - b) < 1e-3 * np.linalg.norm(s0 - s1)


def test_run_rejects_bad_input():
    cfg = size_reservoir(2, 35, seed=0)
    w = init_reservoir(cfg)
    with pytest.raises(ReservoirError):
        run_reservoir(w, cfg, np.full((2, 35), np.nan))
    with pytest.raises(ReservoirError):
        run_reservoir(w, cfg, np.zeros((0, 35)))
    with pytest.raises(ReservoirError):
        collect_states(w, cfg, np.zeros((3, 34)))


def test_collect_states_matches_run():
    cfg = size_reservoir(4, 35, seed=5)
    w = init_reservoir(cfg)
    X = np.random.default_rng(1).standard_normal((100, 35))
    S = collect_states(w, cfg, X, t_drive=10)
    assert S.shape == (100, 16)
    for i in (0, 57):
        assert np.allclose(S[i], run_reservoir(w, cfg, np.tile(X[i], (10, 1))), atol=1e-14)
    twins = collect_states(w, cfg, np.vstack([X[3], X[3]]))
    assert np.array_equal(twins[0], twins[1])
    assert not np.allclose(collect_states(w, cfg, X, t_drive=1), S)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.integers(0, 10_000), st.floats(0.1, 50.0))
def test_states_bounded(alpha, seed, scale):
    cfg = size_reservoir(3, 35, leak_alpha=alpha, seed=seed)
    w = init_reservoir(cfg)
    X = np.random.default_rng(seed).standard_normal((8, 35)) * scale
    S = collect_states(w, cfg, X)
    assert np.all(np.abs(S) <= 1.0) and np.all(np.isfinite(S))
