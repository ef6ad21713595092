import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilient_swarm.plant import (
    AttackKind,
    AttackSpec,
    DivergenceError,
    RobotModel,
    attack_channel,
    initial_state,
    measure,
    noise_factor,
    single_integrator,
    step_dynamics,
)


def quiet(q=0.0, r=0.0):
    return single_integrator(0.033, q, r)


def test_zero_input_zero_noise_is_identity():
    m = quiet()
    s = step_dynamics(m, initial_state(m, [0.3, -0.2]), [0, 0], np.random.default_rng(0))
    assert s.x.tolist() == [0.3, -0.2]


def test_one_euler_step():
    m = quiet()
    s = step_dynamics(m, initial_state(m, [0, 0]), [1, 0], np.random.default_rng(0))
    assert np.allclose(s.x, [0.033, 0.0])


def test_last_y_initialised_to_output():
    m = quiet()
    assert initial_state(m, [1.0, 2.0]).last_y.tolist() == [1.0, 2.0]


def test_process_noise_mean():
    m = single_integrator(q=1e-4, r=0.0)
    rng = np.random.default_rng(1)
    s0 = initial_state(m, [0, 0])
    xs = np.array([step_dynamics(m, s0, [1, 0], rng).x for _ in range(20_000)])
    se = np.sqrt(1e-4 / len(xs))
    assert np.all(np.abs(xs.mean(axis=0) - [0.033, 0.0]) < 4 * se)


def test_measurement_noise_variance():
    m = single_integrator(q=0.0, r=1e-2)
    rng = np.random.default_rng(2)
    s = initial_state(m, [0.5, 0.5])
    e = np.array([measure(m, s, rng) for _ in range(20_000)]) - 0.5
    assert np.allclose(e.var(axis=0), 1e-2, rtol=0.05)


def test_noiseless_measurement_and_position_row():
    m = quiet()
    s = initial_state(m, [0.1, 0.2])
    assert measure(m, s, np.random.default_rng(0)).tolist() == [0.1, 0.2]
    pos = RobotModel(np.eye(2), 0.033 * np.eye(2), [[1.0, 0.0]], np.zeros((2, 2)), [[0.0]], 0.033)
    assert measure(pos, s, np.random.default_rng(0)).tolist() == [0.1]


def test_nonfinite_input_diverges():
    m = quiet()
    with pytest.raises(DivergenceError, match="state diverged"):
        step_dynamics(m, initial_state(m, [0, 0]), [np.inf, 0], np.random.default_rng(0))


def test_model_validation():
    with pytest.raises(ValueError):
        RobotModel(np.eye(2), np.eye(2), np.eye(2), [[1, 0.5], [0, 1]], np.eye(2), 0.1)
    with pytest.raises(ValueError):
        RobotModel(np.eye(2), np.eye(3), np.eye(2), np.eye(2), np.eye(2), 0.1)


def test_noise_factor_singular_psd():
    S = noise_factor(np.zeros((2, 2)))
    assert np.allclose(S @ S.T, 0.0)
    with pytest.raises(ValueError):
        noise_factor(np.diag([1.0, -1.0]))


def test_channel_before_start_and_off_target():
    spec = AttackSpec(AttackKind.DECEPTION, (0,), start_step=5, alpha_values={0: np.array([0.5, 0.0])})
    y = np.array([1.0, 1.0])
    assert attack_channel(y, y * 0, 4, spec, 0).tolist() == [1.0, 1.0]
    assert attack_channel(y, y * 0, 9, spec, 1).tolist() == [1.0, 1.0]


def test_deception_adds_bias():
    spec = AttackSpec(AttackKind.DECEPTION, (0,), 0, alpha_values={0: np.array([0.5, 0.0])})
    assert attack_channel([1.0, 1.0], [0, 0], 0, spec, 0).tolist() == [1.5, 1.0]


def test_dos_certain_replay():
    spec = AttackSpec(AttackKind.DOS, (2,), 0, delay_prob=1.0)
    rng = np.random.default_rng(0)
    prev = np.array([0.1, 0.2])
    for k in range(20):
        out = attack_channel(np.array([k, k], float), prev, k, spec, 2, rng)
        assert out.tolist() == prev.tolist()


def test_dos_replay_frequency():
    spec = AttackSpec(AttackKind.DOS, (0,), 0, delay_prob=0.3)
    rng = np.random.default_rng(5)
    stale = sum(attack_channel([1.0, 1.0], [0.0, 0.0], k, spec, 0, rng)[0] == 0.0 for k in range(20_000))
    assert abs(stale / 20_000 - 0.3) < 4 * np.sqrt(0.3 * 0.7 / 20_000)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.integers(0, 1000))
def test_no_spec_is_bitwise_identity(y, k):
    y = np.array(y)
    assert np.array_equal(attack_channel(y, y + 1, k, None, 0), y)


def test_alphas_drawn_once_within_bounds():
    spec = AttackSpec(AttackKind.DECEPTION, (3, 1), 0, alpha_bounds=(0.4, 0.6))
    drawn = spec.with_alphas(np.random.default_rng(0), 2)
    assert drawn.targets == (1, 3)
    for t in drawn.targets:
        a = drawn.alpha_values[t]
        assert a.shape == (2,) and np.all((a >= 0.4) & (a <= 0.6))
    again = spec.with_alphas(np.random.default_rng(0), 2)
    assert all(np.array_equal(drawn.alpha_values[t], again.alpha_values[t]) for t in drawn.targets)


def test_explicit_alpha_kept_and_dos_has_none():
    spec = AttackSpec("deception", (0,), 0, alpha_values={0: [0.3, 0.3]})
    assert spec.with_alphas(np.random.default_rng(0), 2).alpha_values[0].tolist() == [0.3, 0.3]
    dos = AttackSpec("dos", (0,), 0)
    assert dos.with_alphas(np.random.default_rng(0), 2).alpha_values == {}


def test_attack_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("dos", (0,), 0, delay_prob=1.5)
    with pytest.raises(ValueError):
        AttackSpec("deception", (0,), 0, alpha_bounds=(0.5, 0.1))
    with pytest.raises(ValueError):
        AttackSpec("jamming", (0,), 0)
