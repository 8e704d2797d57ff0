import math

import numpy as np
import pytest

from smoothcert.adversary import (
    AttackConfig,
    attack_objective,
    l2_project,
    smoothadv_pgd,
    smoothmix_attack,
)
from smoothcert.nn import ModelParams, forward, softmax
from smoothcert.rng import StreamId
from smoothcert.smoothing import sample_noise, soft_smoothed_predict


def _linear_two_class(w, b, scale=1.0):
    w = np.asarray(w, dtype=np.float64)
    W = np.column_stack([np.zeros_like(w), scale * w])
    return ModelParams([W], [np.array([0.0, scale * b])])


def _constant_net(dim, classes):
    return ModelParams([np.zeros((dim, classes))], [np.zeros(classes)])


def _random_net(seed, sizes):
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) * 0.6
               for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.standard_normal(b) * 0.1 for b in sizes[1:]]
    return ModelParams(weights, biases)


# ---------------------------------------------------------------- objective


def test_objective_certain_true_class_is_zero():
    # logits pinned far toward class 1 -> F_y ~ 1 -> J ~ 0
    params = ModelParams([np.zeros((2, 2))], [np.array([0.0, 200.0])])
    noise = sample_noise(1.0, 2, 4, StreamId(0))
    assert abs(attack_objective(params, np.zeros(2), 1, noise)) < 1e-12


def test_objective_uniform_is_log_c():
    params = _constant_net(3, 5)
    noise = sample_noise(1.0, 3, 6, StreamId(1))
    assert attack_objective(params, np.ones(3), 2, noise) == pytest.approx(
        math.log(5), abs=1e-12)


def test_objective_matches_recomputation():
    params = _random_net(2, [3, 6, 4])
    noise = sample_noise(0.7, 3, 2, StreamId(3))
    x = np.array([0.2, -0.4, 0.9])
    y = 1
    probs = [softmax(forward(params, x + d))[y] for d in noise.deltas]
    want = -math.log(sum(probs) / len(probs))
    assert attack_objective(params, x, y, noise) == pytest.approx(want,
                                                                  abs=1e-12)


# ---------------------------------------------------------------- smoothmix attack


def test_attack_t0_trajectory_is_start_point():
    params = _random_net(4, [2, 5, 3])
    noise = sample_noise(0.5, 2, 3, StreamId(5))
    x = np.array([0.3, 0.8])
    traj = smoothmix_attack(params, x, 0, noise, AttackConfig(1.0, 0))
    assert traj.points.shape == (1, 2)
    np.testing.assert_array_equal(traj.points[0], x)
    np.testing.assert_allclose(traj.fhat_at_start,
                               soft_smoothed_predict(params, x, noise),
                               atol=1e-12)


def test_attack_zero_gradient_skips_steps():
    params = _constant_net(2, 3)
    noise = sample_noise(0.5, 2, 3, StreamId(6))
    x = np.array([1.5, -0.5])
    traj = smoothmix_attack(params, x, 0, noise, AttackConfig(0.7, 5))
    assert traj.points.shape == (6, 2)
    for pt in traj.points:
        np.testing.assert_array_equal(pt, x)


def test_attack_linear_model_straight_line():
    w, b = np.array([0.6, -0.8]), 0.3
    params = _linear_two_class(w, b)
    noise = sample_noise(0.5, 2, 8, StreamId(7))
    x = np.array([0.4, 0.2])
    cfg = AttackConfig(alpha_step=0.25, steps=6)
    traj = smoothmix_attack(params, x, 1, noise, cfg)
    # ascent on J for true class 1 walks exactly along -w/|w|
    direction = -w / np.linalg.norm(w)
    for t in range(1, 7):
        np.testing.assert_allclose(traj.points[t],
                                   x + 0.25 * t * direction, atol=1e-9)
    assert np.linalg.norm(traj.points[-1] - x) == pytest.approx(
        6 * 0.25, abs=1e-9)
    # on a linear model J is nondecreasing along the trajectory
    assert np.all(np.diff(traj.j_path) >= -1e-12)


def test_attack_step_norm_exact():
    params = _random_net(8, [3, 10, 4])
    noise = sample_noise(0.8, 3, 4, StreamId(9))
    x = np.array([0.1, -0.2, 0.5])
    cfg = AttackConfig(alpha_step=0.42, steps=5)
    traj = smoothmix_attack(params, x, 2, noise, cfg)
    steps = np.linalg.norm(np.diff(traj.points, axis=0), axis=1)
    moved = steps > 1e-12
    assert np.all(np.abs(steps[moved] - 0.42) < 1e-9)
    assert np.all(steps <= 0.42 + 1e-9)


def test_attack_cap_projection():
    params = _random_net(10, [2, 8, 3])
    noise = sample_noise(0.6, 2, 4, StreamId(11))
    x = np.array([0.7, -0.3])
    cfg = AttackConfig(alpha_step=0.5, steps=8, epsilon_cap=0.6)
    traj = smoothmix_attack(params, x, 1, noise, cfg)
    dists = np.linalg.norm(traj.points - x, axis=1)
    assert np.all(dists <= 0.6 + 1e-9)


def test_attack_noise_reuse_provenance():
    params = _random_net(12, [2, 6, 3])
    noise = sample_noise(0.5, 2, 5, StreamId(13, ("atk",)))
    traj = smoothmix_attack(params, np.zeros(2), 0, noise,
                            AttackConfig(0.3, 3))
    assert traj.noise.stream == noise.stream
    np.testing.assert_array_equal(traj.noise.deltas, noise.deltas)


def test_attack_trajectory_invariants():
    params = _random_net(14, [3, 7, 2])
    noise = sample_noise(0.4, 3, 3, StreamId(15))
    x = np.array([0.0, 0.1, -0.1])
    traj = smoothmix_attack(params, x, 0, noise, AttackConfig(0.2, 4))
    assert traj.steps == 4
    assert traj.points.shape[0] == 5
    np.testing.assert_array_equal(traj.points[0], x)
    np.testing.assert_allclose(traj.fhat_path[0], traj.fhat_at_start)
    np.testing.assert_allclose(traj.fhat_path.sum(axis=1), 1.0, atol=1e-9)


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(alpha_step=0.0, steps=3)
    with pytest.raises(ValueError):
        AttackConfig(alpha_step=0.5, steps=-1)
    with pytest.raises(ValueError):
        AttackConfig(alpha_step=0.5, steps=3, epsilon_cap=0.0)


# ---------------------------------------------------------------- smoothadv pgd


def test_pgd_constant_classifier_returns_x():
    params = _constant_net(2, 2)
    noise = sample_noise(0.5, 2, 3, StreamId(16))
    x = np.array([0.4, 0.9])
    out = smoothadv_pgd(params, x, 0, noise, steps=5, step_size=0.3,
                        epsilon=1.0)
    np.testing.assert_array_equal(out, x)


def test_pgd_unprojected_distance_on_linear_model():
    params = _linear_two_class(np.array([1.0, 1.0]), 0.0)
    noise = sample_noise(0.5, 2, 6, StreamId(17))
    x = np.array([0.2, -0.1])
    out = smoothadv_pgd(params, x, 1, noise, steps=4, step_size=0.2,
                        epsilon=1.0)
    assert np.linalg.norm(out - x) == pytest.approx(0.8, abs=1e-9)


def test_pgd_projection_hits_ball_boundary():
    params = _linear_two_class(np.array([1.0, 0.0]), 0.0)
    noise = sample_noise(0.5, 2, 6, StreamId(18))
    x = np.array([0.5, 0.5])
    out = smoothadv_pgd(params, x, 1, noise, steps=10, step_size=0.5,
                        epsilon=0.75)
    assert np.linalg.norm(out - x) == pytest.approx(0.75, abs=1e-9)


def test_pgd_always_inside_ball():
    params = _random_net(19, [3, 8, 3])
    noise = sample_noise(0.7, 3, 4, StreamId(20))
    x = np.array([0.3, 0.3, -0.6])
    for eps in (0.25, 1.0):
        out = smoothadv_pgd(params, x, 1, noise, steps=7, step_size=0.6,
                            epsilon=eps)
        assert np.linalg.norm(out - x) <= eps + 1e-9


def test_pgd_validation():
    params = _constant_net(2, 2)
    noise = sample_noise(0.5, 2, 2, StreamId(21))
    with pytest.raises(ValueError):
        smoothadv_pgd(params, np.zeros(2), 0, noise, steps=3, step_size=0.1,
                      epsilon=0.0)
    with pytest.raises(ValueError):
        smoothadv_pgd(params, np.zeros(2), 0, noise, steps=3, step_size=0.0,
                      epsilon=1.0)


# ---------------------------------------------------------------- projection


def test_project_inside_unchanged():
    p = np.array([0.5, 0.5])
    np.testing.assert_array_equal(l2_project(p, np.zeros(2), 1.0), p)


def test_project_center_unchanged():
    c = np.array([2.0, -1.0])
    np.testing.assert_array_equal(l2_project(c.copy(), c, 0.5), c)


def test_project_scales_to_boundary():
    out = l2_project(np.array([2.0, 0.0]), np.zeros(2), 1.0)
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-15)


def test_project_radius_validation():
    with pytest.raises(ValueError):
        l2_project(np.ones(2), np.zeros(2), 0.0)
